use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::D3Error;
use crate::features::DetectionScore;

/// Ground-truth class. Generated videos are the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Real,
    Generated,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Generated
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        match l {
            Label::Real => 0,
            Label::Generated => 1,
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = D3Error;

    fn try_from(v: u8) -> Result<Self, D3Error> {
        match v {
            0 => Ok(Label::Real),
            1 => Ok(Label::Generated),
            other => Err(D3Error::ConfigError(format!("label must be 0 or 1, got {other}"))),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", u8::from(*self))
    }
}

/// One scored video. `fake_score` is always `-sigma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub id: String,
    pub subset: String,
    pub label: Label,
    pub sigma: f64,
    pub fake_score: f64,
}

impl DetectionRecord {
    pub fn new(id: impl Into<String>, subset: impl Into<String>, label: Label, score: &DetectionScore) -> Self {
        Self {
            id: id.into(),
            subset: subset.into(),
            label,
            sigma: score.sigma,
            fake_score: score.fake_score,
        }
    }

    pub fn from_sigma(id: impl Into<String>, subset: impl Into<String>, label: Label, sigma: f64) -> Self {
        Self {
            id: id.into(),
            subset: subset.into(),
            label,
            sigma,
            fake_score: -sigma,
        }
    }
}
