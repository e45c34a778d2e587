use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::EncoderConfig;
use crate::error::{D3Error, Result};
use crate::features::{DistanceKind, FeatureOrder};
use crate::frames::SamplingPolicy;
use crate::metrics::RealPool;
use crate::par;
use crate::robustness::Perturbation;

/// Everything that determines the scores of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub encoder: EncoderConfig,
    pub sampling: SamplingPolicy,
    pub distance_kind: DistanceKind,
    pub feature_order: FeatureOrder,
    /// Applied to every preprocessed frame before encoding.
    pub perturbation: Option<Perturbation>,
    /// Skip clips with too few frames with a warning. When false (strict
    /// mode) short clips are errors and any failed video aborts the run.
    pub skip_short_videos: bool,
    /// Subset tag of the real videos used as negatives; all real videos
    /// when unset.
    pub real_pool: Option<String>,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            sampling: SamplingPolicy::default(),
            distance_kind: DistanceKind::L2,
            feature_order: FeatureOrder::Second,
            perturbation: None,
            skip_short_videos: true,
            real_pool: None,
            workers: par::default_workers(),
        }
    }
}

impl RunConfig {
    /// Loads TOML, or JSON when the extension is `.json`.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| D3Error::io(path, e))?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| D3Error::ConfigError(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| D3Error::ConfigError(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| D3Error::ConfigError(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.sampling.validate()?;
        if let Some(p) = &self.perturbation {
            p.validate()?;
        }
        let need = self.feature_order.min_frames();
        if self.sampling.max_frames < need {
            return Err(D3Error::ConfigError(format!(
                "max_frames {} is below the {need} frames the feature order needs",
                self.sampling.max_frames
            )));
        }
        if self.workers == 0 {
            return Err(D3Error::ConfigError("workers must be at least 1".into()));
        }
        if self.real_pool.as_deref() == Some("") {
            return Err(D3Error::ConfigError("real_pool tag is empty".into()));
        }
        Ok(())
    }

    pub fn pool(&self) -> RealPool {
        RealPool::from_tag(self.real_pool.as_deref())
    }

    /// SHA-256 over the canonical JSON of the config and the model hash.
    pub fn digest(&self) -> Result<String> {
        let doc = serde_json::json!({
            "config": self,
            "model_sha256": self.encoder.model_sha256()?,
        });
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(&doc)?)))
    }
}
