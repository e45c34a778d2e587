//! Training-free detection of generated video from the volatility of
//! second-order differences of inter-frame embedding distances.
//!
//! The chain is: [`frames`] decodes and samples a clip, [`encoder`] maps
//! each frame to a vector, [`features`] turns the vectors into a scalar
//! score, [`metrics`] ranks scored clips. [`harness`] runs whole manifests,
//! [`robustness`] sweeps post-processing, and [`synth`] builds fixtures.

pub mod encoder;
pub mod error;
pub mod features;
pub mod frames;
pub mod harness;
pub mod metrics;
pub mod par;
pub mod record;
pub mod robustness;
pub mod synth;

pub use error::{D3Error, Result};
pub use features::{d3_score, DetectionScore, DistanceKind, EmbeddingSeries, FeatureOrder};
pub use record::{DetectionRecord, Label};
