//! Desk-scale synthetic benchmark: seeded scenes, an anchor grid, a linear
//! anchor scorer trained under FL or SSFL, and the two-arm experiment.
//!
//! Salient signs are placed with centers inside a configurable corridor;
//! non-salient signs anywhere in the image. Anchor features are a noisy
//! appearance vector (non-zero near signs and at clutter bumps) followed by
//! the anchor's normalized center, so the scorer can learn a positional prior.

pub mod anchors;
pub mod experiment;
pub mod features;
pub mod scene;
pub mod train;

use thiserror::Error;

pub use anchors::{AnchorGrid, GridConfig};
pub use experiment::{
    generate_benchmark, run_arm, run_experiment, ArmReport, Benchmark, BenchmarkSize,
    ExperimentReport,
};
pub use features::FeatureStore;
pub use scene::{gen_dataset, gen_scene, SceneGenConfig, SyntheticScene};
pub use train::{
    assign_labels, predict, predict_dataset, train, AnchorLabel, ModelWeights, TrainConfig,
    TrainOutcome, TrainingSet,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("feature store: {0}")]
    Features(String),
    #[error("training set has no positive anchors")]
    NoPositives,
    #[error("loss became non-finite at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error(transparent)]
    Loss(crate::losses::LossError),
    #[error(transparent)]
    Eval(#[from] crate::evaluation::EvalError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
