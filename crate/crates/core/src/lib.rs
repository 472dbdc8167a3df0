//! Light-steered plant growth: stem tracking, data augmentation, an LSTM
//! forward model of stem motion and NEAT-evolved light controllers.

pub mod augment;
pub mod config;
pub mod error;
pub mod geom;
pub mod io;
pub mod lstm;
pub mod neat;
pub mod pipeline;
pub mod plot;
pub mod seeds;
pub mod synth;
pub mod task;
pub mod vision;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use geom::{
    LightCondition, Obstacle, Point2, RegressionVector, Scenario, StemPolyline, TrackedFrame,
    STEM_COORDS, STEM_POINTS,
};
pub use lstm::{FastLstm, LstmModel, TrainConfig, TrainReport};
pub use neat::{Genome, NeatParams};
pub use pipeline::{run_pipeline, RunManifest, Stage};
pub use synth::{PlantParams, Schedule};
pub use task::{ExperimentTag, ForwardModel, RolloutLimits, RolloutTrace};
