//! Datasets, splits, the end-to-end experiment driver and metrics.

mod dataset;
mod metrics;
mod pipeline;
mod split;
mod synthetic;

use thiserror::Error;

use crate::encoding::EncodingError;
use crate::geometry::GeometryError;
use crate::imageio::ImageIoError;
use crate::nn::NnError;
use crate::noise::NoiseError;

pub use dataset::{Dataset, DatasetManifest, ManifestEntry, Sample};
pub use metrics::{evaluate, render_recall_chart, MetricsReport};
pub use pipeline::{
    evaluate_fusion, evaluate_stream, prepare, run_experiment, sweep_encodings, to_tensor,
    train_depth_stream, train_stage_one, train_stage_two, ExperimentOutcome, FusionOutcome,
    Modality, NoiseSetting, PairView, PipelineConfig, PreparedSet, StreamOutcome, StreamView,
    Streams, SweepRow,
};
pub use split::{make_splits, SplitSpec};
pub use synthetic::{generate_synthetic, ModalityMode, ShapeFamily, SyntheticSceneConfig};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("class {class} has {found} instance(s); leave-one-out needs at least 2")]
    TooFewInstances { class: usize, found: usize },
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Image(#[from] ImageIoError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

impl HarnessError {
    /// True for errors caused by bad settings rather than bad input data.
    pub fn is_config(&self) -> bool {
        match self {
            Self::Config(_) => true,
            Self::Nn(e) => matches!(e, NnError::InvalidConfig(_) | NnError::NotPretrained),
            Self::Noise(e) => matches!(
                e,
                NoiseError::InvalidProbability(_) | NoiseError::InvalidGroups(_) | NoiseError::InsufficientGroups(_)
            ),
            Self::Geometry(GeometryError::ZeroTarget) => true,
            Self::Encoding(EncodingError::InvalidIntrinsics) => true,
            _ => false,
        }
    }

    pub(crate) fn io(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |source| Self::Io { path: path.display().to_string(), source }
    }
}
