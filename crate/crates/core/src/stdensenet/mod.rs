//! Spatio-temporal DenseNet over `(N, C, D, H, W)` clips, with backpropagation, Adam
//! training and a float32 weights container.

pub mod adam;
pub mod batchnorm;
pub mod conv;
pub mod gradcheck;
pub mod io;
pub mod layers;
pub mod loss;
pub mod model;
pub mod pool;
pub mod tensor;
pub mod train;

pub use adam::{AdamConfig, AdamState};
pub use batchnorm::{BatchNormLayer, Mode};
pub use conv::{conv3d_forward, Conv3dLayer};
pub use gradcheck::{gradient_check, GradCheckConfig, GradCheckReport};
pub use io::{from_bytes, load, save, to_bytes};
pub use layers::{BnReluConv, ClassifierHead, DenseBlock3d, Layer, Linear, Stem, TransitionLayer3d};
pub use loss::{cross_entropy, softmax, softmax_rows};
pub use model::{Normalization, ShapeTrace, StDenseNet, StDenseNetConfig};
pub use pool::{avg_pool3d_forward, AvgPool3d};
pub use tensor::{Param, Scalar, Tensor5};
pub use train::{accuracy, argmax, train, train_with, EpochStats, Sample, TrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("backward called on {0} without a recorded forward pass")]
    MissingForward(&'static str),
    #[error("label {label} is outside 0..{classes}")]
    InvalidLabel { label: usize, classes: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("malformed weights container: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
