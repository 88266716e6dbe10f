//! SORT-style multi-object tracking with an unscented Kalman filter.
//!
//! Each track carries a Gaussian belief over `[u, v, s, r, du, dv, ds]` (box center,
//! area, aspect ratio and the first three rates). Frames are processed by predicting
//! every live track one step, assigning detections with the Hungarian method on
//! `1 - IOU`, updating matched tracks and spawning tracks for unmatched detections.

mod association;
mod hungarian;
mod tracker;
mod ukf;

pub use association::{associate, AssociationResult};
pub use hungarian::{assignment_cost, hungarian};
pub use tracker::{Track, TrackOutput, Tracker, TrackerConfig};
pub use ukf::{
    generate_sigma_points, psd_sqrt, ukf_predict, ukf_predict_with, ukf_update, ConstantVelocity,
    Covariance, GaussianBelief, MotionModel, NoiseConfig, SigmaPointParams, SigmaPoints, State,
    STATE_DIM,
};

use thiserror::Error;

use crate::geometry::GeometryError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackingError {
    #[error("covariance matrix square root failed: matrix is not positive semi-definite even after jitter {jitter:e}")]
    MatrixSqrt { jitter: f64 },
    #[error("innovation covariance is singular")]
    SingularInnovation,
    #[error("invalid sigma-point parameters: {0}")]
    InvalidSigmaParams(String),
    #[error("invalid noise configuration: {0}")]
    InvalidNoise(String),
    #[error("invalid belief: {0}")]
    InvalidBelief(String),
    #[error("invalid tracker configuration: {0}")]
    InvalidConfig(String),
    #[error("frame index {got} is not after previous frame {previous}")]
    NonMonotonicFrame { previous: i64, got: i64 },
    #[error("cost matrix row {row} has {got} columns, expected {expected}")]
    RaggedCost {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("cost matrix entry ({row}, {col}) is not finite")]
    NonFiniteCost { row: usize, col: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}
