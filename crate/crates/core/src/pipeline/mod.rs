//! Second stage: per-track crop windows, intent scoring, metrics, and the synthetic
//! scenarios used for training and evaluation.

pub mod dataset;
pub mod evaluate;
pub mod frame;
pub mod io;
pub mod metrics;
pub mod predict;
pub mod scenario;
pub mod window;

pub use dataset::{clips_from_truth, synthesize_dataset, ClipSpec, DatasetConfig};
pub use evaluate::{
    evaluate, evaluate_scenario, run_pipeline, scenario_detections, AgentTruth, EvalConfig, EvaluationReport,
    FrameSource, GroundTruth, PipelineRun, StageTiming,
};
pub use frame::{crop_and_resize, Frame, Patch};
pub use metrics::{average_precision, class_metrics, identity_consistency, ClassMetrics, IdentityReport};
pub use predict::{IntentClassifier, IntentPredictor, IntentScore, ModelClassifier, WindowRequest, CROSS, NOT_CROSS};
pub use scenario::{synthesize_scenario, Agent, Appearance, Detection, DetectionNoise, Intent, Scenario, ScenarioConfig};
pub use window::{TrackWindow, WINDOW_LEN};

use crate::geometry::{BBox, GeometryError};
use crate::stdensenet::NetError;
use crate::tracking::TrackingError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("box {bbox:?} lies entirely outside frame {frame}")]
    OutsideFrame { frame: i64, bbox: BBox },
    #[error("window of track {track_id} holds {len} crops, not a full window")]
    WindowNotReady { track_id: u64, len: usize },
    #[error("average precision needs at least one positive label")]
    NoPositives,
    #[error("scores must be finite")]
    InvalidScore,
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Tracking(#[from] TrackingError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
