use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geometry::BBox;
use crate::stdensenet::{StDenseNet, Tensor5};
use crate::tracking::TrackOutput;

use super::frame::{crop_and_resize, Frame};
use super::window::{TrackWindow, WINDOW_LEN};
use super::PipelineError;

/// Class index of "will cross" in the classifier output.
pub const CROSS: usize = 1;
pub const NOT_CROSS: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntentScore {
    pub track_id: u64,
    pub frame_index: i64,
    pub p_cross: f64,
    pub p_not_cross: f64,
}

/// One ready window awaiting a score.
#[derive(Debug, Clone, Copy)]
pub struct WindowRequest<'a> {
    pub track_id: u64,
    pub frame_index: i64,
    pub bbox: BBox,
    pub window: &'a TrackWindow,
}

/// Anything that maps ready windows to `[p_not_cross, p_cross]` rows.
pub trait IntentClassifier {
    /// Side length of the square crops the classifier consumes.
    fn crop_size(&self) -> usize;
    fn classify(&self, requests: &[WindowRequest<'_>]) -> Result<Vec<[f64; 2]>, PipelineError>;
}

/// Batched eval-mode inference with a trained network.
#[derive(Debug, Clone)]
pub struct ModelClassifier {
    model: StDenseNet<f32>,
    max_batch: usize,
}

impl ModelClassifier {
    pub fn new(model: StDenseNet<f32>) -> Result<Self, PipelineError> {
        let c = model.config();
        if c.input_height != c.input_width || c.input_depth != WINDOW_LEN || c.input_channels != 3 || c.num_classes != 2 {
            return Err(PipelineError::InvalidConfig(format!(
                "model input {:?} with {} classes cannot score {WINDOW_LEN}-frame RGB windows",
                c.input_dims(),
                c.num_classes
            )));
        }
        Ok(Self { model, max_batch: 16 })
    }

    pub fn model(&self) -> &StDenseNet<f32> {
        &self.model
    }
}

impl IntentClassifier for ModelClassifier {
    fn crop_size(&self) -> usize {
        self.model.config().input_width
    }

    fn classify(&self, requests: &[WindowRequest<'_>]) -> Result<Vec<[f64; 2]>, PipelineError> {
        let mut out = Vec::with_capacity(requests.len());
        for chunk in requests.chunks(self.max_batch) {
            let clips = chunk
                .iter()
                .map(|r| r.window.to_tensor(self.model.normalization()))
                .collect::<Result<Vec<_>, _>>()?;
            let refs: Vec<&Tensor5<f32>> = clips.iter().collect();
            let probs = self.model.forward(&Tensor5::stack(&refs)?)?;
            out.extend(probs.iter().map(|p| [f64::from(p[NOT_CROSS]), f64::from(p[CROSS])]));
        }
        Ok(out)
    }
}

/// Keeps one window per live track and scores every ready window each frame.
#[derive(Debug, Clone, Default)]
pub struct IntentPredictor {
    windows: BTreeMap<u64, TrackWindow>,
}

impl IntentPredictor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn windows(&self) -> impl Iterator<Item = &TrackWindow> {
        self.windows.values()
    }

    /// Pushes this frame's crop of every reported track; windows of tracks that are no
    /// longer reported are dropped. A crop that falls outside the frame restarts the
    /// track's window.
    pub fn step<C: IntentClassifier + ?Sized>(
        &mut self,
        frame: &Frame,
        tracks: &[TrackOutput],
        classifier: &C,
    ) -> Result<Vec<IntentScore>, PipelineError> {
        let size = classifier.crop_size();
        self.windows.retain(|id, _| tracks.iter().any(|t| t.id == *id));
        let mut ready = Vec::new();
        for t in tracks {
            let window = self.windows.entry(t.id).or_insert_with(|| TrackWindow::new(t.id));
            match crop_and_resize(frame, &t.bbox, size) {
                Ok(patch) => {
                    window.push(frame.index, patch)?;
                    if window.is_ready() {
                        ready.push(*t);
                    }
                }
                Err(PipelineError::OutsideFrame { .. }) => window.clear(),
                Err(e) => return Err(e),
            }
        }
        let requests: Vec<WindowRequest<'_>> = ready
            .iter()
            .map(|t| WindowRequest {
                track_id: t.id,
                frame_index: frame.index,
                bbox: t.bbox,
                window: &self.windows[&t.id],
            })
            .collect();
        if requests.is_empty() {
            return Ok(Vec::new());
        }
        let probs = classifier.classify(&requests)?;
        if probs.len() != requests.len() {
            return Err(PipelineError::InvalidConfig(format!(
                "classifier returned {} rows for {} windows",
                probs.len(),
                requests.len()
            )));
        }
        Ok(requests
            .iter()
            .zip(probs)
            .map(|(r, p)| IntentScore {
                track_id: r.track_id,
                frame_index: r.frame_index,
                p_cross: p[1],
                p_not_cross: p[0],
            })
            .collect())
    }
}
