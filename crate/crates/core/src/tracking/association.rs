use super::{hungarian, TrackingError};
use crate::geometry::{iou, BBox};

/// Output of one association round. Indices refer to the input slices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AssociationResult {
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Hungarian assignment on `1 - IOU`, then gating: any pair below `iou_min` is split.
pub fn associate(
    predicted: &[BBox],
    detections: &[BBox],
    iou_min: f64,
) -> Result<AssociationResult, TrackingError> {
    if !(0.0..=1.0).contains(&iou_min) {
        return Err(TrackingError::InvalidConfig(format!(
            "iou_min must lie in [0, 1], got {iou_min}"
        )));
    }
    let overlap: Vec<Vec<f64>> = predicted
        .iter()
        .map(|t| detections.iter().map(|d| iou(t, d)).collect())
        .collect();
    let cost: Vec<Vec<f64>> = overlap
        .iter()
        .map(|row| row.iter().map(|v| 1.0 - v).collect())
        .collect();
    let pairs = if predicted.is_empty() || detections.is_empty() {
        Vec::new()
    } else {
        hungarian(&cost)?
    };

    let mut track_used = vec![false; predicted.len()];
    let mut det_used = vec![false; detections.len()];
    let mut matches = Vec::with_capacity(pairs.len());
    for (t, d) in pairs {
        if overlap[t][d] >= iou_min && overlap[t][d] > 0.0 {
            track_used[t] = true;
            det_used[d] = true;
            matches.push((t, d));
        }
    }
    Ok(AssociationResult {
        matches,
        unmatched_tracks: (0..predicted.len()).filter(|&t| !track_used[t]).collect(),
        unmatched_detections: (0..detections.len()).filter(|&d| !det_used[d]).collect(),
    })
}
