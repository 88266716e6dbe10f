use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::geometry::{iou, BBox};
use crate::tracking::{hungarian, TrackOutput};

use super::PipelineError;

/// Area under the stepwise precision-recall curve, ranking by descending score.
/// Items with equal scores enter together as one threshold.
pub fn average_precision(items: &[(f64, bool)]) -> Result<f64, PipelineError> {
    if items.iter().any(|(s, _)| !s.is_finite()) {
        return Err(PipelineError::InvalidScore);
    }
    let positives = items.iter().filter(|(_, y)| *y).count();
    if positives == 0 {
        return Err(PipelineError::NoPositives);
    }
    let mut sorted = items.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let score = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == score {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / positives as f64;
        if recall > prev_recall {
            ap += (recall - prev_recall) * tp as f64 / (tp + fp) as f64;
            prev_recall = recall;
        }
    }
    Ok(ap)
}

/// Precision and recall of one class when each item is assigned to the class with
/// `p >= threshold`. `None` where the ratio has an empty denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub support: usize,
}

/// `(cross, not_cross)` metrics from `(p_cross, is_cross)` pairs.
pub fn class_metrics(items: &[(f64, bool)], threshold: f64) -> (ClassMetrics, ClassMetrics) {
    let ratio = |a: usize, b: usize| if b == 0 { None } else { Some(a as f64 / b as f64) };
    let metrics = |positive: bool| {
        let predicted = |p: f64| (p >= threshold) == positive;
        let tp = items.iter().filter(|(p, y)| predicted(*p) && *y == positive).count();
        let pred = items.iter().filter(|(p, _)| predicted(*p)).count();
        let actual = items.iter().filter(|(_, y)| *y == positive).count();
        ClassMetrics {
            precision: ratio(tp, pred),
            recall: ratio(tp, actual),
            support: actual,
        }
    };
    (metrics(true), metrics(false))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentIdentity {
    pub agent_id: u64,
    /// Track id matched most often, if the agent was ever matched.
    pub dominant_track: Option<u64>,
    pub frames_present: usize,
    pub frames_on_dominant: usize,
    /// Distinct track ids the agent was matched to.
    pub track_ids: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    /// Pooled fraction of agent-frames covered by the agent's dominant track id.
    pub consistency: f64,
    pub agents: Vec<AgentIdentity>,
}

/// Matches ground-truth agents to reported tracks frame by frame (Hungarian on `1 - IOU`,
/// pairs kept at `IOU >= iou_min`) and measures how much of each agent's lifetime is
/// covered by a single track id.
pub fn identity_consistency(
    truth: &BTreeMap<i64, Vec<(u64, BBox)>>,
    tracks: &BTreeMap<i64, Vec<TrackOutput>>,
    iou_min: f64,
) -> Result<IdentityReport, PipelineError> {
    let mut present: BTreeMap<u64, usize> = BTreeMap::new();
    let mut counts: BTreeMap<u64, HashMap<u64, usize>> = BTreeMap::new();
    let empty = Vec::new();
    for (frame, agents) in truth {
        let outputs = tracks.get(frame).unwrap_or(&empty);
        for (id, _) in agents {
            *present.entry(*id).or_default() += 1;
        }
        for (a, t) in match_boxes(agents, outputs, iou_min)? {
            *counts.entry(agents[a].0).or_default().entry(outputs[t].id).or_default() += 1;
        }
    }
    let mut total_present = 0;
    let mut total_dominant = 0;
    let agents: Vec<AgentIdentity> = present
        .iter()
        .map(|(&agent_id, &frames_present)| {
            let c = counts.get(&agent_id);
            // Highest count wins; the lower track id breaks ties.
            let dominant = c.and_then(|m| m.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))));
            let frames_on_dominant = dominant.map_or(0, |(_, n)| *n);
            total_present += frames_present;
            total_dominant += frames_on_dominant;
            AgentIdentity {
                agent_id,
                dominant_track: dominant.map(|(id, _)| *id),
                frames_present,
                frames_on_dominant,
                track_ids: c.map_or(0, |m| m.len()),
            }
        })
        .collect();
    let consistency = if total_present == 0 {
        1.0
    } else {
        total_dominant as f64 / total_present as f64
    };
    Ok(IdentityReport { consistency, agents })
}

/// Index pairs `(agent, track)` of the minimum `1 - IOU` assignment with `IOU >= iou_min`.
pub fn match_boxes(
    agents: &[(u64, BBox)],
    tracks: &[TrackOutput],
    iou_min: f64,
) -> Result<Vec<(usize, usize)>, PipelineError> {
    if agents.is_empty() || tracks.is_empty() {
        return Ok(Vec::new());
    }
    let cost: Vec<Vec<f64>> = agents
        .iter()
        .map(|(_, g)| tracks.iter().map(|t| 1.0 - iou(g, &t.bbox)).collect())
        .collect();
    Ok(hungarian(&cost)?
        .into_iter()
        .filter(|&(a, t)| 1.0 - cost[a][t] >= iou_min)
        .collect())
}
