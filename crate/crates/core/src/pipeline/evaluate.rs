use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::geometry::BBox;
use crate::tracking::{TrackOutput, Tracker, TrackerConfig};

use super::frame::Frame;
use super::metrics::{average_precision, class_metrics, identity_consistency, match_boxes, ClassMetrics};
use super::predict::{IntentClassifier, IntentPredictor, IntentScore};
use super::scenario::{Intent, Scenario};
use super::window::WINDOW_LEN;
use super::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTruth {
    pub id: u64,
    pub intent: Intent,
    pub onset: i64,
    pub boxes: BTreeMap<i64, BBox>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub agents: Vec<AgentTruth>,
}

impl GroundTruth {
    pub fn from_scenario(scenario: &Scenario) -> Self {
        Self {
            agents: scenario
                .agents
                .iter()
                .map(|a| AgentTruth {
                    id: a.id,
                    intent: a.intent,
                    onset: a.onset,
                    boxes: a.boxes.iter().enumerate().map(|(t, b)| (t as i64, *b)).collect(),
                })
                .collect(),
        }
    }

    pub fn agent(&self, id: u64) -> Option<&AgentTruth> {
        self.agents.iter().find(|a| a.id == id)
    }

    /// `(agent_id, box)` lists keyed by frame.
    pub fn per_frame(&self) -> BTreeMap<i64, Vec<(u64, BBox)>> {
        let mut out: BTreeMap<i64, Vec<(u64, BBox)>> = BTreeMap::new();
        for a in &self.agents {
            for (&f, &b) in &a.boxes {
                out.entry(f).or_default().push((a.id, b));
            }
        }
        out
    }
}

/// Random access to the frames of a sequence.
pub trait FrameSource {
    fn frame(&self, index: i64) -> Result<Frame, PipelineError>;
}

impl FrameSource for Scenario {
    fn frame(&self, index: i64) -> Result<Frame, PipelineError> {
        self.render_frame(index)
    }
}

/// Everything the two stages emitted over one sequence.
#[derive(Debug, Clone, Default)]
pub struct PipelineRun {
    pub tracks: BTreeMap<i64, Vec<TrackOutput>>,
    pub scores: Vec<IntentScore>,
    pub frames: usize,
    pub tracking_time: Duration,
    pub prediction_time: Duration,
}

/// Tracks the detections frame by frame and scores every ready window. Frame loading is
/// not timed; the prediction stage covers cropping, window upkeep and inference.
pub fn run_pipeline<S: FrameSource + ?Sized, C: IntentClassifier + ?Sized>(
    frames: &S,
    detections: &[(i64, Vec<BBox>)],
    tracker_config: &TrackerConfig,
    classifier: &C,
) -> Result<PipelineRun, PipelineError> {
    let mut tracker = Tracker::new(tracker_config.clone())?;
    let mut predictor = IntentPredictor::new();
    let mut run = PipelineRun::default();
    for (index, boxes) in detections {
        let start = Instant::now();
        let outputs = tracker.step(*index, boxes)?;
        run.tracking_time += start.elapsed();
        let frame = frames.frame(*index)?;
        let start = Instant::now();
        let scores = predictor.step(&frame, &outputs, classifier)?;
        run.prediction_time += start.elapsed();
        run.scores.extend(scores);
        run.tracks.insert(*index, outputs);
        run.frames += 1;
    }
    Ok(run)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// A window counts when its newest frame lies in `[onset - horizon, onset - 1]`.
    pub horizon: usize,
    /// Minimum IOU for a track to be matched to a ground-truth agent.
    pub match_iou: f64,
    /// Decision threshold on `p_cross` for the per-class precision and recall.
    pub threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            horizon: WINDOW_LEN,
            match_iou: 0.5,
            threshold: 0.5,
        }
    }
}

/// Mean wall-clock milliseconds per frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub tracking_ms: f64,
    pub prediction_ms: f64,
    pub total_ms: f64,
    pub fps: f64,
}

impl StageTiming {
    pub fn from_totals(tracking: Duration, prediction: Duration, frames: usize) -> Self {
        let per = |d: Duration| if frames == 0 { 0.0 } else { d.as_secs_f64() * 1e3 / frames as f64 };
        let (tracking_ms, prediction_ms) = (per(tracking), per(prediction));
        let total_ms = tracking_ms + prediction_ms;
        Self {
            tracking_ms,
            prediction_ms,
            total_ms,
            fps: if total_ms > 0.0 { 1e3 / total_ms } else { f64::INFINITY },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub frames: usize,
    pub track_count: usize,
    pub identity_consistency: f64,
    pub scored_windows: usize,
    pub evaluated_windows: usize,
    pub positives: usize,
    /// `None` when no evaluated window belongs to a crossing agent.
    pub average_precision: Option<f64>,
    /// Fraction of evaluated windows whose larger probability is on the true label.
    pub majority_correct: Option<f64>,
    pub cross: ClassMetrics,
    pub not_cross: ClassMetrics,
    pub timing: StageTiming,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.6}"))
}

impl EvaluationReport {
    /// The deterministic part of the report: every metric except wall-clock timing.
    pub fn metrics_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "frames = {}", self.frames);
        let _ = writeln!(s, "track_count = {}", self.track_count);
        let _ = writeln!(s, "identity_consistency = {:.6}", self.identity_consistency);
        let _ = writeln!(s, "scored_windows = {}", self.scored_windows);
        let _ = writeln!(s, "evaluated_windows = {}", self.evaluated_windows);
        let _ = writeln!(s, "positives = {}", self.positives);
        let _ = writeln!(s, "average_precision = {}", fmt_opt(self.average_precision));
        let _ = writeln!(s, "majority_correct = {}", fmt_opt(self.majority_correct));
        let _ = writeln!(s, "cross_precision = {}", fmt_opt(self.cross.precision));
        let _ = writeln!(s, "cross_recall = {}", fmt_opt(self.cross.recall));
        let _ = writeln!(s, "not_cross_precision = {}", fmt_opt(self.not_cross.precision));
        let _ = writeln!(s, "not_cross_recall = {}", fmt_opt(self.not_cross.recall));
        s
    }

    pub fn timing_text(&self) -> String {
        let t = self.timing;
        format!(
            "tracking_ms = {:.3}\nprediction_ms = {:.3}\ntotal_ms = {:.3}\nfps = {:.1}\n",
            t.tracking_ms, t.prediction_ms, t.total_ms, t.fps
        )
    }

    pub fn to_text(&self) -> String {
        self.metrics_text() + &self.timing_text()
    }
}

/// Agent matched to each `(frame, track_id)` by per-frame assignment.
pub fn track_agent_matches(
    truth: &GroundTruth,
    tracks: &BTreeMap<i64, Vec<TrackOutput>>,
    iou_min: f64,
) -> Result<HashMap<(i64, u64), u64>, PipelineError> {
    let per_frame = truth.per_frame();
    let mut out = HashMap::new();
    for (frame, outputs) in tracks {
        let Some(agents) = per_frame.get(frame) else { continue };
        for (a, t) in match_boxes(agents, outputs, iou_min)? {
            out.insert((*frame, outputs[t].id), agents[a].0);
        }
    }
    Ok(out)
}

/// `(p_cross, is_cross)` for every score whose window ends inside its agent's horizon.
pub fn evaluation_items(
    run: &PipelineRun,
    truth: &GroundTruth,
    config: &EvalConfig,
) -> Result<Vec<(f64, bool)>, PipelineError> {
    let matches = track_agent_matches(truth, &run.tracks, config.match_iou)?;
    let agents: HashMap<u64, &AgentTruth> = truth.agents.iter().map(|a| (a.id, a)).collect();
    Ok(run
        .scores
        .iter()
        .filter_map(|s| {
            let agent = agents[matches.get(&(s.frame_index, s.track_id))?];
            let lo = agent.onset - config.horizon as i64;
            (lo..agent.onset)
                .contains(&s.frame_index)
                .then_some((s.p_cross, agent.intent == Intent::Cross))
        })
        .collect())
}

pub fn evaluate(run: &PipelineRun, truth: &GroundTruth, config: &EvalConfig) -> Result<EvaluationReport, PipelineError> {
    let items = evaluation_items(run, truth, config)?;
    let positives = items.iter().filter(|(_, y)| *y).count();
    let average_precision = match average_precision(&items) {
        Ok(ap) => Some(ap),
        Err(PipelineError::NoPositives) => None,
        Err(e) => return Err(e),
    };
    let majority_correct = (!items.is_empty()).then(|| {
        items.iter().filter(|(p, y)| (*p > 0.5) == *y).count() as f64 / items.len() as f64
    });
    let (cross, not_cross) = class_metrics(&items, config.threshold);
    let identity = identity_consistency(&truth.per_frame(), &run.tracks, config.match_iou)?;
    let mut ids: Vec<u64> = run.tracks.values().flatten().map(|t| t.id).collect();
    ids.sort_unstable();
    ids.dedup();
    Ok(EvaluationReport {
        frames: run.frames,
        track_count: ids.len(),
        identity_consistency: identity.consistency,
        scored_windows: run.scores.len(),
        evaluated_windows: items.len(),
        positives,
        average_precision,
        majority_correct,
        cross,
        not_cross,
        timing: StageTiming::from_totals(run.tracking_time, run.prediction_time, run.frames),
    })
}

/// Runs both stages on a synthetic scenario and scores them against its ground truth.
pub fn evaluate_scenario<C: IntentClassifier + ?Sized>(
    scenario: &Scenario,
    classifier: &C,
    tracker_config: &TrackerConfig,
    config: &EvalConfig,
) -> Result<(PipelineRun, EvaluationReport), PipelineError> {
    let detections = scenario_detections(scenario);
    let run = run_pipeline(scenario, &detections, tracker_config, classifier)?;
    let report = evaluate(&run, &GroundTruth::from_scenario(scenario), config)?;
    Ok((run, report))
}

/// Detection boxes of every scenario frame, in order.
pub fn scenario_detections(scenario: &Scenario) -> Vec<(i64, Vec<BBox>)> {
    scenario
        .detections
        .iter()
        .enumerate()
        .map(|(t, d)| (t as i64, d.iter().map(|x| x.bbox).collect()))
        .collect()
}
