use std::collections::btree_map::Entry;
use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::BBox;
use crate::stdensenet::{Normalization, Sample};

use super::evaluate::{FrameSource, GroundTruth};
use super::frame::{crop_and_resize, Frame};
use super::scenario::{synthesize_scenario, ScenarioConfig};
use super::window::{TrackWindow, WINDOW_LEN};
use super::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub num_sequences: usize,
    pub crop_size: usize,
    /// Per-frame Gaussian jitter (pixels) on the crop boxes, mimicking tracker output.
    pub box_jitter: f64,
    pub scenario: ScenarioConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            num_sequences: 200,
            crop_size: 32,
            box_jitter: 1.0,
            scenario: ScenarioConfig::default(),
        }
    }
}

/// Seed of the `k`-th scenario drawn for a dataset.
pub fn scenario_seed(seed: u64, k: u64) -> u64 {
    seed.wrapping_mul(0x2545_F491_4F6C_DD1D).wrapping_add(k.wrapping_mul(0x9E37_79B9)) ^ 0xD1B5_4A32
}

/// Labelled 16-frame clips, one per agent, cut from a stream of seeded scenarios. Each
/// clip ends at a frame drawn from the agent's pre-onset horizon.
pub fn synthesize_dataset(
    config: &DatasetConfig,
    normalization: &Normalization,
    seed: u64,
) -> Result<Vec<Sample<f32>>, PipelineError> {
    if config.num_sequences == 0 {
        return Err(PipelineError::InvalidConfig("dataset needs at least one sequence".into()));
    }
    config.scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(config.num_sequences);
    let mut k = 0u64;
    while out.len() < config.num_sequences {
        let scenario = synthesize_scenario(&config.scenario, scenario_seed(seed, k))?;
        k += 1;
        let truth = GroundTruth::from_scenario(&scenario);
        let clips = ClipSpec { crop_size: config.crop_size, box_jitter: config.box_jitter, limit: config.num_sequences };
        clips_from_truth(&scenario, &truth, &clips, normalization, &mut rng, &mut out)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipSpec {
    pub crop_size: usize,
    pub box_jitter: f64,
    /// Stop once `out` holds this many samples.
    pub limit: usize,
}

/// Appends one clip per agent whose track covers a full window inside its pre-onset
/// horizon. Crops use the ground-truth boxes plus per-frame jitter.
pub fn clips_from_truth<S: FrameSource + ?Sized>(
    frames: &S,
    truth: &GroundTruth,
    spec: &ClipSpec,
    normalization: &Normalization,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<Sample<f32>>,
) -> Result<(), PipelineError> {
    if spec.crop_size == 0 {
        return Err(PipelineError::InvalidConfig("crop size must be >= 1".into()));
    }
    if !(spec.box_jitter >= 0.0 && spec.box_jitter.is_finite()) {
        return Err(PipelineError::InvalidConfig("box_jitter must be finite and non-negative".into()));
    }
    let jitter = Normal::new(0.0, spec.box_jitter).expect("finite sigma");
    let span = WINDOW_LEN as i64 - 1;
    let mut cache: BTreeMap<i64, Frame> = BTreeMap::new();
    for agent in &truth.agents {
        if out.len() >= spec.limit {
            break;
        }
        // Window ends whose 16 frames all carry a box of this agent.
        let ends: Vec<i64> = ((agent.onset - WINDOW_LEN as i64)..agent.onset)
            .filter(|&e| (e - span..=e).all(|t| agent.boxes.contains_key(&t)))
            .collect();
        if ends.is_empty() {
            continue;
        }
        let end = ends[rng.random_range(0..ends.len())];
        let mut window = TrackWindow::new(agent.id);
        for t in end - span..=end {
            if let Entry::Vacant(slot) = cache.entry(t) {
                slot.insert(frames.frame(t)?);
            }
            let [l, top, w, h] = agent.boxes[&t].to_ltwh();
            let mut b = [l, top, w, h];
            if spec.box_jitter > 0.0 {
                for v in &mut b {
                    *v += jitter.sample(rng);
                }
            }
            let bbox = BBox::from_ltwh(b[0], b[1], b[2].max(2.0), b[3].max(2.0))?;
            window.push(t, crop_and_resize(&cache[&t], &bbox, spec.crop_size)?)?;
        }
        out.push(Sample {
            clip: window.to_tensor(normalization)?,
            label: agent.intent.class(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clips_have_window_shape_and_both_labels() {
        let config = DatasetConfig { num_sequences: 12, crop_size: 8, ..DatasetConfig::default() };
        let data = synthesize_dataset(&config, &Normalization::default(), 1).unwrap();
        assert_eq!(data.len(), 12);
        assert!(data.iter().all(|s| s.clip.dims() == [1, 3, 16, 8, 8]));
        assert!(data.iter().any(|s| s.label == 0) && data.iter().any(|s| s.label == 1));
        let again = synthesize_dataset(&config, &Normalization::default(), 1).unwrap();
        assert_eq!(data, again);
    }
}
