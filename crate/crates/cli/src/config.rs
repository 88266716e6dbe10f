//! Run configuration: defaults, a JSON file of flat dotted keys, then `--set` and flag
//! overrides, in that order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use pedestrian_intent::pipeline::{EvalConfig, ScenarioConfig};
use pedestrian_intent::stdensenet::{AdamConfig, StDenseNetConfig};
use pedestrian_intent::tracking::{NoiseConfig, SigmaPointParams, TrackerConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackerSettings {
    pub iou_min: f64,
    pub max_age: u32,
    pub min_hits: u32,
    /// Diagonal of the process noise over `(u, v, s, r, u', v', s')`.
    pub process_noise: [f64; 7],
    /// Diagonal of the measurement noise over `(u, v, s, r)`.
    pub measurement_noise: [f64; 4],
    pub initial_covariance: [f64; 7],
    pub sigma: SigmaPointParams,
}

impl Default for TrackerSettings {
    fn default() -> Self {
        let base = TrackerConfig::default();
        let noise = NoiseConfig::default();
        Self {
            iou_min: base.iou_min,
            max_age: base.max_age,
            min_hits: base.min_hits,
            process_noise: std::array::from_fn(|i| noise.process[(i, i)]),
            measurement_noise: std::array::from_fn(|i| noise.measurement[(i, i)]),
            initial_covariance: base.initial_covariance,
            sigma: base.sigma,
        }
    }
}

impl TrackerSettings {
    pub fn to_config(&self) -> Result<TrackerConfig, CliError> {
        let config = TrackerConfig {
            iou_min: self.iou_min,
            max_age: self.max_age,
            min_hits: self.min_hits,
            noise: NoiseConfig::from_diagonals(self.process_noise, self.measurement_noise)?,
            sigma: self.sigma,
            initial_covariance: self.initial_covariance,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Clips drawn for `--synth` training.
    pub num_sequences: usize,
    /// Gaussian jitter (pixels) on the crop boxes of training clips.
    pub box_jitter: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            epochs: 70,
            batch_size: 10,
            adam: AdamConfig::default(),
            num_sequences: 200,
            box_jitter: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckSettings {
    pub batch: usize,
    pub step: f64,
    pub tolerance: f64,
    pub floor: f64,
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        Self {
            batch: 2,
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Selects the small model defaults; resolved before anything else.
    pub reduced: bool,
    pub tracker: TrackerSettings,
    pub model: StDenseNetConfig,
    pub train: TrainSettings,
    pub scenario: ScenarioConfig,
    pub eval: EvalConfig,
    pub gradcheck: GradcheckSettings,
}

impl RunConfig {
    pub fn defaults(reduced: bool) -> Self {
        Self {
            seed: 0,
            reduced,
            tracker: TrackerSettings::default(),
            model: if reduced { StDenseNetConfig::reduced() } else { StDenseNetConfig::default() },
            train: TrainSettings::default(),
            scenario: ScenarioConfig::default(),
            eval: EvalConfig::default(),
            gradcheck: GradcheckSettings::default(),
        }
    }

    /// Every setting as `key = value` lines in key order.
    pub fn to_lines(&self) -> Vec<String> {
        let value = serde_json::to_value(self).expect("config serializes");
        flatten(&value).into_iter().map(|(k, v)| format!("{k} = {v}")).collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.tracker.to_config()?;
        self.model.validate()?;
        self.scenario.validate()?;
        self.train.adam.validate()?;
        if self.train.batch_size == 0 || self.train.num_sequences == 0 {
            return Err(CliError::Validation("train.batch_size and train.num_sequences must be >= 1".into()));
        }
        if !(self.eval.match_iou > 0.0 && self.eval.match_iou <= 1.0) {
            return Err(CliError::Validation("eval.match_iou must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Flattens nested objects into dotted keys. Arrays and scalars are leaves.
pub fn flatten(value: &Value) -> BTreeMap<String, Value> {
    fn walk(prefix: &str, value: &Value, out: &mut BTreeMap<String, Value>) {
        match value {
            Value::Object(map) => {
                for (k, v) in map {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, v, out);
                }
            }
            leaf => {
                out.insert(prefix.to_string(), leaf.clone());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk("", value, &mut out);
    out
}

pub fn unflatten(flat: &BTreeMap<String, Value>) -> Value {
    let mut root = Map::new();
    for (key, value) in flat {
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for part in &parts[..parts.len() - 1] {
            node = node
                .entry(part.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("prefix keys hold objects");
        }
        node.insert(parts[parts.len() - 1].to_string(), value.clone());
    }
    Value::Object(root)
}

/// Parses `key=value`. The value is read as JSON when it parses, else as a string.
pub fn parse_assignment(s: &str) -> Result<(String, Value), CliError> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| CliError::Validation(format!("--set expects KEY=VALUE, got {s:?}")))?;
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.trim().to_string(), value))
}

pub fn read_file(path: &Path) -> Result<BTreeMap<String, Value>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
    let Value::Object(map) = value else {
        return Err(CliError::Validation(format!("config {} must be a JSON object", path.display())));
    };
    let mut out = BTreeMap::new();
    for (k, v) in map {
        if v.is_object() {
            return Err(CliError::Validation(format!(
                "config key {k:?} holds an object; use flat dotted keys"
            )));
        }
        out.insert(k, v);
    }
    Ok(out)
}

/// Applies the file entries and then `overrides` on top of the defaults.
pub fn resolve(file: &BTreeMap<String, Value>, overrides: &[(String, Value)]) -> Result<RunConfig, CliError> {
    let mut reduced = false;
    for (k, v) in file.iter().chain(overrides.iter().map(|(k, v)| (k, v))) {
        if k == "reduced" {
            reduced = v
                .as_bool()
                .ok_or_else(|| CliError::Validation("reduced must be true or false".into()))?;
        }
    }
    let defaults = serde_json::to_value(RunConfig::defaults(reduced)).expect("config serializes");
    let mut flat = flatten(&defaults);
    for (k, v) in file.iter().chain(overrides.iter().map(|(k, v)| (k, v))) {
        match flat.get_mut(k) {
            Some(slot) => *slot = v.clone(),
            None => return Err(CliError::Validation(format!("unknown config key {k:?}"))),
        }
    }
    let config: RunConfig = serde_json::from_value(unflatten(&flat))
        .map_err(|e| CliError::Validation(format!("invalid config value: {e}")))?;
    config.validate()?;
    Ok(config)
}
