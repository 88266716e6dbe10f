use serde::{Deserialize, Serialize};

use super::ukf::{ukf_predict, ukf_update, Covariance, GaussianBelief, NoiseConfig, SigmaPointParams, State};
use super::{associate, TrackingError};
use crate::geometry::{bbox_to_observation, observation_to_bbox, BBox, Observation};

/// Floor applied to `s` and `r` when reading a box out of a belief.
const MIN_BOX_PARAM: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    pub iou_min: f64,
    pub max_age: u32,
    pub min_hits: u32,
    pub noise: NoiseConfig,
    pub sigma: SigmaPointParams,
    /// Diagonal of the covariance given to a freshly spawned track.
    pub initial_covariance: [f64; 7],
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            iou_min: 0.3,
            max_age: 3,
            min_hits: 3,
            noise: NoiseConfig::default(),
            sigma: SigmaPointParams::default(),
            initial_covariance: [10.0, 10.0, 100.0, 1e-2, 1e3, 1e3, 1e2],
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackingError> {
        if !(0.0..=1.0).contains(&self.iou_min) {
            return Err(TrackingError::InvalidConfig(format!(
                "iou_min must lie in [0, 1], got {}",
                self.iou_min
            )));
        }
        if self.initial_covariance.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(TrackingError::InvalidConfig(
                "initial covariance diagonal must be finite and non-negative".into(),
            ));
        }
        self.noise.validate()?;
        self.sigma.validate(7)
    }
}

/// One identity-bearing track.
#[derive(Debug, Clone)]
pub struct Track {
    id: u64,
    belief: GaussianBelief,
    hits: u32,
    age: u32,
    time_since_update: u32,
    history: Vec<(i64, BBox)>,
}

impl Track {
    fn spawn(id: u64, frame: i64, det: &BBox, initial_cov: &[f64; 7]) -> Self {
        let o = bbox_to_observation(det);
        let mean = State::from_column_slice(&[o.u, o.v, o.s, o.r, 0.0, 0.0, 0.0]);
        let cov = Covariance::from_diagonal(&State::from_column_slice(initial_cov));
        Self {
            id,
            belief: GaussianBelief::from_parts(mean, cov),
            hits: 1,
            age: 0,
            time_since_update: 0,
            history: vec![(frame, *det)],
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn belief(&self) -> &GaussianBelief {
        &self.belief
    }

    pub fn hits(&self) -> u32 {
        self.hits
    }

    pub fn age(&self) -> u32 {
        self.age
    }

    pub fn time_since_update(&self) -> u32 {
        self.time_since_update
    }

    pub fn history(&self) -> &[(i64, BBox)] {
        &self.history
    }

    /// Current box estimate read off the belief mean.
    pub fn bbox(&self) -> Result<BBox, TrackingError> {
        let m = self.belief.mean();
        let o = Observation {
            u: m[0],
            v: m[1],
            s: m[2].max(MIN_BOX_PARAM),
            r: m[3].max(MIN_BOX_PARAM),
        };
        Ok(observation_to_bbox(&o)?)
    }
}

/// A reported track position for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackOutput {
    pub id: u64,
    pub bbox: BBox,
}

/// SORT lifecycle around the UKF. A tracker instance owns the state of one scene.
#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    tracks: Vec<Track>,
    next_id: u64,
    frames_seen: u64,
    last_frame: Option<i64>,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Result<Self, TrackingError> {
        config.validate()?;
        Ok(Self {
            config,
            tracks: Vec::new(),
            next_id: 1,
            frames_seen: 0,
            last_frame: None,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// Advances the scene by one frame and returns the confirmed live tracks.
    ///
    /// A track is reported while it survives (`time_since_update <= max_age`) and has
    /// at least `min_hits` associations; during the first `min_hits` frames of a run
    /// the hit requirement is waived. Frames with no associated detection report the
    /// predicted box.
    pub fn step(
        &mut self,
        frame_index: i64,
        detections: &[BBox],
    ) -> Result<Vec<TrackOutput>, TrackingError> {
        if let Some(previous) = self.last_frame {
            if frame_index <= previous {
                return Err(TrackingError::NonMonotonicFrame {
                    previous,
                    got: frame_index,
                });
            }
        }
        let dt = match self.last_frame {
            Some(previous) => (frame_index - previous) as f64,
            None => 1.0,
        };
        self.last_frame = Some(frame_index);
        self.frames_seen += 1;

        let mut predicted = Vec::with_capacity(self.tracks.len());
        for track in &mut self.tracks {
            track.belief = ukf_predict(&track.belief, dt, &self.config.noise, &self.config.sigma)?;
            track.age += 1;
            track.time_since_update += 1;
            predicted.push(track.bbox()?);
        }

        let assoc = associate(&predicted, detections, self.config.iou_min)?;
        for &(t, d) in &assoc.matches {
            let track = &mut self.tracks[t];
            let obs = bbox_to_observation(&detections[d]);
            track.belief = ukf_update(&track.belief, &obs, &self.config.noise, &self.config.sigma)?;
            track.hits += 1;
            track.time_since_update = 0;
        }
        for &d in &assoc.unmatched_detections {
            let id = self.next_id;
            self.next_id += 1;
            self.tracks.push(Track::spawn(
                id,
                frame_index,
                &detections[d],
                &self.config.initial_covariance,
            ));
        }

        let max_age = self.config.max_age;
        self.tracks.retain(|t| t.time_since_update <= max_age);

        let warm_up = self.frames_seen <= u64::from(self.config.min_hits);
        let mut out = Vec::new();
        for track in &mut self.tracks {
            let bbox = track.bbox()?;
            if track.age > 0 {
                track.history.push((frame_index, bbox));
            }
            if track.hits >= self.config.min_hits || warm_up {
                out.push(TrackOutput { id: track.id, bbox });
            }
        }
        Ok(out)
    }
}
