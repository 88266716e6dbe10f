//! Seeded synthetic street scenes standing in for annotated video plus a detector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::geometry::BBox;

use super::frame::Frame;
use super::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intent {
    NotCross,
    Cross,
}

impl Intent {
    pub fn as_str(self) -> &'static str {
        match self {
            Intent::Cross => "cross",
            Intent::NotCross => "not_cross",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cross" => Some(Intent::Cross),
            "not_cross" => Some(Intent::NotCross),
            _ => None,
        }
    }

    /// Classifier class index.
    pub fn class(self) -> usize {
        match self {
            Intent::NotCross => super::predict::NOT_CROSS,
            Intent::Cross => super::predict::CROSS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionNoise {
    /// Standard deviation (pixels) added to each of left, top, width and height.
    pub jitter_sigma: f64,
    pub dropout: f64,
    /// Mean number of spurious detections per frame.
    pub false_positive_rate: f64,
}

impl Default for DetectionNoise {
    fn default() -> Self {
        Self {
            jitter_sigma: 1.0,
            dropout: 0.05,
            false_positive_rate: 0.05,
        }
    }
}

impl DetectionNoise {
    pub fn none() -> Self {
        Self {
            jitter_sigma: 0.0,
            dropout: 0.0,
            false_positive_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub num_agents: usize,
    pub num_frames: usize,
    pub frame_width: usize,
    pub frame_height: usize,
    /// Onset frames are drawn uniformly from `[onset_min, onset_max]`.
    pub onset_min: usize,
    pub onset_max: usize,
    pub cross_fraction: f64,
    pub box_width_min: f64,
    pub box_width_max: f64,
    /// Box height over width.
    pub aspect: f64,
    /// Horizontal walking speed range in pixels per frame.
    pub speed_min: f64,
    pub speed_max: f64,
    /// Downward speed of a crosser after onset.
    pub cross_speed: f64,
    /// Contrast of the label-bearing texture.
    pub texture_amplitude: f64,
    /// Per-frame pixel noise on agents and background.
    pub pixel_noise: f64,
    pub noise: DetectionNoise,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            num_agents: 10,
            num_frames: 100,
            frame_width: 960,
            frame_height: 540,
            onset_min: 30,
            onset_max: 60,
            cross_fraction: 0.5,
            box_width_min: 28.0,
            box_width_max: 36.0,
            aspect: 2.4,
            speed_min: 0.3,
            speed_max: 1.2,
            cross_speed: 1.5,
            texture_amplitude: 50.0,
            pixel_noise: 12.0,
            noise: DetectionNoise::default(),
        }
    }
}

impl ScenarioConfig {
    /// `(columns, rows)` of the grid of per-agent cells.
    pub fn grid(&self) -> (usize, usize) {
        let n = self.num_agents.max(1) as f64;
        let cols = (n * self.frame_width as f64 / self.frame_height as f64).sqrt().ceil().max(1.0) as usize;
        let cols = cols.min(self.num_agents.max(1));
        (cols, self.num_agents.max(1).div_ceil(cols))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |m: String| Err(PipelineError::InvalidConfig(m));
        if self.num_agents == 0 {
            return fail("scenario needs at least one agent".into());
        }
        if self.onset_min < 17 || self.onset_min > self.onset_max {
            return fail(format!(
                "onset range [{}, {}] must start at frame 17 or later",
                self.onset_min, self.onset_max
            ));
        }
        if self.onset_max >= self.num_frames {
            return fail(format!("onset_max {} must precede num_frames {}", self.onset_max, self.num_frames));
        }
        let n = self.noise;
        if !(n.jitter_sigma >= 0.0 && (0.0..1.0).contains(&n.dropout) && n.false_positive_rate >= 0.0) {
            return fail(format!("invalid detection noise {n:?}"));
        }
        if !(0.0..=1.0).contains(&self.cross_fraction) {
            return fail("cross_fraction must lie in [0, 1]".into());
        }
        let positive = [self.box_width_min, self.aspect, self.cross_speed, self.speed_max];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0))
            || self.box_width_max < self.box_width_min
            || !(0.0..=self.speed_max).contains(&self.speed_min)
            || self.texture_amplitude < 0.0
            || self.pixel_noise < 0.0
        {
            return fail("box, speed and texture parameters must be positive and ordered".into());
        }
        let (cols, rows) = self.grid();
        let cell_w = self.frame_width as f64 / cols as f64;
        let cell_h = self.frame_height as f64 / rows as f64;
        let walk = self.speed_max * self.num_frames as f64;
        let descend = self.cross_speed * (self.num_frames - self.onset_min) as f64;
        if self.box_width_max + walk + 4.0 > cell_w || self.box_width_max * self.aspect + descend + 4.0 > cell_h {
            return fail(format!(
                "{} agents do not fit a {}x{} frame with these speeds and box sizes",
                self.num_agents, self.frame_width, self.frame_height
            ));
        }
        Ok(())
    }
}

/// Per-agent appearance parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Appearance {
    pub base: [f64; 3],
    pub stripe_angle: f64,
    pub stripe_period: f64,
    pub phase: f64,
    pub phase_speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: u64,
    pub intent: Intent,
    pub onset: i64,
    /// Ground-truth box for every frame of the scenario.
    pub boxes: Vec<BBox>,
    pub appearance: Appearance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: i64,
    pub bbox: BBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub seed: u64,
    pub agents: Vec<Agent>,
    /// Detections grouped by frame index `0..num_frames`.
    pub detections: Vec<Vec<Detection>>,
}

pub fn synthesize_scenario(config: &ScenarioConfig, seed: u64) -> Result<Scenario, PipelineError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (cols, rows) = config.grid();
    let cell_w = config.frame_width as f64 / cols as f64;
    let cell_h = config.frame_height as f64 / rows as f64;
    let frames = config.num_frames;

    let crossers = (config.cross_fraction * config.num_agents as f64).round() as usize;
    let mut intents: Vec<Intent> = (0..config.num_agents)
        .map(|i| if i < crossers { Intent::Cross } else { Intent::NotCross })
        .collect();
    for i in (1..intents.len()).rev() {
        let j = rng.random_range(0..=i);
        intents.swap(i, j);
    }

    let mut agents = Vec::with_capacity(config.num_agents);
    for (i, &intent) in intents.iter().enumerate() {
        let (cx, cy) = ((i % cols) as f64 * cell_w, (i / cols) as f64 * cell_h);
        let w = rng.random_range(config.box_width_min..=config.box_width_max);
        let h = w * config.aspect;
        let speed = rng.random_range(config.speed_min..=config.speed_max);
        let vx = if rng.random_bool(0.5) { speed } else { -speed };
        let onset = rng.random_range(config.onset_min..=config.onset_max);
        let walk = speed * frames as f64;
        let x_lo = cx + 2.0 + if vx < 0.0 { walk } else { 0.0 };
        let x_hi = cx + cell_w - 2.0 - w - if vx > 0.0 { walk } else { 0.0 };
        let x0 = rng.random_range(x_lo..=x_hi.max(x_lo));
        let descend = config.cross_speed * (frames - config.onset_min) as f64;
        let y_hi = cy + cell_h - 2.0 - h - descend;
        let y0 = rng.random_range(cy + 2.0..=y_hi.max(cy + 2.0));
        let appearance = Appearance {
            base: [
                rng.random_range(70.0..190.0),
                rng.random_range(70.0..190.0),
                rng.random_range(70.0..190.0),
            ],
            stripe_angle: rng.random_range(0.6..1.0),
            stripe_period: rng.random_range(9.0..13.0),
            phase: rng.random_range(0.0..std::f64::consts::TAU),
            phase_speed: rng.random_range(0.4..0.7),
        };
        let mut boxes = Vec::with_capacity(frames);
        let (mut x, mut y) = (x0, y0);
        for t in 0..frames {
            boxes.push(BBox::from_ltwh(x, y, w, h)?);
            if intent == Intent::Cross && t + 1 >= onset {
                x += 0.2 * vx;
                y += config.cross_speed;
            } else {
                x += vx;
            }
        }
        agents.push(Agent {
            id: i as u64 + 1,
            intent,
            onset: onset as i64,
            boxes,
            appearance,
        });
    }

    let jitter = Normal::new(0.0, config.noise.jitter_sigma.max(0.0)).expect("finite sigma");
    let poisson = (config.noise.false_positive_rate > 0.0)
        .then(|| Poisson::new(config.noise.false_positive_rate).expect("positive rate"));
    let mut detections = Vec::with_capacity(frames);
    for t in 0..frames {
        let mut dets = Vec::new();
        for agent in &agents {
            if rng.random::<f64>() < config.noise.dropout {
                continue;
            }
            let [l, tp, w, h] = agent.boxes[t].to_ltwh();
            let mut noisy = [l, tp, w, h];
            if config.noise.jitter_sigma > 0.0 {
                for v in &mut noisy {
                    *v += jitter.sample(&mut rng);
                }
            }
            dets.push(Detection {
                frame: t as i64,
                bbox: BBox::from_ltwh(noisy[0], noisy[1], noisy[2].max(2.0), noisy[3].max(2.0))?,
                confidence: rng.random_range(0.7..1.0),
            });
        }
        let spurious = poisson.as_ref().map_or(0, |p| p.sample(&mut rng) as usize);
        for _ in 0..spurious {
            let w = rng.random_range(config.box_width_min..=config.box_width_max);
            let h = w * config.aspect;
            let l = rng.random_range(0.0..(config.frame_width as f64 - w).max(1.0));
            let tp = rng.random_range(0.0..(config.frame_height as f64 - h).max(1.0));
            dets.push(Detection {
                frame: t as i64,
                bbox: BBox::from_ltwh(l, tp, w, h)?,
                confidence: rng.random_range(0.3..0.6),
            });
        }
        detections.push(dets);
    }

    Ok(Scenario {
        config: config.clone(),
        seed,
        agents,
        detections,
    })
}

/// Deterministic 64-bit mix of a key tuple.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-stream key; pixel hashes are `mix(key ^ pixel_index)`.
#[inline]
fn stream(seed: u64, kind: u64, t: u64) -> u64 {
    mix(mix(seed ^ kind.wrapping_mul(0xA24B_AED4_963E_E407)) ^ t)
}

/// Three values in `[-0.5, 0.5)` taken from disjoint bit ranges of `h`.
#[inline]
fn centered3(h: u64) -> [f64; 3] {
    let unit = |bits: u64| bits as f64 / (1u64 << 21) as f64 - 0.5;
    [unit(h & 0x1F_FFFF), unit((h >> 21) & 0x1F_FFFF), unit((h >> 42) & 0x1F_FFFF)]
}

impl Scenario {
    pub fn num_frames(&self) -> usize {
        self.config.num_frames
    }

    /// Ground-truth boxes of all agents at `frame`.
    pub fn truth_at(&self, frame: i64) -> Vec<(u64, BBox)> {
        usize::try_from(frame)
            .ok()
            .filter(|&t| t < self.config.num_frames)
            .map(|t| self.agents.iter().map(|a| (a.id, a.boxes[t])).collect())
            .unwrap_or_default()
    }

    /// Renders frame `t`. Static textured background, agents painted as boxes whose
    /// texture encodes the intent: crossers carry drifting oriented stripes, the others
    /// isotropic noise of matched variance, both under per-frame pixel noise.
    pub fn render_frame(&self, t: i64) -> Result<Frame, PipelineError> {
        let (w, h) = (self.config.frame_width, self.config.frame_height);
        if t < 0 || t as usize >= self.config.num_frames {
            return Err(PipelineError::InvalidConfig(format!("frame {t} is outside the scenario")));
        }
        let noise = self.config.pixel_noise;
        let bg_key = stream(self.seed, 1, 0);
        let noise_key = stream(self.seed, 2, t as u64);
        let mut pixels = vec![0u8; w * h * 3];
        for y in 0..h {
            for x in 0..w {
                let p = (y * w + x) as u64;
                let bg = centered3(mix(bg_key ^ p));
                let n = centered3(mix(noise_key ^ p));
                let o = (y * w + x) * 3;
                for c in 0..3 {
                    pixels[o + c] = (105.0 + 40.0 * bg[c] + noise * n[c]).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        let amp = self.config.texture_amplitude;
        for agent in &self.agents {
            let b = agent.boxes[t as usize];
            let ap = agent.appearance;
            let x0 = (b.x_min() - 0.5).ceil().max(0.0) as usize;
            let x1 = ((b.x_max() - 0.5).ceil().max(0.0) as usize).min(w);
            let y0 = (b.y_min() - 0.5).ceil().max(0.0) as usize;
            let y1 = ((b.y_max() - 0.5).ceil().max(0.0) as usize).min(h);
            let (dir_x, dir_y) = (ap.stripe_angle.cos(), ap.stripe_angle.sin());
            let k = std::f64::consts::TAU / ap.stripe_period;
            let phase = ap.phase + ap.phase_speed * t as f64;
            let texture_key = stream(self.seed ^ agent.id, 3, t as u64);
            for y in y0..y1 {
                for x in x0..x1 {
                    let texture = match agent.intent {
                        Intent::Cross => {
                            let lx = x as f64 + 0.5 - b.x_min();
                            let ly = y as f64 + 0.5 - b.y_min();
                            amp * (k * (lx * dir_x + ly * dir_y) + phase).sin()
                        }
                        // Uniform on [-a, a] with a = amp * sqrt(3/2) has the variance of
                        // an amp-sized sinusoid.
                        Intent::NotCross => {
                            let u = centered3(mix(texture_key ^ (y * w + x) as u64))[0];
                            2.0 * u * amp * 1.5f64.sqrt()
                        }
                    };
                    let n = centered3(mix(noise_key ^ (y * w + x) as u64));
                    let o = (y * w + x) * 3;
                    for c in 0..3 {
                        pixels[o + c] = (ap.base[c] + texture + noise * n[c]).round().clamp(0.0, 255.0) as u8;
                    }
                }
            }
        }
        Frame::new(t, w, h, pixels)
    }
}
