use pedestrian_intent::geometry::{iou, BBox};
use pedestrian_intent::pipeline::{
    average_precision, crop_and_resize, evaluate_scenario, synthesize_scenario, DetectionNoise, EvalConfig, Frame,
    Intent, IntentClassifier, ModelClassifier, PipelineError, Scenario, ScenarioConfig, WindowRequest, CROSS,
    NOT_CROSS,
};
use pedestrian_intent::stdensenet::{StDenseNet, StDenseNetConfig};
use pedestrian_intent::tracking::{Tracker, TrackerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent bilinear oracle: half-pixel centers, edge replication, one scalar at a time.
fn bilinear(src: &dyn Fn(i64, i64) -> f64, w: i64, h: i64, x: f64, y: f64) -> f64 {
    let x = x.max(0.0).min((w - 1) as f64);
    let y = y.max(0.0).min((h - 1) as f64);
    let (x0, y0) = (x.floor() as i64, y.floor() as i64);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (ax, ay) = (x - x0 as f64, y - y0 as f64);
    let top = src(x0, y0) + (src(x1, y0) - src(x0, y0)) * ax;
    let bottom = src(x0, y1) + (src(x1, y1) - src(x0, y1)) * ax;
    top + (bottom - top) * ay
}

#[test]
fn checkerboard_upsampling_matches_scalar_oracle() {
    let (w, h) = (90usize, 70usize);
    let value = |x: i64, y: i64, c: usize| -> u8 {
        let on = ((x / 5) + (y / 5)) % 2 == 0;
        match c {
            0 => if on { 240 } else { 10 },
            1 => if on { 30 } else { 200 },
            _ => ((x * 3 + y * 5) % 256) as u8,
        }
    };
    let mut px = Vec::with_capacity(w * h * 3);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            for c in 0..3 {
                px.push(value(x, y, c));
            }
        }
    }
    let frame = Frame::new(0, w, h, px).unwrap();
    let (left, top) = (12.0, 9.0);
    let patch = crop_and_resize(&frame, &BBox::from_ltwh(left, top, 50.0, 50.0).unwrap(), 100).unwrap();
    let mut worst = 0.0f64;
    for c in 0..3 {
        let src = |x: i64, y: i64| f64::from(value(x, y, c));
        for i in 0..100 {
            for j in 0..100 {
                let sx = left + (j as f64 + 0.5) * 0.5 - 0.5;
                let sy = top + (i as f64 + 0.5) * 0.5 - 0.5;
                let want = bilinear(&src, w as i64, h as i64, sx, sy);
                worst = worst.max((f64::from(patch.get(j, i, c)) - want).abs());
            }
        }
    }
    assert!(worst <= 1.0, "max abs diff {worst}");
}

#[test]
fn integer_aligned_crop_is_a_copy() {
    let (w, h) = (160usize, 130usize);
    let px: Vec<u8> = (0..w * h * 3).map(|i| ((i * 37) % 251) as u8).collect();
    let frame = Frame::new(0, w, h, px).unwrap();
    let patch = crop_and_resize(&frame, &BBox::from_ltwh(20.0, 15.0, 100.0, 100.0).unwrap(), 100).unwrap();
    for i in 0..100 {
        for j in 0..100 {
            for c in 0..3 {
                assert_eq!(patch.get(j, i, c), frame.get(j + 20, i + 15, c));
            }
        }
    }
}

/// Sweeps every distinct score as a threshold and recomputes precision and recall
/// from scratch at each one.
fn sweep_ap(items: &[(f64, bool)]) -> f64 {
    let positives = items.iter().filter(|i| i.1).count() as f64;
    let mut thresholds: Vec<f64> = items.iter().map(|i| i.0).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for t in thresholds {
        let selected: Vec<&(f64, bool)> = items.iter().filter(|i| i.0 >= t).collect();
        let tp = selected.iter().filter(|i| i.1).count() as f64;
        let precision = tp / selected.len() as f64;
        let recall = tp / positives;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

#[test]
fn average_precision_matches_threshold_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut trials = 0;
    while trials < 1000 {
        let n = rng.random_range(1..=10);
        // Coarse scores so ties are common.
        let items: Vec<(f64, bool)> =
            (0..n).map(|_| (rng.random_range(0..6) as f64 / 5.0, rng.random_bool(0.5))).collect();
        if !items.iter().any(|i| i.1) {
            assert!(matches!(average_precision(&items), Err(PipelineError::NoPositives)));
            continue;
        }
        let got = average_precision(&items).unwrap();
        let want = sweep_ap(&items);
        assert!((got - want).abs() <= 1e-12, "{items:?}: {got} vs {want}");
        trials += 1;
    }
    let hand = [(0.9, true), (0.8, false), (0.7, true)];
    assert!((average_precision(&hand).unwrap() - 5.0 / 6.0).abs() < 1e-15);
}

/// Scores each window with the label of the ground-truth agent it overlaps most.
struct OracleStub<'a> {
    scenario: &'a Scenario,
    inverted: bool,
}

impl IntentClassifier for OracleStub<'_> {
    fn crop_size(&self) -> usize {
        8
    }

    fn classify(&self, requests: &[WindowRequest<'_>]) -> Result<Vec<[f64; 2]>, PipelineError> {
        Ok(requests
            .iter()
            .map(|r| {
                let t = r.frame_index as usize;
                let agent = self
                    .scenario
                    .agents
                    .iter()
                    .max_by(|a, b| iou(&a.boxes[t], &r.bbox).total_cmp(&iou(&b.boxes[t], &r.bbox)))
                    .unwrap();
                let cross = (agent.intent == Intent::Cross) != self.inverted;
                let mut p = [0.0; 2];
                p[if cross { CROSS } else { NOT_CROSS }] = 1.0;
                p
            })
            .collect())
    }
}

#[test]
fn oracle_stubs_bound_the_average_precision() {
    let scenario = synthesize_scenario(&ScenarioConfig::default(), 31).unwrap();
    let tracker = TrackerConfig::default();
    let eval = EvalConfig::default();
    let perfect = OracleStub { scenario: &scenario, inverted: false };
    let (_, report) = evaluate_scenario(&scenario, &perfect, &tracker, &eval).unwrap();
    assert_eq!(report.average_precision, Some(1.0));
    assert_eq!(report.majority_correct, Some(1.0));
    assert!(report.positives > 0 && report.positives < report.evaluated_windows);

    let inverted = OracleStub { scenario: &scenario, inverted: true };
    let (_, report) = evaluate_scenario(&scenario, &inverted, &tracker, &eval).unwrap();
    // Every negative outranks every positive.
    let negatives = report.evaluated_windows - report.positives;
    let worst: Vec<(f64, bool)> = (0..report.positives)
        .map(|_| (0.0, true))
        .chain((0..negatives).map(|_| (1.0, false)))
        .collect();
    let want = sweep_ap(&worst);
    assert!((report.average_precision.unwrap() - want).abs() < 1e-12);
    assert_eq!(report.majority_correct, Some(0.0));
    let t = report.timing;
    assert!((t.total_ms - (t.tracking_ms + t.prediction_ms)).abs() < 1e-9);
}

#[test]
fn default_noise_keeps_identities() {
    let scenario_cfg = ScenarioConfig::default();
    for seed in 40..45 {
        let scenario = synthesize_scenario(&scenario_cfg, seed).unwrap();
        let stub = OracleStub { scenario: &scenario, inverted: false };
        let (_, report) =
            evaluate_scenario(&scenario, &stub, &TrackerConfig::default(), &EvalConfig::default()).unwrap();
        assert!(report.identity_consistency >= 0.95, "seed {seed}: {}", report.identity_consistency);
        assert!(report.track_count >= 10);
    }
}

#[test]
fn noiseless_tracks_converge_to_truth() {
    let config = ScenarioConfig { cross_fraction: 0.0, noise: DetectionNoise::none(), ..ScenarioConfig::default() };
    for seed in 0..3 {
        let scenario = synthesize_scenario(&config, seed).unwrap();
        let tracker_cfg = TrackerConfig::default();
        let min_hits = tracker_cfg.min_hits as i64;
        let mut tracker = Tracker::new(tracker_cfg).unwrap();
        for (t, dets) in scenario.detections.iter().enumerate() {
            let boxes: Vec<BBox> = dets.iter().map(|d| d.bbox).collect();
            let out = tracker.step(t as i64, &boxes).unwrap();
            if (t as i64) < min_hits {
                continue;
            }
            for agent in &scenario.agents {
                let best = out.iter().map(|o| iou(&o.bbox, &agent.boxes[t])).fold(0.0, f64::max);
                assert!(best >= 0.9, "seed {seed} frame {t} agent {}: {best}", agent.id);
            }
        }
    }
}

#[test]
fn model_scores_are_probabilities_and_reproducible() {
    let config = ScenarioConfig { num_frames: 70, onset_max: 50, ..ScenarioConfig::default() };
    let scenario = synthesize_scenario(&config, 77).unwrap();
    let model = StDenseNet::<f32>::new(StDenseNetConfig::reduced(), 3).unwrap();
    let classifier = ModelClassifier::new(model).unwrap();
    let run = || evaluate_scenario(&scenario, &classifier, &TrackerConfig::default(), &EvalConfig::default()).unwrap();
    let (run_a, report_a) = run();
    let (run_b, report_b) = run();
    assert_eq!(report_a.metrics_text(), report_b.metrics_text());
    assert_eq!(run_a.scores, run_b.scores);
    assert!(!run_a.scores.is_empty());
    for s in &run_a.scores {
        assert!((0.0..=1.0).contains(&s.p_cross));
        assert!((s.p_cross + s.p_not_cross - 1.0).abs() < 1e-6);
    }
}
