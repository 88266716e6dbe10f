//! Acceptance run: one pass/fail line per criterion, at fixed tolerances.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::{SMatrix, SVector};
use pedestrian_intent::geometry::Observation;
use pedestrian_intent::pipeline::{
    average_precision, evaluate_scenario, identity_consistency, run_pipeline, scenario_detections,
    synthesize_dataset, synthesize_scenario, DatasetConfig, DetectionNoise, EvalConfig, GroundTruth,
    IntentClassifier, ModelClassifier, PipelineError, ScenarioConfig, WindowRequest,
};
use pedestrian_intent::stdensenet::{
    self, accuracy, gradient_check, train_with, GradCheckConfig, Normalization, StDenseNet, StDenseNetConfig,
    Tensor5, TrainConfig,
};
use pedestrian_intent::tracking::{
    assignment_cost, hungarian, ukf_predict, ukf_update, GaussianBelief, NoiseConfig, SigmaPointParams,
    TrackerConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

type Mat<const R: usize, const C: usize> = SMatrix<f64, R, C>;

struct Outcome {
    passed: bool,
    /// Known to be out of reach in this environment; reported as a failure but not gating.
    unattainable: bool,
    detail: String,
}

type Check = fn(&mut Shared) -> Outcome;

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, unattainable: false, detail: detail.into() }
}

fn main() {
    let criteria: Vec<(&str, &str, Check)> = vec![
        ("C1", "published benchmark figures", c1_non_reproducibility),
        ("C2", "architecture shape trace", c2_shape_trace),
        ("C3", "gradient check", c3_gradient_check),
        ("C4", "filter vs linear Kalman filter", c4_filter),
        ("C5", "assignment optimality", c5_assignment),
        ("C6", "average precision oracle", c6_average_precision),
        ("C7", "end-to-end learnability", c7_learnability),
        ("C8", "tracking robustness", c8_robustness),
        ("C9", "determinism", c9_determinism),
        ("C10", "weights serialization", c10_serialization),
    ];
    let mut shared = Shared::default();
    let mut failed = 0;
    let mut unattainable = 0;
    println!("\nrunning {} acceptance criteria", criteria.len());
    for (id, name, check) in &criteria {
        let start = Instant::now();
        let result = check(&mut shared);
        let status = if result.passed { "PASS" } else { "FAIL" };
        if !result.passed {
            failed += 1;
            if result.unattainable {
                unattainable += 1;
            }
        }
        println!(
            "[{status}] {id} {name}: {} ({:.1}s)",
            result.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed ({unattainable} unattainable here)\n",
        criteria.len() - failed
    );
    if failed > unattainable {
        std::process::exit(1);
    }
}

/// State shared between criteria, so the trained network is reused.
#[derive(Default)]
struct Shared {
    trained: Option<StDenseNet<f32>>,
}

fn c1_non_reproducibility(_: &mut Shared) -> Outcome {
    Outcome {
        passed: false,
        unattainable: true,
        detail: "not reproduced; the published AP and frame-rate figures require a labelled real-video \
                 pedestrian dataset, a trained person detector and a GPU. C2 to C10 are the desk-scale substitutes"
            .into(),
    }
}

fn c2_shape_trace(_: &mut Shared) -> Outcome {
    let model = StDenseNet::<f32>::new(StDenseNetConfig::default(), 1).unwrap();
    let x = Tensor5::full([1, 3, 16, 100, 100], 0.1f32).unwrap();
    let (_, trace) = model.logits_traced(&x).unwrap();
    let got: Vec<(String, [usize; 4])> = trace.iter().map(|(n, d)| (n.clone(), [d[1], d[2], d[3], d[4]])).collect();
    let want: Vec<(&str, [usize; 4])> = vec![
        ("stem.conv", [48, 16, 50, 50]),
        ("stem.pool", [48, 16, 25, 25]),
        ("block1", [144, 16, 25, 25]),
        ("transition1.conv", [72, 16, 25, 25]),
        ("transition1.pool", [72, 8, 13, 13]),
        ("block2", [168, 8, 13, 13]),
        ("transition2.conv", [84, 8, 13, 13]),
        ("transition2.pool", [84, 4, 7, 7]),
        ("block3", [180, 4, 7, 7]),
        ("global_pool", [180, 1, 1, 1]),
        ("fc", [2, 1, 1, 1]),
    ];
    let ok = got.len() == want.len() && got.iter().zip(&want).all(|(g, w)| g.0 == w.0 && g.1 == w.1);
    let dhw: Vec<String> = got.iter().map(|(_, d)| format!("{}x{}x{}", d[1], d[2], d[3])).collect();
    outcome(ok, format!("{} layers, D x H x W {}", got.len(), dhw.join(" > ")))
}

fn c3_gradient_check(_: &mut Shared) -> Outcome {
    let start = Instant::now();
    let config = GradCheckConfig::default();
    let report = gradient_check(&config).unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        report.passed && report.max_relative_error < 1e-4 && secs < 300.0,
        format!(
            "max rel err {:.2e} over {} parameters (tol 1e-4, step {:e}, f64), {:.1}s (limit 300s)",
            report.max_relative_error, report.checked, config.step, secs
        ),
    )
}

fn random_psd<const N: usize>(rng: &mut ChaCha8Rng, scale: f64, floor: f64) -> Mat<N, N> {
    let a = Mat::<N, N>::from_fn(|_, _| rng.random_range(-1.0..1.0) * scale);
    let m = a * a.transpose() + Mat::<N, N>::identity() * floor;
    (m + m.transpose()) * 0.5
}

fn rel_frobenius<const R: usize, const C: usize>(a: &Mat<R, C>, b: &Mat<R, C>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

fn random_state(rng: &mut ChaCha8Rng) -> SVector<f64, 7> {
    SVector::<f64, 7>::from_column_slice(&[
        rng.random_range(0.0..1000.0),
        rng.random_range(0.0..600.0),
        rng.random_range(500.0..20000.0),
        rng.random_range(0.2..1.5),
        rng.random_range(-5.0..5.0),
        rng.random_range(-5.0..5.0),
        rng.random_range(-50.0..50.0),
    ])
}

fn c4_filter(_: &mut Shared) -> Outcome {
    let mut f = Mat::<7, 7>::identity();
    for i in 0..3 {
        f[(i, i + 4)] = 1.0;
    }
    let h = Mat::<4, 7>::from_fn(|r, c| if r == c { 1.0 } else { 0.0 });
    let params = SigmaPointParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut invariant_failures = 0;
    for _ in 0..1000 {
        let q = random_psd::<7>(&mut rng, 1.0, 0.0);
        let r = random_psd::<4>(&mut rng, 1.0, 1e-2);
        let noise = NoiseConfig { process: q, measurement: r };
        let mut belief = GaussianBelief::new(random_state(&mut rng), random_psd::<7>(&mut rng, 5.0, 1e-3)).unwrap();
        // Two predict/update cycles, each step checked from the same input.
        for _ in 0..2 {
            let (x, p) = (*belief.mean(), *belief.covariance());
            let predicted = ukf_predict(&belief, 1.0, &noise, &params).unwrap();
            let (xk, pk) = (f * x, f * p * f.transpose() + q);
            worst = worst.max(rel_frobenius(predicted.mean(), &xk)).max(rel_frobenius(predicted.covariance(), &pk));
            invariant_failures += usize::from(predicted.validate().is_err());

            let (x, p) = (*predicted.mean(), *predicted.covariance());
            let z = SVector::<f64, 4>::new(
                x[0] + rng.random_range(-3.0..3.0),
                x[1] + rng.random_range(-3.0..3.0),
                x[2] + rng.random_range(-30.0..30.0),
                rng.random_range(0.2..1.5),
            );
            let obs = Observation::new(z[0], z[1], z[2], z[3]).unwrap();
            let updated = ukf_update(&predicted, &obs, &noise, &params).unwrap();
            let s = h * p * h.transpose() + r;
            let k = p * h.transpose() * s.try_inverse().unwrap();
            let xk = x + k * (z - h * x);
            let ikh = Mat::<7, 7>::identity() - k * h;
            let pk = ikh * p * ikh.transpose() + k * r * k.transpose();
            worst = worst.max(rel_frobenius(updated.mean(), &xk)).max(rel_frobenius(updated.covariance(), &pk));
            invariant_failures += usize::from(updated.validate().is_err());
            belief = updated;
        }
    }
    outcome(
        worst <= 1e-8 && invariant_failures == 0,
        format!(
            "max rel err {worst:.2e} (tol 1e-8) over 1000 instances x 4 steps, {invariant_failures} symmetry/PSD violations"
        ),
    )
}

/// Minimum over every injective row-to-column map, summing in row order.
fn brute_force(cost: &[Vec<f64>]) -> f64 {
    fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, pairs: &mut Vec<(usize, usize)>, best: &mut f64, k: usize) {
        if pairs.len() == k {
            *best = best.min(pairs.iter().map(|&(r, c)| cost[r][c]).sum());
            return;
        }
        if row == cost.len() || cost.len() - row < k - pairs.len() {
            return;
        }
        // Leave this row unassigned when there are more rows than columns.
        go(cost, row + 1, used, pairs, best, k);
        for c in 0..used.len() {
            if !used[c] {
                used[c] = true;
                pairs.push((row, c));
                go(cost, row + 1, used, pairs, best, k);
                pairs.pop();
                used[c] = false;
            }
        }
    }
    let cols = cost[0].len();
    let k = cost.len().min(cols);
    let mut best = f64::INFINITY;
    go(cost, 0, &mut vec![false; cols], &mut Vec::new(), &mut best, k);
    best
}

fn c5_assignment(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0;
    for trial in 0..500 {
        let (rows, cols) = (rng.random_range(1..=7), rng.random_range(1..=7));
        let integer = trial % 2 == 0;
        let cost: Vec<Vec<f64>> = (0..rows)
            .map(|_| {
                (0..cols)
                    .map(|_| if integer { rng.random_range(0..20) as f64 } else { rng.random_range(0.0..1.0) })
                    .collect()
            })
            .collect();
        let pairs = hungarian(&cost).unwrap();
        let valid = pairs.len() == rows.min(cols) && pairs.windows(2).all(|w| w[0].0 < w[1].0);
        if !valid || assignment_cost(&cost, &pairs) != brute_force(&cost) {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{mismatches} of 500 matrices up to 7x7 differ from brute force (exact)"))
}

/// Recomputes precision and recall from scratch at every distinct score threshold.
fn sweep_ap(items: &[(f64, bool)]) -> f64 {
    let positives = items.iter().filter(|i| i.1).count() as f64;
    let mut thresholds: Vec<f64> = items.iter().map(|i| i.0).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let (mut ap, mut prev_recall) = (0.0, 0.0);
    for t in thresholds {
        let selected: Vec<&(f64, bool)> = items.iter().filter(|i| i.0 >= t).collect();
        let tp = selected.iter().filter(|i| i.1).count() as f64;
        let recall = tp / positives;
        ap += (recall - prev_recall) * tp / selected.len() as f64;
        prev_recall = recall;
    }
    ap
}

fn c6_average_precision(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    let mut trials = 0;
    while trials < 1000 {
        let n = rng.random_range(1..=10);
        let coarse = trials % 2 == 0;
        let items: Vec<(f64, bool)> = (0..n)
            .map(|_| {
                let s = if coarse { rng.random_range(0..5) as f64 / 4.0 } else { rng.random::<f64>() };
                (s, rng.random_bool(0.4))
            })
            .collect();
        if !items.iter().any(|i| i.1) {
            continue;
        }
        worst = worst.max((average_precision(&items).unwrap() - sweep_ap(&items)).abs());
        trials += 1;
    }
    let hand = average_precision(&[(0.9, true), (0.8, false), (0.7, true)]).unwrap();
    let hand_err = (hand - 5.0 / 6.0).abs();
    outcome(
        worst <= 1e-12 && hand_err <= 1e-12,
        format!("max |AP - sweep| {worst:.1e} over 1000 instances (tol 1e-12); hand case {hand:.6} vs 5/6"),
    )
}

fn c7_learnability(shared: &mut Shared) -> Outcome {
    let start = Instant::now();
    let data = synthesize_dataset(&DatasetConfig::default(), &Normalization::default(), 7).unwrap();
    let mut model = StDenseNet::<f32>::new(StDenseNetConfig::reduced(), 7).unwrap();
    let config = TrainConfig { epochs: 30, seed: 7, ..TrainConfig::default() };
    let history = train_with(&mut model, &data, &config, |_| {}).unwrap();
    let running = history.last().unwrap().accuracy;
    let train_acc = accuracy(&model, &data, 20).unwrap();
    let classifier = ModelClassifier::new(model.clone()).unwrap();
    let mut aps = Vec::new();
    for seed in 1000..1003 {
        let scenario = synthesize_scenario(&ScenarioConfig::default(), seed).unwrap();
        let (_, report) =
            evaluate_scenario(&scenario, &classifier, &TrackerConfig::default(), &EvalConfig::default()).unwrap();
        aps.push(report.average_precision.unwrap_or(0.0));
    }
    shared.trained = Some(model);
    let min_ap = aps.iter().copied().fold(1.0, f64::min);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        train_acc >= 0.95 && min_ap >= 0.9 && secs < 900.0,
        format!(
            "{} clips, 30 epochs: train accuracy {train_acc:.3} (final epoch running {running:.3}, need 0.95); \
             pipeline AP on 3 held-out scenarios {} (need 0.9); {secs:.0}s (limit 900s)",
            data.len(),
            aps.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join("/")
        ),
    )
}

/// Classifier that never runs, for tracking-only evaluation.
struct Uniform;

impl IntentClassifier for Uniform {
    fn crop_size(&self) -> usize {
        4
    }

    fn classify(&self, requests: &[WindowRequest<'_>]) -> Result<Vec<[f64; 2]>, PipelineError> {
        Ok(vec![[0.5, 0.5]; requests.len()])
    }
}

fn c8_robustness(_: &mut Shared) -> Outcome {
    let config = ScenarioConfig {
        noise: DetectionNoise { jitter_sigma: 2.0, dropout: 0.1, ..DetectionNoise::default() },
        ..ScenarioConfig::default()
    };
    let mut scores = Vec::new();
    for seed in 0..5 {
        let scenario = synthesize_scenario(&config, 800 + seed).unwrap();
        let run = run_pipeline(&scenario, &scenario_detections(&scenario), &TrackerConfig::default(), &Uniform).unwrap();
        let truth = GroundTruth::from_scenario(&scenario).per_frame();
        scores.push(identity_consistency(&truth, &run.tracks, 0.5).unwrap().consistency);
    }
    let min = scores.iter().copied().fold(1.0, f64::min);
    outcome(
        min >= 0.9,
        format!(
            "sigma 2px, 10% dropout, 10 agents: identity consistency per seed {} (need 0.9 each)",
            scores.iter().map(|s| format!("{s:.3}")).collect::<Vec<_>>().join("/")
        ),
    )
}

fn cli(args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_pedintent"))
        .args(args)
        .env("PEDINTENT_THREADS", "1")
        .output()
        .expect("binary runs");
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn c9_determinism(_: &mut Shared) -> Outcome {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let mut checks: Vec<(&str, bool)> = Vec::new();

    let track = || cli(&["track", "--synth", "--seed", "91"]);
    checks.push(("track", track() == track()));

    let train = |tag: &str| {
        let (w, h) = (d.join(format!("{tag}.stdn")), d.join(format!("{tag}.csv")));
        cli(&[
            "train", "--synth", "--reduced", "--seed", "92", "--set", "train.epochs=2", "--set",
            "train.num_sequences=16", "--weights", &s(&w), "--out", &s(&h),
        ]);
        (fs::read(&w).unwrap(), fs::read(&h).unwrap())
    };
    let (a, b) = (train("a"), train("b"));
    checks.push(("train history", a.1 == b.1));
    checks.push(("train weights", a.0 == b.0));

    let weights = s(&d.join("a.stdn"));
    let predict = || cli(&["predict", "--synth", "--seed", "93", "--weights", &weights]);
    checks.push(("predict", predict() == predict()));

    let eval = |tag: &str| {
        let (txt, json) = (d.join(format!("{tag}.txt")), d.join(format!("{tag}.json")));
        cli(&["eval", "--synth", "--seed", "94", "--weights", &weights, "--out", &s(&txt), "--json", &s(&json)]);
        (fs::read(&txt).unwrap(), fs::read(&json).unwrap())
    };
    checks.push(("eval report", eval("ra") == eval("rb")));

    let synth = |tag: &str| {
        let out = d.join(tag);
        cli(&["synth", "--seed", "95", "--set", "scenario.num_frames=70", "--set", "scenario.onset_max=50", "--out", &s(&out)]);
        let mut bytes = Vec::new();
        for f in ["detections.csv", "ground_truth.csv", "scenario.json", "frames/000000.png", "frames/000069.png"] {
            bytes.push(fs::read(out.join(f)).unwrap());
        }
        bytes
    };
    checks.push(("synth", synth("sa") == synth("sb")));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    outcome(
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} seeded reruns byte-identical (track, train, predict, eval, synth)", checks.len())
        } else {
            format!("differing outputs: {}", failed.join(", "))
        },
    )
}

fn c10_serialization(shared: &mut Shared) -> Outcome {
    let model = shared
        .trained
        .take()
        .unwrap_or_else(|| StDenseNet::<f32>::new(StDenseNetConfig::reduced(), 10).unwrap());
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("model.stdn");
    stdensenet::save(&model, &path).unwrap();
    let loaded = stdensenet::load(&path).unwrap();
    let again = dir.path().join("again.stdn");
    stdensenet::save(&loaded, &again).unwrap();
    let identical = fs::read(&path).unwrap() == fs::read(&again).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let dims = [3, 3, 16, 32, 32];
    let x = Tensor5::from_vec(dims, (0..dims.iter().product()).map(|_| rng.random_range(-2.0f32..2.0)).collect()).unwrap();
    let (a, b) = (model.logits(&x).unwrap(), loaded.logits(&x).unwrap());
    let bitwise = a.len() == b.len() && a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits());
    outcome(
        identical && bitwise,
        format!(
            "save/load/save byte-identical: {identical}; loaded forward bitwise equal on {} logits: {bitwise}",
            a.len()
        ),
    )
}
