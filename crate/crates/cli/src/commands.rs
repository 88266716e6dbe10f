use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use pedestrian_intent::geometry::BBox;
use pedestrian_intent::pipeline::io::{
    detections_by_frame, read_detections, read_ground_truth, write_detections, write_ground_truth, write_intents,
    write_tracks,
};
use pedestrian_intent::pipeline::{
    clips_from_truth, evaluate, run_pipeline, scenario_detections, synthesize_dataset, synthesize_scenario, ClipSpec,
    DatasetConfig, FrameSource, GroundTruth, ModelClassifier, Scenario, StageTiming, WINDOW_LEN,
};
use pedestrian_intent::stdensenet::{
    self, gradient_check, train_with, GradCheckConfig, StDenseNet, StDenseNetConfig, TrainConfig,
};
use pedestrian_intent::tracking::Tracker;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::{self, RunConfig};
use crate::frames::{frame_file_name, write_png, PngFrames};
use crate::{CliError, CommonArgs, InputArgs};

pub fn resolve_config(common: &CommonArgs) -> Result<RunConfig, CliError> {
    let file = match &common.config {
        Some(path) => config::read_file(path)?,
        None => BTreeMap::new(),
    };
    let mut overrides = Vec::with_capacity(common.set.len() + 2);
    for s in &common.set {
        overrides.push(config::parse_assignment(s)?);
    }
    if common.reduced {
        overrides.push(("reduced".to_string(), Value::Bool(true)));
    }
    if let Some(seed) = common.seed {
        overrides.push(("seed".to_string(), json!(seed)));
    }
    config::resolve(&file, &overrides)
}

fn create(path: &Path) -> Result<File, CliError> {
    File::create(path).map_err(|e| CliError::io(path.display(), e))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    Ok(BufReader::new(File::open(path).map_err(|e| CliError::io(path.display(), e))?))
}

/// Buffered writer on `path`, or on stdout when no path is given.
fn output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(create(p)?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn finish(mut w: Box<dyn Write>) -> Result<(), CliError> {
    w.flush().map_err(CliError::from)
}

/// Detections and frames for one run.
struct Input {
    scenario: Option<Scenario>,
    frames: Option<PngFrames>,
    detections: Vec<(i64, Vec<BBox>)>,
}

impl Input {
    fn source(&self) -> Result<&dyn FrameSource, CliError> {
        match (&self.scenario, &self.frames) {
            (Some(s), _) => Ok(s),
            (None, Some(f)) => Ok(f),
            (None, None) => Err(CliError::Validation("--frames DIR is required".into())),
        }
    }

    fn provenance(&self, input: &InputArgs) -> Vec<String> {
        if self.scenario.is_some() {
            return vec!["input = synthetic".to_string()];
        }
        let mut lines = Vec::new();
        if let Some(p) = &input.detections {
            lines.push(format!("input.detections = {}", p.display()));
        }
        if let Some(p) = &input.frames {
            lines.push(format!("input.frames = {}", p.display()));
        }
        lines
    }
}

fn load_input(config: &RunConfig, input: &InputArgs, need_frames: bool) -> Result<Input, CliError> {
    if input.synth {
        let scenario = synthesize_scenario(&config.scenario, config.seed)?;
        let detections = scenario_detections(&scenario);
        return Ok(Input { scenario: Some(scenario), frames: None, detections });
    }
    let path = input
        .detections
        .as_deref()
        .ok_or_else(|| CliError::Validation("either --detections FILE or --synth is required".into()))?;
    let raw = read_detections(open(path)?).map_err(|e| match e {
        pedestrian_intent::pipeline::PipelineError::Io(io) => CliError::io(path.display(), io),
        other => CliError::Validation(format!("{}: {other}", path.display())),
    })?;
    let frames = match &input.frames {
        Some(dir) => Some(PngFrames::open(dir)?),
        None if need_frames => return Err(CliError::Validation("--frames DIR is required with --detections".into())),
        None => None,
    };
    let mut indices: Vec<i64> = raw.iter().map(|d| d.frame).collect();
    if let Some(f) = &frames {
        indices.extend(f.indices());
    }
    let detections = match (indices.iter().min(), indices.iter().max()) {
        (Some(&first), Some(&last)) => detections_by_frame(&raw, first, last),
        _ => Vec::new(),
    };
    Ok(Input { scenario: None, frames, detections })
}

fn load_classifier(weights: &Path) -> Result<ModelClassifier, CliError> {
    let model = stdensenet::load(weights).map_err(|e| match e {
        stdensenet::NetError::Io(io) => CliError::io(weights.display(), io),
        other => CliError::Validation(format!("{}: {other}", weights.display())),
    })?;
    Ok(ModelClassifier::new(model)?)
}

fn header(command: &str, config: &RunConfig, extra: &[String]) -> String {
    let mut s = format!("command = {command}\nseed = {}\n", config.seed);
    for line in extra {
        s.push_str(line);
        s.push('\n');
    }
    for line in config.to_lines() {
        s.push_str("config.");
        s.push_str(&line);
        s.push('\n');
    }
    s
}

pub fn track(common: &CommonArgs, input: &InputArgs, out: Option<&Path>) -> Result<(), CliError> {
    let config = resolve_config(common)?;
    let data = load_input(&config, input, false)?;
    let mut tracker = Tracker::new(config.tracker.to_config()?)?;
    let mut w = output(out)?;
    for (frame, boxes) in &data.detections {
        let tracks = tracker.step(*frame, boxes)?;
        write_tracks(&mut w, *frame, &tracks)?;
    }
    finish(w)
}

fn check_window_model(model: &StDenseNetConfig) -> Result<(), CliError> {
    if model.input_depth != WINDOW_LEN || model.input_height != model.input_width {
        return Err(CliError::Validation(format!(
            "the model must take {WINDOW_LEN} square frames, got depth {} and {}x{}",
            model.input_depth, model.input_height, model.input_width
        )));
    }
    Ok(())
}

pub fn train(
    common: &CommonArgs,
    synth: bool,
    datasets: &[std::path::PathBuf],
    weights: &Path,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let config = resolve_config(common)?;
    check_window_model(&config.model)?;
    if !synth && datasets.is_empty() {
        return Err(CliError::Validation("either --synth or --dataset DIR is required".into()));
    }
    // Fail on an unwritable destination before spending time on training.
    let mut weights_file = create(weights)?;
    let mut model = StDenseNet::<f32>::new(config.model.clone(), config.seed)?;
    let normalization = model.normalization().clone();
    let crop_size = config.model.input_width;
    let data = if synth {
        let dataset = DatasetConfig {
            num_sequences: config.train.num_sequences,
            crop_size,
            box_jitter: config.train.box_jitter,
            scenario: config.scenario.clone(),
        };
        synthesize_dataset(&dataset, &normalization, config.seed)?
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let spec = ClipSpec { crop_size, box_jitter: config.train.box_jitter, limit: usize::MAX };
        let mut data = Vec::new();
        for dir in datasets {
            let truth_path = dir.join("ground_truth.csv");
            let truth = read_ground_truth(open(&truth_path)?)
                .map_err(|e| CliError::Validation(format!("{}: {e}", truth_path.display())))?;
            let frames = PngFrames::open(&dir.join("frames"))?;
            clips_from_truth(&frames, &truth, &spec, &normalization, &mut rng, &mut data)?;
        }
        data
    };
    eprintln!("training on {} clips", data.len());
    let train_config = TrainConfig {
        epochs: config.train.epochs,
        batch_size: config.train.batch_size,
        seed: config.seed,
        adam: config.train.adam,
    };
    let history = train_with(&mut model, &data, &train_config, |s| {
        eprintln!("epoch {:>3}  loss {:.6}  accuracy {:.4}", s.epoch, s.loss, s.accuracy);
    })?;
    weights_file
        .write_all(&stdensenet::to_bytes(&model)?)
        .map_err(|e| CliError::io(weights.display(), e))?;
    let mut w = output(out)?;
    writeln!(w, "epoch,loss,accuracy")?;
    for s in &history {
        writeln!(w, "{},{},{}", s.epoch, s.loss, s.accuracy)?;
    }
    finish(w)
}

pub fn predict(common: &CommonArgs, input: &InputArgs, weights: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let config = resolve_config(common)?;
    let classifier = load_classifier(weights)?;
    let data = load_input(&config, input, true)?;
    let run = run_pipeline(data.source()?, &data.detections, &config.tracker.to_config()?, &classifier)?;
    let mut w = output(out)?;
    write_intents(&mut w, &run.scores)?;
    finish(w)
}

pub fn eval(
    common: &CommonArgs,
    input: &InputArgs,
    ground_truth: Option<&Path>,
    weights: &Path,
    out: Option<&Path>,
    json_out: Option<&Path>,
) -> Result<(), CliError> {
    let config = resolve_config(common)?;
    let classifier = load_classifier(weights)?;
    let data = load_input(&config, input, true)?;
    let truth = match (&data.scenario, ground_truth) {
        (Some(s), _) => GroundTruth::from_scenario(s),
        (None, Some(path)) => read_ground_truth(open(path)?)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?,
        (None, None) => return Err(CliError::Validation("--ground-truth FILE is required with --detections".into())),
    };
    let run = run_pipeline(data.source()?, &data.detections, &config.tracker.to_config()?, &classifier)?;
    let report = evaluate(&run, &truth, &config.eval)?;

    let mut extra = data.provenance(input);
    if let Some(p) = ground_truth.filter(|_| data.scenario.is_none()) {
        extra.push(format!("input.ground_truth = {}", p.display()));
    }
    extra.push(format!("input.weights = {}", weights.display()));
    let text = header("eval", &config, &extra) + &report.metrics_text();
    // Wall-clock timing varies from run to run, so it stays out of the saved report.
    match out {
        Some(path) => {
            fs::write(path, &text).map_err(|e| CliError::io(path.display(), e))?;
            print!("{}", report.metrics_text());
        }
        None => print!("{text}"),
    }
    print!("{}", report.timing_text());
    if let Some(path) = json_out {
        let mut metrics = serde_json::to_value(&report).map_err(|e| CliError::Internal(e.to_string()))?;
        if let Some(map) = metrics.as_object_mut() {
            map.remove("timing");
        }
        let doc = json!({ "command": "eval", "seed": config.seed, "config": config, "report": metrics });
        let body = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Internal(e.to_string()))?;
        fs::write(path, body + "\n").map_err(|e| CliError::io(path.display(), e))?;
    }
    Ok(())
}

pub fn gradcheck(common: &CommonArgs, corrupt_gradient: bool, zero: bool) -> Result<(), CliError> {
    let config = resolve_config(common)?;
    let g = &config.gradcheck;
    let check = GradCheckConfig {
        model: StDenseNetConfig::gradcheck(),
        batch: g.batch,
        seed: config.seed,
        step: g.step,
        tolerance: g.tolerance,
        floor: g.floor,
        corrupt_gradient,
        zero_model: zero,
    };
    let start = Instant::now();
    let report = gradient_check(&check)?;
    println!("parameters_checked = {}", report.checked);
    println!("max_relative_error = {:e}", report.max_relative_error);
    println!("worst_tensor = {}", if report.worst_tensor.is_empty() { "none" } else { &report.worst_tensor });
    println!("tolerance = {:e}", report.tolerance);
    println!("seconds = {:.1}", start.elapsed().as_secs_f64());
    println!("result = {}", if report.passed { "pass" } else { "fail" });
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "max relative error {:e} in {} exceeds {:e}",
            report.max_relative_error, report.worst_tensor, report.tolerance
        )))
    }
}

/// Tracking throughput alone, repeating the sequence until `budget` has elapsed.
fn tracking_only_fps(config: &RunConfig, detections: &[(i64, Vec<BBox>)], budget: Duration) -> Result<f64, CliError> {
    let tracker_config = config.tracker.to_config()?;
    let mut frames = 0usize;
    let mut elapsed = Duration::ZERO;
    while elapsed < budget || frames == 0 {
        let mut tracker = Tracker::new(tracker_config.clone())?;
        let start = Instant::now();
        for (frame, boxes) in detections {
            std::hint::black_box(tracker.step(*frame, boxes)?);
        }
        elapsed += start.elapsed();
        frames += detections.len();
        if detections.is_empty() {
            break;
        }
    }
    Ok(if elapsed.is_zero() { 0.0 } else { frames as f64 / elapsed.as_secs_f64() })
}

pub fn bench(common: &CommonArgs, weights: Option<&Path>) -> Result<(), CliError> {
    let config = resolve_config(common)?;
    let classifier = match weights {
        Some(path) => load_classifier(path)?,
        None => {
            check_window_model(&config.model)?;
            ModelClassifier::new(StDenseNet::new(config.model.clone(), config.seed)?)?
        }
    };
    let scenario = synthesize_scenario(&config.scenario, config.seed)?;
    let detections = scenario_detections(&scenario);
    let run = run_pipeline(&scenario, &detections, &config.tracker.to_config()?, &classifier)?;
    let t = StageTiming::from_totals(run.tracking_time, run.prediction_time, run.frames);
    let tracking_fps = tracking_only_fps(&config, &detections, Duration::from_millis(250))?;
    println!("seed = {}", config.seed);
    println!("frames = {}", run.frames);
    println!("agents = {}", scenario.agents.len());
    println!("scored_windows = {}", run.scores.len());
    println!("{:>12} {:>14} {:>10} {:>8}", "tracking_ms", "prediction_ms", "total_ms", "fps");
    println!("{:>12.4} {:>14.4} {:>10.4} {:>8.2}", t.tracking_ms, t.prediction_ms, t.total_ms, t.fps);
    println!("tracking_only_fps = {tracking_fps:.1}");
    Ok(())
}

pub fn synth(common: &CommonArgs, out: &Path) -> Result<(), CliError> {
    let config = resolve_config(common)?;
    let scenario = synthesize_scenario(&config.scenario, config.seed)?;
    let frames_dir = out.join("frames");
    fs::create_dir_all(&frames_dir).map_err(|e| CliError::io(frames_dir.display(), e))?;
    for t in 0..scenario.num_frames() as i64 {
        write_png(&scenario.render_frame(t)?, &frames_dir.join(frame_file_name(t)))?;
    }
    let detections: Vec<_> = scenario.detections.iter().flatten().copied().collect();
    let mut w = output(Some(&out.join("detections.csv")))?;
    write_detections(&mut w, &detections)?;
    finish(w)?;
    let mut w = output(Some(&out.join("ground_truth.csv")))?;
    write_ground_truth(&mut w, &GroundTruth::from_scenario(&scenario))?;
    finish(w)?;
    let agents: Vec<Value> = scenario
        .agents
        .iter()
        .map(|a| json!({ "id": a.id, "intent": a.intent, "onset": a.onset }))
        .collect();
    let doc = json!({ "seed": config.seed, "scenario": config.scenario, "agents": agents });
    let body = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Internal(e.to_string()))?;
    let path = out.join("scenario.json");
    fs::write(&path, body + "\n").map_err(|e| CliError::io(path.display(), e))?;
    println!("wrote {} frames and {} detections to {}", scenario.num_frames(), detections.len(), out.display());
    Ok(())
}
