use crate::sibling;
use anyhow::{bail, Context, Result};
use clap::Args;
use crowdflow::autodiff::ParameterStore;
use crowdflow::baseline::SfmParams;
use crowdflow::data::{
    format_trajectories, make_episodes, parse_trajectory_file, resample_cubic, split, synth_scenario,
    EpisodeOptions, ScenarioKind, ScenarioSpec,
};
use crowdflow::metrics::{evaluate as run_metrics, Metric, SinkhornConfig};
use crowdflow::predictor::PredictorModel;
use crowdflow::simulate::{
    accumulated_error_curve, autoregressive_rollout, curve_csv, initial_state, ConstantVelocity, CurveMetric,
    Learned, ModelKind, Policy,
};
use crowdflow::state::{integrate_step, Scene, TrajectorySet, DEFAULT_DT, DEFAULT_HISTORY};
use crowdflow::training::{training_log_csv, Checkpoint, TrainConfig, Trainer};
use serde_json::json;
use std::path::{Path, PathBuf};
use std::time::Instant;

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_trajectories(path: &Path, dt: f64) -> Result<TrajectorySet<f64>> {
    parse_trajectory_file(path, dt).with_context(|| format!("loading trajectories from {}", path.display()))
}

fn load_scene(path: &Path) -> Result<Scene<f64>> {
    let scene: Scene<f64> = read_json(path)?;
    scene.validate().with_context(|| format!("scene {}", path.display()))?;
    Ok(scene)
}

/// Trajectory text preceded by a `#` line recording how it was made.
fn with_header(command: &str, config: &serde_json::Value, body: String) -> String {
    format!("# crowdflow {command} {config}\n{body}")
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, value_parser = ["corridor", "crossing", "circle"])]
    scenario: String,
    #[arg(long)]
    peds: usize,
    #[arg(long)]
    frames: usize,
    /// Per-coordinate position noise, meters.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Scene JSON path; defaults to `<out stem>.scene.json`.
    #[arg(long)]
    scene_out: Option<PathBuf>,
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let kind: ScenarioKind = a.scenario.parse()?;
    let spec = ScenarioSpec {
        noise_std: a.noise,
        ..ScenarioSpec::new(kind, a.peds, a.frames, a.seed)
    };
    let (traj, scene) = synth_scenario(&spec)?;
    let config = serde_json::to_value(&spec)?;
    write(&a.out, with_header("synth", &config, format_trajectories(&traj)))?;
    let scene_path = a.scene_out.unwrap_or_else(|| sibling(&a.out, ".scene.json"));
    let mut scene_json = serde_json::to_value(&scene)?;
    scene_json["config"] = config;
    write(&scene_path, serde_json::to_string_pretty(&scene_json)?)?;
    eprintln!(
        "wrote {} pedestrians x {} frames to {} and scene to {}",
        traj.len(),
        a.frames,
        a.out.display(),
        scene_path.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Seconds per frame id in the input.
    #[arg(long)]
    source_dt: f64,
    #[arg(long, default_value_t = DEFAULT_DT)]
    target_dt: f64,
    #[arg(long)]
    out: PathBuf,
}

pub fn preprocess(a: PreprocessArgs) -> Result<()> {
    if !(a.source_dt > 0.0 && a.target_dt > 0.0) {
        bail!("--source-dt and --target-dt must be positive");
    }
    let traj = load_trajectories(&a.input, a.source_dt)?;
    let res = resample_cubic(&traj, a.target_dt)?;
    for w in &res.warnings {
        eprintln!("warning: pedestrian {}: {}", w.ped_id, w.reason);
    }
    let config = json!({
        "input": a.input,
        "source_dt": a.source_dt,
        "target_dt": a.target_dt,
    });
    write(&a.out, with_header("preprocess", &config, format_trajectories(&res.trajectories)))?;
    eprintln!("resampled {} tracks to {}", res.trajectories.len(), a.out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training configuration JSON; omitted fields take their defaults.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Training log CSV; defaults to `<out stem>.log.csv`.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_DT)]
    dt: f64,
}

pub fn train(a: TrainArgs) -> Result<()> {
    let config: TrainConfig = read_json(&a.config)?;
    config.validate()?;
    let traj = load_trajectories(&a.data, a.dt)?;
    let scene = load_scene(&a.scene)?;
    let opts = EpisodeOptions {
        history: config.history,
        horizon: config.horizon,
        stride: None,
    };
    let episodes = make_episodes(&traj, &scene, &opts)?;
    for w in &episodes.warnings {
        eprintln!("warning: pedestrian {}: {}", w.ped_id, w.reason);
    }
    let (train_eps, test_eps) = split(&episodes.episodes, config.train_ratio)?;
    if train_eps.is_empty() {
        bail!("no training episodes: {} windows in total", episodes.episodes.len());
    }
    eprintln!("training on {} episodes, {} held out", train_eps.len(), test_eps.len());
    let mut trainer = Trainer::new(config.clone(), scene.bounds)?;
    let mut reports = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let r = trainer.train_epoch(&train_eps)?;
        eprintln!(
            "epoch {:>4}  l_nn {:.6}  l_ode {:.6}  l_joint {:.6}  |g| {:.4}",
            r.epoch, r.l_nn, r.l_ode, r.l_joint, r.grad_norm
        );
        reports.push(r);
    }
    if !test_eps.is_empty() {
        let t = trainer.evaluate(&test_eps)?;
        eprintln!("held out: l_nn {:.6}  l_ode {:.6}  l_joint {:.6}", t.l_nn, t.l_ode, t.l_joint);
    }
    trainer.checkpoint().save(&a.out)?;
    let log = a.log.unwrap_or_else(|| sibling(&a.out, ".log.csv"));
    let header = format!("# crowdflow train {}\n", serde_json::to_string(&config)?);
    write(&log, header + &training_log_csv(&reports))?;
    eprintln!("wrote {} and {}", a.out.display(), log.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Checkpoint; required for `--model-kind stddn`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Recorded trajectories supplying the initial states and destinations.
    #[arg(long)]
    init: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    horizon: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "stddn")]
    model_kind: ModelKind,
    /// Frame to start from; defaults to the first frame with a full history.
    #[arg(long)]
    start_frame: Option<i64>,
    #[arg(long, default_value_t = DEFAULT_DT)]
    dt: f64,
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let checkpoint = match (&a.model, a.model_kind) {
        (Some(p), _) => Some(Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?),
        (None, ModelKind::Stddn) => bail!("--model is required for --model-kind stddn"),
        (None, _) => None,
    };
    let model = checkpoint.as_ref().map(Checkpoint::model).transpose()?;
    let history = checkpoint.as_ref().map_or(DEFAULT_HISTORY, |c| c.config.history);
    let traj = load_trajectories(&a.init, a.dt)?;
    let scene = load_scene(&a.scene)?;
    let (first, _) = traj.frame_range().context("initial trajectory file is empty")?;
    let start = a.start_frame.unwrap_or(first + history as i64 - 1);
    let init = initial_state(&traj, start, history)?;
    let sfm = SfmParams::default();
    let learned;
    let policy: &dyn Policy = match a.model_kind {
        ModelKind::Stddn => {
            let (m, c) = (model.as_ref().expect("checked"), checkpoint.as_ref().expect("checked"));
            learned = Learned { model: m, params: &c.params };
            &learned
        }
        ModelKind::Sfm => &sfm,
        ModelKind::Zero => &ConstantVelocity,
    };
    let rollout = autoregressive_rollout(policy, &init, &scene, a.horizon)?;
    let config = json!({
        "model": a.model,
        "model_kind": a.model_kind,
        "init": a.init,
        "start_frame": start,
        "horizon": a.horizon,
        "dt": a.dt,
        "sfm": if a.model_kind == ModelKind::Sfm { Some(sfm) } else { None },
    });
    write(&a.out, with_header("simulate", &config, format_trajectories(&rollout.trajectories)))?;
    let arrived = rollout.arrivals.iter().filter(|(_, f)| f.is_some()).count();
    eprintln!(
        "simulated {} pedestrians for {} frames from frame {start} ({arrived} arrived) -> {}",
        init.len(),
        rollout.frames(),
        a.out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value = "mae,fde,ot,mmd,dtw,colli,dea")]
    metrics: String,
    #[arg(long)]
    out: PathBuf,
    /// Per-frame error curve CSV.
    #[arg(long)]
    curve: Option<PathBuf>,
    #[arg(long, default_value = "mae", value_parser = ["mae", "ot"])]
    curve_metric: String,
    #[arg(long, default_value_t = DEFAULT_DT)]
    dt: f64,
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let metrics = Metric::parse_list(&a.metrics)?;
    let pred = load_trajectories(&a.pred, a.dt)?;
    let gt = load_trajectories(&a.gt, a.dt)?;
    let sinkhorn = SinkhornConfig::default();
    let report = run_metrics(&pred, &gt, &metrics, &sinkhorn)?;
    let out = json!({
        "pred": a.pred,
        "gt": a.gt,
        "metrics": metrics,
        "report": report,
    });
    write(&a.out, serde_json::to_string_pretty(&out)? + "\n")?;
    print!("{}", report.to_table());
    if let Some(path) = a.curve {
        let metric = if a.curve_metric == "ot" { CurveMetric::Ot } else { CurveMetric::Mae };
        let curve = accumulated_error_curve(&pred, &gt, metric, &sinkhorn)?;
        let header = format!("# crowdflow evaluate {}\n", json!({"pred": a.pred, "gt": a.gt, "curve": metric}));
        write(&path, header + &curve_csv(metric, &curve))?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    peds: usize,
    #[arg(long)]
    frames: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Also write the report JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

pub fn bench(a: BenchArgs) -> Result<()> {
    if a.peds == 0 || a.frames == 0 {
        bail!("--peds and --frames must be positive");
    }
    let ck = Checkpoint::load(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let model: PredictorModel = ck.model()?;
    let params: &ParameterStore = &ck.params;
    let history = ck.config.history;
    let spec = ScenarioSpec::new(ScenarioKind::Crossing, a.peds, history + a.frames + 1, a.seed);
    let (traj, scene) = synth_scenario(&spec)?;
    let mut state = initial_state(&traj, history as i64 - 1, history)?;
    let mut latencies = Vec::with_capacity(a.frames);
    let total = Instant::now();
    for _ in 0..a.frames {
        let t = Instant::now();
        let accel = model.predict_next(params, &state, &scene)?;
        latencies.push(t.elapsed().as_secs_f64() * 1e3);
        state = integrate_step(&state, &accel)?;
    }
    let wall = total.elapsed().as_secs_f64();
    let mut sorted = latencies.clone();
    sorted.sort_by(f64::total_cmp);
    let mean = latencies.iter().sum::<f64>() / latencies.len() as f64;
    let report = json!({
        "model": a.model,
        "peds": a.peds,
        "frames": a.frames,
        "seed": a.seed,
        "parameters": params.scalar_count(),
        "latency_ms": {
            "mean": mean,
            "median": percentile(&sorted, 0.5),
            "p95": percentile(&sorted, 0.95),
            "min": sorted[0],
            "max": sorted[sorted.len() - 1],
        },
        "fps": a.frames as f64 / wall,
    });
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    if let Some(out) = a.out {
        write(&out, text + "\n")?;
    }
    Ok(())
}
