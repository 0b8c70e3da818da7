use super::*;
use crate::autodiff::grad_check_params;
use crate::data::{make_episodes, synth_scenario, EpisodeOptions, ScenarioKind, ScenarioSpec};
use crate::predictor::PredictorConfig;
use crate::state::{Scene, Track, TrajectorySet};

fn c(v: Vec<f64>, shape: &[usize]) -> Tensor {
    Tensor::constant(v, shape)
}

#[test]
fn joint_loss_examples() {
    let v = [c(vec![1.0, 2.0], &[1, 2])];
    let r = [c(vec![0.5, 0.5], &[1, 2])];
    let l = joint_loss(&v, &v, &r, &r, 1.0, 1.0, LossNorm::Mse).unwrap();
    assert_eq!(l.joint.item().unwrap(), 0.0);

    let pred = [c(vec![0.2], &[1, 1])];
    let gt = [c(vec![0.0], &[1, 1])];
    let l = joint_loss(&pred, &gt, &r, &r, 1.0, 1.0, LossNorm::Mse).unwrap();
    assert!((l.joint.item().unwrap() - 0.04).abs() < 1e-15);

    let bad = [c(vec![0.5, 0.1], &[1, 2])];
    let l = joint_loss(&pred, &gt, &bad, &r, 1.0, 0.0, LossNorm::Mse).unwrap();
    assert_eq!(l.joint.item().unwrap(), l.nn.item().unwrap());
    assert!(l.ode.item().unwrap() > 0.0);

    assert!(joint_loss(&pred, &[], &r, &r, 1.0, 1.0, LossNorm::Mse).is_err());
}

#[test]
fn joint_loss_decomposes() {
    let pv = [c(vec![0.1, -0.3], &[1, 2]), c(vec![0.7, 0.2], &[1, 2])];
    let gv = [c(vec![0.0, 0.0], &[1, 2]), c(vec![0.5, 0.5], &[1, 2])];
    let pr = [c(vec![1.0, 0.2, 0.0], &[1, 3]), c(vec![0.3, 0.3, 0.3], &[1, 3])];
    let gr = [c(vec![0.9, 0.4, 0.1], &[1, 3]), c(vec![0.0, 0.6, 0.3], &[1, 3])];
    for norm in [LossNorm::Mse, LossNorm::Mae] {
        let l = joint_loss(&pv, &gv, &pr, &gr, 0.7, 1.9, norm).unwrap();
        let (nn, ode) = (l.nn.item().unwrap(), l.ode.item().unwrap());
        assert!((l.joint.item().unwrap() - (0.7 * nn + 1.9 * ode)).abs() < 1e-12);
    }
    // MSE over all entries (frames have equal sizes).
    let l = joint_loss(&pv, &gv, &pr, &gr, 1.0, 1.0, LossNorm::Mse).unwrap();
    let all = [0.1f64, -0.3, 0.2, -0.3];
    let mse = all.iter().map(|x| x * x).sum::<f64>() / 4.0;
    assert!((l.nn.item().unwrap() - mse).abs() < 1e-15);
}

#[test]
fn config_guards_and_names() {
    let mut cfg = TrainConfig { lambda1: 0.0, lambda2: 0.0, ..TrainConfig::default() };
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    cfg.lambda1 = 1.0;
    cfg.variant = Variant::NoNnloss;
    assert!(cfg.validate().is_err());
    cfg.variant = Variant::NoOde;
    assert!(cfg.validate().is_ok());
    for v in Variant::ALL {
        assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(json, format!("\"{}\"", v.name()));
    }
    let parsed: TrainConfig = serde_json::from_str(r#"{"variant": "no-cgd", "epochs": 3}"#).unwrap();
    assert_eq!(parsed.variant, Variant::NoCgd);
    assert_eq!(parsed.epochs, 3);
    assert_eq!(parsed.lambda1, 1.0);
}

#[test]
fn variant_overrides() {
    let base = TrainConfig::default();
    let with = |v| TrainConfig { variant: v, ..base.clone() };
    assert_eq!(with(Variant::NoOde).loss_weights(), (1.0, 0.0));
    assert!(!with(Variant::NoOde).uses_density());
    assert_eq!(with(Variant::NoNnloss).loss_weights(), (0.0, 1.0));
    assert_eq!(with(Variant::Rk4).solver().method, crate::ode::SolverMethod::Rk4);
    assert_eq!(with(Variant::Discrete).solver().method, crate::ode::SolverMethod::Discrete);
    assert_eq!(with(Variant::NoNe).weight_form(), crate::dvcg::WeightForm::Direct);
}

fn small_predictor(hidden: usize, history: usize, zero_readout: bool) -> PredictorConfig {
    PredictorConfig {
        hidden,
        history,
        zero_readout,
        ..PredictorConfig::default()
    }
}

fn crossing_episodes(count: usize, frames: usize, h: usize, tau: usize) -> (Vec<Episode<f64>>, Scene<f64>) {
    let spec = ScenarioSpec::new(ScenarioKind::Crossing, count, frames, 3);
    let (traj, scene) = synth_scenario(&spec).unwrap();
    let opts = EpisodeOptions { history: h, horizon: tau, stride: None };
    (make_episodes(&traj, &scene, &opts).unwrap().episodes, scene)
}

fn quick_config(variant: Variant) -> TrainConfig {
    TrainConfig {
        epochs: 2,
        horizon: 3,
        history: 3,
        grid_nx: 4,
        grid_ny: 4,
        embedding_dim: 3,
        variant,
        predictor: small_predictor(8, 3, true),
        ..TrainConfig::default()
    }
}

#[test]
fn frozen_parameters_repeat_reports() {
    let (eps, scene) = crossing_episodes(6, 40, 3, 3);
    let cfg = TrainConfig { learning_rate: 0.0, ..quick_config(Variant::Full) };
    let mut t = Trainer::new(cfg, scene.bounds).unwrap();
    let a = t.train_epoch(&eps).unwrap();
    let b = t.train_epoch(&eps).unwrap();
    assert_eq!((a.l_nn, a.l_ode, a.l_joint), (b.l_nn, b.l_ode, b.l_joint));
    assert!(a.l_ode > 0.0);
}

#[test]
fn same_seed_same_reports() {
    let (eps, scene) = crossing_episodes(6, 40, 3, 3);
    let run = || {
        let mut t = Trainer::new(quick_config(Variant::Full), scene.bounds).unwrap();
        t.fit(&eps).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    for r in &a {
        assert!((r.l_joint - (r.l_nn + r.l_ode)).abs() < 1e-12);
    }
}

#[test]
fn every_variant_trains() {
    let (eps, scene) = crossing_episodes(6, 40, 3, 3);
    for v in Variant::ALL {
        let mut t = Trainer::new(quick_config(v), scene.bounds).unwrap();
        let reports = t.fit(&eps).unwrap();
        assert!(reports.iter().all(|r| r.l_joint.is_finite()), "{v}");
        if v == Variant::NoOde {
            assert!(reports.iter().all(|r| r.l_ode == 0.0));
        }
    }
}

#[test]
fn batches_accumulate() {
    let (eps, scene) = crossing_episodes(6, 40, 3, 3);
    let cfg = TrainConfig { batch_episodes: 3, ..quick_config(Variant::Full) };
    let mut t = Trainer::new(cfg, scene.bounds).unwrap();
    t.train_epoch(&eps).unwrap();
    assert_eq!(t.optimizer.steps() as usize, eps.len().div_ceil(3));
}

#[test]
fn mismatched_episode_is_rejected() {
    let (eps, scene) = crossing_episodes(4, 40, 3, 4);
    let mut t = Trainer::new(quick_config(Variant::Full), scene.bounds).unwrap();
    assert!(matches!(t.train_epoch(&eps), Err(Error::Contract { .. })));
}

#[test]
fn checkpoint_round_trip() {
    let (eps, scene) = crossing_episodes(6, 40, 3, 3);
    let mut t = Trainer::new(quick_config(Variant::Full), scene.bounds).unwrap();
    t.train_epoch(&eps).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    t.checkpoint().save(&path).unwrap();
    let ck = Checkpoint::load(&path).unwrap();
    assert_eq!(ck, t.checkpoint());
    let back = Trainer::from_checkpoint(&ck).unwrap();
    assert_eq!(back.evaluate(&eps).unwrap(), t.evaluate(&eps).unwrap());
}

#[test]
fn log_csv_layout() {
    let r = LossReport { epoch: 1, l_nn: 0.5, l_ode: 0.25, l_joint: 0.75, grad_norm: 2.0, floor_events: 3 };
    assert_eq!(
        training_log_csv(&[r]),
        "epoch,l_nn,l_ode,l_joint,grad_norm,floor_events\n1,0.5,0.25,0.75,2,3\n"
    );
}

/// Four pedestrians on a 3 m square split into 3×3 cells, placed so that
/// cell crossings happen inside a two-frame horizon.
pub(crate) fn tiny_episode() -> (Episode<f64>, Scene<f64>) {
    let dt = 0.08;
    let mk = |id: u64, start: (f64, f64), vel: (f64, f64), acc: (f64, f64)| {
        let mut positions = Vec::new();
        let (mut x, mut y, mut vx, mut vy) = (start.0, start.1, vel.0, vel.1);
        for _ in 0..4 {
            positions.push(Vec2::new(x, y));
            x += vx * dt;
            y += vy * dt;
            vx += acc.0 * dt;
            vy += acc.1 * dt;
        }
        Track { id, frames: (0..4).collect(), positions }
    };
    let tracks = vec![
        mk(1, (0.8, 1.4), (1.5, 0.1), (0.5, -0.3)),
        mk(2, (1.62, 0.5), (1.4, 0.2), (-0.4, 0.6)),
        mk(3, (2.3, 0.85), (-0.2, 1.3), (0.3, 0.2)),
        mk(4, (2.5, 2.5), (-0.3, -0.2), (0.2, 0.1)),
    ];
    let traj = TrajectorySet::new(dt, tracks).unwrap();
    let scene = Scene::new(vec![Vec2::new(1.5, 2.9)], Bounds::new(Vec2::new(0.0, 0.0), Vec2::new(3.0, 3.0)).unwrap()).unwrap();
    let opts = EpisodeOptions { history: 2, horizon: 2, stride: None };
    let ep = make_episodes(&traj, &scene, &opts).unwrap().episodes.remove(0);
    (ep, scene)
}

pub(crate) fn tiny_config(variant: Variant) -> TrainConfig {
    TrainConfig {
        horizon: 2,
        history: 2,
        grid_nx: 3,
        grid_ny: 3,
        embedding_dim: 3,
        variant,
        predictor: PredictorConfig {
            neighbor_radius: 3.0,
            ..small_predictor(5, 2, false)
        },
        ..TrainConfig::default()
    }
}

#[test]
fn full_loss_gradients_match_central_differences() {
    let (ep, scene) = tiny_episode();
    for v in [Variant::Full, Variant::Trans, Variant::NoNe, Variant::Rk4, Variant::NoCgd] {
        let t = Trainer::new(tiny_config(v), scene.bounds).unwrap();
        let tape = Tape::inference();
        let bound = t.params.bind(&tape).unwrap();
        let (loss, _) = t.episode_loss(&bound, &ep, 0).unwrap();
        assert!(loss.ode.item().unwrap() > 0.0);
        let report = grad_check_params(|_, p| Ok(t.episode_loss(p, &ep, 0)?.0.joint), &t.params, 1e-6).unwrap();
        assert!(report.max_rel_error < 1e-4, "{v}: {report:?}");
    }
}

#[test]
fn tiny_episode_has_crossings_on_both_sides() {
    let (ep, scene) = tiny_episode();
    let t = Trainer::new(tiny_config(Variant::Full), scene.bounds).unwrap();
    let beta = t.config.beta_for(&t.grid);
    let a = ep.anchor();
    let p0 = ep.frames[a].positions();
    let p1 = ep.frames[a + 1].positions();
    let masks = crossing_masks(&t.grid, &p0, &p1, beta, t.config.cgd()).unwrap();
    let g = build_dynamic_graph(&t.grid, &p0, &p1, &[1.0; 4], &masks).unwrap();
    assert!(!g.is_empty());
}
