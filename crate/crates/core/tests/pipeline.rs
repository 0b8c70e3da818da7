use crowdflow::data::{make_episodes, split, synth_scenario, EpisodeOptions, NaturalSpline, ScenarioKind, ScenarioSpec};
use crowdflow::density::{density_from_positions, Grid};
use crowdflow::geom::{Bounds, Vec2};
use crowdflow::predictor::PredictorConfig;
use crowdflow::simulate::{rollout_mae, ConstantVelocity, Learned};
use crowdflow::state::{integrate_step, CrowdState, PedestrianState, Scene, Track, TrajectorySet};
use crowdflow::training::{TrainConfig, Trainer, Variant};
use proptest::prelude::*;

/// Natural cubic spline by dense elimination on the second-derivative system.
fn dense_natural_spline(t: &[f64], y: &[f64]) -> impl Fn(f64) -> f64 {
    let n = t.len();
    let mut a = vec![vec![0.0; n + 1]; n];
    a[0][0] = 1.0;
    a[n - 1][n - 1] = 1.0;
    for i in 1..n - 1 {
        let (h0, h1) = (t[i] - t[i - 1], t[i + 1] - t[i]);
        a[i][i - 1] = h0 / 6.0;
        a[i][i] = (h0 + h1) / 3.0;
        a[i][i + 1] = h1 / 6.0;
        a[i][n] = (y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0;
    }
    for c in 0..n {
        let piv = (c..n).max_by(|&p, &q| a[p][c].abs().total_cmp(&a[q][c].abs())).unwrap();
        a.swap(c, piv);
        for r in 0..n {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..=n {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
    }
    let m: Vec<f64> = (0..n).map(|i| a[i][n] / a[i][i]).collect();
    let (t, y) = (t.to_vec(), y.to_vec());
    move |x: f64| {
        let i = (0..n - 1).rfind(|&i| t[i] <= x).unwrap_or(0);
        let h = t[i + 1] - t[i];
        let (l, r) = (t[i + 1] - x, x - t[i]);
        m[i] * l.powi(3) / (6.0 * h) + m[i + 1] * r.powi(3) / (6.0 * h) + (y[i] / h - m[i] * h / 6.0) * l + (y[i + 1] / h - m[i + 1] * h / 6.0) * r
    }
}

#[test]
fn spline_through_cubic_samples() {
    let t = [0.0, 0.4, 0.8, 1.2];
    let y: Vec<f64> = t.iter().map(|v: &f64| v.powi(3)).collect();
    let s = NaturalSpline::fit(&t, &y).unwrap();
    assert_eq!(s.eval(0.4), y[1]);
    assert!((s.eval(0.4) - 0.064).abs() < 1e-15);
    let oracle = dense_natural_spline(&t, &y);
    for k in 0..=240 {
        let x = 1.2 * k as f64 / 240.0;
        assert!((s.eval(x) - oracle(x)).abs() < 1e-12, "at {x}");
    }
    // The natural end condition costs accuracy only near the ends.
    let mid = (0..=100).map(|k| 0.4 + 0.4 * k as f64 / 100.0).map(|x| (s.eval(x) - x.powi(3)).abs()).fold(0.0, f64::max);
    assert!(mid < 0.05, "{mid}");
}

fn crowd(values: &[(f64, f64, f64, f64)]) -> CrowdState<f64> {
    let peds = values
        .iter()
        .enumerate()
        .map(|(i, &(px, py, vx, vy))| PedestrianState::new(i as u64, 0, Vec2::new(px, py), Vec2::new(vx, vy), Vec2::zero(), 4))
        .collect();
    CrowdState::new(0, 0.08, peds).unwrap()
}

fn coord() -> impl Strategy<Value = f64> {
    -50.0..50.0f64
}

proptest! {
    #[test]
    fn integrate_step_is_affine(
        a in prop::collection::vec((coord(), coord(), coord(), coord(), coord(), coord()), 1..8),
        b in prop::collection::vec((coord(), coord(), coord(), coord(), coord(), coord()), 8),
    ) {
        let b = &b[..a.len()];
        let sa = crowd(&a.iter().map(|x| (x.0, x.1, x.2, x.3)).collect::<Vec<_>>());
        let sb = crowd(&b.iter().map(|x| (x.0, x.1, x.2, x.3)).collect::<Vec<_>>());
        let sum = crowd(&a.iter().zip(b).map(|(x, y)| (x.0 + y.0, x.1 + y.1, x.2 + y.2, x.3 + y.3)).collect::<Vec<_>>());
        let acc_a: Vec<_> = a.iter().map(|x| Vec2::new(x.4, x.5)).collect();
        let acc_b: Vec<_> = b.iter().map(|x| Vec2::new(x.4, x.5)).collect();
        let acc_sum: Vec<_> = acc_a.iter().zip(&acc_b).map(|(p, q)| *p + *q).collect();
        let na = integrate_step(&sa, &acc_a).unwrap();
        let nb = integrate_step(&sb, &acc_b).unwrap();
        let ns = integrate_step(&sum, &acc_sum).unwrap();
        for ((x, y), z) in na.pedestrians.iter().zip(&nb.pedestrians).zip(&ns.pedestrians) {
            prop_assert!((x.position + y.position - z.position).norm() < 1e-9);
            prop_assert!((x.velocity + y.velocity - z.velocity).norm() < 1e-9);
        }
        prop_assert_eq!(ns.time_index, 1);
    }

    #[test]
    fn synthetic_crowds_conserve_mass(seed in 0u64..1000, count in 2usize..30, nx in 1usize..20, ny in 1usize..20, beta in 0.1..100.0f64) {
        let (traj, scene) = synth_scenario(&ScenarioSpec::new(ScenarioKind::Circle, count, 12, seed)).unwrap();
        let grid = Grid::new(scene.bounds, nx, ny).unwrap();
        for f in [0, 5, 11] {
            let pos: Vec<_> = traj.snapshot(f).into_iter().map(|(_, p)| p).collect();
            let rho = density_from_positions(&grid, &pos, beta).unwrap();
            prop_assert!((rho.iter().sum::<f64>() - pos.len() as f64).abs() < 1e-9);
        }
    }
}

#[test]
fn lone_pedestrian_learns_to_speed_up() {
    // Constant push toward a destination straight ahead.
    let dt = 0.08;
    let (v0, acc) = (0.6, 0.8);
    let frames: Vec<i64> = (0..40).collect();
    let positions = frames
        .iter()
        .map(|&f| {
            let t = f as f64 * dt;
            Vec2::new(v0 * t + 0.5 * acc * t * t, 1.0)
        })
        .collect();
    let traj = TrajectorySet::new(dt, vec![Track { id: 1, frames, positions }]).unwrap();
    let scene = Scene::new(vec![], Bounds::new(Vec2::new(-1.0, -1.0), Vec2::new(6.0, 3.0)).unwrap()).unwrap();
    let episodes = make_episodes(&traj, &scene, &EpisodeOptions { history: 4, horizon: 4, stride: Some(1) }).unwrap().episodes;

    let mut cfg = TrainConfig {
        epochs: 1,
        horizon: 4,
        history: 4,
        learning_rate: 5e-3,
        batch_episodes: 1,
        variant: Variant::NoOde,
        ..TrainConfig::default()
    };
    cfg.predictor = PredictorConfig { hidden: 16, history: 4, ..PredictorConfig::default() };
    let mut trainer = Trainer::new(cfg, scene.bounds).unwrap();

    let velocity_mse = |t: &Trainer| {
        let (mut sum, mut n) = (0.0, 0);
        for ep in &episodes {
            for f in ep.anchor()..ep.frames.len() - 1 {
                let state = &ep.frames[f];
                let a = t.model.predict_next(&t.params, state, &scene).unwrap();
                let v = state.pedestrians[0].velocity + a[0] * dt;
                sum += v.dist_sq(ep.frames[f + 1].pedestrians[0].velocity);
                n += 1;
            }
        }
        sum / n as f64
    };
    let before = velocity_mse(&trainer);
    let mut steps = 0;
    while steps < 200 {
        trainer.train_epoch(&episodes).unwrap();
        steps += episodes.len();
    }
    let after = velocity_mse(&trainer);
    assert!(after <= 0.5 * before, "velocity MSE {before} -> {after}");
}

#[test]
fn trained_model_beats_constant_velocity_rollouts() {
    let mut spec = ScenarioSpec::new(ScenarioKind::Crossing, 10, 100, 5);
    spec.noise_std = 0.02;
    let (traj, scene) = synth_scenario(&spec).unwrap();
    let episodes = make_episodes(&traj, &scene, &EpisodeOptions { history: 8, horizon: 10, stride: None }).unwrap().episodes;
    let (train, test) = split(&episodes, 0.8).unwrap();
    let mut cfg = TrainConfig { epochs: 5, ..TrainConfig::default() };
    cfg.predictor.hidden = 8;
    let mut trainer = Trainer::new(cfg, scene.bounds).unwrap();
    trainer.fit(&train).unwrap();
    let ck = trainer.checkpoint();
    let model = ck.model().unwrap();
    let learned = rollout_mae(&Learned { model: &model, params: &ck.params }, &test).unwrap();
    let baseline = rollout_mae(&ConstantVelocity, &test).unwrap();
    assert!(learned < baseline, "learned {learned} vs constant velocity {baseline}");
}
