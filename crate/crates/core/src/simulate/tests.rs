use super::*;
use crate::data::{make_episodes, synth_scenario, EpisodeOptions, ScenarioKind, ScenarioSpec};
use crate::geom::Bounds;
use crate::state::PedestrianState;

fn scene() -> Scene<f64> {
    Scene::new(vec![], Bounds::new(Vec2::new(-50.0, -50.0), Vec2::new(50.0, 50.0)).unwrap()).unwrap()
}

fn ped(id: u64, p: (f64, f64), v: (f64, f64), dest: (f64, f64)) -> PedestrianState<f64> {
    PedestrianState::new(id, 0, Vec2::new(p.0, p.1), Vec2::new(v.0, v.1), Vec2::new(dest.0, dest.1), 4)
}

fn crowd(peds: Vec<PedestrianState<f64>>) -> CrowdState<f64> {
    CrowdState::new(0, 0.08, peds).unwrap()
}

struct Broken;

impl Policy for Broken {
    fn accelerations(&self, state: &CrowdState<f64>, _: &Scene<f64>) -> Result<Vec<Vec2<f64>>> {
        let nan = if state.time_index >= 3 { f64::NAN } else { 0.0 };
        Ok(vec![Vec2::new(nan, 0.0); state.len()])
    }
}

#[test]
fn zero_model_walks_straight() {
    let s = crowd(vec![ped(1, (0.0, 0.0), (1.0, 0.5), (100.0, 50.0))]);
    let r = autoregressive_rollout(&ConstantVelocity, &s, &scene(), 20).unwrap();
    assert_eq!(r.frames(), 20);
    let t = &r.trajectories.tracks[0];
    assert_eq!(t.frames, (1..=20).collect::<Vec<_>>());
    for (k, p) in t.positions.iter().enumerate() {
        let time = (k + 1) as f64 * 0.08;
        assert!((p.x - time).abs() < 1e-12 && (p.y - 0.5 * time).abs() < 1e-12);
    }
    assert_eq!(r.arrivals, vec![(1, None)]);
}

#[test]
fn arrived_pedestrians_stay_put() {
    let s = crowd(vec![
        ped(1, (0.0, 0.0), (1.0, 0.0), (0.3, 0.0)),
        ped(2, (5.0, 0.0), (0.0, 1.0), (5.0, 40.0)),
    ]);
    let r = autoregressive_rollout(&ConstantVelocity, &s, &scene(), 10).unwrap();
    assert_eq!(r.arrivals[0], (1, Some(0)));
    assert!(r.trajectories.tracks[0].positions.iter().all(|p| *p == Vec2::new(0.0, 0.0)));
    assert_eq!(r.frames(), 10);
}

#[test]
fn everyone_arrived_at_start_emits_nothing() {
    let s = crowd(vec![ped(1, (0.0, 0.0), (1.0, 0.0), (0.2, 0.1))]);
    let r = autoregressive_rollout(&ConstantVelocity, &s, &scene(), 10).unwrap();
    assert_eq!(r.frames(), 0);
}

#[test]
fn rollout_stops_when_all_arrive() {
    // 1 m away at 1 m/s: within 0.5 m after 7 frames (1 - 7·0.08 = 0.44).
    let s = crowd(vec![ped(1, (0.0, 0.0), (1.0, 0.0), (1.0, 0.0)), ped(2, (3.0, 3.0), (0.0, 0.0), (3.0, 3.2))]);
    for horizon in [3, 7, 30] {
        let r = autoregressive_rollout(&ConstantVelocity, &s, &scene(), horizon).unwrap();
        assert_eq!(r.frames(), horizon.min(7));
    }
    let r = autoregressive_rollout(&ConstantVelocity, &s, &scene(), 30).unwrap();
    assert_eq!(r.arrivals, vec![(1, Some(7)), (2, Some(0))]);
    let track = &r.trajectories.tracks[0];
    assert!((track.positions[6].x - 0.56).abs() < 1e-12);
}

#[test]
fn frozen_after_arrival_under_sfm() {
    let s = crowd(vec![ped(1, (0.0, 0.0), (1.2, 0.0), (2.0, 0.0)), ped(2, (0.0, 3.0), (1.2, 0.0), (30.0, 3.0))]);
    let r = autoregressive_rollout(&SfmParams::default(), &s, &scene(), 60).unwrap();
    let (_, Some(at)) = r.arrivals[0] else { panic!("pedestrian 1 should arrive") };
    let t = &r.trajectories.tracks[0];
    let i = t.frames.iter().position(|f| *f == at).unwrap();
    assert!(t.positions[i..].iter().all(|p| *p == t.positions[i]));
    let again = autoregressive_rollout(&SfmParams::default(), &s, &scene(), 60).unwrap();
    assert_eq!(r, again);
}

#[test]
fn non_finite_prediction_reports_frame() {
    let s = crowd(vec![ped(1, (0.0, 0.0), (1.0, 0.0), (40.0, 0.0))]);
    let err = autoregressive_rollout(&Broken, &s, &scene(), 10).unwrap_err();
    assert!(matches!(err, Error::NonFinite { frame: 3, .. }), "{err}");
}

#[test]
fn constant_velocity_reproduces_straight_lines() {
    let (traj, scene) = synth_scenario(&ScenarioSpec::new(ScenarioKind::Corridor, 4, 60, 1)).unwrap();
    let opts = EpisodeOptions { history: 8, horizon: 10, stride: None };
    let eps = make_episodes(&traj, &scene, &opts).unwrap().episodes;
    assert!(rollout_mae(&ConstantVelocity, &eps).unwrap() < 1e-9);
    let init = initial_state(&traj, 7, 8).unwrap();
    assert_eq!(init, eps[0].frames[7]);
}

#[test]
fn curve_examples() {
    let cfg = SinkhornConfig::default();
    let gt = TrajectorySet::new(
        0.08,
        (1..=3)
            .map(|id| Track {
                id,
                frames: (0..20).collect(),
                positions: (0..20).map(|f| Vec2::new(f as f64 * 0.1, id as f64)).collect(),
            })
            .collect(),
    )
    .unwrap();
    let shift = |off: &dyn Fn(i64) -> f64| {
        let tracks = gt
            .tracks
            .iter()
            .map(|t| Track {
                id: t.id,
                frames: t.frames.clone(),
                positions: t.frames.iter().zip(&t.positions).map(|(f, p)| *p + Vec2::new(0.0, off(*f))).collect(),
            })
            .collect();
        TrajectorySet::new(0.08, tracks).unwrap()
    };
    let same = accumulated_error_curve(&gt, &gt, CurveMetric::Mae, &cfg).unwrap();
    assert_eq!(same.len(), 20);
    assert!(same.iter().all(|(_, v)| *v == 0.0));

    let flat = accumulated_error_curve(&shift(&|_| 0.1), &gt, CurveMetric::Mae, &cfg).unwrap();
    assert!(flat.iter().all(|(_, v)| (v - 0.1).abs() < 1e-12));

    let drift = accumulated_error_curve(&shift(&|f| 0.01 * f as f64), &gt, CurveMetric::Mae, &cfg).unwrap();
    for w in drift.windows(2) {
        assert!(((w[1].1 - w[0].1) - 0.01).abs() < 1e-9);
    }

    let ot = accumulated_error_curve(&shift(&|_| 0.1), &gt, CurveMetric::Ot, &cfg).unwrap();
    assert!(ot.iter().all(|(_, v)| (v - 0.01).abs() < 0.05 * 0.01));

    let strangers = TrajectorySet::new(0.08, vec![Track { id: 99, frames: vec![0], positions: vec![Vec2::zero()] }]).unwrap();
    assert!(accumulated_error_curve(&strangers, &gt, CurveMetric::Mae, &cfg).unwrap().is_empty());

    let csv = curve_csv(CurveMetric::Mae, &flat[..2]);
    assert!(csv.starts_with("frame,mae\n0,0.1"));
}

#[test]
fn model_kind_names() {
    for k in [ModelKind::Stddn, ModelKind::Sfm, ModelKind::Zero] {
        assert_eq!(k.to_string().parse::<ModelKind>().unwrap(), k);
    }
    assert!("ca".parse::<ModelKind>().is_err());
}
