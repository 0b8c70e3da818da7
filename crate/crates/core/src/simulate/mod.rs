//! Autoregressive rollouts and per-frame error curves.

use crate::autodiff::ParameterStore;
use crate::baseline::{sfm_step, SfmParams};
use crate::data::{pedestrian_at, Episode};
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::metrics::{aligned, ot_sinkhorn, SinkhornConfig};
use crate::predictor::PredictorModel;
use crate::real::Real;
use crate::state::{integrate_step, velocities_from_positions, CrowdState, Scene, Track, TrajectorySet};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Pedestrians this close to their destination (meters) stop.
pub const ARRIVAL_RADIUS: f64 = 0.5;

/// Anything that maps a crowd state to per-pedestrian accelerations.
pub trait Policy: Sync {
    fn accelerations(&self, state: &CrowdState<f64>, scene: &Scene<f64>) -> Result<Vec<Vec2<f64>>>;
}

/// Zero acceleration: everyone keeps their current velocity.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConstantVelocity;

impl Policy for ConstantVelocity {
    fn accelerations(&self, state: &CrowdState<f64>, _: &Scene<f64>) -> Result<Vec<Vec2<f64>>> {
        Ok(vec![Vec2::zero(); state.len()])
    }
}

impl Policy for SfmParams {
    fn accelerations(&self, state: &CrowdState<f64>, scene: &Scene<f64>) -> Result<Vec<Vec2<f64>>> {
        sfm_step(state, scene, self)
    }
}

/// A trained predictor with its parameters.
#[derive(Debug, Clone, Copy)]
pub struct Learned<'a> {
    pub model: &'a PredictorModel,
    pub params: &'a ParameterStore,
}

impl Policy for Learned<'_> {
    fn accelerations(&self, state: &CrowdState<f64>, scene: &Scene<f64>) -> Result<Vec<Vec2<f64>>> {
        self.model.predict_next(self.params, state, scene)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Stddn,
    Sfm,
    Zero,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Stddn => "stddn",
            ModelKind::Sfm => "sfm",
            ModelKind::Zero => "zero",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stddn" => Ok(ModelKind::Stddn),
            "sfm" => Ok(ModelKind::Sfm),
            "zero" => Ok(ModelKind::Zero),
            _ => Err(Error::Config(format!("unknown model kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// Simulated frames only; the initial frame is not repeated.
    pub trajectories: TrajectorySet<f64>,
    /// Frame at which each pedestrian arrived, in initial-state order.
    pub arrivals: Vec<(u64, Option<i64>)>,
}

impl Rollout {
    pub fn frames(&self) -> usize {
        self.trajectories.tracks.first().map_or(0, |t| t.len())
    }
}

/// Iterates `policy` and the kinematic update for up to `horizon` frames.
///
/// Pedestrians within [`ARRIVAL_RADIUS`] of their destination are frozen in
/// place; the rollout ends early once everyone has arrived.
pub fn autoregressive_rollout(
    policy: &dyn Policy,
    initial: &CrowdState<f64>,
    scene: &Scene<f64>,
    horizon: usize,
) -> Result<Rollout> {
    let mut state = initial.clone();
    let mut arrived: Vec<Option<i64>> = vec![None; state.len()];
    let mut tracks: Vec<Track<f64>> = state
        .pedestrians
        .iter()
        .map(|p| Track {
            id: p.id,
            frames: Vec::with_capacity(horizon),
            positions: Vec::with_capacity(horizon),
        })
        .collect();
    let mut done = check_arrivals(&mut state, &mut arrived);
    for step in 0..horizon {
        if done {
            break;
        }
        let mut accel = policy.accelerations(&state, scene)?;
        if accel.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite { stage: "rollout", frame: step });
        }
        for (a, flag) in accel.iter_mut().zip(&arrived) {
            if flag.is_some() {
                *a = Vec2::zero();
            }
        }
        state = integrate_step(&state, &accel)?;
        done = check_arrivals(&mut state, &mut arrived);
        for (t, p) in tracks.iter_mut().zip(&state.pedestrians) {
            t.frames.push(state.time_index);
            t.positions.push(p.position);
        }
    }
    let arrivals = state.pedestrians.iter().map(|p| p.id).zip(arrived).collect();
    Ok(Rollout {
        trajectories: TrajectorySet::new(state.dt, tracks)?,
        arrivals,
    })
}

/// Flags newly arrived pedestrians and zeroes the velocity of everyone
/// arrived. Returns whether all have arrived.
fn check_arrivals(state: &mut CrowdState<f64>, arrived: &mut [Option<i64>]) -> bool {
    for (ped, flag) in state.pedestrians.iter_mut().zip(arrived.iter_mut()) {
        if flag.is_none() && ped.position.dist(ped.destination) <= ARRIVAL_RADIUS {
            *flag = Some(state.time_index);
        }
        if flag.is_some() {
            ped.velocity = Vec2::zero();
        }
    }
    arrived.iter().all(Option::is_some)
}

/// Crowd state at `frame` built from recorded tracks: every pedestrian
/// sampled there, with up to `history` frames of history and its last
/// recorded position as destination.
pub fn initial_state<T: Real>(traj: &TrajectorySet<T>, frame: i64, history: usize) -> Result<CrowdState<T>> {
    let kin = velocities_from_positions(traj);
    let mut peds = Vec::new();
    for t in kin.tracks.iter().filter(|t| t.frames.binary_search(&frame).is_ok()) {
        peds.push(pedestrian_at(t, frame, t.frames[0], history)?);
    }
    if peds.is_empty() {
        return Err(Error::Data(format!("no pedestrian with derivable kinematics at frame {frame}")));
    }
    CrowdState::new(frame, traj.frame_dt, peds)
}

/// Ground-truth frames `anchor+1..` of an episode as trajectories.
pub fn episode_targets(ep: &Episode<f64>) -> Result<TrajectorySet<f64>> {
    let a = ep.anchor();
    let tracks = ep.frames[a]
        .pedestrians
        .iter()
        .enumerate()
        .map(|(k, p)| Track {
            id: p.id,
            frames: ep.frames[a + 1..].iter().map(|s| s.time_index).collect(),
            positions: ep.frames[a + 1..].iter().map(|s| s.pedestrians[k].position).collect(),
        })
        .collect();
    TrajectorySet::new(ep.frames[a].dt, tracks)
}

/// Mean position error of rollouts started at each episode's anchor,
/// pooled over all aligned samples. Episodes run in parallel.
pub fn rollout_mae(policy: &dyn Policy, episodes: &[Episode<f64>]) -> Result<f64> {
    let per: Vec<(f64, usize)> = episodes
        .par_iter()
        .map(|ep| {
            let roll = autoregressive_rollout(policy, &ep.frames[ep.anchor()], &ep.scene, ep.horizon)?;
            let samples = aligned(&roll.trajectories, &episode_targets(ep)?);
            Ok((samples.iter().map(|s| s.pred.dist(s.gt)).sum(), samples.len()))
        })
        .collect::<Result<_>>()?;
    let (sum, n) = per.iter().fold((0.0, 0), |(s, c), (a, b)| (s + a, c + b));
    if n == 0 {
        return Err(Error::UndefinedMetric("rollout mae"));
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveMetric {
    Mae,
    Ot,
}

impl CurveMetric {
    pub fn name(self) -> &'static str {
        match self {
            CurveMetric::Mae => "mae",
            CurveMetric::Ot => "ot",
        }
    }
}

/// The metric at every frame, over pedestrians present in both sets at
/// that frame. Frames without shared pedestrians are skipped.
pub fn accumulated_error_curve<T: Real>(
    pred: &TrajectorySet<T>,
    gt: &TrajectorySet<T>,
    metric: CurveMetric,
    sinkhorn: &SinkhornConfig,
) -> Result<Vec<(i64, T)>> {
    let mut samples = aligned(pred, gt);
    samples.sort_by_key(|s| (s.frame, s.id));
    let mut out = Vec::new();
    for chunk in samples.chunk_by(|a, b| a.frame == b.frame) {
        let value = match metric {
            CurveMetric::Mae => {
                chunk.iter().fold(T::zero(), |acc, s| acc + s.pred.dist(s.gt)) / T::lit(chunk.len() as f64)
            }
            CurveMetric::Ot => {
                let p: Vec<Vec2<T>> = chunk.iter().map(|s| s.pred).collect();
                let q: Vec<Vec2<T>> = chunk.iter().map(|s| s.gt).collect();
                ot_sinkhorn(&p, &q, sinkhorn)?.cost
            }
        };
        out.push((chunk[0].frame, value));
    }
    Ok(out)
}

pub fn curve_csv<T: Real>(metric: CurveMetric, curve: &[(i64, T)]) -> String {
    let mut out = format!("frame,{}\n", metric.name());
    for (f, v) in curve {
        out.push_str(&format!("{f},{v}\n"));
    }
    out
}

#[cfg(test)]
mod tests;
