//! Seeded synthetic scenarios: straight-line walkers with Gaussian position noise.

use crate::error::{Error, Result};
use crate::geom::{Bounds, Vec2};
use crate::state::{Scene, Track, TrajectorySet, DEFAULT_DT};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    /// Two opposing lanes along the x axis.
    Corridor,
    /// One stream heading +x, one heading +y, meeting near the origin.
    Crossing,
    /// Agents on a circle walking to their antipodes.
    Circle,
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corridor" => Ok(Self::Corridor),
            "crossing" => Ok(Self::Crossing),
            "circle" => Ok(Self::Circle),
            other => Err(Error::Config(format!("unknown scenario `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub count: usize,
    /// Walking speed in m/s.
    pub speed: f64,
    /// Standard deviation of the per-coordinate position noise, in meters.
    pub noise_std: f64,
    /// Number of frames.
    pub duration: usize,
    pub seed: u64,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind, count: usize, duration: usize, seed: u64) -> Self {
        Self {
            kind,
            count,
            speed: 1.2,
            noise_std: 0.0,
            duration,
            seed,
            dt: DEFAULT_DT,
        }
    }

    /// Checks the scenario against the episode window it must support.
    pub fn validate(&self, window: usize) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("scenario needs at least one pedestrian".into()));
        }
        if self.duration < window.max(2) {
            return Err(Error::Config(format!(
                "scenario duration {} shorter than the {window}-frame window",
                self.duration
            )));
        }
        if !(self.speed > 0.0 && self.dt > 0.0 && self.noise_std >= 0.0) {
            return Err(Error::Config("speed and dt must be positive, noise non-negative".into()));
        }
        Ok(())
    }
}

/// Generates trajectories and a scene; a pure function of `spec`.
pub fn synth_scenario(spec: &ScenarioSpec) -> Result<(TrajectorySet<f64>, Scene<f64>)> {
    spec.validate(2)?;
    let travel = spec.speed * (spec.duration - 1) as f64 * spec.dt;
    let (paths, obstacles) = match spec.kind {
        ScenarioKind::Corridor => corridor(spec.count, travel),
        ScenarioKind::Crossing => crossing(spec.count, travel),
        ScenarioKind::Circle => circle(spec.count, travel),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let steps = (spec.duration - 1) as f64;
    let mut tracks = Vec::with_capacity(paths.len());
    for (k, (start, end)) in paths.into_iter().enumerate() {
        let positions = (0..spec.duration)
            .map(|f| {
                let s = f as f64 / steps;
                let clean = start + (end - start) * s;
                if spec.noise_std > 0.0 {
                    clean + Vec2::new(noise.sample(&mut rng), noise.sample(&mut rng))
                } else {
                    clean
                }
            })
            .collect();
        tracks.push(Track {
            id: k as u64 + 1,
            frames: (0..spec.duration as i64).collect(),
            positions,
        });
    }
    let traj = TrajectorySet::new(spec.dt, tracks)?;
    let all = traj
        .tracks
        .iter()
        .flat_map(|t| t.positions.iter().copied())
        .chain(obstacles.iter().copied());
    let bounds = Bounds::enclosing(all, 2.0).ok_or_else(|| Error::Data("empty scenario".into()))?;
    Ok((traj, Scene::new(obstacles, bounds)?))
}

type Paths = Vec<(Vec2<f64>, Vec2<f64>)>;

fn corridor(n: usize, travel: f64) -> (Paths, Vec<Vec2<f64>>) {
    let lane = 0.6;
    let spacing = 1.5;
    let paths = (0..n)
        .map(|k| {
            let j = (k / 2) as f64;
            if k % 2 == 0 {
                let start = Vec2::new(-travel / 2.0 - j * spacing, lane);
                (start, start + Vec2::new(travel, 0.0))
            } else {
                let start = Vec2::new(travel / 2.0 + j * spacing, -lane);
                (start, start - Vec2::new(travel, 0.0))
            }
        })
        .collect();
    let half = travel / 2.0;
    let walls = (0..=(travel.ceil() as i64))
        .flat_map(|i| {
            let x = -half + i as f64;
            [Vec2::new(x, 2.0), Vec2::new(x, -2.0)]
        })
        .collect();
    (paths, walls)
}

fn crossing(n: usize, travel: f64) -> (Paths, Vec<Vec2<f64>>) {
    let spacing = 0.9;
    let n_a = n.div_ceil(2);
    let n_b = n - n_a;
    let mut paths = Vec::with_capacity(n);
    for j in 0..n_a {
        let lateral = (j as f64 - (n_a as f64 - 1.0) / 2.0) * spacing;
        let stagger = (j % 3) as f64 * 0.7;
        let start = Vec2::new(-travel / 2.0 - stagger, lateral);
        paths.push((start, start + Vec2::new(travel, 0.0)));
    }
    for j in 0..n_b {
        let lateral = (j as f64 - (n_b as f64 - 1.0) / 2.0) * spacing;
        let stagger = (j % 3) as f64 * 0.7;
        let start = Vec2::new(lateral, -travel / 2.0 - stagger);
        paths.push((start, start + Vec2::new(0.0, travel)));
    }
    (paths, Vec::new())
}

fn circle(n: usize, travel: f64) -> (Paths, Vec<Vec2<f64>>) {
    let radius = travel / 2.0;
    let paths = (0..n)
        .map(|k| {
            let angle = 2.0 * PI * k as f64 / n as f64;
            let start = Vec2::new(radius * angle.cos(), radius * angle.sin());
            (start, -start)
        })
        .collect();
    (paths, Vec::new())
}
