//! Trajectory evaluation: displacement errors, distribution distances,
//! collisions and local density realism.

mod dtw;
mod mmd;
mod ot;

pub use dtw::dtw;
pub use mmd::{mmd_gaussian, MmdResult};
pub use ot::{ot_sinkhorn, OtResult, SinkhornConfig};

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::real::Real;
use crate::state::{Track, TrajectorySet};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Pairs closer than this (meters) collide.
pub const COLLISION_DISTANCE: f64 = 0.5;
/// Pairs colliding for longer than this (seconds) are companions.
pub const FRIEND_SECONDS: f64 = 2.0;
/// Neighbourhood radius for local density, meters.
pub const DEA_RADIUS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Mae,
    Fde,
    Ot,
    Mmd,
    Dtw,
    Colli,
    Dea,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::Mae,
        Metric::Fde,
        Metric::Ot,
        Metric::Mmd,
        Metric::Dtw,
        Metric::Colli,
        Metric::Dea,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Mae => "mae",
            Metric::Fde => "fde",
            Metric::Ot => "ot",
            Metric::Mmd => "mmd",
            Metric::Dtw => "dtw",
            Metric::Colli => "colli",
            Metric::Dea => "dea",
        }
    }

    /// Parses a comma separated list such as `mae,ot,colli`.
    pub fn parse_list(s: &str) -> Result<Vec<Metric>> {
        let mut out: Vec<Metric> = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let m = part.parse()?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err(Error::Config("no metrics requested".into()));
        }
        Ok(out)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown metric {s:?}")))
    }
}

/// One `(id, frame)` sample present in both sets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aligned<T> {
    pub id: u64,
    pub frame: i64,
    pub pred: Vec2<T>,
    pub gt: Vec2<T>,
}

/// Samples sharing id and frame, ordered by id then frame.
pub fn aligned<T: Real>(pred: &TrajectorySet<T>, gt: &TrajectorySet<T>) -> Vec<Aligned<T>> {
    let mut out = Vec::new();
    for t in &pred.tracks {
        let Some(g) = gt.track(t.id) else { continue };
        for (&frame, &p) in t.frames.iter().zip(&t.positions) {
            if let Some(q) = g.at(frame) {
                out.push(Aligned { id: t.id, frame, pred: p, gt: q });
            }
        }
    }
    out
}

/// Mean Euclidean error over aligned samples.
pub fn mae<T: Real>(pred: &TrajectorySet<T>, gt: &TrajectorySet<T>) -> Result<T> {
    let samples = aligned(pred, gt);
    if samples.is_empty() {
        return Err(Error::UndefinedMetric("mae"));
    }
    let sum = samples.iter().fold(T::zero(), |acc, s| acc + s.pred.dist(s.gt));
    Ok(sum / T::lit(samples.len() as f64))
}

/// Mean error at each pedestrian's last aligned frame.
pub fn fde<T: Real>(pred: &TrajectorySet<T>, gt: &TrajectorySet<T>) -> Result<T> {
    let samples = aligned(pred, gt);
    let finals: Vec<T> = samples
        .iter()
        .enumerate()
        .filter(|(i, s)| samples.get(i + 1).is_none_or(|n| n.id != s.id))
        .map(|(_, s)| s.pred.dist(s.gt))
        .collect();
    if finals.is_empty() {
        return Err(Error::UndefinedMetric("fde"));
    }
    Ok(finals.iter().fold(T::zero(), |a, b| a + *b) / T::lit(finals.len() as f64))
}

/// Every position of every track, track by track.
pub fn point_cloud<T: Real>(traj: &TrajectorySet<T>) -> Vec<Vec2<T>> {
    traj.tracks.iter().flat_map(|t| t.positions.iter().copied()).collect()
}

/// Keeps only samples with frames in `[lo, hi]`, dropping emptied tracks.
pub fn restrict_frames<T: Real>(traj: &TrajectorySet<T>, lo: i64, hi: i64) -> TrajectorySet<T> {
    let tracks = traj
        .tracks
        .iter()
        .filter_map(|t| {
            let (frames, positions): (Vec<i64>, Vec<Vec2<T>>) = t
                .frames
                .iter()
                .zip(&t.positions)
                .filter(|(f, _)| (lo..=hi).contains(*f))
                .map(|(f, p)| (*f, *p))
                .unzip();
            (!frames.is_empty()).then_some(Track { id: t.id, frames, positions })
        })
        .collect();
    TrajectorySet {
        frame_dt: traj.frame_dt,
        tracks,
    }
}

/// Mean DTW distance over pedestrians present in both sets.
pub fn dtw_mean<T: Real>(pred: &TrajectorySet<T>, gt: &TrajectorySet<T>) -> Result<T> {
    let pairs: Vec<(&Track<T>, &Track<T>)> = pred
        .tracks
        .iter()
        .filter_map(|t| gt.track(t.id).filter(|g| !g.is_empty() && !t.is_empty()).map(|g| (t, g)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::UndefinedMetric("dtw"));
    }
    let sum = pairs
        .par_iter()
        .map(|(a, b)| dtw(&a.positions, &b.positions).to_f64_lossy())
        .collect::<Vec<f64>>()
        .into_iter()
        .sum::<f64>();
    Ok(T::lit(sum / pairs.len() as f64))
}

/// Per-track positions on a dense frame axis `lo..=hi`.
fn dense<T: Real>(traj: &TrajectorySet<T>) -> Option<(i64, usize, Vec<Vec<Option<Vec2<T>>>>)> {
    let (lo, hi) = traj.frame_range()?;
    let n = (hi - lo + 1) as usize;
    let rows = traj
        .tracks
        .iter()
        .map(|t| {
            let mut row = vec![None; n];
            for (&f, &p) in t.frames.iter().zip(&t.positions) {
                row[(f - lo) as usize] = Some(p);
            }
            row
        })
        .collect();
    Some((lo, n, rows))
}

/// Pair-frames closer than 0.5 m, excluding every collision of pairs whose
/// contact ever lasts longer than 2 s.
pub fn collision_count<T: Real>(traj: &TrajectorySet<T>) -> u64 {
    let Some((_, n, rows)) = dense(traj) else { return 0 };
    let limit = T::lit(COLLISION_DISTANCE);
    let dt = traj.frame_dt.to_f64_lossy();
    let k = rows.len();
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect();
    pairs
        .par_iter()
        .map(|&(i, j)| {
            let (mut total, mut run) = (0u64, 0u64);
            for f in 0..n {
                let hit = matches!((rows[i][f], rows[j][f]), (Some(a), Some(b)) if a.dist(b) < limit);
                if hit {
                    run += 1;
                    total += 1;
                    if run as f64 * dt > FRIEND_SECONDS + 1e-9 {
                        return 0;
                    }
                } else {
                    run = 0;
                }
            }
            total
        })
        .sum()
}

/// Neighbours within `radius` of each `(pedestrian, frame)` sample.
pub fn local_densities<T: Real>(traj: &TrajectorySet<T>, radius: T) -> Vec<usize> {
    let Some((_, n, rows)) = dense(traj) else { return Vec::new() };
    let mut out = Vec::new();
    for f in 0..n {
        let present: Vec<Vec2<T>> = rows.iter().filter_map(|r| r[f]).collect();
        for (i, a) in present.iter().enumerate() {
            let count = present
                .iter()
                .enumerate()
                .filter(|(j, b)| *j != i && a.dist(**b) <= radius)
                .count();
            out.push(count);
        }
    }
    out
}

/// Fraction of predicted samples whose local density exceeds the mean
/// ground-truth local density.
pub fn dea<T: Real>(pred: &TrajectorySet<T>, gt: &TrajectorySet<T>, radius: T) -> Result<T> {
    let g = local_densities(gt, radius);
    let p = local_densities(pred, radius);
    if g.is_empty() || p.is_empty() {
        return Err(Error::UndefinedMetric("dea"));
    }
    let mu = g.iter().sum::<usize>() as f64 / g.len() as f64;
    let above = p.iter().filter(|&&d| d as f64 > mu).count();
    Ok(T::lit(above as f64 / p.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub sinkhorn: SinkhornConfig,
    pub collision_distance: f64,
    pub friend_seconds: f64,
    pub dea_radius: f64,
    /// Frames compared, after restricting both sets to their common range.
    pub window: Option<(i64, i64)>,
    /// Resolved Sinkhorn temperature.
    pub ot_epsilon: Option<f64>,
    /// Resolved Gaussian bandwidth (median heuristic).
    pub mmd_bandwidth: Option<f64>,
    pub mmd_biased: bool,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            sinkhorn: SinkhornConfig::default(),
            collision_distance: COLLISION_DISTANCE,
            friend_seconds: FRIEND_SECONDS,
            dea_radius: DEA_RADIUS,
            window: None,
            ot_epsilon: None,
            mmd_bandwidth: None,
            mmd_biased: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mae: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fde: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ot: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mmd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dtw: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub collisions: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dea: Option<f64>,
    pub config: MetricConfig,
}

impl MetricReport {
    pub fn rows(&self) -> Vec<(&'static str, String)> {
        let mut rows = Vec::new();
        let mut num = |name, v: Option<f64>| {
            if let Some(v) = v {
                rows.push((name, format!("{v:.6}")));
            }
        };
        num("mae", self.mae);
        num("fde", self.fde);
        num("ot", self.ot);
        num("mmd", self.mmd);
        num("dtw", self.dtw);
        if let Some(c) = self.collisions {
            rows.push(("colli", c.to_string()));
        }
        if let Some(d) = self.dea {
            rows.push(("dea", format!("{d:.6}")));
        }
        rows
    }

    /// Aligned two-column table.
    pub fn to_table(&self) -> String {
        let rows = self.rows();
        let width = rows.iter().map(|(_, v)| v.len()).max().unwrap_or(0).max(5);
        let mut out = format!("{:<8}{:>width$}\n", "metric", "value");
        for (name, value) in rows {
            out.push_str(&format!("{name:<8}{value:>width$}\n"));
        }
        out
    }
}

/// Computes the requested metrics of `pred` against `gt`.
///
/// Both sets are first restricted to their common frame range; collisions
/// are counted on the prediction alone.
pub fn evaluate<T: Real>(
    pred: &TrajectorySet<T>,
    gt: &TrajectorySet<T>,
    metrics: &[Metric],
    sinkhorn: &SinkhornConfig,
) -> Result<MetricReport> {
    let (Some((p_lo, p_hi)), Some((g_lo, g_hi))) = (pred.frame_range(), gt.frame_range()) else {
        return Err(Error::UndefinedMetric("evaluation window"));
    };
    let (lo, hi) = (p_lo.max(g_lo), p_hi.min(g_hi));
    if lo > hi {
        return Err(Error::UndefinedMetric("evaluation window"));
    }
    let pred = restrict_frames(pred, lo, hi);
    let gt = restrict_frames(gt, lo, hi);
    let mut report = MetricReport {
        config: MetricConfig {
            sinkhorn: *sinkhorn,
            window: Some((lo, hi)),
            ..MetricConfig::default()
        },
        ..MetricReport::default()
    };
    for m in metrics {
        match m {
            Metric::Mae => report.mae = Some(mae(&pred, &gt)?.to_f64_lossy()),
            Metric::Fde => report.fde = Some(fde(&pred, &gt)?.to_f64_lossy()),
            Metric::Ot => {
                let r = ot_sinkhorn(&point_cloud(&pred), &point_cloud(&gt), sinkhorn)?;
                report.ot = Some(r.cost.to_f64_lossy());
                report.config.ot_epsilon = Some(r.epsilon.to_f64_lossy());
            }
            Metric::Mmd => {
                let r = mmd_gaussian(&point_cloud(&pred), &point_cloud(&gt))?;
                report.mmd = Some(r.value.to_f64_lossy());
                report.config.mmd_bandwidth = Some(r.bandwidth.to_f64_lossy());
                report.config.mmd_biased = r.biased;
            }
            Metric::Dtw => report.dtw = Some(dtw_mean(&pred, &gt)?.to_f64_lossy()),
            Metric::Colli => report.collisions = Some(collision_count(&pred)),
            Metric::Dea => report.dea = Some(dea(&pred, &gt, T::lit(DEA_RADIUS))?.to_f64_lossy()),
        }
    }
    Ok(report)
}
