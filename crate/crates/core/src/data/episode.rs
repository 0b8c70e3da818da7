//! Sliding-window episodes and the temporal train/test split.

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::real::Real;
use crate::state::{
    velocities_from_positions, CrowdState, HistoryEntry, PedestrianState, Scene, TrackKinematics,
    TrajectorySet, Warning,
};

/// A contiguous ground-truth window of `history + horizon` frames.
#[derive(Debug, Clone)]
pub struct Episode<T> {
    pub scene: Scene<T>,
    pub start_frame: i64,
    pub history: usize,
    pub horizon: usize,
    /// One snapshot per frame; only active pedestrians, in roster order.
    pub frames: Vec<CrowdState<T>>,
    /// Every pedestrian seen anywhere in the window.
    pub roster: Vec<u64>,
    /// `active[f][k]`: roster entry `k` participates at frame `f`.
    pub active: Vec<Vec<bool>>,
}

impl<T: Real> Episode<T> {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Index of the last history frame, where prediction starts.
    pub fn anchor(&self) -> usize {
        self.history - 1
    }

    pub fn end_frame(&self) -> i64 {
        self.start_frame + self.frames.len() as i64 - 1
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeOptions {
    pub history: usize,
    pub horizon: usize,
    /// Window start spacing; defaults to the horizon.
    pub stride: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Episodes<T> {
    pub episodes: Vec<Episode<T>>,
    pub warnings: Vec<Warning>,
}

/// Cuts trajectories into windows of `h + τ` frames with stride `τ`.
///
/// Pedestrians sampled on every frame of a window are active; anyone else
/// seen in the window is kept in the roster but masked out. Destinations are
/// each pedestrian's last recorded position.
pub fn make_episodes<T: Real>(
    traj: &TrajectorySet<T>,
    scene: &Scene<T>,
    opts: &EpisodeOptions,
) -> Result<Episodes<T>> {
    let (h, tau) = (opts.history, opts.horizon);
    if h == 0 || tau == 0 {
        return Err(Error::contract("make_episodes", "history and horizon must be positive"));
    }
    let stride = opts.stride.unwrap_or(tau).max(1) as i64;
    let window = (h + tau) as i64;
    let kin = velocities_from_positions(traj);
    let mut episodes = Vec::new();
    let Some((first, last)) = traj.frame_range() else {
        return Ok(Episodes {
            episodes,
            warnings: kin.warnings,
        });
    };
    let mut start = first;
    while start + window - 1 <= last {
        let end = start + window - 1;
        let roster: Vec<&TrackKinematics<T>> = kin
            .tracks
            .iter()
            .filter(|t| t.frames.iter().any(|&f| f >= start && f <= end))
            .collect();
        let covers = |t: &TrackKinematics<T>| {
            t.frames
                .binary_search(&start)
                .ok()
                .is_some_and(|i| i + window as usize <= t.frames.len() && t.frames[i + window as usize - 1] == end)
        };
        let active_flags: Vec<bool> = roster.iter().map(|t| covers(t)).collect();
        let mut frames = Vec::with_capacity(window as usize);
        for f in start..=end {
            let mut peds = Vec::new();
            for (t, _) in roster.iter().zip(&active_flags).filter(|(_, a)| **a) {
                peds.push(pedestrian_at(t, f, start, h)?);
            }
            frames.push(CrowdState::new(f, traj.frame_dt, peds)?);
        }
        episodes.push(Episode {
            scene: scene.clone(),
            start_frame: start,
            history: h,
            horizon: tau,
            frames,
            roster: roster.iter().map(|t| t.id).collect(),
            active: vec![active_flags; window as usize],
        });
        start += stride;
    }
    Ok(Episodes {
        episodes,
        warnings: kin.warnings,
    })
}

/// State of one pedestrian at `frame`, with history drawn from `[window_start, frame]`.
pub(crate) fn pedestrian_at<T: Real>(
    t: &TrackKinematics<T>,
    frame: i64,
    window_start: i64,
    h: usize,
) -> Result<PedestrianState<T>> {
    let idx = |f: i64| t.frames.binary_search(&f).ok();
    // Acceleration that produced the velocity at `f`; zero at the track start.
    let incoming = |f: i64| idx(f - 1).map(|i| t.accelerations[i]).unwrap_or_else(Vec2::zero);
    let i = idx(frame).ok_or_else(|| Error::Data(format!("pedestrian {} missing frame {frame}", t.id)))?;
    let destination = *t.positions.last().expect("non-empty track");
    let mut ped = PedestrianState::new(t.id, frame, t.positions[i], t.velocities[i], destination, h);
    ped.acceleration = incoming(frame);
    let from = (frame - h as i64 + 1).max(window_start);
    let mut history = crate::state::History::new(h);
    for f in from..=frame {
        let j = idx(f).ok_or_else(|| Error::Data(format!("pedestrian {} missing frame {f}", t.id)))?;
        history.push(HistoryEntry {
            frame: f,
            position: t.positions[j],
            velocity: t.velocities[j],
            acceleration: incoming(f),
        })?;
    }
    ped.history = history;
    Ok(ped)
}

/// Temporal split: the earliest `floor(n·ratio)` episodes train, the rest test.
pub fn split<E: Clone>(episodes: &[E], ratio: f64) -> Result<(Vec<E>, Vec<E>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::contract("split", format!("ratio {ratio} outside (0, 1)")));
    }
    let n_train = ((episodes.len() as f64) * ratio + 1e-9).floor() as usize;
    let n_train = n_train.min(episodes.len());
    Ok((episodes[..n_train].to_vec(), episodes[n_train..].to_vec()))
}
