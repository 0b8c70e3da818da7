//! Pedestrian, scene and crowd state types plus the kinematic update rule.

use crate::error::{Error, Result};
use crate::geom::{Bounds, Vec2};
use crate::real::Real;
use serde::{Deserialize, Serialize};
use std::collections::{HashSet, VecDeque};

/// Frame interval of the resampled datasets, in seconds.
pub const DEFAULT_DT: f64 = 0.08;
/// Default history window length in frames.
pub const DEFAULT_HISTORY: usize = 8;

/// One remembered frame of a pedestrian's motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryEntry<T> {
    pub frame: i64,
    pub position: Vec2<T>,
    pub velocity: Vec2<T>,
    pub acceleration: Vec2<T>,
}

/// Bounded ring of the most recent frames, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct History<T> {
    capacity: usize,
    entries: VecDeque<HistoryEntry<T>>,
}

impl<T: Real> History<T> {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            entries: VecDeque::with_capacity(capacity.max(1)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends a frame, evicting the oldest when full. Frames must increase.
    pub fn push(&mut self, entry: HistoryEntry<T>) -> Result<()> {
        if let Some(last) = self.entries.back() {
            if entry.frame <= last.frame {
                return Err(Error::contract(
                    "History::push",
                    format!("frame {} does not follow {}", entry.frame, last.frame),
                ));
            }
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &HistoryEntry<T>> {
        self.entries.iter()
    }

    pub fn latest(&self) -> Option<&HistoryEntry<T>> {
        self.entries.back()
    }

    /// Exactly `capacity` entries, oldest first; short histories repeat their earliest frame.
    pub fn padded(&self) -> Vec<HistoryEntry<T>> {
        let mut out = Vec::with_capacity(self.capacity);
        if let Some(first) = self.entries.front() {
            for _ in self.entries.len()..self.capacity {
                out.push(*first);
            }
        }
        out.extend(self.entries.iter().copied());
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PedestrianState<T> {
    pub id: u64,
    pub position: Vec2<T>,
    pub velocity: Vec2<T>,
    /// The acceleration that produced the current velocity.
    pub acceleration: Vec2<T>,
    pub destination: Vec2<T>,
    pub history: History<T>,
}

impl<T: Real> PedestrianState<T> {
    /// A pedestrian whose history holds only the current frame.
    pub fn new(
        id: u64,
        frame: i64,
        position: Vec2<T>,
        velocity: Vec2<T>,
        destination: Vec2<T>,
        history_len: usize,
    ) -> Self {
        let mut history = History::new(history_len);
        let entry = HistoryEntry {
            frame,
            position,
            velocity,
            acceleration: Vec2::zero(),
        };
        history.push(entry).expect("empty history accepts any frame");
        Self {
            id,
            position,
            velocity,
            acceleration: Vec2::zero(),
            destination,
            history,
        }
    }

    /// Unit vector toward the destination, zero once there.
    pub fn destination_direction(&self) -> Vec2<T> {
        (self.destination - self.position).normalized_or_zero(T::lit(1e-9))
    }
}

/// Static environment: obstacle points and the scene rectangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real + Deserialize<'de>", serialize = "T: Serialize"))]
pub struct Scene<T> {
    pub obstacles: Vec<Vec2<T>>,
    pub bounds: Bounds<T>,
}

impl<T: Real> Scene<T> {
    pub fn new(obstacles: Vec<Vec2<T>>, bounds: Bounds<T>) -> Result<Self> {
        let s = Self { obstacles, bounds };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bounds.width() > T::zero() && self.bounds.height() > T::zero()) {
            return Err(Error::Data("scene bounds must have positive area".into()));
        }
        if let Some(o) = self.obstacles.iter().find(|o| !self.bounds.contains(**o)) {
            return Err(Error::Data(format!("obstacle {o:?} lies outside the scene bounds")));
        }
        Ok(())
    }
}

/// Snapshot of every active pedestrian at one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CrowdState<T> {
    pub time_index: i64,
    pub dt: T,
    pub pedestrians: Vec<PedestrianState<T>>,
}

impl<T: Real> CrowdState<T> {
    pub fn new(time_index: i64, dt: T, pedestrians: Vec<PedestrianState<T>>) -> Result<Self> {
        if !(dt > T::zero()) {
            return Err(Error::contract("CrowdState::new", "dt must be positive"));
        }
        let mut seen = HashSet::with_capacity(pedestrians.len());
        for p in &pedestrians {
            if !seen.insert(p.id) {
                return Err(Error::contract(
                    "CrowdState::new",
                    format!("duplicate pedestrian id {}", p.id),
                ));
            }
        }
        Ok(Self {
            time_index,
            dt,
            pedestrians,
        })
    }

    pub fn len(&self) -> usize {
        self.pedestrians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pedestrians.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec2<T>> {
        self.pedestrians.iter().map(|p| p.position).collect()
    }

    pub fn velocities(&self) -> Vec<Vec2<T>> {
        self.pedestrians.iter().map(|p| p.velocity).collect()
    }
}

/// Advances every pedestrian by one frame.
///
/// `v' = v + a·dt` and `p' = p + v·dt`, where the position update uses the
/// velocity from before this step.
pub fn integrate_step<T: Real>(state: &CrowdState<T>, accel: &[Vec2<T>]) -> Result<CrowdState<T>> {
    if accel.len() != state.pedestrians.len() {
        return Err(Error::contract(
            "integrate_step",
            format!(
                "{} accelerations for {} pedestrians",
                accel.len(),
                state.pedestrians.len()
            ),
        ));
    }
    let dt = state.dt;
    let frame = state.time_index + 1;
    let mut pedestrians = Vec::with_capacity(state.pedestrians.len());
    for (ped, &a) in state.pedestrians.iter().zip(accel) {
        let position = ped.position + ped.velocity * dt;
        let velocity = ped.velocity + a * dt;
        let mut next = ped.clone();
        next.position = position;
        next.velocity = velocity;
        next.acceleration = a;
        next.history.push(HistoryEntry {
            frame,
            position,
            velocity,
            acceleration: a,
        })?;
        pedestrians.push(next);
    }
    Ok(CrowdState {
        time_index: frame,
        dt,
        pedestrians,
    })
}

/// One pedestrian's sampled positions, frames strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct Track<T> {
    pub id: u64,
    pub frames: Vec<i64>,
    pub positions: Vec<Vec2<T>>,
}

impl<T: Real> Track<T> {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn first_frame(&self) -> Option<i64> {
        self.frames.first().copied()
    }

    pub fn last_frame(&self) -> Option<i64> {
        self.frames.last().copied()
    }

    /// Position at `frame`, if sampled there.
    pub fn at(&self, frame: i64) -> Option<Vec2<T>> {
        self.frames
            .binary_search(&frame)
            .ok()
            .map(|i| self.positions[i])
    }

    pub fn is_contiguous(&self) -> bool {
        self.frames.windows(2).all(|w| w[1] == w[0] + 1)
    }
}

/// Per-pedestrian position sequences sharing one frame interval.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet<T> {
    /// Seconds per frame index.
    pub frame_dt: T,
    /// Sorted by pedestrian id.
    pub tracks: Vec<Track<T>>,
}

impl<T: Real> TrajectorySet<T> {
    pub fn empty(frame_dt: T) -> Self {
        Self {
            frame_dt,
            tracks: Vec::new(),
        }
    }

    /// Builds a set, sorting tracks by id and validating frame order.
    pub fn new(frame_dt: T, mut tracks: Vec<Track<T>>) -> Result<Self> {
        tracks.sort_by_key(|t| t.id);
        for w in tracks.windows(2) {
            if w[0].id == w[1].id {
                return Err(Error::Data(format!("duplicate track id {}", w[0].id)));
            }
        }
        for t in &tracks {
            if t.frames.len() != t.positions.len() {
                return Err(Error::Data(format!("track {} has ragged samples", t.id)));
            }
            if t.frames.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Data(format!("track {} frames not increasing", t.id)));
            }
        }
        Ok(Self { frame_dt, tracks })
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn track(&self, id: u64) -> Option<&Track<T>> {
        self.tracks
            .binary_search_by_key(&id, |t| t.id)
            .ok()
            .map(|i| &self.tracks[i])
    }

    /// Inclusive `(first, last)` frame over all tracks.
    pub fn frame_range(&self) -> Option<(i64, i64)> {
        let lo = self.tracks.iter().filter_map(|t| t.first_frame()).min()?;
        let hi = self.tracks.iter().filter_map(|t| t.last_frame()).max()?;
        Some((lo, hi))
    }

    /// `(id, position)` of every pedestrian sampled at `frame`.
    pub fn snapshot(&self, frame: i64) -> Vec<(u64, Vec2<T>)> {
        self.tracks
            .iter()
            .filter_map(|t| t.at(frame).map(|p| (t.id, p)))
            .collect()
    }
}

/// A pedestrian dropped or passed through unchanged by a preprocessing step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Warning {
    pub ped_id: u64,
    pub reason: String,
}

/// Finite-difference kinematics of one track.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackKinematics<T> {
    pub id: u64,
    pub frames: Vec<i64>,
    pub positions: Vec<Vec2<T>>,
    pub velocities: Vec<Vec2<T>>,
    pub accelerations: Vec<Vec2<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Kinematics<T> {
    pub frame_dt: T,
    pub tracks: Vec<TrackKinematics<T>>,
    pub warnings: Vec<Warning>,
}

impl<T: Real> Kinematics<T> {
    pub fn track(&self, id: u64) -> Option<&TrackKinematics<T>> {
        self.tracks.iter().find(|t| t.id == id)
    }
}

/// Forward differences: `v^t = (p^{t+1} - p^t)/dt`, `a^t = (v^{t+1} - v^t)/dt`.
///
/// The final frame copies the derivatives of the frame before it. Tracks
/// with fewer than three samples are skipped and reported as warnings.
pub fn velocities_from_positions<T: Real>(traj: &TrajectorySet<T>) -> Kinematics<T> {
    let mut tracks = Vec::with_capacity(traj.tracks.len());
    let mut warnings = Vec::new();
    for t in &traj.tracks {
        let n = t.len();
        if n < 3 {
            warnings.push(Warning {
                ped_id: t.id,
                reason: format!("{n} samples; at least 3 are needed for finite differences"),
            });
            continue;
        }
        let step = |i: usize| T::lit((t.frames[i + 1] - t.frames[i]) as f64) * traj.frame_dt;
        let mut velocities = Vec::with_capacity(n);
        for i in 0..n - 1 {
            velocities.push((t.positions[i + 1] - t.positions[i]) * (T::one() / step(i)));
        }
        velocities.push(velocities[n - 2]);
        let mut accelerations = Vec::with_capacity(n);
        for i in 0..n - 1 {
            accelerations.push((velocities[i + 1] - velocities[i]) * (T::one() / step(i)));
        }
        accelerations.push(accelerations[n - 2]);
        tracks.push(TrackKinematics {
            id: t.id,
            frames: t.frames.clone(),
            positions: t.positions.clone(),
            velocities,
            accelerations,
        });
    }
    Kinematics {
        frame_dt: traj.frame_dt,
        tracks,
        warnings,
    }
}
