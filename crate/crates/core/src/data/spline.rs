//! Natural cubic spline resampling of trajectories.

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::real::Real;
use crate::state::{Track, TrajectorySet, Warning};

/// Natural cubic spline through `(knots[i], values[i])`.
#[derive(Debug, Clone)]
pub struct NaturalSpline<T> {
    knots: Vec<T>,
    values: Vec<T>,
    /// Second derivatives at the knots; zero at both ends.
    second: Vec<T>,
}

impl<T: Real> NaturalSpline<T> {
    pub fn fit(knots: &[T], values: &[T]) -> Result<Self> {
        let n = knots.len();
        if n != values.len() || n < 2 {
            return Err(Error::contract("NaturalSpline::fit", "need at least 2 matching samples"));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::contract("NaturalSpline::fit", "knots must increase strictly"));
        }
        let mut second = vec![T::zero(); n];
        if n > 2 {
            // Thomas algorithm on the interior equations.
            let m = n - 2;
            let two = T::lit(2.0);
            let six = T::lit(6.0);
            let mut diag = vec![T::zero(); m];
            let mut rhs = vec![T::zero(); m];
            let mut upper = vec![T::zero(); m];
            for k in 0..m {
                let i = k + 1;
                let h0 = knots[i] - knots[i - 1];
                let h1 = knots[i + 1] - knots[i];
                diag[k] = two * (h0 + h1);
                upper[k] = h1;
                rhs[k] = six * ((values[i + 1] - values[i]) / h1 - (values[i] - values[i - 1]) / h0);
            }
            for k in 1..m {
                let lower = knots[k + 1] - knots[k];
                let w = lower / diag[k - 1];
                diag[k] -= w * upper[k - 1];
                let prev = rhs[k - 1];
                rhs[k] -= w * prev;
            }
            second[m] = rhs[m - 1] / diag[m - 1];
            for k in (0..m - 1).rev() {
                second[k + 1] = (rhs[k] - upper[k] * second[k + 2]) / diag[k];
            }
        }
        Ok(Self {
            knots: knots.to_vec(),
            values: values.to_vec(),
            second,
        })
    }

    /// Evaluates the spline; knots return their sample value exactly.
    pub fn eval(&self, t: T) -> T {
        let n = self.knots.len();
        let i = match self
            .knots
            .binary_search_by(|k| k.partial_cmp(&t).expect("finite knots"))
        {
            Ok(i) => return self.values[i],
            Err(0) => 0,
            Err(i) if i >= n => n - 2,
            Err(i) => i - 1,
        };
        let h = self.knots[i + 1] - self.knots[i];
        let a = (self.knots[i + 1] - t) / h;
        let b = (t - self.knots[i]) / h;
        let six = T::lit(6.0);
        a * self.values[i]
            + b * self.values[i + 1]
            + ((a * a * a - a) * self.second[i] + (b * b * b - b) * self.second[i + 1]) * h * h / six
    }
}

#[derive(Debug, Clone)]
pub struct Resampled<T> {
    pub trajectories: TrajectorySet<T>,
    pub warnings: Vec<Warning>,
}

/// Resamples every track onto a uniform `target_dt` lattice with natural cubic splines.
///
/// The lattice starts at each track's first timestamp. Lattice points that
/// coincide with an original sample (within 1e-9 of a step) reproduce it
/// exactly. Tracks with fewer than four samples are copied with their frame
/// ids rescaled and a warning.
pub fn resample_cubic<T: Real>(traj: &TrajectorySet<T>, target_dt: T) -> Result<Resampled<T>> {
    if !(target_dt > T::zero()) {
        return Err(Error::contract("resample_cubic", "target_dt must be positive"));
    }
    let snap = T::lit(1e-9);
    let to_frame = |time: T| -> i64 { (time / target_dt).round().to_f64_lossy() as i64 };
    let mut tracks = Vec::with_capacity(traj.tracks.len());
    let mut warnings = Vec::new();
    for track in &traj.tracks {
        let times: Vec<T> = track
            .frames
            .iter()
            .map(|&f| T::lit(f as f64) * traj.frame_dt)
            .collect();
        if track.len() < 4 {
            warnings.push(Warning {
                ped_id: track.id,
                reason: format!("{} samples; cubic resampling needs 4", track.len()),
            });
            tracks.push(Track {
                id: track.id,
                frames: times.iter().map(|&t| to_frame(t)).collect(),
                positions: track.positions.clone(),
            });
            continue;
        }
        let xs: Vec<T> = track.positions.iter().map(|p| p.x).collect();
        let ys: Vec<T> = track.positions.iter().map(|p| p.y).collect();
        let sx = NaturalSpline::fit(&times, &xs)?;
        let sy = NaturalSpline::fit(&times, &ys)?;
        let t0 = times[0];
        let span = times[times.len() - 1] - t0;
        let steps = (span / target_dt + snap).floor().to_f64_lossy() as i64;
        let mut frames = Vec::with_capacity(steps as usize + 1);
        let mut positions = Vec::with_capacity(steps as usize + 1);
        let mut knot = 0usize;
        for k in 0..=steps {
            let mut t = t0 + T::lit(k as f64) * target_dt;
            while knot + 1 < times.len() && times[knot] < t - snap * target_dt {
                knot += 1;
            }
            if (times[knot] - t).abs() <= snap * target_dt {
                t = times[knot];
            }
            frames.push(to_frame(t));
            positions.push(Vec2::new(sx.eval(t), sy.eval(t)));
        }
        tracks.push(Track {
            id: track.id,
            frames,
            positions,
        });
    }
    Ok(Resampled {
        trajectories: TrajectorySet::new(target_dt, tracks)?,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track(id: u64, pts: &[(f64, f64)]) -> Track<f64> {
        Track {
            id,
            frames: (0..pts.len() as i64).collect(),
            positions: pts.iter().map(|&(x, y)| Vec2::new(x, y)).collect(),
        }
    }

    #[test]
    fn straight_line_stays_colinear() {
        let pts: Vec<(f64, f64)> = (0..6).map(|i| (i as f64 * 0.5, 1.0 + i as f64 * 0.25)).collect();
        let set = TrajectorySet::new(0.4, vec![track(1, &pts)]).unwrap();
        let out = resample_cubic(&set, 0.08).unwrap().trajectories;
        let t = &out.tracks[0];
        assert_eq!(t.len(), 26);
        for p in &t.positions {
            assert!((p.y - (1.0 + p.x * 0.5)).abs() < 1e-9);
        }
    }

    #[test]
    fn samples_are_reproduced_exactly() {
        let pts = [(0.0, 0.0), (0.3, 0.7), (1.1, 0.2), (1.5, 1.9), (2.0, 2.0)];
        let set = TrajectorySet::new(0.4, vec![track(4, &pts)]).unwrap();
        let out = resample_cubic(&set, 0.08).unwrap().trajectories;
        let t = &out.tracks[0];
        assert_eq!(t.frames.first(), Some(&0));
        assert_eq!(t.frames.last(), Some(&20));
        for (i, &(x, y)) in pts.iter().enumerate() {
            assert_eq!(t.at(5 * i as i64), Some(Vec2::new(x, y)));
        }
    }

    #[test]
    fn same_step_is_identity() {
        let pts = [(0.0, 0.0), (0.3, 0.7), (1.1, 0.2), (1.5, 1.9)];
        let set = TrajectorySet::new(0.08, vec![track(2, &pts)]).unwrap();
        let out = resample_cubic(&set, 0.08).unwrap().trajectories;
        assert_eq!(out, set);
    }

    #[test]
    fn short_tracks_pass_through() {
        let set = TrajectorySet::new(0.4, vec![track(2, &[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)])]).unwrap();
        let r = resample_cubic(&set, 0.08).unwrap();
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(r.trajectories.tracks[0].frames, vec![0, 5, 10]);
    }
}
