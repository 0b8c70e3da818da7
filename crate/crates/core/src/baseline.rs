//! Social force reference model (isotropic exponential repulsion).

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::real::Real;
use crate::state::{CrowdState, Scene};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SfmParams {
    /// Seconds.
    pub relaxation_time: f64,
    /// m/s².
    pub repulsion_strength: f64,
    /// Meters.
    pub repulsion_range: f64,
    /// m/s.
    pub desired_speed: f64,
    pub obstacle_strength: f64,
    pub obstacle_range: f64,
    /// Picks the push direction for coincident pedestrians.
    pub seed: u64,
}

impl Default for SfmParams {
    fn default() -> Self {
        Self {
            relaxation_time: 0.5,
            repulsion_strength: 2.1,
            repulsion_range: 0.3,
            desired_speed: 1.2,
            obstacle_strength: 5.0,
            obstacle_range: 0.1,
            seed: 0,
        }
    }
}

impl SfmParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.relaxation_time,
            self.repulsion_strength,
            self.repulsion_range,
            self.desired_speed,
            self.obstacle_strength,
            self.obstacle_range,
        ];
        if all.iter().all(|x| x.is_finite() && *x > 0.0) {
            Ok(())
        } else {
            Err(Error::Config(format!("social force parameters must be positive: {self:?}")))
        }
    }
}

/// Unit push on `a` away from `b` when the two coincide. Swapping the ids
/// negates the direction so the pair still obeys action = reaction.
fn tie_break<T: Real>(seed: u64, time: i64, a: u64, b: u64) -> Vec2<T> {
    let (lo, hi) = (a.min(b), a.max(b));
    let mix = seed ^ lo.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ hi.rotate_left(29) ^ (time as u64).rotate_left(47);
    let angle: f64 = ChaCha8Rng::seed_from_u64(mix).random_range(0.0..std::f64::consts::TAU);
    let dir = Vec2::new(T::lit(angle.cos()), T::lit(angle.sin()));
    if a == lo {
        dir
    } else {
        -dir
    }
}

fn repulsion<T: Real>(offset: Vec2<T>, strength: T, range: T) -> Option<Vec2<T>> {
    let d = offset.norm();
    (d > T::zero()).then(|| offset * (strength * (-d / range).exp() / d))
}

/// Accelerations for every pedestrian in `state`.
///
/// `a_i = (v0·e_i - v_i)/relax + Σ_j A·exp(-d_ij/B)·n_ij` plus obstacle
/// terms of the same form.
pub fn sfm_step<T: Real>(state: &CrowdState<T>, scene: &Scene<T>, params: &SfmParams) -> Result<Vec<Vec2<T>>> {
    params.validate()?;
    let relax = T::lit(params.relaxation_time);
    let (a_ped, b_ped) = (T::lit(params.repulsion_strength), T::lit(params.repulsion_range));
    let (a_obs, b_obs) = (T::lit(params.obstacle_strength), T::lit(params.obstacle_range));
    let v0 = T::lit(params.desired_speed);
    let peds = &state.pedestrians;
    let mut out = Vec::with_capacity(peds.len());
    for (i, p) in peds.iter().enumerate() {
        let mut a = (p.destination_direction() * v0 - p.velocity) * (T::one() / relax);
        for (j, q) in peds.iter().enumerate() {
            if i == j {
                continue;
            }
            a += repulsion(p.position - q.position, a_ped, b_ped)
                .unwrap_or_else(|| tie_break::<T>(params.seed, state.time_index, p.id, q.id) * a_ped);
        }
        for &o in &scene.obstacles {
            a += repulsion(p.position - o, a_obs, b_obs).unwrap_or_else(Vec2::zero);
        }
        out.push(a);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Bounds;
    use crate::state::PedestrianState;

    fn scene(obstacles: Vec<Vec2<f64>>) -> Scene<f64> {
        Scene::new(obstacles, Bounds::new(Vec2::new(-20.0, -20.0), Vec2::new(20.0, 20.0)).unwrap()).unwrap()
    }

    fn ped(id: u64, p: (f64, f64), v: (f64, f64), dest: (f64, f64)) -> PedestrianState<f64> {
        PedestrianState::new(id, 0, Vec2::new(p.0, p.1), Vec2::new(v.0, v.1), Vec2::new(dest.0, dest.1), 8)
    }

    fn crowd(peds: Vec<PedestrianState<f64>>) -> CrowdState<f64> {
        CrowdState::new(0, 0.08, peds).unwrap()
    }

    #[test]
    fn lone_pedestrian_driving_force() {
        let s = crowd(vec![ped(1, (0.0, 0.0), (0.0, 0.0), (10.0, 0.0))]);
        let a = sfm_step(&s, &scene(vec![]), &SfmParams::default()).unwrap();
        assert!((a[0].x - 1.2 / 0.5).abs() < 1e-15);
        assert_eq!(a[0].y, 0.0);
    }

    #[test]
    fn distant_pair_barely_interacts() {
        let s = crowd(vec![
            ped(1, (-8.0, 0.0), (0.0, 0.0), (-8.0, 5.0)),
            ped(2, (8.0, 0.0), (0.0, 0.0), (8.0, 5.0)),
        ]);
        let a = sfm_step(&s, &scene(vec![]), &SfmParams::default()).unwrap();
        assert!(a[0].x.abs() < 1e-6 && a[1].x.abs() < 1e-6);
    }

    #[test]
    fn head_on_pair_is_mirror_symmetric() {
        let s = crowd(vec![
            ped(1, (-1.0, 0.2), (1.0, 0.1), (5.0, 0.7)),
            ped(2, (1.0, 0.2), (-1.0, 0.1), (-5.0, 0.7)),
        ]);
        let a = sfm_step(&s, &scene(vec![Vec2::new(0.0, 1.0)]), &SfmParams::default()).unwrap();
        assert!((a[0].x + a[1].x).abs() < 1e-12);
        assert!((a[0].y - a[1].y).abs() < 1e-12);
    }

    #[test]
    fn repulsion_is_equal_and_opposite() {
        // With v0 = v·relax the driving term vanishes for both.
        let params = SfmParams { desired_speed: 1.0, relaxation_time: 1.0, ..SfmParams::default() };
        let s = crowd(vec![
            ped(1, (0.0, 0.0), (1.0, 0.0), (10.0, 0.0)),
            ped(2, (0.3, 0.4), (1.0, 0.0), (10.4, 0.4)),
        ]);
        let a = sfm_step(&s, &scene(vec![]), &params).unwrap();
        assert!((a[0] + a[1]).norm() < 1e-12);
        let expected = 2.1 * (-0.5f64 / 0.3).exp();
        assert!((a[0].norm() - expected).abs() < 1e-12);
    }

    #[test]
    fn coincident_pair_is_capped_and_opposite() {
        let params = SfmParams { seed: 11, ..SfmParams::default() };
        let s = crowd(vec![
            ped(1, (1.0, 1.0), (0.0, 0.0), (1.0, 1.0)),
            ped(2, (1.0, 1.0), (0.0, 0.0), (1.0, 1.0)),
        ]);
        let a = sfm_step(&s, &scene(vec![]), &params).unwrap();
        assert!((a[0].norm() - 2.1).abs() < 1e-12);
        assert!((a[0] + a[1]).norm() < 1e-12);
        assert_eq!(a, sfm_step(&s, &scene(vec![]), &params).unwrap());
    }

    #[test]
    fn rigid_motion_equivariance() {
        let peds = vec![
            ped(1, (0.0, 0.0), (1.0, 0.2), (6.0, 1.0)),
            ped(2, (0.7, 0.3), (-0.4, 0.9), (-3.0, 4.0)),
            ped(3, (-0.5, 1.1), (0.0, -1.0), (0.0, -6.0)),
        ];
        let obstacles = vec![Vec2::new(0.2, -0.3)];
        let a = sfm_step(&crowd(peds.clone()), &scene(obstacles.clone()), &SfmParams::default()).unwrap();
        let (theta, shift) = (0.7, Vec2::new(1.5, -2.0));
        let tf = |p: Vec2<f64>| p.rotate(theta) + shift;
        let moved: Vec<_> = peds
            .iter()
            .map(|p| ped(p.id, (tf(p.position).x, tf(p.position).y), (p.velocity.rotate(theta).x, p.velocity.rotate(theta).y), (tf(p.destination).x, tf(p.destination).y)))
            .collect();
        let b = sfm_step(&crowd(moved), &scene(obstacles.iter().map(|o| tf(*o)).collect()), &SfmParams::default()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x.rotate(theta) - *y).norm() < 1e-12);
        }
    }

    #[test]
    fn rejects_nonpositive_params() {
        let params = SfmParams { repulsion_range: 0.0, ..SfmParams::default() };
        assert!(sfm_step(&crowd(vec![]), &scene(vec![]), &params).is_err());
    }
}
