//! Grid discretization, soft density mapping and cross-cell detection.
//!
//! A position is spread over all cells by a softmax of negative squared
//! distances to the cell centers; summing those rows gives a density field
//! that always integrates to the number of pedestrians. The Jensen–Shannon
//! divergence between consecutive rows measures how far a pedestrian moved
//! across cell boundaries, and a clamped sigmoid turns it into a gate.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::geom::{Bounds, Vec2};
use crate::real::Real;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;
use std::rc::Rc;

pub const DEFAULT_ALPHA: f64 = 50.0;
pub const DEFAULT_TAU_MASK: f64 = 0.05;
pub const MASK_FLOOR: f64 = 0.01;
pub const MASK_CEIL: f64 = 0.99;

/// Regular `nx × ny` grid over a rectangle. Cells are numbered row-major:
/// index `iy * nx + ix`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    bounds: Bounds<T>,
    nx: usize,
    ny: usize,
    centers: Vec<Vec2<T>>,
}

impl<T: Real> Grid<T> {
    pub fn new(bounds: Bounds<T>, nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::Config(format!("grid must have at least one cell, got {nx}x{ny}")));
        }
        let w = bounds.width() / T::lit(nx as f64);
        let h = bounds.height() / T::lit(ny as f64);
        let half = T::lit(0.5);
        let mut centers = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                centers.push(Vec2::new(
                    bounds.min.x + (T::lit(ix as f64) + half) * w,
                    bounds.min.y + (T::lit(iy as f64) + half) * h,
                ));
            }
        }
        Ok(Self { bounds, nx, ny, centers })
    }

    pub fn bounds(&self) -> &Bounds<T> {
        &self.bounds
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[Vec2<T>] {
        &self.centers
    }

    pub fn cell_width(&self) -> T {
        self.bounds.width() / T::lit(self.nx as f64)
    }

    pub fn cell_height(&self) -> T {
        self.bounds.height() / T::lit(self.ny as f64)
    }

    /// The longer cell side.
    pub fn cell_size(&self) -> T {
        self.cell_width().max(self.cell_height())
    }

    pub fn cell_diagonal(&self) -> T {
        Vec2::new(self.cell_width(), self.cell_height()).norm()
    }

    /// `2 / cell_size²`: one cell of displacement shifts the log-weights by about 2.
    pub fn default_beta(&self) -> T {
        T::lit(2.0) / (self.cell_size() * self.cell_size())
    }

    /// Index of the closest center (the argmax of the soft assignment), ties to the lower index.
    pub fn nearest_cell(&self, p: Vec2<T>) -> usize {
        let mut best = 0;
        let mut best_d = T::infinity();
        for (i, c) in self.centers.iter().enumerate() {
            let d = p.dist_sq(*c);
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }
}

fn check_beta<T: Real>(beta: T) -> Result<()> {
    if !(beta > T::zero() && beta.is_finite()) {
        return Err(Error::contract("soft_assign", format!("beta must be positive and finite, got {beta}")));
    }
    Ok(())
}

fn assign_row<T: Real>(grid: &Grid<T>, p: Vec2<T>, beta: T) -> Vec<T> {
    let mut row: Vec<T> = grid.centers.iter().map(|c| -beta * p.dist_sq(*c)).collect();
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut z = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
    row
}

/// Probability of `position` belonging to each cell.
pub fn soft_assign<T: Real>(grid: &Grid<T>, position: Vec2<T>, beta: T) -> Result<Vec<T>> {
    check_beta(beta)?;
    if !position.is_finite() {
        return Err(Error::contract("soft_assign", "position is not finite"));
    }
    Ok(assign_row(grid, position, beta))
}

/// Sum of the soft assignments of every position.
pub fn density_from_positions<T: Real>(grid: &Grid<T>, positions: &[Vec2<T>], beta: T) -> Result<Vec<T>> {
    check_beta(beta)?;
    if positions.iter().any(|p| !p.is_finite()) {
        return Err(Error::contract("density_from_positions", "position is not finite"));
    }
    // Rows in parallel, reduction in pedestrian order so the result does not
    // depend on the thread count.
    let rows: Vec<Vec<T>> = positions.par_iter().map(|&p| assign_row(grid, p, beta)).collect();
    let mut rho = vec![T::zero(); grid.len()];
    for row in rows {
        for (r, q) in rho.iter_mut().zip(row) {
            *r += q;
        }
    }
    Ok(rho)
}

/// Jensen–Shannon divergence in nats.
pub fn js_divergence<T: Real>(q1: &[T], q2: &[T]) -> Result<T> {
    if q1.len() != q2.len() {
        return Err(Error::contract("js_divergence", format!("lengths {} and {} differ", q1.len(), q2.len())));
    }
    if q1.iter().chain(q2).any(|&v| !(v >= T::zero())) {
        return Err(Error::contract("js_divergence", "distributions must be nonnegative"));
    }
    let half = T::lit(0.5);
    let kl = |a: T, m: T| if a == T::zero() { T::zero() } else { a * (a / m).ln() };
    let mut j = T::zero();
    for (&a, &b) in q1.iter().zip(q2) {
        let m = (a + b) * half;
        j += kl(a, m) + kl(b, m);
    }
    Ok((j * half).max(T::zero()))
}

/// `clamp(σ(α (J − τ_mask)), 0.01, 0.99)`.
pub fn cross_grid_mask<T: Real>(j: T, alpha: T, tau_mask: T) -> T {
    let s = T::one() / (T::one() + (-(alpha * (j - tau_mask))).exp());
    s.max(T::lit(MASK_FLOOR)).min(T::lit(MASK_CEIL))
}

/// Mask parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CgdParams {
    pub alpha: f64,
    pub tau_mask: f64,
}

impl Default for CgdParams {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            tau_mask: DEFAULT_TAU_MASK,
        }
    }
}

/// Per-pedestrian masks for a move from `from[k]` to `to[k]`.
pub fn crossing_masks<T: Real>(grid: &Grid<T>, from: &[Vec2<T>], to: &[Vec2<T>], beta: T, cgd: CgdParams) -> Result<Vec<T>> {
    if from.len() != to.len() {
        return Err(Error::contract("crossing_masks", format!("{} start and {} end positions", from.len(), to.len())));
    }
    from.iter()
        .zip(to)
        .map(|(&a, &b)| {
            let j = js_divergence(&soft_assign(grid, a, beta)?, &soft_assign(grid, b, beta)?)?;
            Ok(cross_grid_mask(j, T::lit(cgd.alpha), T::lit(cgd.tau_mask)))
        })
        .collect()
}

/// Differentiable soft assignment: positions `[K, 2]` to probabilities `[K, N]`.
pub fn soft_assign_tensor(grid: &Grid<f64>, positions: &Tensor, beta: f64) -> Result<Tensor> {
    check_beta(beta)?;
    let k = positions.rows();
    if positions.shape() != [k, 2] {
        return Err(Error::contract("soft_assign_tensor", format!("positions shape {:?} is not [K, 2]", positions.shape())));
    }
    let n = grid.len();
    let cx = Tensor::constant(grid.centers.iter().map(|c| c.x).collect(), &[1, n]).broadcast_to(&[k, n])?;
    let cy = Tensor::constant(grid.centers.iter().map(|c| c.y).collect(), &[1, n]).broadcast_to(&[k, n])?;
    let dx = positions.slice(1, 0, 1)?.broadcast_to(&[k, n])?.sub(&cx)?;
    let dy = positions.slice(1, 1, 1)?.broadcast_to(&[k, n])?.sub(&cy)?;
    dx.square().add(&dy.square())?.scale(-beta).softmax(1)
}

/// Column sums of an assignment matrix: `[K, N] -> [1, N]`.
pub fn density_tensor(q: &Tensor, n_cells: usize) -> Result<Tensor> {
    if q.rows() == 0 {
        return Ok(Tensor::zeros(&[1, n_cells]));
    }
    q.sum_axis(0)
}

/// Row-wise Jensen–Shannon divergence of two `[K, N]` assignment matrices, as `[K, 1]`.
pub fn js_divergence_tensor(q1: &Tensor, q2: &Tensor) -> Result<Tensor> {
    let m = q1.add(q2)?.scale(0.5);
    let kl1 = q1.xlogy(q1)?.sub(&q1.xlogy(&m)?)?;
    let kl2 = q2.xlogy(q2)?.sub(&q2.xlogy(&m)?)?;
    Ok(kl1.add(&kl2)?.sum_axis(1)?.scale(0.5))
}

pub fn cross_grid_mask_tensor(j: &Tensor, cgd: CgdParams) -> Tensor {
    j.offset(-cgd.tau_mask).scale(cgd.alpha).sigmoid().clamp(MASK_FLOOR, MASK_CEIL)
}

/// One line per frame: `frame,ρ_0,…,ρ_{N-1}` with a header row.
pub fn density_csv<T: Real>(first_frame: i64, frames: &[Vec<T>]) -> String {
    let n = frames.first().map_or(0, Vec::len);
    let mut out = String::from("frame");
    for i in 0..n {
        let _ = write!(out, ",c{i}");
    }
    out.push('\n');
    for (k, rho) in frames.iter().enumerate() {
        let _ = write!(out, "{}", first_frame + k as i64);
        for v in rho {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn write_density_csv<T: Real>(path: impl AsRef<Path>, first_frame: i64, frames: &[Vec<T>]) -> Result<()> {
    std::fs::write(path, density_csv(first_frame, frames))?;
    Ok(())
}

/// Hard cell index of every position, shared as a gather index.
pub fn nearest_cells<T: Real>(grid: &Grid<T>, positions: &[Vec2<T>]) -> Rc<Vec<usize>> {
    Rc::new(positions.iter().map(|&p| grid.nearest_cell(p)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, Tape};

    fn unit_2x2() -> Grid<f64> {
        let b = Bounds::new(Vec2::new(-0.5, -0.5), Vec2::new(1.5, 1.5)).unwrap();
        Grid::new(b, 2, 2).unwrap()
    }

    fn softmax(xs: &[f64]) -> Vec<f64> {
        let z: f64 = xs.iter().map(|x| x.exp()).sum();
        xs.iter().map(|x| x.exp() / z).collect()
    }

    #[test]
    fn centers_are_row_major() {
        let g = unit_2x2();
        let c: Vec<(f64, f64)> = g.centers().iter().map(|c| (c.x, c.y)).collect();
        assert_eq!(c, vec![(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]);
    }

    #[test]
    fn hand_evaluated_assignment() {
        let q = soft_assign(&unit_2x2(), Vec2::new(0.0, 0.0), 1.0).unwrap();
        let oracle = softmax(&[0.0, -1.0, -1.0, -2.0]);
        for (a, b) in q.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-15);
        }
        let rounded: Vec<f64> = q.iter().map(|v| (v * 1e4).round() / 1e4).collect();
        assert_eq!(rounded, vec![0.5344, 0.1966, 0.1966, 0.0723]);
    }

    #[test]
    fn equidistant_point_splits_evenly() {
        let b = Bounds::new(Vec2::new(0.0, 0.0), Vec2::new(2.0, 1.0)).unwrap();
        let g = Grid::new(b, 2, 1).unwrap();
        let q: Vec<f64> = soft_assign(&g, Vec2::new(1.0, 0.3), 3.0).unwrap();
        assert!((q[0] - 0.5).abs() < 1e-15 && (q[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sharp_beta_is_nearly_one_hot() {
        let b = Bounds::new(Vec2::new(0.0, 0.0), Vec2::new(3.0, 3.0)).unwrap();
        let g = Grid::new(b, 3, 3).unwrap();
        let q = soft_assign(&g, Vec2::new(1.2, 1.7), 1e6).unwrap();
        assert!(q[4] >= 0.999);
    }

    #[test]
    fn density_mass_and_linearity() {
        let g = unit_2x2();
        assert_eq!(density_from_positions::<f64>(&g, &[], 1.0).unwrap(), vec![0.0; 4]);
        let p = Vec2::new(0.3, 0.9);
        let one = density_from_positions(&g, &[p], 1.0).unwrap();
        let two = density_from_positions(&g, &[p, p], 1.0).unwrap();
        for (a, b) in one.iter().zip(&two) {
            assert_eq!(2.0 * a, *b);
        }
        let many: Vec<_> = (0..7).map(|i| Vec2::new(i as f64 * 0.4 - 1.0, 0.2 * i as f64)).collect();
        let rho = density_from_positions(&g, &many, 2.0).unwrap();
        assert!((rho.iter().sum::<f64>() - 7.0).abs() < 1e-9);
    }

    #[test]
    fn invalid_beta_is_rejected() {
        assert!(soft_assign(&unit_2x2(), Vec2::new(0.0, 0.0), 0.0).is_err());
        assert!(soft_assign(&unit_2x2(), Vec2::new(0.0, 0.0), f64::NAN).is_err());
    }

    #[test]
    fn js_examples() {
        let q = [0.2f64, 0.3, 0.5];
        assert!(js_divergence(&q, &q).unwrap().abs() < 1e-12);
        let ln2 = std::f64::consts::LN_2;
        assert!((js_divergence(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - ln2).abs() < 1e-15);
        // Direct summation: KL((.5,.5)||(.75,.25)) + KL((1,0)||(.75,.25)), halved.
        let oracle = 0.5 * (0.5 * (0.5f64 / 0.75).ln() + 0.5 * (0.5f64 / 0.25).ln() + (1.0f64 / 0.75).ln());
        let j = js_divergence(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!((j - oracle).abs() < 1e-15);
        assert!((j - 0.2158).abs() < 5e-5);
        assert!(js_divergence(&[-0.1, 1.1], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn mask_examples() {
        assert_eq!(cross_grid_mask(0.05, 50.0, 0.05), 0.5);
        let expect = 1.0 / (1.0 + 2.5f64.exp());
        assert!((cross_grid_mask(0.0, 50.0, 0.05) - expect).abs() < 1e-15);
        assert!((cross_grid_mask(0.0f64, 50.0, 0.05) - 0.0759).abs() < 5e-5);
        assert_eq!(cross_grid_mask(std::f64::consts::LN_2, 50.0, 0.05), 0.99);
    }

    #[test]
    fn stationary_pedestrian_sits_at_mask_floor_region() {
        let g = unit_2x2();
        let p = Vec2::new(0.2, 0.1);
        let m = crossing_masks(&g, &[p], &[p], 2.0, CgdParams::default()).unwrap();
        assert!(m[0] < 0.08);
    }

    #[test]
    fn tensor_forms_match_plain_forms() {
        let g = unit_2x2();
        let pts = [Vec2::new(0.1, 0.4), Vec2::new(1.3, -0.2), Vec2::new(0.7, 0.7)];
        let to = [Vec2::new(0.5, 0.4), Vec2::new(1.2, 0.3), Vec2::new(0.7, 0.7)];
        let flat = |ps: &[Vec2<f64>]| Tensor::constant(ps.iter().flat_map(|p| [p.x, p.y]).collect(), &[ps.len(), 2]);
        let q1 = soft_assign_tensor(&g, &flat(&pts), 1.5).unwrap();
        let q2 = soft_assign_tensor(&g, &flat(&to), 1.5).unwrap();
        for (k, p) in pts.iter().enumerate() {
            let row = soft_assign(&g, *p, 1.5).unwrap();
            for i in 0..4 {
                assert!((q1.values()[k * 4 + i] - row[i]).abs() < 1e-15);
            }
        }
        let rho = density_tensor(&q1, 4).unwrap();
        let plain = density_from_positions(&g, &pts, 1.5).unwrap();
        for i in 0..4 {
            assert!((rho.values()[i] - plain[i]).abs() < 1e-14);
        }
        let masks = cross_grid_mask_tensor(&js_divergence_tensor(&q1, &q2).unwrap(), CgdParams::default());
        let plain = crossing_masks(&g, &pts, &to, 1.5, CgdParams::default()).unwrap();
        for k in 0..3 {
            assert!((masks.values()[k] - plain[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn density_gradient_matches_central_differences() {
        let b = Bounds::new(Vec2::new(0.0, 0.0), Vec2::new(3.0, 3.0)).unwrap();
        let g = Grid::new(b, 3, 3).unwrap();
        let point = [0.4, 0.5, 1.7, 2.2, 2.9, 0.1, 1.5, 1.5, 0.9, 2.6];
        let w: Vec<f64> = (0..9).map(|i| (i as f64 * 0.7).sin()).collect();
        let err = grad_check(
            |x| {
                let rho = density_tensor(&soft_assign_tensor(&g, x, 0.8)?, 9)?;
                Ok(rho.mul(&Tensor::constant(w.clone(), &[1, 9]))?.sum())
            },
            &point,
            &[5, 2],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn empty_assignment_gives_zero_density() {
        let tape = Tape::new();
        let p = tape.leaf("p", vec![], &[0, 2]).unwrap();
        let q = soft_assign_tensor(&unit_2x2(), &p, 1.0).unwrap();
        assert_eq!(density_tensor(&q, 4).unwrap().values(), &[0.0; 4]);
    }

    #[test]
    fn csv_layout() {
        let csv = density_csv(3, &[vec![0.5, 1.5], vec![2.0, 0.0]]);
        assert_eq!(csv, "frame,c0,c1\n3,0.5,1.5\n4,2,0\n");
    }
}
