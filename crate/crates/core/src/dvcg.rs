//! Density flux on a dynamic graph of grid cells.
//!
//! Every pedestrian that leaves one cell for another adds a directed edge
//! between those cells. Edges carry the mean speed of their contributors and
//! a gate (the largest crossing mask among them). Learned `N × N` weights and
//! biases, usually factored as `w wᵀ` and `b bᵀ`, turn edges into inflow and
//! outflow; their difference is the time derivative of the density field.

use crate::autodiff::{Bound, ParameterStore, Tensor};
use crate::density::Grid;
use crate::error::{Error, Result};
use crate::geom::Vec2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::rc::Rc;

pub const DEFAULT_EMBEDDING_DIM: usize = 16;

/// One directed cell-to-cell edge.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    /// Mean speed of the contributors (m/s).
    pub speed: f64,
    /// Largest contributor mask.
    pub gate: f64,
    /// Indices into the pedestrian arrays the graph was built from.
    pub contributors: Vec<usize>,
}

/// Transitions between cells over one frame. Edges are sorted by `(from, to)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicGraph {
    n_cells: usize,
    edges: Vec<Edge>,
}

impl DynamicGraph {
    pub fn empty(n_cells: usize) -> Self {
        Self { n_cells, edges: Vec::new() }
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    fn dense(&self, f: impl Fn(&Edge) -> f64) -> Vec<f64> {
        let n = self.n_cells;
        let mut m = vec![0.0; n * n];
        for e in &self.edges {
            m[e.from * n + e.to] = f(e);
        }
        m
    }

    /// Row-major `A` with `A[j][i] = 1` for an edge `j → i`.
    pub fn adjacency(&self) -> Vec<f64> {
        self.dense(|_| 1.0)
    }

    pub fn speed_matrix(&self) -> Vec<f64> {
        self.dense(|e| e.speed)
    }

    pub fn gate_matrix(&self) -> Vec<f64> {
        self.dense(|e| e.gate)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({ "n_cells": self.n_cells, "edges": self.edges })
    }

    /// Per-edge mean of per-pedestrian speeds `[K, 1]`, as `[E, 1]`.
    pub fn edge_speeds(&self, ped_speeds: &Tensor) -> Result<Tensor> {
        let contrib: Vec<usize> = self.edges.iter().flat_map(|e| e.contributors.iter().copied()).collect();
        let owner: Vec<usize> = self
            .edges
            .iter()
            .enumerate()
            .flat_map(|(k, e)| std::iter::repeat_n(k, e.contributors.len()))
            .collect();
        let inv: Vec<f64> = self.edges.iter().map(|e| 1.0 / e.contributors.len() as f64).collect();
        let summed = ped_speeds
            .gather_rows(&Rc::new(contrib))?
            .scatter_add_rows(&Rc::new(owner), self.edges.len())?;
        summed.mul(&Tensor::constant(inv, &[self.edges.len(), 1]))
    }

    /// Per-edge max of per-pedestrian masks `[K, 1]`, as `[E, 1]`.
    ///
    /// The winning contributor is chosen from the current values and then
    /// treated as a fixed selection.
    pub fn edge_gates(&self, ped_masks: &Tensor) -> Result<Tensor> {
        let v = ped_masks.values();
        let pick: Vec<usize> = self
            .edges
            .iter()
            .map(|e| {
                let mut best = e.contributors[0];
                for &k in &e.contributors[1..] {
                    if v[k] > v[best] {
                        best = k;
                    }
                }
                best
            })
            .collect();
        ped_masks.gather_rows(&Rc::new(pick))
    }

    fn endpoints(&self) -> (Rc<Vec<usize>>, Rc<Vec<usize>>) {
        let from = self.edges.iter().map(|e| e.from).collect();
        let to = self.edges.iter().map(|e| e.to).collect();
        (Rc::new(from), Rc::new(to))
    }

    fn flat_index(&self) -> Rc<Vec<usize>> {
        Rc::new(self.edges.iter().map(|e| e.from * self.n_cells + e.to).collect())
    }
}

/// Builds the transition graph of one frame.
///
/// Pedestrian `k` contributes to edge `j → i` when its nearest cell moves
/// from `j` (at `positions_t`) to `i` (at `positions_next`), `i ≠ j`.
pub fn build_dynamic_graph(
    grid: &Grid<f64>,
    positions_t: &[Vec2<f64>],
    positions_next: &[Vec2<f64>],
    speeds: &[f64],
    masks: &[f64],
) -> Result<DynamicGraph> {
    let k = positions_t.len();
    if positions_next.len() != k || speeds.len() != k || masks.len() != k {
        return Err(Error::contract(
            "build_dynamic_graph",
            format!(
                "{} positions, {} next positions, {} speeds, {} masks",
                k,
                positions_next.len(),
                speeds.len(),
                masks.len()
            ),
        ));
    }
    let cells: Vec<(usize, usize)> = positions_t
        .par_iter()
        .zip(positions_next.par_iter())
        .map(|(&a, &b)| (grid.nearest_cell(a), grid.nearest_cell(b)))
        .collect();
    let mut grouped: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (ped, &(j, i)) in cells.iter().enumerate() {
        if i != j {
            grouped.entry((j, i)).or_default().push(ped);
        }
    }
    let edges = grouped
        .into_iter()
        .map(|((from, to), contributors)| {
            let speed = contributors.iter().map(|&c| speeds[c]).sum::<f64>() / contributors.len() as f64;
            let gate = contributors.iter().map(|&c| masks[c]).fold(f64::NEG_INFINITY, f64::max);
            Edge { from, to, speed, gate, contributors }
        })
        .collect();
    Ok(DynamicGraph { n_cells: grid.len(), edges })
}

/// `(w wᵀ, b bᵀ)` from `[N, d]` embeddings.
pub fn expand_weights(w: &Tensor, b: &Tensor) -> Result<(Tensor, Tensor)> {
    Ok((w.matmul(&w.transpose()?)?, b.matmul(&b.transpose()?)?))
}

/// How the `N × N` flux weights are parameterized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightForm {
    /// `W = w wᵀ`, `B = b bᵀ` with `[N, d]` factors.
    Embedding { dim: usize },
    /// `W` and `B` stored directly.
    Direct,
}

pub const W_NAME: &str = "flux.w";
pub const B_NAME: &str = "flux.b";
pub const ADJ_LOGITS_NAME: &str = "flux.adjacency_logits";

/// Adds flux parameters to `store` with small Gaussian entries; the bias
/// starts much smaller than the weight.
pub fn init_flux_params<R: Rng>(store: &mut ParameterStore, n_cells: usize, form: WeightForm, rng: &mut R) -> Result<()> {
    match form {
        WeightForm::Embedding { dim } => {
            if dim == 0 {
                return Err(Error::Config("embedding dimension must be positive".into()));
            }
            let normal = Normal::new(0.0, 0.5 / (dim as f64).sqrt()).expect("valid std");
            let w = (0..n_cells * dim).map(|_| normal.sample(rng)).collect();
            store.insert(W_NAME, &[n_cells, dim], w)?;
            let normal = Normal::new(0.0, 0.01 / (dim as f64).sqrt()).expect("valid std");
            let b = (0..n_cells * dim).map(|_| normal.sample(rng)).collect();
            store.insert(B_NAME, &[n_cells, dim], b)?;
        }
        WeightForm::Direct => {
            let normal = Normal::new(0.0, 0.01).expect("valid std");
            let w = (0..n_cells * n_cells).map(|_| 0.25 + normal.sample(rng)).collect();
            store.insert(W_NAME, &[n_cells, n_cells], w)?;
            let b = (0..n_cells * n_cells).map(|_| 1e-4 * normal.sample(rng)).collect();
            store.insert(B_NAME, &[n_cells, n_cells], b)?;
        }
    }
    Ok(())
}

/// Learned static adjacency logits for the attention-style variant.
pub fn init_adjacency_logits(store: &mut ParameterStore, n_cells: usize) -> Result<()> {
    store.insert(ADJ_LOGITS_NAME, &[n_cells, n_cells], vec![0.0; n_cells * n_cells])
}

/// `(W, B)` as `N × N` tensors on the bound parameters.
pub fn flux_weights(params: &Bound, form: WeightForm) -> Result<(Tensor, Tensor)> {
    let w = params.get(W_NAME)?;
    let b = params.get(B_NAME)?;
    match form {
        WeightForm::Embedding { .. } => expand_weights(w, b),
        WeightForm::Direct => Ok((w.clone(), b.clone())),
    }
}

/// Inflow, outflow and their difference, each `[1, N]`.
#[derive(Debug, Clone)]
pub struct Flux {
    pub inflow: Tensor,
    pub outflow: Tensor,
    pub derivative: Tensor,
}

/// Plain-value snapshot of a [`Flux`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluxReport {
    pub inflow: Vec<f64>,
    pub outflow: Vec<f64>,
    pub derivative: Vec<f64>,
}

impl From<&Flux> for FluxReport {
    fn from(f: &Flux) -> Self {
        Self {
            inflow: f.inflow.values().to_vec(),
            outflow: f.outflow.values().to_vec(),
            derivative: f.derivative.values().to_vec(),
        }
    }
}

/// Edge quantities of one graph side.
#[derive(Debug, Clone)]
pub struct EdgeSide<'a> {
    pub graph: &'a DynamicGraph,
    /// `[E, 1]` mean speeds.
    pub speeds: Tensor,
    /// `[E, 1]` gates.
    pub gates: Tensor,
}

impl<'a> EdgeSide<'a> {
    /// Edge values from per-pedestrian speeds and masks `[K, 1]`.
    pub fn from_pedestrians(graph: &'a DynamicGraph, ped_speeds: &Tensor, ped_masks: &Tensor) -> Result<Self> {
        Ok(Self {
            graph,
            speeds: graph.edge_speeds(ped_speeds)?,
            gates: graph.edge_gates(ped_masks)?,
        })
    }

    /// Edge values frozen at those stored in the graph.
    pub fn constant(graph: &'a DynamicGraph) -> Self {
        let e = graph.edges.len();
        Self {
            graph,
            speeds: Tensor::constant(graph.edges.iter().map(|e| e.speed).collect(), &[e, 1]),
            gates: Tensor::constant(graph.edges.iter().map(|e| e.gate).collect(), &[e, 1]),
        }
    }
}

fn check_field(op: &'static str, t: &Tensor, n: usize) -> Result<()> {
    if t.len() != n {
        return Err(Error::contract(op, format!("field has {} entries for {n} cells", t.len())));
    }
    Ok(())
}

fn check_square(op: &'static str, t: &Tensor, n: usize) -> Result<()> {
    if t.shape() != [n, n] {
        return Err(Error::contract(op, format!("weight shape {:?} is not [{n}, {n}]", t.shape())));
    }
    Ok(())
}

/// Node-wise flux:
///
/// `in[i]  = Σ_{j→i ∈ t} (M̄ W ‖V‖)_ji ρ_t[j] + B_ji`
/// `out[i] = ρ̂_next[i] · Σ_{i→k ∈ next} ((M̄ W ‖V‖)_ik + B_ik)`
pub fn density_derivative(
    side_t: &EdgeSide<'_>,
    side_next: &EdgeSide<'_>,
    rho_t: &Tensor,
    rho_next_pred: &Tensor,
    w: &Tensor,
    b: &Tensor,
) -> Result<Flux> {
    let n = side_t.graph.n_cells;
    if side_next.graph.n_cells != n {
        return Err(Error::contract("density_derivative", "graphs cover different grids"));
    }
    check_field("density_derivative", rho_t, n)?;
    check_field("density_derivative", rho_next_pred, n)?;
    check_square("density_derivative", w, n)?;
    check_square("density_derivative", b, n)?;

    let inflow = if side_t.graph.is_empty() {
        Tensor::zeros(&[n, 1])
    } else {
        let (from, to) = side_t.graph.endpoints();
        let idx = side_t.graph.flat_index();
        let rho_from = rho_t.gather(&from)?;
        let term = side_t
            .gates
            .mul(&w.gather(&idx)?)?
            .mul(&side_t.speeds)?
            .mul(&rho_from)?
            .add(&b.gather(&idx)?)?;
        term.scatter_add_rows(&to, n)?
    };
    let outflow = if side_next.graph.is_empty() {
        Tensor::zeros(&[n, 1])
    } else {
        let (from, _) = side_next.graph.endpoints();
        let idx = side_next.graph.flat_index();
        let rate = side_next
            .gates
            .mul(&w.gather(&idx)?)?
            .mul(&side_next.speeds)?
            .add(&b.gather(&idx)?)?
            .scatter_add_rows(&from, n)?;
        rate.mul(&rho_next_pred.reshape(&[n, 1])?)?
    };
    let inflow = inflow.reshape(&[1, n])?;
    let outflow = outflow.reshape(&[1, n])?;
    let derivative = inflow.sub(&outflow)?;
    Ok(Flux { inflow, outflow, derivative })
}

/// Flux with a learned dense adjacency `σ(L)` (self-loops removed) in place of
/// the transition graphs, unit gates and a scalar crowd speed per side.
pub fn density_derivative_static(
    logits: &Tensor,
    speed_t: &Tensor,
    speed_next: &Tensor,
    rho_t: &Tensor,
    rho_next_pred: &Tensor,
    w: &Tensor,
    b: &Tensor,
) -> Result<Flux> {
    let n = rho_t.len();
    check_field("density_derivative_static", rho_next_pred, n)?;
    check_square("density_derivative_static", logits, n)?;
    check_square("density_derivative_static", w, n)?;
    check_square("density_derivative_static", b, n)?;
    if speed_t.len() != 1 || speed_next.len() != 1 {
        return Err(Error::contract("density_derivative_static", "crowd speeds must be scalars"));
    }
    let mut off_diag = vec![1.0; n * n];
    for i in 0..n {
        off_diag[i * n + i] = 0.0;
    }
    let adj = logits.sigmoid().mul(&Tensor::constant(off_diag, &[n, n]))?;
    let aw = adj.mul(w)?;
    let ab = adj.mul(b)?;
    let s_t = speed_t.reshape(&[1, 1])?.broadcast_to(&[1, n])?;
    let s_next = speed_next.reshape(&[1, 1])?.broadcast_to(&[n, 1])?;
    // in[i] = s_t Σ_j (A∘W)_ji ρ_t[j] + Σ_j (A∘B)_ji
    let inflow = rho_t
        .reshape(&[1, n])?
        .matmul(&aw)?
        .mul(&s_t)?
        .add(&ab.sum_axis(0)?)?;
    // out[i] = ρ̂[i] (s_next Σ_k (A∘W)_ik + Σ_k (A∘B)_ik)
    let rate = aw.sum_axis(1)?.mul(&s_next)?.add(&ab.sum_axis(1)?)?;
    let outflow = rate.mul(&rho_next_pred.reshape(&[n, 1])?)?.reshape(&[1, n])?;
    let derivative = inflow.sub(&outflow)?;
    Ok(Flux { inflow, outflow, derivative })
}
