//! One equivariant message-passing layer.

use super::mlp::Mlp;
use crate::autodiff::{Bound, ParameterStore, Tensor};
use crate::error::{Error, Result};
use rand::Rng;
use std::rc::Rc;

/// Offset added to pair distances before dividing.
pub const DIST_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EgclLayer {
    pub index: usize,
    pub phi_e: Mlp,
    pub phi_p: Mlp,
    pub phi_h: Mlp,
    pub phi_a: Mlp,
    /// Scalar gate on the current velocity (damping / speed keeping).
    pub phi_v: Mlp,
}

impl EgclLayer {
    pub fn new(index: usize, width: usize, hidden: usize) -> Self {
        let p = |n: &str| format!("egcl{index}.{n}");
        Self {
            index,
            phi_e: Mlp::new(p("phi_e"), 2 * width + 1, hidden, width, true),
            phi_p: Mlp::new(p("phi_p"), width, hidden, 1, false),
            phi_h: Mlp::new(p("phi_h"), 2 * width, hidden, width, false),
            phi_a: Mlp::new(p("phi_a"), width, hidden, 1, false),
            phi_v: Mlp::new(p("phi_v"), width, hidden, 1, false),
        }
    }

    pub fn init<R: Rng>(&self, store: &mut ParameterStore, rng: &mut R, zero_readout: bool) -> Result<()> {
        self.phi_e.init(store, rng, false)?;
        self.phi_h.init(store, rng, false)?;
        self.phi_p.init(store, rng, zero_readout)?;
        self.phi_a.init(store, rng, zero_readout)?;
        self.phi_v.init(store, rng, zero_readout)
    }
}

/// Fixed inputs of one message-passing pass.
#[derive(Debug, Clone)]
pub struct LayerGraph {
    /// Receiving pedestrian of every edge.
    pub recv: Rc<Vec<usize>>,
    /// Sending node: a pedestrian, or `n_peds + o` for obstacle `o`.
    pub send: Rc<Vec<usize>>,
    pub n_peds: usize,
    /// `[O, 2]` obstacle positions (static).
    pub obstacles: Tensor,
    /// `[K, 2]` unit directions toward destinations.
    pub dest_dirs: Tensor,
}

/// Node streams between layers. `h` covers pedestrians then obstacles;
/// `p` and `v` cover pedestrians only.
#[derive(Debug, Clone)]
pub struct LayerState {
    pub h: Tensor,
    pub p: Tensor,
    pub v: Tensor,
}

/// Returns the updated streams and this layer's acceleration `[K, 2]`.
pub fn egcl_forward(layer: &EgclLayer, params: &Bound, state: &LayerState, graph: &LayerGraph) -> Result<(LayerState, Tensor)> {
    let k = graph.n_peds;
    let n_obs = graph.obstacles.rows();
    let width = layer.phi_h.output;
    if state.p.shape() != [k, 2] || state.v.shape() != [k, 2] || state.h.shape() != [k + n_obs, width] {
        return Err(Error::contract(
            "egcl_forward",
            format!(
                "layer {}: h {:?}, p {:?}, v {:?} for {k} pedestrians and {n_obs} obstacles",
                layer.index,
                state.h.shape(),
                state.p.shape(),
                state.v.shape()
            ),
        ));
    }
    let h_peds = state.h.slice(0, 0, k)?;
    let e = graph.recv.len();

    let (agg, push) = if e == 0 {
        (Tensor::zeros(&[k, width]), Tensor::zeros(&[k, 2]))
    } else {
        let p_all = if n_obs > 0 { Tensor::concat(&[&state.p, &graph.obstacles], 0)? } else { state.p.clone() };
        let hi = state.h.gather_rows(&graph.recv)?;
        let hj = state.h.gather_rows(&graph.send)?;
        let dp = p_all.gather_rows(&graph.recv)?.sub(&p_all.gather_rows(&graph.send)?)?;
        let d2 = dp.squared_norm()?;
        let m = layer.phi_e.forward(params, &Tensor::concat(&[&hi, &hj, &d2], 1)?)?;
        let agg = m.scatter_add_rows(&graph.recv, k)?;
        let dist = d2.sqrt().offset(DIST_EPS).broadcast_to(&[e, 2])?;
        let gate = layer.phi_p.forward(params, &m)?.broadcast_to(&[e, 2])?;
        let push = dp.div(&dist)?.mul(&gate)?.scatter_add_rows(&graph.recv, k)?;
        (agg, push)
    };

    let toward = layer.phi_a.forward(params, &h_peds)?.broadcast_to(&[k, 2])?.mul(&graph.dest_dirs)?;
    let keep = layer.phi_v.forward(params, &h_peds)?.broadcast_to(&[k, 2])?.mul(&state.v)?;
    let a = toward.add(&keep)?.add(&push)?;
    let v = state.v.add(&a)?;
    let p = state.p.add(&v)?;
    let h_new = layer.phi_h.forward(params, &Tensor::concat(&[&h_peds, &agg], 1)?)?;
    let h = if n_obs > 0 { Tensor::concat(&[&h_new, &state.h.slice(0, k, n_obs)?], 0)? } else { h_new };
    if !(a.all_finite() && h.all_finite()) {
        return Err(Error::NonFiniteActivation { layer: layer.index });
    }
    Ok((LayerState { h, p, v }, a))
}
