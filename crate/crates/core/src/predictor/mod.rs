//! Next-frame acceleration model.
//!
//! Each pedestrian's recent history is reduced to rotation-invariant scalars
//! and embedded; a stack of equivariant message-passing layers then moves
//! pedestrians in a latent unit-time step. The change of velocity across the
//! stack, divided by the frame interval, is the predicted acceleration.
//! Obstacles join as static nodes that send messages but never move.

mod egcl;
mod graph;
mod mlp;

pub use egcl::{egcl_forward, EgclLayer, LayerGraph, LayerState, DIST_EPS};
pub use graph::{build_neighbor_graph, NeighborGraph};
pub use mlp::Mlp;

use crate::autodiff::{Bound, ParameterStore, Tape, Tensor};
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::state::{CrowdState, HistoryEntry, PedestrianState, Scene, DEFAULT_HISTORY};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::rc::Rc;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    /// Width of node embeddings and of every perceptron's hidden layer.
    pub hidden: usize,
    pub layers: usize,
    /// History frames fed to the encoder.
    pub history: usize,
    pub neighbor_radius: f64,
    pub max_neighbors: usize,
    pub obstacle_radius: f64,
    pub max_obstacles: usize,
    /// Start the acceleration readouts at zero (the model starts as constant velocity).
    pub zero_readout: bool,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            layers: 2,
            history: DEFAULT_HISTORY,
            neighbor_radius: 4.0,
            max_neighbors: 8,
            obstacle_radius: 2.0,
            max_obstacles: 4,
            zero_readout: true,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers == 0 || self.history == 0 {
            return Err(Error::Config("predictor hidden width, layer count and history must be positive".into()));
        }
        if !(self.neighbor_radius > 0.0 && self.obstacle_radius > 0.0) {
            return Err(Error::Config("neighbor radii must be positive".into()));
        }
        Ok(())
    }

    /// Encoder input width: four scalars per history frame, the log distance
    /// to the destination and the obstacle flag.
    pub fn feature_dim(&self) -> usize {
        4 * self.history + 2
    }
}

/// Constant model inputs derived from one crowd state.
#[derive(Debug, Clone)]
pub struct PredictorInput {
    /// `[K + O, F]`
    pub features: Tensor,
    /// `[K, 2]`
    pub positions: Tensor,
    /// `[K, 2]`
    pub velocities: Tensor,
    pub graph: LayerGraph,
    pub neighbors: NeighborGraph,
    pub dt: f64,
}

fn flat(vs: impl IntoIterator<Item = Vec2<f64>>) -> Vec<f64> {
    vs.into_iter().flat_map(|v| [v.x, v.y]).collect()
}

fn history_window(ped: &PedestrianState<f64>, h: usize) -> Vec<HistoryEntry<f64>> {
    let entries: Vec<HistoryEntry<f64>> = ped.history.iter().copied().collect();
    let current = HistoryEntry {
        frame: 0,
        position: ped.position,
        velocity: ped.velocity,
        acceleration: ped.acceleration,
    };
    let tail = if entries.is_empty() { vec![current] } else { entries[entries.len().saturating_sub(h)..].to_vec() };
    let mut out = vec![tail[0]; h - tail.len()];
    out.extend(tail);
    out
}

/// Invariant encoder features of one pedestrian.
pub fn pedestrian_features(ped: &PedestrianState<f64>, h: usize) -> Vec<f64> {
    let dir = ped.destination_direction();
    let mut f = Vec::with_capacity(4 * h + 2);
    for e in history_window(ped, h) {
        f.push(e.velocity.norm());
        f.push(e.acceleration.norm());
        f.push(e.position.dist(ped.position));
        f.push(e.velocity.dot(dir));
    }
    f.push(ped.destination.dist(ped.position).ln_1p());
    f.push(0.0);
    f
}

impl PredictorInput {
    pub fn from_state(state: &CrowdState<f64>, scene: &Scene<f64>, cfg: &PredictorConfig) -> Result<Self> {
        let k = state.len();
        let positions = state.positions();
        if positions.iter().chain(&state.velocities()).any(|p| !p.is_finite()) {
            return Err(Error::contract("PredictorInput::from_state", "non-finite pedestrian state"));
        }
        let ids: Vec<u64> = state.pedestrians.iter().map(|p| p.id).collect();
        let neighbors = build_neighbor_graph(&positions, &ids, cfg.neighbor_radius, cfg.max_neighbors).with_obstacles(
            &positions,
            &scene.obstacles,
            cfg.obstacle_radius,
            cfg.max_obstacles,
        );
        // Only obstacles that some pedestrian can see become nodes.
        let mut used: Vec<usize> = neighbors.obstacles.iter().flatten().copied().collect();
        used.sort_unstable();
        used.dedup();
        let (recv, send) = neighbors.edges();
        let send: Vec<usize> = send
            .into_iter()
            .map(|s| if s < k { s } else { k + used.binary_search(&(s - k)).expect("obstacle is used") })
            .collect();
        let n_obs = used.len();
        let fdim = cfg.feature_dim();
        let mut features = Vec::with_capacity((k + n_obs) * fdim);
        for ped in &state.pedestrians {
            features.extend(pedestrian_features(ped, cfg.history));
        }
        for _ in 0..n_obs {
            features.extend(std::iter::repeat_n(0.0, fdim - 1));
            features.push(1.0);
        }
        let obstacles = Tensor::constant(flat(used.iter().map(|&o| scene.obstacles[o])), &[n_obs, 2]);
        let dest_dirs = Tensor::constant(flat(state.pedestrians.iter().map(|p| p.destination_direction())), &[k, 2]);
        Ok(Self {
            features: Tensor::constant(features, &[k + n_obs, fdim]),
            positions: Tensor::constant(flat(positions), &[k, 2]),
            velocities: Tensor::constant(flat(state.velocities()), &[k, 2]),
            graph: LayerGraph {
                recv: Rc::new(recv),
                send: Rc::new(send),
                n_peds: k,
                obstacles,
                dest_dirs,
            },
            neighbors,
            dt: state.dt,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorModel {
    pub config: PredictorConfig,
    pub encoder: Mlp,
    pub layers: Vec<EgclLayer>,
}

impl PredictorModel {
    pub fn new(config: PredictorConfig) -> Result<Self> {
        config.validate()?;
        let w = config.hidden;
        let encoder = Mlp::new("encoder", config.feature_dim(), w, w, false);
        let layers = (0..config.layers).map(|l| EgclLayer::new(l, w, w)).collect();
        Ok(Self { config, encoder, layers })
    }

    pub fn init_params<R: Rng>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        self.encoder.init(store, rng, false)?;
        for layer in &self.layers {
            layer.init(store, rng, self.config.zero_readout)?;
        }
        Ok(())
    }

    /// Accelerations `[K, 2]` in m/s².
    pub fn forward(&self, params: &Bound, input: &PredictorInput) -> Result<Tensor> {
        let k = input.graph.n_peds;
        if k == 0 {
            return Ok(Tensor::zeros(&[0, 2]));
        }
        let mut state = LayerState {
            h: self.encoder.forward(params, &input.features)?,
            p: input.positions.clone(),
            v: input.velocities.clone(),
        };
        for layer in &self.layers {
            state = egcl_forward(layer, params, &state, &input.graph)?.0;
        }
        Ok(state.v.sub(&input.velocities)?.scale(1.0 / input.dt))
    }

    /// Inference without gradient recording.
    pub fn predict_next(&self, params: &ParameterStore, state: &CrowdState<f64>, scene: &Scene<f64>) -> Result<Vec<Vec2<f64>>> {
        let tape = Tape::inference();
        let bound = params.bind(&tape)?;
        let input = PredictorInput::from_state(state, scene, &self.config)?;
        let a = self.forward(&bound, &input)?;
        Ok(a.values().chunks(2).map(|c| Vec2::new(c[0], c[1])).collect())
    }
}
