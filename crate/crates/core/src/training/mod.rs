//! Joint velocity/density training.
//!
//! For every horizon frame of an episode the predictor sees the ground-truth
//! state and proposes the next velocity. Ground-truth motion builds the
//! current-frame transition graph; the predicted motion builds the next-frame
//! graph. Their flux drives an explicitly integrated density field that is
//! compared against the soft density of the ground truth, alongside the
//! velocity error.

mod adam;
mod config;

pub use adam::Adam;
pub use config::{LossNorm, TrainConfig, Variant};

use crate::autodiff::{Bound, Gradients, ParameterStore, Tape, Tensor};
use crate::data::Episode;
use crate::density::{
    cross_grid_mask_tensor, crossing_masks, density_from_positions, density_tensor, js_divergence_tensor,
    soft_assign_tensor, Grid,
};
use crate::dvcg::{
    build_dynamic_graph, density_derivative, density_derivative_static, flux_weights, init_adjacency_logits,
    init_flux_params, DynamicGraph, EdgeSide, ADJ_LOGITS_NAME,
};
use crate::error::{Error, Result};
use crate::geom::{Bounds, Vec2};
use crate::ode::rollout_density;
use crate::predictor::{PredictorInput, PredictorModel};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// The three loss values of one evaluation.
#[derive(Debug, Clone)]
pub struct JointLoss {
    pub nn: Tensor,
    pub ode: Tensor,
    pub joint: Tensor,
}

fn distance(a: &Tensor, b: &Tensor, norm: LossNorm) -> Result<Tensor> {
    let d = a.sub(b)?;
    match norm {
        LossNorm::Mse => d.square().mean(),
        LossNorm::Mae => d.abs().mean(),
    }
}

fn sequence_error(op: &'static str, pred: &[Tensor], gt: &[Tensor], norm: LossNorm) -> Result<Tensor> {
    if pred.len() != gt.len() {
        return Err(Error::contract(op, format!("{} predicted frames, {} ground-truth frames", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Ok(Tensor::scalar(0.0));
    }
    let mut total = Tensor::scalar(0.0);
    for (p, g) in pred.iter().zip(gt) {
        if p.shape() != g.shape() {
            return Err(Error::contract(op, format!("shapes {:?} and {:?} differ", p.shape(), g.shape())));
        }
        total = total.add(&distance(p, g, norm)?)?;
    }
    Ok(total.scale(1.0 / pred.len() as f64))
}

/// `λ1·l_NN + λ2·l_ODE`, each term the per-frame error averaged over frames.
/// Frames hold equally many entries, so this equals the error over all entries.
pub fn joint_loss(
    pred_velocities: &[Tensor],
    gt_velocities: &[Tensor],
    pred_densities: &[Tensor],
    gt_densities: &[Tensor],
    lambda1: f64,
    lambda2: f64,
    norm: LossNorm,
) -> Result<JointLoss> {
    let nn = sequence_error("joint_loss", pred_velocities, gt_velocities, norm)?;
    let ode = sequence_error("joint_loss", pred_densities, gt_densities, norm)?;
    let joint = nn.scale(lambda1).add(&ode.scale(lambda2))?;
    Ok(JointLoss { nn, ode, joint })
}

/// Per-epoch summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub epoch: usize,
    pub l_nn: f64,
    pub l_ode: f64,
    pub l_joint: f64,
    /// Mean global gradient norm over optimizer steps.
    pub grad_norm: f64,
    pub floor_events: usize,
}

/// Values from one episode's forward pass.
struct EpisodeOutcome {
    nn: f64,
    ode: f64,
    floor_events: usize,
    grads: Option<Gradients>,
}

fn flat(vs: &[Vec2<f64>]) -> Vec<f64> {
    vs.iter().flat_map(|v| [v.x, v.y]).collect()
}

fn vec2s(t: &Tensor) -> Vec<Vec2<f64>> {
    t.values().chunks(2).map(|c| Vec2::new(c[0], c[1])).collect()
}

/// Model, flux parameters and optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: PredictorModel,
    pub grid: Grid<f64>,
    pub params: ParameterStore,
    pub optimizer: Adam,
    epoch: usize,
}

impl Trainer {
    /// Fresh parameters drawn from `config.seed`.
    pub fn new(config: TrainConfig, bounds: Bounds<f64>) -> Result<Self> {
        config.validate()?;
        let grid = Grid::new(bounds, config.grid_nx, config.grid_ny)?;
        let model = PredictorModel::new(config.predictor.clone())?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParameterStore::new();
        model.init_params(&mut params, &mut rng)?;
        init_flux_params(&mut params, grid.len(), config.weight_form(), &mut rng)?;
        if config.variant == Variant::Trans {
            init_adjacency_logits(&mut params, grid.len())?;
        }
        Ok(Self::from_parts(config, grid, model, params))
    }

    fn from_parts(config: TrainConfig, grid: Grid<f64>, model: PredictorModel, params: ParameterStore) -> Self {
        Self {
            config,
            model,
            grid,
            params,
            optimizer: Adam::default(),
            epoch: 0,
        }
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    fn check_episode(&self, ep: &Episode<f64>) -> Result<()> {
        let c = &self.config;
        if ep.history != c.history || ep.horizon != c.horizon || ep.frames.len() != c.history + c.horizon {
            return Err(Error::contract(
                "train_epoch",
                format!(
                    "episode has h={} τ={} ({} frames), config wants h={} τ={}",
                    ep.history,
                    ep.horizon,
                    ep.frames.len(),
                    c.history,
                    c.horizon
                ),
            ));
        }
        let k = ep.frames[0].len();
        if ep.frames.iter().any(|f| f.len() != k) {
            return Err(Error::contract("train_epoch", "pedestrian count changes within an episode"));
        }
        Ok(())
    }

    /// Builds `l_joint` for one episode on the tape `params` is bound to.
    pub fn episode_loss(&self, params: &Bound, ep: &Episode<f64>, index: usize) -> Result<(JointLoss, usize)> {
        self.check_episode(ep)?;
        let c = &self.config;
        let (l1, l2) = c.loss_weights();
        let dt = ep.frames[0].dt;
        let beta = c.beta_for(&self.grid);
        let cgd = c.cgd();
        let n = self.grid.len();
        let use_density = c.uses_density();
        let anchor = ep.anchor();
        let fail = |frame: usize, detail: String| Error::Training { episode: index, frame, detail };

        let mut pred_v = Vec::with_capacity(c.horizon);
        let mut gt_v = Vec::with_capacity(c.horizon);
        struct FrameFlux {
            graph_t: DynamicGraph,
            graph_next: DynamicGraph,
            speeds_next: Tensor,
            masks_next: Tensor,
            rho_next_pred: Tensor,
            crowd_speed_t: f64,
        }
        let mut fluxes = Vec::new();
        let mut gt_rho = Vec::new();

        for t in 0..c.horizon {
            let state = &ep.frames[anchor + t];
            let next = &ep.frames[anchor + t + 1];
            let k = state.len();
            let input = PredictorInput::from_state(state, &ep.scene, &c.predictor)?;
            let accel = self.model.forward(params, &input).map_err(|e| fail(t, e.to_string()))?;
            if !accel.all_finite() {
                return Err(fail(t, "non-finite acceleration".into()));
            }
            let v_now = Tensor::constant(flat(&state.velocities()), &[k, 2]);
            let v_pred = v_now.add(&accel.scale(dt))?;
            pred_v.push(v_pred.clone());
            gt_v.push(Tensor::constant(flat(&next.velocities()), &[k, 2]));

            if !use_density {
                continue;
            }
            let p_now = state.positions();
            let p_gt_next = next.positions();
            let speeds_t: Vec<f64> = state.velocities().iter().map(|v| v.norm()).collect();
            let masks_t = if c.variant == Variant::NoCgd {
                vec![1.0; k]
            } else {
                crossing_masks(&self.grid, &p_now, &p_gt_next, beta, cgd)?
            };
            let graph_t = build_dynamic_graph(&self.grid, &p_now, &p_gt_next, &speeds_t, &masks_t)?;

            // Position after this step does not depend on the prediction;
            // the predicted velocity then carries it one frame further.
            let p_next: Vec<Vec2<f64>> = p_now.iter().zip(state.velocities()).map(|(p, v)| *p + v * dt).collect();
            let p_next_t = Tensor::constant(flat(&p_next), &[k, 2]);
            let p_after = p_next_t.add(&v_pred.scale(dt))?;
            let speeds_next = v_pred.squared_norm()?.sqrt();
            let q_next = soft_assign_tensor(&self.grid, &p_next_t, beta)?;
            let masks_next = if c.variant == Variant::NoCgd {
                Tensor::constant(vec![1.0; k], &[k, 1])
            } else {
                let q_after = soft_assign_tensor(&self.grid, &p_after, beta)?;
                cross_grid_mask_tensor(&js_divergence_tensor(&q_next, &q_after)?, cgd)
            };
            let graph_next = build_dynamic_graph(
                &self.grid,
                &p_next,
                &vec2s(&p_after),
                speeds_next.values(),
                masks_next.values(),
            )?;
            fluxes.push(FrameFlux {
                graph_t,
                graph_next,
                speeds_next,
                masks_next,
                rho_next_pred: density_tensor(&q_next, n)?,
                crowd_speed_t: speeds_t.iter().sum::<f64>() / k.max(1) as f64,
            });
            gt_rho.push(Tensor::constant(density_from_positions(&self.grid, &p_gt_next, beta)?, &[1, n]));
        }

        let mut floor_events = 0;
        let mut pred_rho = Vec::new();
        if use_density {
            let rho0 = Tensor::constant(
                density_from_positions(&self.grid, &ep.frames[anchor].positions(), beta)?,
                &[1, n],
            );
            let (w, b) = flux_weights(params, c.weight_form())?;
            let sides: Vec<(EdgeSide<'_>, EdgeSide<'_>)> = fluxes
                .iter()
                .map(|f| {
                    Ok((
                        EdgeSide::constant(&f.graph_t),
                        EdgeSide::from_pedestrians(&f.graph_next, &f.speeds_next, &f.masks_next)?,
                    ))
                })
                .collect::<Result<_>>()?;
            let logits = if c.variant == Variant::Trans { Some(params.get(ADJ_LOGITS_NAME)?) } else { None };
            let provider = |t: usize, rho: &Tensor| -> Result<Tensor> {
                let f = &fluxes[t];
                let flux = match logits {
                    Some(l) => {
                        let k = f.speeds_next.len().max(1) as f64;
                        let s_next = f.speeds_next.sum().scale(1.0 / k);
                        density_derivative_static(l, &Tensor::scalar(f.crowd_speed_t), &s_next, rho, &f.rho_next_pred, &w, &b)?
                    }
                    None => density_derivative(&sides[t].0, &sides[t].1, rho, &f.rho_next_pred, &w, &b)?,
                };
                Ok(flux.derivative)
            };
            let rollout = rollout_density(&rho0, provider, &c.solver()).map_err(|e| match e {
                Error::NonFinite { frame, .. } => fail(frame, "non-finite density".into()),
                other => other,
            })?;
            floor_events = rollout.floor_events;
            pred_rho = rollout.states;
        }
        let loss = joint_loss(&pred_v, &gt_v, &pred_rho, &gt_rho, l1, l2, c.loss_norm)?;
        if !loss.joint.all_finite() {
            return Err(fail(c.horizon - 1, "non-finite loss".into()));
        }
        Ok((loss, floor_events))
    }

    fn run_episode(&self, ep: &Episode<f64>, index: usize, with_grads: bool) -> Result<EpisodeOutcome> {
        let tape = Tape::with_recording(with_grads);
        let bound = self.params.bind(&tape)?;
        let (loss, floor_events) = self.episode_loss(&bound, ep, index)?;
        let grads = if with_grads { Some(tape.backward(&loss.joint)?) } else { None };
        Ok(EpisodeOutcome {
            nn: loss.nn.item()?,
            ode: loss.ode.item()?,
            floor_events,
            grads,
        })
    }

    fn report(&self, epoch: usize, outcomes: &[EpisodeOutcome], grad_norm: f64) -> LossReport {
        let (l1, l2) = self.config.loss_weights();
        let m = outcomes.len().max(1) as f64;
        let l_nn = outcomes.iter().map(|o| o.nn).sum::<f64>() / m;
        let l_ode = outcomes.iter().map(|o| o.ode).sum::<f64>() / m;
        LossReport {
            epoch,
            l_nn,
            l_ode,
            l_joint: l1 * l_nn + l2 * l_ode,
            grad_norm,
            floor_events: outcomes.iter().map(|o| o.floor_events).sum(),
        }
    }

    /// One pass over `episodes` in a seeded shuffled order, one optimizer
    /// step per batch. Reported losses are those seen during the pass.
    pub fn train_epoch(&mut self, episodes: &[Episode<f64>]) -> Result<LossReport> {
        if episodes.is_empty() {
            return Err(Error::Data("no training episodes".into()));
        }
        self.epoch += 1;
        let mut order: Vec<usize> = (0..episodes.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ (self.epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);
        let mut outcomes: Vec<Option<EpisodeOutcome>> = (0..episodes.len()).map(|_| None).collect();
        let mut norms = Vec::new();
        for batch in order.chunks(self.config.batch_episodes) {
            let results: Vec<Result<EpisodeOutcome>> = if batch.len() > 1 {
                batch.par_iter().map(|&i| self.run_episode(&episodes[i], i, true)).collect()
            } else {
                batch.iter().map(|&i| self.run_episode(&episodes[i], i, true)).collect()
            };
            let mut total = Gradients::default();
            for (&i, r) in batch.iter().zip(results) {
                let mut o = r?;
                total.accumulate(o.grads.as_ref().expect("recorded"), 1.0 / batch.len() as f64);
                o.grads = None;
                outcomes[i] = Some(o);
            }
            norms.push(total.global_norm());
            self.optimizer.step(&mut self.params, &total, self.config.learning_rate)?;
        }
        let outcomes: Vec<EpisodeOutcome> = outcomes.into_iter().map(|o| o.expect("visited")).collect();
        let grad_norm = norms.iter().sum::<f64>() / norms.len() as f64;
        Ok(self.report(self.epoch, &outcomes, grad_norm))
    }

    /// Mean losses without updating anything.
    pub fn evaluate(&self, episodes: &[Episode<f64>]) -> Result<LossReport> {
        let outcomes = episodes
            .iter()
            .enumerate()
            .map(|(i, e)| self.run_episode(e, i, false))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.report(self.epoch, &outcomes, 0.0))
    }

    /// Runs `config.epochs` epochs, returning one report per epoch.
    pub fn fit(&mut self, episodes: &[Episode<f64>]) -> Result<Vec<LossReport>> {
        (0..self.config.epochs).map(|_| self.train_epoch(episodes)).collect()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            grid: GridSpec {
                bounds: *self.grid.bounds(),
                nx: self.grid.nx(),
                ny: self.grid.ny(),
            },
            epochs: self.epoch,
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.config.validate()?;
        let grid = Grid::new(ck.grid.bounds, ck.grid.nx, ck.grid.ny)?;
        let model = PredictorModel::new(ck.config.predictor.clone())?;
        let mut t = Self::from_parts(ck.config.clone(), grid, model, ck.params.clone());
        t.epoch = ck.epochs;
        Ok(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub bounds: Bounds<f64>,
    pub nx: usize,
    pub ny: usize,
}

/// Trained parameters plus the configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub grid: GridSpec,
    pub epochs: usize,
    pub params: ParameterStore,
}

impl Checkpoint {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "config": self.config,
            "grid": self.grid,
            "epochs": self.epochs,
            "params": self.params.to_json(),
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let field = |k: &str| v.get(k).ok_or_else(|| Error::Data(format!("checkpoint is missing `{k}`")));
        Ok(Self {
            config: serde_json::from_value(field("config")?.clone())?,
            grid: serde_json::from_value(field("grid")?.clone())?,
            epochs: serde_json::from_value(field("epochs")?.clone())?,
            params: ParameterStore::from_json(field("params")?)?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_json())?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&serde_json::from_str(&text)?)
    }

    pub fn model(&self) -> Result<PredictorModel> {
        PredictorModel::new(self.config.predictor.clone())
    }
}

/// `epoch,l_nn,l_ode,l_joint,grad_norm,floor_events` with a header row.
pub fn training_log_csv(reports: &[LossReport]) -> String {
    let mut out = String::from("epoch,l_nn,l_ode,l_joint,grad_norm,floor_events\n");
    for r in reports {
        let _ = writeln!(out, "{},{},{},{},{},{}", r.epoch, r.l_nn, r.l_ode, r.l_joint, r.grad_norm, r.floor_events);
    }
    out
}

#[cfg(test)]
mod tests;
