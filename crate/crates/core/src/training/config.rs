//! Training configuration and ablation variants.

use crate::density::{CgdParams, Grid};
use crate::dvcg::{WeightForm, DEFAULT_EMBEDDING_DIM};
use crate::error::{Error, Result};
use crate::ode::{SolverConfig, SolverMethod};
use crate::predictor::PredictorConfig;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Model variants used for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Full,
    /// Velocity loss only; the density rollout is skipped.
    NoOde,
    /// Crossing masks fixed at 1.
    NoCgd,
    /// Density loss only.
    NoNnloss,
    /// `W` and `B` stored as full matrices instead of outer products.
    NoNe,
    /// Learned static adjacency in place of the transition graphs.
    Trans,
    Rk4,
    Discrete,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Full,
        Variant::NoOde,
        Variant::NoCgd,
        Variant::NoNnloss,
        Variant::NoNe,
        Variant::Trans,
        Variant::Rk4,
        Variant::Discrete,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoOde => "no-ode",
            Variant::NoCgd => "no-cgd",
            Variant::NoNnloss => "no-nnloss",
            Variant::NoNe => "no-ne",
            Variant::Trans => "trans",
            Variant::Rk4 => "rk4",
            Variant::Discrete => "discrete",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

/// Distance used by both loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossNorm {
    #[default]
    Mse,
    Mae,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Horizon τ in frames.
    pub horizon: usize,
    /// History h in frames.
    pub history: usize,
    /// Soft-assignment sharpness; `None` uses `2 / cell_size²`.
    pub beta: Option<f64>,
    pub alpha: f64,
    pub tau_mask: f64,
    pub grid_nx: usize,
    pub grid_ny: usize,
    pub embedding_dim: usize,
    pub seed: u64,
    pub solver: SolverMethod,
    pub variant: Variant,
    pub loss_norm: LossNorm,
    /// Episodes per optimizer step.
    pub batch_episodes: usize,
    /// Fraction of episodes (earliest first) used for training.
    pub train_ratio: f64,
    pub predictor: PredictorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            learning_rate: 1e-3,
            epochs: 200,
            horizon: 10,
            history: 8,
            beta: None,
            alpha: crate::density::DEFAULT_ALPHA,
            tau_mask: crate::density::DEFAULT_TAU_MASK,
            grid_nx: 10,
            grid_ny: 10,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            seed: 7,
            solver: SolverMethod::Euler,
            variant: Variant::Full,
            loss_norm: LossNorm::Mse,
            batch_episodes: 1,
            train_ratio: 0.8,
            predictor: PredictorConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let (l1, l2) = self.loss_weights();
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        if l1 == 0.0 && l2 == 0.0 {
            return Err(Error::Config(format!(
                "variant `{}` with lambda1={} and lambda2={} leaves no loss term",
                self.variant, self.lambda1, self.lambda2
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be finite and nonnegative".into()));
        }
        if self.horizon == 0 || self.history == 0 {
            return Err(Error::Config("horizon and history must be positive".into()));
        }
        if self.grid_nx == 0 || self.grid_ny == 0 {
            return Err(Error::Config("grid must have at least one cell per axis".into()));
        }
        if self.embedding_dim == 0 || self.batch_episodes == 0 {
            return Err(Error::Config("embedding dimension and batch size must be positive".into()));
        }
        if let Some(b) = self.beta {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::Config(format!("beta must be positive, got {b}")));
            }
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Config("alpha must be positive".into()));
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return Err(Error::Config("train_ratio must lie in (0, 1)".into()));
        }
        if self.predictor.history != self.history {
            return Err(Error::Config(format!(
                "predictor history {} differs from training history {}",
                self.predictor.history, self.history
            )));
        }
        self.predictor.validate()
    }

    /// `(λ1, λ2)` after the variant's overrides.
    pub fn loss_weights(&self) -> (f64, f64) {
        match self.variant {
            Variant::NoOde => (self.lambda1, 0.0),
            Variant::NoNnloss => (0.0, self.lambda2),
            _ => (self.lambda1, self.lambda2),
        }
    }

    pub fn uses_density(&self) -> bool {
        self.variant != Variant::NoOde && self.loss_weights().1 > 0.0
    }

    pub fn solver(&self) -> SolverConfig {
        let method = match self.variant {
            Variant::Rk4 => SolverMethod::Rk4,
            Variant::Discrete => SolverMethod::Discrete,
            _ => self.solver,
        };
        SolverConfig::new(method, self.horizon)
    }

    pub fn weight_form(&self) -> WeightForm {
        match self.variant {
            Variant::NoNe => WeightForm::Direct,
            _ => WeightForm::Embedding { dim: self.embedding_dim },
        }
    }

    pub fn cgd(&self) -> CgdParams {
        CgdParams {
            alpha: self.alpha,
            tau_mask: self.tau_mask,
        }
    }

    pub fn beta_for(&self, grid: &Grid<f64>) -> f64 {
        self.beta.unwrap_or_else(|| grid.default_beta())
    }
}
