//! Fixed-step integration of the density field, one step per frame.
//!
//! The derivative provider is queried with the frame index and the current
//! field. Negative cells are floored at zero after every step.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverMethod {
    #[default]
    Euler,
    Rk4,
    /// Forward Euler written as an explicit residual update.
    Discrete,
}

impl FromStr for SolverMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Self::Euler),
            "rk4" => Ok(Self::Rk4),
            "discrete" => Ok(Self::Discrete),
            other => Err(Error::Config(format!("unknown solver `{other}`"))),
        }
    }
}

impl fmt::Display for SolverMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Euler => "euler",
            Self::Rk4 => "rk4",
            Self::Discrete => "discrete",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: SolverMethod,
    /// Number of frames to integrate.
    pub horizon: usize,
    /// Kept for reference; fixed-step methods ignore the tolerances.
    pub rtol: f64,
    pub atol: f64,
}

impl SolverConfig {
    pub fn new(method: SolverMethod, horizon: usize) -> Self {
        Self {
            method,
            horizon,
            rtol: 1e-4,
            atol: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("solver horizon must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::new(SolverMethod::Euler, 10)
    }
}

/// A density field the solver can step.
pub trait OdeState: Sized {
    /// `self + c · d`
    fn axpy(&self, c: f64, d: &Self) -> Result<Self>;
    /// `self + d`
    fn add_residual(&self, d: &Self) -> Result<Self>;
    /// Floors negative entries at zero, returning the number floored.
    fn floor_at_zero(&self) -> (Self, usize);
    fn is_finite(&self) -> bool;
}

impl<T: Real> OdeState for Vec<T> {
    fn axpy(&self, c: f64, d: &Self) -> Result<Self> {
        check_len(self.len(), d.len())?;
        let c = T::lit(c);
        Ok(self.iter().zip(d).map(|(&a, &b)| a + c * b).collect())
    }

    fn add_residual(&self, d: &Self) -> Result<Self> {
        check_len(self.len(), d.len())?;
        Ok(self.iter().zip(d).map(|(&a, &b)| a + b).collect())
    }

    fn floor_at_zero(&self) -> (Self, usize) {
        clamp_density(self)
    }

    fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

impl OdeState for Tensor {
    fn axpy(&self, c: f64, d: &Self) -> Result<Self> {
        self.add(&d.scale(c))
    }

    fn add_residual(&self, d: &Self) -> Result<Self> {
        self.add(d)
    }

    fn floor_at_zero(&self) -> (Self, usize) {
        let n = self.values().iter().filter(|&&v| v < 0.0).count();
        if n == 0 {
            return (self.clone(), 0);
        }
        (self.relu(), n)
    }

    fn is_finite(&self) -> bool {
        self.all_finite()
    }
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::contract("ode step", format!("field lengths {a} and {b} differ")));
    }
    Ok(())
}

/// Floors negative cells at zero; returns the field and the number of cells floored.
pub fn clamp_density<T: Real>(rho: &[T]) -> (Vec<T>, usize) {
    let mut events = 0;
    let out = rho
        .iter()
        .map(|&v| {
            if v < T::zero() {
                events += 1;
                T::zero()
            } else {
                v
            }
        })
        .collect();
    (out, events)
}

/// Fields `ρ^1 … ρ^τ` and the total number of floor events.
#[derive(Debug, Clone)]
pub struct Rollout<S> {
    pub states: Vec<S>,
    pub floor_events: usize,
}

/// One unit step from `rho` at frame `t`.
pub fn step<S, F>(rho: &S, t: usize, method: SolverMethod, provider: &mut F) -> Result<S>
where
    S: OdeState,
    F: FnMut(usize, &S) -> Result<S>,
{
    match method {
        SolverMethod::Euler => rho.axpy(1.0, &provider(t, rho)?),
        SolverMethod::Discrete => rho.add_residual(&provider(t, rho)?),
        SolverMethod::Rk4 => {
            // Every stage sees the frame-t graphs; only the field changes.
            let k1 = provider(t, rho)?;
            let k2 = provider(t, &rho.axpy(0.5, &k1)?)?;
            let k3 = provider(t, &rho.axpy(0.5, &k2)?)?;
            let k4 = provider(t, &rho.axpy(1.0, &k3)?)?;
            let incr = k1.axpy(2.0, &k2)?.axpy(2.0, &k3)?.add_residual(&k4)?;
            rho.axpy(1.0 / 6.0, &incr)
        }
    }
}

/// Integrates `config.horizon` frames from `rho0`.
pub fn rollout_density<S, F>(rho0: &S, mut provider: F, config: &SolverConfig) -> Result<Rollout<S>>
where
    S: OdeState,
    F: FnMut(usize, &S) -> Result<S>,
{
    config.validate()?;
    let mut states = Vec::with_capacity(config.horizon);
    let mut floor_events = 0;
    for t in 0..config.horizon {
        let prev = states.last().unwrap_or(rho0);
        let next = step(prev, t, config.method, &mut provider)?;
        if !next.is_finite() {
            return Err(Error::NonFinite { stage: "density rollout", frame: t });
        }
        let (next, n) = next.floor_at_zero();
        floor_events += n;
        states.push(next);
    }
    Ok(Rollout { states, floor_events })
}

impl<T: Real> Rollout<Vec<T>> {
    /// Per-frame CSV, first row labelled `first_frame`.
    pub fn to_csv(&self, first_frame: i64) -> String {
        crate::density::density_csv(first_frame, &self.states)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, Tape};

    fn cfg(method: SolverMethod, horizon: usize) -> SolverConfig {
        SolverConfig::new(method, horizon)
    }

    #[test]
    fn zero_derivative_keeps_field() {
        let rho = vec![0.5, 1.5, 2.0];
        for m in [SolverMethod::Euler, SolverMethod::Rk4, SolverMethod::Discrete] {
            let r = rollout_density(&rho, |_, s: &Vec<f64>| Ok(vec![0.0; s.len()]), &cfg(m, 7)).unwrap();
            assert_eq!(r.states.len(), 7);
            assert!(r.states.iter().all(|s| *s == rho));
        }
    }

    #[test]
    fn decay_one_step() {
        let neg = |_: usize, s: &Vec<f64>| Ok(s.iter().map(|v| -v).collect());
        let e = rollout_density(&vec![1.0], neg, &cfg(SolverMethod::Euler, 1)).unwrap();
        assert_eq!(e.states[0], vec![0.0]);
        let r = rollout_density(&vec![1.0], neg, &cfg(SolverMethod::Rk4, 1)).unwrap();
        let taylor = 1.0 - 1.0 + 0.5 - 1.0 / 6.0 + 1.0 / 24.0;
        assert!((r.states[0][0] - taylor).abs() < 1e-15);
        assert!((r.states[0][0] - 0.375).abs() < 1e-15);
    }

    #[test]
    fn euler_and_discrete_agree_bitwise() {
        let prov = |t: usize, s: &Vec<f64>| Ok(s.iter().enumerate().map(|(i, v)| (0.3 * t as f64 - i as f64).sin() * v * 0.1 + 0.01).collect());
        let rho = vec![0.3, 0.9, 1.7, 0.0];
        let a = rollout_density(&rho, prov, &cfg(SolverMethod::Euler, 12)).unwrap();
        let b = rollout_density(&rho, prov, &cfg(SolverMethod::Discrete, 12)).unwrap();
        for (x, y) in a.states.iter().zip(&b.states) {
            let bits = |v: &Vec<f64>| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(x), bits(y));
        }
    }

    #[test]
    fn first_state_is_one_step_from_start() {
        let prov = |_: usize, _: &Vec<f64>| Ok(vec![0.25, -0.5]);
        let r = rollout_density(&vec![1.0, 1.0], prov, &cfg(SolverMethod::Euler, 3)).unwrap();
        assert_eq!(r.states[0], vec![1.25, 0.5]);
        assert_eq!(r.states[2], vec![1.75, 0.0]);
        assert_eq!(r.floor_events, 1);
    }

    #[test]
    fn clamp_examples() {
        assert_eq!(clamp_density(&[0.5, -0.1]), (vec![0.5, 0.0], 1));
        assert_eq!(clamp_density(&[0.5, 0.0]), (vec![0.5, 0.0], 0));
        assert_eq!(clamp_density(&[-1.0, -2.0, -0.5]), (vec![0.0; 3], 3));
    }

    #[test]
    fn non_finite_reports_frame() {
        let prov = |t: usize, s: &Vec<f64>| Ok(if t == 2 { vec![f64::NAN; s.len()] } else { s.clone() });
        match rollout_density(&vec![1.0], prov, &cfg(SolverMethod::Euler, 5)) {
            Err(Error::NonFinite { frame, .. }) => assert_eq!(frame, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_horizon_is_rejected() {
        assert!(rollout_density(&vec![1.0], |_, s: &Vec<f64>| Ok(s.clone()), &cfg(SolverMethod::Euler, 0)).is_err());
    }

    #[test]
    fn tensor_rollout_matches_plain_and_differentiates() {
        let a = [0.2, -0.3, 0.1];
        let plain = rollout_density(
            &vec![1.0, 2.0, 0.5],
            |_, s: &Vec<f64>| Ok(s.iter().zip(&a).map(|(v, c)| v * c).collect()),
            &cfg(SolverMethod::Rk4, 4),
        )
        .unwrap();
        let tape = Tape::new();
        let rho0 = tape.leaf("rho", vec![1.0, 2.0, 0.5], &[1, 3]).unwrap();
        let coef = Tensor::constant(a.to_vec(), &[1, 3]);
        let t = rollout_density(&rho0, |_, s: &Tensor| s.mul(&coef), &cfg(SolverMethod::Rk4, 4)).unwrap();
        for (p, q) in plain.states.iter().zip(&t.states) {
            for (x, y) in p.iter().zip(q.values()) {
                assert!((x - y).abs() < 1e-15);
            }
        }
        let err = grad_check(
            |x| {
                let r = rollout_density(x, |_, s: &Tensor| s.mul(&coef), &cfg(SolverMethod::Rk4, 4))?;
                Ok(r.states.last().unwrap().square().sum())
            },
            &[1.0, 2.0, 0.5],
            &[1, 3],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6);
    }

    #[test]
    fn csv_export() {
        let r = Rollout { states: vec![vec![1.0, 0.5]], floor_events: 0 };
        assert_eq!(r.to_csv(9), "frame,c0,c1\n9,1,0.5\n");
    }

    #[test]
    fn method_names_round_trip() {
        for m in [SolverMethod::Euler, SolverMethod::Rk4, SolverMethod::Discrete] {
            assert_eq!(m.to_string().parse::<SolverMethod>().unwrap(), m);
        }
        assert!("dopri5".parse::<SolverMethod>().is_err());
    }
}
