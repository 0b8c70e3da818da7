//! Central-difference gradient checking.

use super::params::{Bound, ParameterStore};
use super::tape::{Tape, Tensor};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max over coordinates of `|analytic - numeric| / max(1, |numeric|)`.
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    pub worst_index: usize,
    pub coordinates: usize,
}

/// Compares reverse-mode gradients of a scalar function of `params` with central differences.
pub fn grad_check_params<F>(f: F, params: &ParameterStore, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &Bound) -> Result<Tensor>,
{
    let tape = Tape::new();
    let bound = params.bind(&tape)?;
    let loss = f(&tape, &bound)?;
    let grads = tape.backward(&loss)?;

    let eval = |store: &ParameterStore| -> Result<f64> {
        let t = Tape::inference();
        let b = store.bind(&t)?;
        f(&t, &b)?.item()
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: None,
        worst_index: 0,
        coordinates: 0,
    };
    let mut probe = params.clone();
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let n = params.get(&name).map(|p| p.values.len()).unwrap_or(0);
        let analytic = grads.get(&name).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; n]);
        for i in 0..n {
            let base = params.get(&name).expect("present").values[i];
            probe.get_mut(&name).expect("present").values[i] = base + step;
            let up = eval(&probe)?;
            probe.get_mut(&name).expect("present").values[i] = base - step;
            let down = eval(&probe)?;
            probe.get_mut(&name).expect("present").values[i] = base;
            let numeric = (up - down) / (2.0 * step);
            let err = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
            report.coordinates += 1;
            if err > report.max_rel_error || report.worst_param.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst_param = Some(name.clone());
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

/// Single-input form: `f` receives a leaf tensor holding `point`.
pub fn grad_check<F>(f: F, point: &[f64], shape: &[usize], step: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let mut store = ParameterStore::new();
    store.insert("x", shape, point.to_vec())?;
    let report = grad_check_params(|_, b| f(b.get("x")?), &store, step)?;
    Ok(report.max_rel_error)
}
