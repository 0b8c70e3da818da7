use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::real::Real;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SinkhornConfig {
    /// ε as a fraction of the median pairwise cost.
    pub epsilon_scale: f64,
    pub iters: usize,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon_scale: 0.01,
            iters: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtResult<T> {
    /// Transport cost `<π, C>` of the final plan.
    pub cost: T,
    pub epsilon: T,
}

pub(crate) fn median<T: Real>(mut xs: Vec<T>) -> T {
    if xs.is_empty() {
        return T::zero();
    }
    let (len, mid) = (xs.len(), xs.len() / 2);
    let (lo, m, _) = xs.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).expect("finite"));
    let m = *m;
    if len % 2 == 1 {
        m
    } else {
        let below = lo.iter().copied().fold(T::neg_infinity(), T::max);
        (below + m) / T::lit(2.0)
    }
}

fn log_sum_exp<T: Real>(xs: impl Iterator<Item = T> + Clone) -> T {
    let m = xs.clone().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).fold(T::zero(), |a, b| a + b).ln()
}

/// Entropic optimal transport between uniform measures on `p` and `q` with
/// squared Euclidean cost, solved by log-domain Sinkhorn iterations.
pub fn ot_sinkhorn<T: Real>(p: &[Vec2<T>], q: &[Vec2<T>], cfg: &SinkhornConfig) -> Result<OtResult<T>> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::UndefinedMetric("ot"));
    }
    if !(cfg.epsilon_scale > 0.0) || cfg.iters == 0 {
        return Err(Error::Config("sinkhorn needs epsilon_scale > 0 and iters > 0".into()));
    }
    let (n, m) = (p.len(), q.len());
    let cost: Vec<T> = p.iter().flat_map(|a| q.iter().map(move |b| a.dist_sq(*b))).collect();
    let med = median(cost.clone());
    if med == T::zero() && cost.iter().all(|c| *c == T::zero()) {
        return Ok(OtResult {
            cost: T::zero(),
            epsilon: T::zero(),
        });
    }
    // A zero median with nonzero costs still needs a positive temperature.
    let scale = if med > T::zero() { med } else { cost.iter().copied().fold(T::zero(), T::max) };
    let eps = T::lit(cfg.epsilon_scale) * scale;
    let (ln_a, ln_b) = (-T::lit(n as f64).ln(), -T::lit(m as f64).ln());
    // ε-scaling: anneal geometrically from the largest cost down to ε over
    // the first half of the iterations, then iterate at ε.
    let c_max = cost.iter().copied().fold(T::zero(), T::max);
    let warm = cfg.iters / 2;
    let ratio = if warm > 0 && c_max > eps { (eps / c_max).powf(T::one() / T::lit(warm as f64)) } else { T::one() };
    let mut temp = if warm > 0 { c_max.max(eps) } else { eps };
    let mut f = vec![T::zero(); n];
    let mut g = vec![T::zero(); m];
    // Symmetric updates: both potentials move from the previous pair and
    // are averaged with it, so swapping P and Q swaps f and g exactly.
    let half = T::lit(0.5);
    for _ in 0..cfg.iters {
        let f_new: Vec<T> = (0..n)
            .map(|i| {
                let row = &cost[i * m..(i + 1) * m];
                temp * ln_a - temp * log_sum_exp(row.iter().zip(&g).map(|(c, gj)| (*gj - *c) / temp))
            })
            .collect();
        let g_new: Vec<T> = (0..m)
            .map(|j| temp * ln_b - temp * log_sum_exp((0..n).map(|i| (f[i] - cost[i * m + j]) / temp)))
            .collect();
        for (x, y) in f.iter_mut().zip(f_new) {
            *x = half * (*x + y);
        }
        for (x, y) in g.iter_mut().zip(g_new) {
            *x = half * (*x + y);
        }
        temp = (temp * ratio).max(eps);
    }
    let mut total = T::zero();
    for (k, c) in cost.iter().enumerate() {
        total += ((f[k / m] + g[k % m] - *c) / eps).exp() * *c;
    }
    Ok(OtResult {
        cost: total,
        epsilon: eps,
    })
}

