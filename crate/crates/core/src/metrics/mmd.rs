use super::ot::median;
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmdResult<T> {
    pub value: T,
    /// Median pairwise distance over both sets.
    pub bandwidth: T,
    /// Set when a singleton forced the biased (V-statistic) estimate.
    pub biased: bool,
}

/// Squared MMD with a Gaussian kernel, unbiased U-statistic.
///
/// Within-set sums skip the diagonal; the cross term uses every pair, so
/// the value depends only on the two multisets.
pub fn mmd_gaussian<T: Real>(p: &[Vec2<T>], q: &[Vec2<T>]) -> Result<MmdResult<T>> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::UndefinedMetric("mmd"));
    }
    let all: Vec<Vec2<T>> = p.iter().chain(q).copied().collect();
    let mut dists = Vec::with_capacity(all.len() * (all.len() - 1) / 2);
    for (i, a) in all.iter().enumerate() {
        for b in &all[i + 1..] {
            dists.push(a.dist(*b));
        }
    }
    let med = median(dists);
    let bandwidth = if med > T::zero() { med } else { T::one() };
    let denom = T::lit(2.0) * bandwidth * bandwidth;
    let k = |a: Vec2<T>, b: Vec2<T>| (-a.dist_sq(b) / denom).exp();
    let biased = p.len() < 2 || q.len() < 2;
    let within = |s: &[Vec2<T>]| {
        let mut sum = T::zero();
        for (i, a) in s.iter().enumerate() {
            for (j, b) in s.iter().enumerate() {
                if i != j || biased {
                    sum += k(*a, *b);
                }
            }
        }
        let n = T::lit(s.len() as f64);
        sum / if biased { n * n } else { n * (n - T::one()) }
    };
    let mut cross = T::zero();
    for a in p {
        for b in q {
            cross += k(*a, *b);
        }
    }
    cross = cross / T::lit((p.len() * q.len()) as f64);
    Ok(MmdResult {
        value: within(p) + within(q) - T::lit(2.0) * cross,
        bandwidth,
        biased,
    })
}
