//! Local gradient rules, applied during the reverse sweep.

use super::ops::matmul_raw;
use super::tape::{Node, Op};

fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], id: usize) -> &'a mut Vec<f64> {
    grads[id].get_or_insert_with(|| vec![0.0; nodes[id].len])
}

/// Adds `f(i)` into entry `i` of the parent's gradient, if the parent is tracked.
fn acc(grads: &mut [Option<Vec<f64>>], nodes: &[Node], parent: Option<usize>, f: impl Fn(usize) -> f64) {
    if let Some(p) = parent {
        for (i, s) in slot(grads, nodes, p).iter_mut().enumerate() {
            *s += f(i);
        }
    }
}

pub(crate) fn propagate(op: &Op, g: &[f64], grads: &mut [Option<Vec<f64>>], nodes: &[Node]) {
    match op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            acc(grads, nodes, *a, |i| g[i]);
            acc(grads, nodes, *b, |i| g[i]);
        }
        Op::Sub(a, b) => {
            acc(grads, nodes, *a, |i| g[i]);
            acc(grads, nodes, *b, |i| -g[i]);
        }
        Op::Mul(a, b, av, bv) => {
            acc(grads, nodes, *a, |i| g[i] * bv[i]);
            acc(grads, nodes, *b, |i| g[i] * av[i]);
        }
        Op::Div(a, b, av, bv) => {
            acc(grads, nodes, *a, |i| g[i] / bv[i]);
            acc(grads, nodes, *b, |i| -g[i] * av[i] / (bv[i] * bv[i]));
        }
        Op::XLogY(x, y, xv, yv) => {
            acc(grads, nodes, *x, |i| if xv[i] == 0.0 && yv[i] == 0.0 { 0.0 } else { g[i] * yv[i].ln() });
            acc(grads, nodes, *y, |i| if xv[i] == 0.0 { 0.0 } else { g[i] * xv[i] / yv[i] });
        }
        Op::Scale(a, c) => acc(grads, nodes, *a, |i| g[i] * c),
        Op::Offset(a) => acc(grads, nodes, *a, |i| g[i]),
        Op::MatMul { a, b, av, bv, m, k, n } => {
            let (m, k, n) = (*m, *k, *n);
            if let Some(pa) = a {
                // dA = G Bᵀ
                let s = slot(grads, nodes, *pa);
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += g[i * n + j] * bv[p * n + j];
                        }
                        s[i * k + p] += acc;
                    }
                }
            }
            if let Some(pb) = b {
                // dB = Aᵀ G
                let mut at = vec![0.0; k * m];
                for i in 0..m {
                    for p in 0..k {
                        at[p * m + i] = av[i * k + p];
                    }
                }
                let d = matmul_raw(&at, g, k, m, n);
                for (s, v) in slot(grads, nodes, *pb).iter_mut().zip(d) {
                    *s += v;
                }
            }
        }
        Op::Transpose(a, r, c) => {
            let (r, c) = (*r, *c);
            acc(grads, nodes, *a, |idx| {
                let (i, j) = (idx / c, idx % c);
                g[j * r + i]
            });
        }
        Op::Sum(a) => acc(grads, nodes, *a, |_| g[0]),
        Op::Mean(a, n) => {
            let n = *n as f64;
            acc(grads, nodes, *a, |_| g[0] / n);
        }
        Op::SumAxis { a, cols, axis } => {
            let cols = *cols;
            if *axis == 0 {
                acc(grads, nodes, *a, |idx| g[idx % cols]);
            } else {
                acc(grads, nodes, *a, |idx| g[idx / cols]);
            }
        }
        Op::Exp(a, out) => acc(grads, nodes, *a, |i| g[i] * out[i]),
        Op::Log(a, av) => acc(grads, nodes, *a, |i| g[i] / av[i]),
        Op::Sqrt(a, out) => acc(grads, nodes, *a, |i| if out[i] == 0.0 { 0.0 } else { 0.5 * g[i] / out[i] }),
        Op::Sigmoid(a, out) => acc(grads, nodes, *a, |i| g[i] * out[i] * (1.0 - out[i])),
        Op::Recip(a, out) => acc(grads, nodes, *a, |i| -g[i] * out[i] * out[i]),
        Op::Abs(a, av) => acc(grads, nodes, *a, |i| g[i] * av[i].signum() * f64::from(av[i] != 0.0)),
        Op::Clamp(a, av, lo, hi) => {
            acc(grads, nodes, *a, |i| if av[i] >= *lo && av[i] <= *hi { g[i] } else { 0.0 })
        }
        Op::Softmax { a, out, rows, cols, axis } => {
            let Some(pa) = a else { return };
            let (rows, cols) = (*rows, *cols);
            let (outer, inner, so, si) = if *axis == 1 { (rows, cols, cols, 1) } else { (cols, rows, 1, cols) };
            let s = slot(grads, nodes, *pa);
            for o in 0..outer {
                let at = |i: usize| o * so + i * si;
                let dot: f64 = (0..inner).map(|i| g[at(i)] * out[at(i)]).sum();
                for i in 0..inner {
                    s[at(i)] += out[at(i)] * (g[at(i)] - dot);
                }
            }
        }
        Op::SquaredNorm { a, av, cols } => {
            let cols = *cols;
            acc(grads, nodes, *a, |idx| 2.0 * av[idx] * g[idx / cols]);
        }
        Op::Concat { parts, extent, axis } => {
            if *axis == 1 {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let mut offset = 0;
                for &(p, w) in parts {
                    acc(grads, nodes, p, |idx| {
                        let (r, c) = (idx / w, idx % w);
                        g[r * total + offset + c]
                    });
                    offset += w;
                }
            } else {
                let cols = *extent;
                let mut offset = 0;
                for &(p, h) in parts {
                    acc(grads, nodes, p, |idx| g[offset * cols + idx]);
                    offset += h;
                }
            }
        }
        Op::Slice { a, cols, axis, start, len } => {
            let (cols, start, len) = (*cols, *start, *len);
            if *axis == 0 {
                acc(grads, nodes, *a, |idx| {
                    let r = idx / cols;
                    if r >= start && r < start + len {
                        g[idx - start * cols]
                    } else {
                        0.0
                    }
                });
            } else {
                acc(grads, nodes, *a, |idx| {
                    let (r, c) = (idx / cols, idx % cols);
                    if c >= start && c < start + len {
                        g[r * len + c - start]
                    } else {
                        0.0
                    }
                });
            }
        }
        Op::Broadcast { a, from, to } => {
            let Some(pa) = a else { return };
            let s = slot(grads, nodes, *pa);
            for r in 0..to.0 {
                let sr = if from.0 == 1 { 0 } else { r };
                for c in 0..to.1 {
                    let sc = if from.1 == 1 { 0 } else { c };
                    s[sr * from.1 + sc] += g[r * to.1 + c];
                }
            }
        }
        Op::GatherRows { a, index, cols } => {
            let Some(pa) = a else { return };
            let cols = *cols;
            let s = slot(grads, nodes, *pa);
            for (e, &i) in index.iter().enumerate() {
                for c in 0..cols {
                    s[i * cols + c] += g[e * cols + c];
                }
            }
        }
        Op::ScatterAddRows { a, index, cols } => {
            let cols = *cols;
            acc(grads, nodes, *a, |idx| {
                let (e, c) = (idx / cols, idx % cols);
                g[index[e] * cols + c]
            });
        }
        Op::Gather { a, index } => {
            let Some(pa) = a else { return };
            let s = slot(grads, nodes, *pa);
            for (e, &i) in index.iter().enumerate() {
                s[i] += g[e];
            }
        }
    }
}
