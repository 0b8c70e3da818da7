//! Forward definitions of the primitive tensor operations.

use super::tape::{push_node, Buf, NodeRef, Op, TapeInner, Tensor};
use crate::error::{Error, Result};
use std::rc::Rc;

fn tape_of(op: &'static str, ts: &[&Tensor]) -> Result<Option<Rc<TapeInner>>> {
    let mut found: Option<&Rc<TapeInner>> = None;
    for t in ts {
        if let Some(n) = &t.node {
            match found {
                Some(f) if !Rc::ptr_eq(f, &n.tape) => {
                    return Err(Error::contract(op, "operands recorded on different tapes"));
                }
                _ => found = Some(&n.tape),
            }
        }
    }
    Ok(found.cloned())
}

fn id(t: &Tensor) -> Option<usize> {
    t.node.as_ref().map(|n| n.id)
}

fn finish(tape: Option<Rc<TapeInner>>, op: impl FnOnce() -> Op, shape: Vec<usize>, data: Vec<f64>) -> Tensor {
    let len = data.len();
    let node = tape.map(|tape| {
        let id = push_node(&tape, op(), len, None);
        NodeRef { tape, id }
    });
    Tensor {
        shape,
        data: Rc::new(data),
        node,
    }
}

/// Like [`finish`] for ops whose local derivative is a function of their output.
fn finish_with_output(
    tape: Option<Rc<TapeInner>>,
    op: impl FnOnce(Buf) -> Op,
    shape: Vec<usize>,
    data: Vec<f64>,
) -> Tensor {
    let data = Rc::new(data);
    let len = data.len();
    let node = tape.map(|tape| {
        let id = push_node(&tape, op(data.clone()), len, None);
        NodeRef { tape, id }
    });
    Tensor { shape, data, node }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::contract(op, format!("shapes {:?} and {:?} differ", a.shape, b.shape)));
    }
    Ok(())
}

fn matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape.as_slice() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::contract(op, format!("expected a matrix, got shape {s:?}"))),
    }
}

fn check_axis(op: &'static str, axis: usize) -> Result<()> {
    if axis > 1 {
        return Err(Error::contract(op, format!("axis {axis} out of range for a matrix")));
    }
    Ok(())
}

impl Tensor {
    fn unary(&self, f: impl Fn(f64) -> f64, op: impl FnOnce(Option<usize>, Buf) -> Op) -> Tensor {
        let data: Vec<f64> = self.data.iter().map(|&x| f(x)).collect();
        let tape = self.node.as_ref().map(|n| n.tape.clone());
        finish_with_output(tape, |out| op(id(self), out), self.shape.clone(), data)
    }

    fn zip(&self, other: &Tensor, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<(Option<Rc<TapeInner>>, Vec<f64>)> {
        same_shape(name, self, other)?;
        let tape = tape_of(name, &[self, other])?;
        let data = self.data.iter().zip(other.data.iter()).map(|(&a, &b)| f(a, b)).collect();
        Ok((tape, data))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let (tape, data) = self.zip(other, "add", |a, b| a + b)?;
        Ok(finish(tape, || Op::Add(id(self), id(other)), self.shape.clone(), data))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        let (tape, data) = self.zip(other, "sub", |a, b| a - b)?;
        Ok(finish(tape, || Op::Sub(id(self), id(other)), self.shape.clone(), data))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        let (tape, data) = self.zip(other, "mul", |a, b| a * b)?;
        Ok(finish(
            tape,
            || Op::Mul(id(self), id(other), self.data.clone(), other.data.clone()),
            self.shape.clone(),
            data,
        ))
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        let (tape, data) = self.zip(other, "div", |a, b| a / b)?;
        Ok(finish(
            tape,
            || Op::Div(id(self), id(other), self.data.clone(), other.data.clone()),
            self.shape.clone(),
            data,
        ))
    }

    /// `x · ln(y)` with the convention `0 · ln(·) = 0`.
    pub fn xlogy(&self, y: &Tensor) -> Result<Tensor> {
        let (tape, data) = self.zip(y, "xlogy", |x, y| if x == 0.0 { 0.0 } else { x * y.ln() })?;
        Ok(finish(
            tape,
            || Op::XLogY(id(self), id(y), self.data.clone(), y.data.clone()),
            self.shape.clone(),
            data,
        ))
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let tape = self.node.as_ref().map(|n| n.tape.clone());
        let data = self.data.iter().map(|x| x * c).collect();
        finish(tape, || Op::Scale(id(self), c), self.shape.clone(), data)
    }

    /// Adds a constant to every entry.
    pub fn offset(&self, c: f64) -> Tensor {
        let tape = self.node.as_ref().map(|n| n.tape.clone());
        let data = self.data.iter().map(|x| x + c).collect();
        finish(tape, || Op::Offset(id(self)), self.shape.clone(), data)
    }

    pub fn exp(&self) -> Tensor {
        self.unary(f64::exp, Op::Exp)
    }

    pub fn ln(&self) -> Tensor {
        let tape = self.node.as_ref().map(|n| n.tape.clone());
        let data = self.data.iter().map(|x| x.ln()).collect();
        finish(tape, || Op::Log(id(self), self.data.clone()), self.shape.clone(), data)
    }

    /// Square root; its derivative is taken as zero where the output is zero.
    pub fn sqrt(&self) -> Tensor {
        self.unary(f64::sqrt, Op::Sqrt)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(sigmoid, Op::Sigmoid)
    }

    pub fn recip(&self) -> Tensor {
        self.unary(|x| 1.0 / x, Op::Recip)
    }

    pub fn abs(&self) -> Tensor {
        let tape = self.node.as_ref().map(|n| n.tape.clone());
        let data = self.data.iter().map(|x| x.abs()).collect();
        finish(tape, || Op::Abs(id(self), self.data.clone()), self.shape.clone(), data)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        let tape = self.node.as_ref().map(|n| n.tape.clone());
        let data = self.data.iter().map(|x| x.max(lo).min(hi)).collect();
        finish(tape, || Op::Clamp(id(self), self.data.clone(), lo, hi), self.shape.clone(), data)
    }

    pub fn relu(&self) -> Tensor {
        self.clamp(0.0, f64::INFINITY)
    }

    /// Sigmoid-weighted linear unit `x · σ(x)`.
    pub fn silu(&self) -> Tensor {
        self.mul(&self.sigmoid()).expect("same shape")
    }

    pub fn square(&self) -> Tensor {
        self.mul(self).expect("same shape")
    }

    pub fn sum(&self) -> Tensor {
        let tape = self.node.as_ref().map(|n| n.tape.clone());
        let s = self.data.iter().sum();
        finish(tape, || Op::Sum(id(self)), vec![], vec![s])
    }

    pub fn mean(&self) -> Result<Tensor> {
        if self.is_empty() {
            return Err(Error::contract("mean", "mean of an empty tensor"));
        }
        let tape = self.node.as_ref().map(|n| n.tape.clone());
        let s = self.data.iter().sum::<f64>() / self.len() as f64;
        Ok(finish(tape, || Op::Mean(id(self), self.len()), vec![], vec![s]))
    }

    /// Sum over `axis` of a matrix, keeping the reduced dimension as 1.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        check_axis("sum_axis", axis)?;
        let (rows, cols) = matrix("sum_axis", self)?;
        let (shape, data) = if axis == 0 {
            let mut out = vec![0.0; cols];
            for r in 0..rows {
                for (o, v) in out.iter_mut().zip(&self.data[r * cols..(r + 1) * cols]) {
                    *o += v;
                }
            }
            (vec![1, cols], out)
        } else {
            let out = (0..rows).map(|r| self.data[r * cols..(r + 1) * cols].iter().sum()).collect();
            (vec![rows, 1], out)
        };
        let tape = self.node.as_ref().map(|n| n.tape.clone());
        Ok(finish(tape, || Op::SumAxis { a: id(self), cols, axis }, shape, data))
    }

    /// Row sums of squares: `[r, c] -> [r, 1]`.
    pub fn squared_norm(&self) -> Result<Tensor> {
        let (rows, cols) = matrix("squared_norm", self)?;
        let data = (0..rows)
            .map(|r| self.data[r * cols..(r + 1) * cols].iter().map(|v| v * v).sum())
            .collect();
        let tape = self.node.as_ref().map(|n| n.tape.clone());
        Ok(finish(
            tape,
            || Op::SquaredNorm { a: id(self), av: self.data.clone(), cols },
            vec![rows, 1],
            data,
        ))
    }

    /// Softmax along `axis` of a matrix, max-shifted for stability.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        check_axis("softmax", axis)?;
        let (rows, cols) = matrix("softmax", self)?;
        let mut out = vec![0.0; rows * cols];
        let (outer, inner, stride_o, stride_i) = if axis == 1 { (rows, cols, cols, 1) } else { (cols, rows, 1, cols) };
        for o in 0..outer {
            let at = |i: usize| o * stride_o + i * stride_i;
            let m = (0..inner).map(|i| self.data[at(i)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for i in 0..inner {
                let e = (self.data[at(i)] - m).exp();
                out[at(i)] = e;
                z += e;
            }
            for i in 0..inner {
                out[at(i)] /= z;
            }
        }
        let tape = self.node.as_ref().map(|n| n.tape.clone());
        Ok(finish_with_output(
            tape,
            |out| Op::Softmax { a: id(self), out, rows, cols, axis },
            vec![rows, cols],
            out,
        ))
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = matrix("matmul", self)?;
        let (k2, n) = matrix("matmul", other)?;
        if k != k2 {
            return Err(Error::contract(
                "matmul",
                format!("inner dimensions differ: {:?} x {:?}", self.shape, other.shape),
            ));
        }
        let tape = tape_of("matmul", &[self, other])?;
        let data = matmul_raw(&self.data, &other.data, m, k, n);
        Ok(finish(
            tape,
            || Op::MatMul { a: id(self), b: id(other), av: self.data.clone(), bv: other.data.clone(), m, k, n },
            vec![m, n],
            data,
        ))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = matrix("transpose", self)?;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        let tape = self.node.as_ref().map(|n| n.tape.clone());
        Ok(finish(tape, || Op::Transpose(id(self), r, c), vec![c, r], data))
    }

    /// `a bᵀ` for vectors given as `[n]`, `[n, 1]` or `[1, n]`.
    pub fn outer(&self, other: &Tensor) -> Result<Tensor> {
        let a = self.reshape(&[self.len(), 1])?;
        let b = other.reshape(&[1, other.len()])?;
        a.matmul(&b)
    }

    /// Reinterprets the buffer with a new shape of equal size.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.len() {
            return Err(Error::contract(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
            node: self.node.clone(),
        })
    }

    /// Concatenates matrices along `axis`.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        check_axis("concat", axis)?;
        if parts.is_empty() {
            return Err(Error::contract("concat", "nothing to concatenate"));
        }
        let dims: Vec<(usize, usize)> = parts.iter().map(|t| matrix("concat", t)).collect::<Result<_>>()?;
        let tape = tape_of("concat", parts)?;
        if axis == 1 {
            let rows = dims[0].0;
            if dims.iter().any(|d| d.0 != rows) {
                return Err(Error::contract("concat", format!("row counts differ: {dims:?}")));
            }
            let total: usize = dims.iter().map(|d| d.1).sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for (t, d) in parts.iter().zip(&dims) {
                    data.extend_from_slice(&t.data[r * d.1..(r + 1) * d.1]);
                }
            }
            let spec = parts.iter().zip(&dims).map(|(t, d)| (id(t), d.1)).collect();
            Ok(finish(tape, || Op::Concat { parts: spec, extent: rows, axis }, vec![rows, total], data))
        } else {
            let cols = dims[0].1;
            if dims.iter().any(|d| d.1 != cols) {
                return Err(Error::contract("concat", format!("column counts differ: {dims:?}")));
            }
            let total: usize = dims.iter().map(|d| d.0).sum();
            let mut data = Vec::with_capacity(total * cols);
            for t in parts {
                data.extend_from_slice(&t.data);
            }
            let spec = parts.iter().zip(&dims).map(|(t, d)| (id(t), d.0)).collect();
            Ok(finish(tape, || Op::Concat { parts: spec, extent: cols, axis }, vec![total, cols], data))
        }
    }

    /// `len` rows (axis 0) or columns (axis 1) starting at `start`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        check_axis("slice", axis)?;
        let (rows, cols) = matrix("slice", self)?;
        let extent = if axis == 0 { rows } else { cols };
        if start + len > extent {
            return Err(Error::contract(
                "slice",
                format!("range {start}..{} exceeds axis {axis} of {:?}", start + len, self.shape),
            ));
        }
        let (shape, data) = if axis == 0 {
            (vec![len, cols], self.data[start * cols..(start + len) * cols].to_vec())
        } else {
            let mut d = Vec::with_capacity(rows * len);
            for r in 0..rows {
                d.extend_from_slice(&self.data[r * cols + start..r * cols + start + len]);
            }
            (vec![rows, len], d)
        };
        let tape = self.node.as_ref().map(|n| n.tape.clone());
        Ok(finish(tape, || Op::Slice { a: id(self), cols, axis, start, len }, shape, data))
    }

    /// Expands size-1 dimensions (or a single element) to a `[rows, cols]` shape.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor> {
        let [rows, cols] = *shape else {
            return Err(Error::contract("broadcast", format!("target {shape:?} is not a matrix")));
        };
        let from = if self.len() == 1 {
            (1, 1)
        } else {
            matrix("broadcast", self)?
        };
        if !((from.0 == 1 || from.0 == rows) && (from.1 == 1 || from.1 == cols)) {
            return Err(Error::contract("broadcast", format!("cannot expand {:?} to {shape:?}", self.shape)));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let sr = if from.0 == 1 { 0 } else { r };
            for c in 0..cols {
                let sc = if from.1 == 1 { 0 } else { c };
                data.push(self.data[sr * from.1 + sc]);
            }
        }
        let tape = self.node.as_ref().map(|n| n.tape.clone());
        Ok(finish(tape, || Op::Broadcast { a: id(self), from, to: (rows, cols) }, vec![rows, cols], data))
    }

    /// Selects rows of a matrix: `out[e] = self[index[e]]`.
    pub fn gather_rows(&self, index: &Rc<Vec<usize>>) -> Result<Tensor> {
        let (rows, cols) = matrix("gather_rows", self)?;
        if let Some(bad) = index.iter().find(|&&i| i >= rows) {
            return Err(Error::contract("gather_rows", format!("row {bad} out of {rows}")));
        }
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index.iter() {
            data.extend_from_slice(&self.data[i * cols..(i + 1) * cols]);
        }
        let tape = self.node.as_ref().map(|n| n.tape.clone());
        Ok(finish(
            tape,
            || Op::GatherRows { a: id(self), index: index.clone(), cols },
            vec![index.len(), cols],
            data,
        ))
    }

    /// Sums row `e` into output row `index[e]` of an `[n_rows, cols]` result.
    pub fn scatter_add_rows(&self, index: &Rc<Vec<usize>>, n_rows: usize) -> Result<Tensor> {
        let (rows, cols) = matrix("scatter_add_rows", self)?;
        if rows != index.len() {
            return Err(Error::contract("scatter_add_rows", format!("{rows} rows but {} indices", index.len())));
        }
        if let Some(bad) = index.iter().find(|&&i| i >= n_rows) {
            return Err(Error::contract("scatter_add_rows", format!("target row {bad} out of {n_rows}")));
        }
        let mut data = vec![0.0; n_rows * cols];
        for (e, &i) in index.iter().enumerate() {
            for c in 0..cols {
                data[i * cols + c] += self.data[e * cols + c];
            }
        }
        let tape = self.node.as_ref().map(|n| n.tape.clone());
        Ok(finish(
            tape,
            || Op::ScatterAddRows { a: id(self), index: index.clone(), cols },
            vec![n_rows, cols],
            data,
        ))
    }

    /// Picks flat entries into a column vector `[index.len(), 1]`.
    pub fn gather(&self, index: &Rc<Vec<usize>>) -> Result<Tensor> {
        let len = self.len();
        if let Some(bad) = index.iter().find(|&&i| i >= len) {
            return Err(Error::contract("gather", format!("entry {bad} out of {len}")));
        }
        let data = index.iter().map(|&i| self.data[i]).collect();
        let tape = self.node.as_ref().map(|n| n.tape.clone());
        Ok(finish(tape, || Op::Gather { a: id(self), index: index.clone() }, vec![index.len(), 1], data))
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}
