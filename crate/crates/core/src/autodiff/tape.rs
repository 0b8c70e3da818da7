//! Tape and tensor storage for reverse-mode differentiation.

use crate::error::{Error, Result};
use std::cell::{Cell, RefCell};
use std::collections::BTreeMap;
use std::fmt;
use std::rc::Rc;

pub(crate) type Buf = Rc<Vec<f64>>;

/// Dense row-major `f64` tensor, optionally tracked by a [`Tape`].
#[derive(Clone)]
pub struct Tensor {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Buf,
    pub(crate) node: Option<NodeRef>,
}

#[derive(Clone)]
pub(crate) struct NodeRef {
    pub(crate) tape: Rc<TapeInner>,
    pub(crate) id: usize,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .field("node", &self.node.as_ref().map(|n| n.id))
            .finish()
    }
}

impl Tensor {
    /// An untracked tensor. Panics if `values.len()` disagrees with `shape`.
    pub fn constant(values: Vec<f64>, shape: &[usize]) -> Self {
        Self::try_constant(values, shape).expect("shape must match buffer length")
    }

    pub fn try_constant(values: Vec<f64>, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::contract(
                "Tensor::constant",
                format!("shape {shape:?} needs {n} values, got {}", values.len()),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: Rc::new(values),
            node: None,
        })
    }

    pub fn scalar(x: f64) -> Self {
        Self::constant(vec![x], &[])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::constant(vec![0.0; shape.iter().product()], shape)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::contract("Tensor::item", format!("shape {:?} is not scalar", self.shape)));
        }
        Ok(self.data[0])
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// Same values with tracking removed.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            node: None,
        }
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Recorded operation. Parents are node ids on the same tape; `None` marks a constant operand.
pub(crate) enum Op {
    Leaf,
    Add(Option<usize>, Option<usize>),
    Sub(Option<usize>, Option<usize>),
    Mul(Option<usize>, Option<usize>, Buf, Buf),
    Div(Option<usize>, Option<usize>, Buf, Buf),
    Scale(Option<usize>, f64),
    Offset(Option<usize>),
    MatMul {
        a: Option<usize>,
        b: Option<usize>,
        av: Buf,
        bv: Buf,
        m: usize,
        k: usize,
        n: usize,
    },
    Transpose(Option<usize>, usize, usize),
    Sum(Option<usize>),
    Mean(Option<usize>, usize),
    SumAxis {
        a: Option<usize>,
        cols: usize,
        axis: usize,
    },
    Exp(Option<usize>, Buf),
    Log(Option<usize>, Buf),
    Sqrt(Option<usize>, Buf),
    Sigmoid(Option<usize>, Buf),
    Recip(Option<usize>, Buf),
    Abs(Option<usize>, Buf),
    Clamp(Option<usize>, Buf, f64, f64),
    Softmax {
        a: Option<usize>,
        out: Buf,
        rows: usize,
        cols: usize,
        axis: usize,
    },
    SquaredNorm {
        a: Option<usize>,
        av: Buf,
        cols: usize,
    },
    Concat {
        /// `(parent, width along axis)` per part.
        parts: Vec<(Option<usize>, usize)>,
        /// Size of the shared (non-concatenated) dimension.
        extent: usize,
        axis: usize,
    },
    Slice {
        a: Option<usize>,
        cols: usize,
        axis: usize,
        start: usize,
        len: usize,
    },
    Broadcast {
        a: Option<usize>,
        from: (usize, usize),
        to: (usize, usize),
    },
    GatherRows {
        a: Option<usize>,
        index: Rc<Vec<usize>>,
        cols: usize,
    },
    ScatterAddRows {
        a: Option<usize>,
        index: Rc<Vec<usize>>,
        cols: usize,
    },
    Gather {
        a: Option<usize>,
        index: Rc<Vec<usize>>,
    },
    XLogY(Option<usize>, Option<usize>, Buf, Buf),
}

pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) len: usize,
    pub(crate) name: Option<String>,
}

pub(crate) struct TapeInner {
    pub(crate) nodes: RefCell<Vec<Node>>,
    pub(crate) consumed: Cell<bool>,
}

/// Operation recorder for one forward pass.
///
/// Every tracked tensor derived from this tape's leaves is appended in
/// execution order, so recording order is a topological order. A tape
/// supports exactly one [`Tape::backward`] call.
#[derive(Clone)]
pub struct Tape {
    inner: Rc<TapeInner>,
    recording: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_recording(true)
    }

    /// A tape that never records: leaves come back as plain constants.
    pub fn inference() -> Self {
        Self::with_recording(false)
    }

    pub fn with_recording(recording: bool) -> Self {
        Self {
            inner: Rc::new(TapeInner {
                nodes: RefCell::new(Vec::new()),
                consumed: Cell::new(false),
            }),
            recording,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A named differentiable input. Untracked when recording is off.
    pub fn leaf(&self, name: &str, values: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        let t = Tensor::try_constant(values, shape)?;
        if !self.recording {
            return Ok(t);
        }
        let id = push_node(&self.inner, Op::Leaf, t.len(), Some(name.to_string()));
        Ok(Tensor {
            node: Some(NodeRef {
                tape: self.inner.clone(),
                id,
            }),
            ..t
        })
    }

    /// Reverse sweep from a scalar `loss`; returns gradients for every named leaf.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients> {
        if self.inner.consumed.replace(true) {
            return Err(Error::contract("Tape::backward", "tape already consumed by a backward pass"));
        }
        if loss.len() != 1 {
            return Err(Error::contract("Tape::backward", format!("loss shape {:?} is not scalar", loss.shape)));
        }
        let nodes = self.inner.nodes.borrow();
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        if let Some(n) = &loss.node {
            if !Rc::ptr_eq(&n.tape, &self.inner) {
                return Err(Error::contract("Tape::backward", "loss was recorded on a different tape"));
            }
            grads[n.id] = Some(vec![1.0]);
            for id in (0..=n.id).rev() {
                let Some(g) = grads[id].take() else { continue };
                let node = &nodes[id];
                if matches!(node.op, Op::Leaf) {
                    grads[id] = Some(g);
                    continue;
                }
                super::backprop::propagate(&node.op, &g, &mut grads, &nodes);
            }
        }
        let mut by_name = BTreeMap::new();
        for (id, node) in nodes.iter().enumerate() {
            if let Some(name) = &node.name {
                let g = grads[id].take().unwrap_or_else(|| vec![0.0; node.len]);
                by_name.insert(name.clone(), g);
            }
        }
        Ok(Gradients { by_name })
    }
}

pub(crate) fn push_node(inner: &Rc<TapeInner>, op: Op, len: usize, name: Option<String>) -> usize {
    let mut nodes = inner.nodes.borrow_mut();
    nodes.push(Node { op, len, name });
    nodes.len() - 1
}

/// Gradients keyed by leaf name.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    pub(crate) by_name: BTreeMap<String, Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.by_name.get(name).map(|v| v.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<f64>)> {
        self.by_name.iter()
    }

    /// Euclidean norm over every gradient entry.
    pub fn global_norm(&self) -> f64 {
        self.by_name
            .values()
            .flat_map(|v| v.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Adds `scale · other` into this map, inserting missing names.
    pub fn accumulate(&mut self, other: &Gradients, scale: f64) {
        for (name, g) in &other.by_name {
            let slot = self
                .by_name
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            for (s, v) in slot.iter_mut().zip(g) {
                *s += scale * v;
            }
        }
    }
}
