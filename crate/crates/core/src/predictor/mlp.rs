//! Two-layer perceptrons over bound parameters.

use crate::autodiff::{Bound, ParameterStore, Tensor};
use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// `x → σ(x W1 + b1) W2 + b2`, with σ = SiLU, optionally followed by another SiLU.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    pub prefix: String,
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub silu_output: bool,
}

impl Mlp {
    pub fn new(prefix: impl Into<String>, input: usize, hidden: usize, output: usize, silu_output: bool) -> Self {
        Self {
            prefix: prefix.into(),
            input,
            hidden,
            output,
            silu_output,
        }
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    /// Gaussian weights scaled by `1/√fan_in`, zero biases. A zero readout
    /// leaves the second layer at zero so the perceptron starts as the zero map.
    pub fn init<R: Rng>(&self, store: &mut ParameterStore, rng: &mut R, zero_readout: bool) -> Result<()> {
        let gauss = |fan_in: usize, n: usize, rng: &mut R| -> Vec<f64> {
            let d = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("valid std");
            (0..n).map(|_| d.sample(rng)).collect()
        };
        store.insert(self.name("w1"), &[self.input, self.hidden], gauss(self.input, self.input * self.hidden, rng))?;
        store.insert(self.name("b1"), &[1, self.hidden], vec![0.0; self.hidden])?;
        let w2 = if zero_readout {
            vec![0.0; self.hidden * self.output]
        } else {
            gauss(self.hidden, self.hidden * self.output, rng)
        };
        store.insert(self.name("w2"), &[self.hidden, self.output], w2)?;
        store.insert(self.name("b2"), &[1, self.output], vec![0.0; self.output])?;
        Ok(())
    }

    /// Applies the perceptron to every row of `x`.
    pub fn forward(&self, params: &Bound, x: &Tensor) -> Result<Tensor> {
        let rows = x.rows();
        if x.shape() != [rows, self.input] {
            return Err(Error::contract(
                "Mlp::forward",
                format!("{}: input shape {:?}, expected [_, {}]", self.prefix, x.shape(), self.input),
            ));
        }
        let h = x
            .matmul(params.get(&self.name("w1"))?)?
            .add(&params.get(&self.name("b1"))?.broadcast_to(&[rows, self.hidden])?)?
            .silu();
        let y = h
            .matmul(params.get(&self.name("w2"))?)?
            .add(&params.get(&self.name("b2"))?.broadcast_to(&[rows, self.output])?)?;
        Ok(if self.silu_output { y.silu() } else { y })
    }
}
