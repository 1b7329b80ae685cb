//! Affine layer `x·W + b`.

use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Scalar;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Linear {
    pub input: usize,
    pub output: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    /// Glorot weights, zero bias; parameters are named `{prefix}.w` and `{prefix}.b`.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Linear {
            input,
            output,
            weight: store.insert_glorot(format!("{prefix}.w"), input, output, rng)?,
            bias: store.insert_zeros(format!("{prefix}.b"), 1, output)?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let xw = tape.matmul(x, w)?;
        tape.add_row(xw, b)
    }
}
