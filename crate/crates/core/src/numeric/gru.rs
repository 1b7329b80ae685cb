//! Single-layer gated recurrent unit.
//!
//! ```text
//! z  = σ(x·W_z + h·U_z + b_z)
//! r  = σ(x·W_r + h·U_r + b_r)
//! h̃  = tanh(x·W_h + (r ⊙ h)·U_h + b_h)
//! h' = (1 − z) ⊙ h + z ⊙ h̃
//! ```

use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Scalar;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GruParams {
    pub input: usize,
    pub hidden: usize,
    pub w_z: ParamId,
    pub w_r: ParamId,
    pub w_h: ParamId,
    pub u_z: ParamId,
    pub u_r: ParamId,
    pub u_h: ParamId,
    pub b_z: ParamId,
    pub b_r: ParamId,
    pub b_h: ParamId,
}

/// The cell's parameters as loaded onto one tape.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    input: usize,
    hidden: usize,
    w_z: Var,
    w_r: Var,
    w_h: Var,
    u_z: Var,
    u_r: Var,
    u_h: Var,
    b_z: Var,
    b_r: Var,
    b_h: Var,
}

impl GruParams {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(GruParams {
            input,
            hidden,
            w_z: store.insert_glorot(format!("{prefix}.w_z"), input, hidden, rng)?,
            w_r: store.insert_glorot(format!("{prefix}.w_r"), input, hidden, rng)?,
            w_h: store.insert_glorot(format!("{prefix}.w_h"), input, hidden, rng)?,
            u_z: store.insert_glorot(format!("{prefix}.u_z"), hidden, hidden, rng)?,
            u_r: store.insert_glorot(format!("{prefix}.u_r"), hidden, hidden, rng)?,
            u_h: store.insert_glorot(format!("{prefix}.u_h"), hidden, hidden, rng)?,
            b_z: store.insert_zeros(format!("{prefix}.b_z"), 1, hidden)?,
            b_r: store.insert_zeros(format!("{prefix}.b_r"), 1, hidden)?,
            b_h: store.insert_zeros(format!("{prefix}.b_h"), 1, hidden)?,
        })
    }

    pub fn load<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>) -> Result<GruVars> {
        let (d, h) = (self.input, self.hidden);
        let expect = [
            (self.w_z, (d, h)),
            (self.w_r, (d, h)),
            (self.w_h, (d, h)),
            (self.u_z, (h, h)),
            (self.u_r, (h, h)),
            (self.u_h, (h, h)),
            (self.b_z, (1, h)),
            (self.b_r, (1, h)),
            (self.b_h, (1, h)),
        ];
        for (id, shape) in expect {
            let found = store.value(id).shape();
            if found != shape {
                return Err(Error::TensorShape {
                    name: store.name(id).to_string(),
                    expected: shape,
                    found,
                });
            }
        }
        Ok(GruVars {
            input: d,
            hidden: h,
            w_z: tape.param(store, self.w_z),
            w_r: tape.param(store, self.w_r),
            w_h: tape.param(store, self.w_h),
            u_z: tape.param(store, self.u_z),
            u_r: tape.param(store, self.u_r),
            u_h: tape.param(store, self.u_h),
            b_z: tape.param(store, self.b_z),
            b_r: tape.param(store, self.b_r),
            b_h: tape.param(store, self.b_h),
        })
    }
}

/// One step for a batch of rows: `x` is `[n × input]`, `h` is `[n × hidden]`.
pub fn gru_cell<T: Scalar>(tape: &mut Tape<T>, x: Var, h: Var, p: &GruVars) -> Result<Var> {
    let (xs, hs) = (tape.shape(x), tape.shape(h));
    if xs.1 != p.input || hs.1 != p.hidden || xs.0 != hs.0 {
        return Err(Error::shape("gru_cell", xs, hs));
    }
    let gate = |tape: &mut Tape<T>, w: Var, u: Var, b: Var, hin: Var| -> Result<Var> {
        let xw = tape.matmul(x, w)?;
        let hu = tape.matmul(hin, u)?;
        let s = tape.add(xw, hu)?;
        tape.add_row(s, b)
    };
    let z = gate(tape, p.w_z, p.u_z, p.b_z, h)?;
    let z = tape.sigmoid(z);
    let r = gate(tape, p.w_r, p.u_r, p.b_r, h)?;
    let r = tape.sigmoid(r);
    let rh = tape.mul(r, h)?;
    let cand = gate(tape, p.w_h, p.u_h, p.b_h, rh)?;
    let cand = tape.tanh(cand);
    // h + z ⊙ (h̃ − h) == (1 − z) ⊙ h + z ⊙ h̃
    let delta = tape.sub(cand, h)?;
    let step = tape.mul(z, delta)?;
    tape.add(h, step)
}

/// Runs the cell over a sequence stored as `[n × steps·input]` (step-major
/// column blocks) from a zero state and returns the final hidden state.
pub fn gru_sequence<T: Scalar>(tape: &mut Tape<T>, seq: Var, steps: usize, p: &GruVars) -> Result<Var> {
    let (n, width) = tape.shape(seq);
    if width != steps * p.input {
        return Err(Error::shape("gru_sequence", (n, width), (steps, p.input)));
    }
    let mut h = tape.constant(super::tensor::Tensor::zeros(n, p.hidden));
    for t in 0..steps {
        let x = tape.slice_cols(seq, t * p.input, p.input)?;
        h = gru_cell(tape, x, h, p)?;
    }
    Ok(h)
}
