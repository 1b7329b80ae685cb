//! Dense tensors, the recording tape, and the differentiable building blocks
//! the graph layers are made of.

pub mod gradcheck;
pub mod gru;
pub mod linear;
pub mod params;
pub mod segment;
pub mod tape;
pub mod tensor;

pub use gru::{gru_cell, gru_sequence, GruParams, GruVars};
pub use linear::Linear;
pub use params::{glorot, ParamId, ParamStore};
pub use segment::segment_softmax;
pub use tape::{softplus, Gradients, Tape, Var};
pub use tensor::{Scalar, Tensor};

/// Negative slope of the attention LeakyReLU.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Deterministic generator used for initialization, dropout and shuffling.
pub type Rng = rand_chacha::ChaCha8Rng;
