//! Heterogeneous graph attention with edge features.
//!
//! Typed graphs ([`graph`]) are encoded by cascaded relation-wise attention
//! layers ([`gnn`]) built on a small reverse-mode tensor engine ([`numeric`]).
//! Two applications sit on top: traffic scene graphs ([`scene`], [`encoder`],
//! [`synth`]) and knowledge-graph node classification ([`kg`]).

pub mod checks;
pub mod encoder;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod kg;
pub mod numeric;
pub mod scene;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
