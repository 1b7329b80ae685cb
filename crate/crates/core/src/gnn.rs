//! Edge-featured graph attention per relation, and the heterogeneous layer
//! that sums relation outputs into one node type.
//!
//! For an edge `j → i` of relation `r` and head `k`:
//!
//! ```text
//! logit   = LeakyReLU(a_kᵀ [Θn_k·v_i ‖ Θn_k·v_j ‖ Θe_k·e_ji])
//! α       = softmax of the logits over all r-edges entering i
//! v'_i,r  = Θs·v_i + ‖_k Σ_j α (Θn_k·v_j + Θe_k·e_ji)
//! v'_i    = ReLU(Σ_r v'_i,r)
//! ```
//!
//! The destination is projected with the neighbor matrix `Θn`, not `Θs`.
//! Nodes without incoming edges keep only the `Θs·v_i` term. No biases.
//! Head projections are stored side by side: `Θn` is `[d_in × K·w]` and head
//! `k` owns columns `k·w..(k+1)·w`; the attention vector is split into its
//! destination, source and edge thirds, each `[1 × K·w]`.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{HeteroGraph, NodeType, RelationId};
use crate::numeric::{glorot, ParamId, ParamStore, Scalar, Tape, Var, LEAKY_SLOPE};

/// Default number of attention heads.
pub const DEFAULT_HEADS: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeGatParams {
    pub heads: usize,
    pub in_dim: usize,
    /// `None` when the relation ignores edge features.
    pub edge_dim: Option<usize>,
    pub out_dim: usize,
    pub theta_self: ParamId,
    pub theta_neigh: ParamId,
    pub theta_edge: Option<ParamId>,
    pub attn_dst: ParamId,
    pub attn_src: ParamId,
    pub attn_edge: Option<ParamId>,
}

impl EdgeGatParams {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        in_dim: usize,
        edge_dim: Option<usize>,
        out_dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || !out_dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "output width {out_dim} is not divisible into {heads} heads"
            )));
        }
        let w = out_dim / heads;
        let attn = |store: &mut ParamStore<T>, name: String, rng: &mut R| {
            store.insert(name, glorot(1, out_dim, 3 * w, 1, rng))
        };
        let theta_self = store.insert_glorot(format!("{prefix}.theta_self"), in_dim, out_dim, rng)?;
        let theta_neigh = store.insert(format!("{prefix}.theta_neigh"), glorot(in_dim, out_dim, in_dim, w, rng))?;
        let theta_edge = match edge_dim {
            Some(d) => Some(store.insert(format!("{prefix}.theta_edge"), glorot(d, out_dim, d, w, rng))?),
            None => None,
        };
        let attn_dst = attn(store, format!("{prefix}.attn_dst"), rng)?;
        let attn_src = attn(store, format!("{prefix}.attn_src"), rng)?;
        let attn_edge = match edge_dim {
            Some(_) => Some(attn(store, format!("{prefix}.attn_edge"), rng)?),
            None => None,
        };
        Ok(EdgeGatParams {
            heads,
            in_dim,
            edge_dim,
            out_dim,
            theta_self,
            theta_neigh,
            theta_edge,
            attn_dst,
            attn_src,
            attn_edge,
        })
    }
}

/// Features entering one relation: source nodes, destination nodes and,
/// optionally, edges.
#[derive(Clone, Copy, Debug)]
pub struct RelationFeatures {
    pub src: Var,
    pub dst: Var,
    pub edge: Option<Var>,
}

struct Attended {
    alpha: Var,
    messages: Var,
}

fn check_dims<T: Scalar>(
    tape: &Tape<T>,
    p: &EdgeGatParams,
    g: &HeteroGraph,
    r: RelationId,
    f: &RelationFeatures,
) -> Result<()> {
    let s = g.schema();
    let n_src = g.node_count(s.dom(r));
    let n_dst = g.node_count(s.ran(r));
    if tape.shape(f.src) != (n_src, p.in_dim) {
        return Err(Error::shape("edge_gat source features", tape.shape(f.src), (n_src, p.in_dim)));
    }
    if tape.shape(f.dst) != (n_dst, p.in_dim) {
        return Err(Error::shape("edge_gat destination features", tape.shape(f.dst), (n_dst, p.in_dim)));
    }
    match (p.edge_dim, f.edge) {
        (Some(d), Some(e)) => {
            let expect = (g.edge_count(r), d);
            if tape.shape(e) != expect {
                return Err(Error::shape("edge_gat edge features", tape.shape(e), expect));
            }
        }
        (None, _) => {}
        (Some(d), None) => {
            return Err(Error::shape("edge_gat edge features", (0, 0), (g.edge_count(r), d)));
        }
    }
    Ok(())
}

fn attend<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    p: &EdgeGatParams,
    g: &HeteroGraph,
    r: RelationId,
    f: &RelationFeatures,
) -> Result<Attended> {
    check_dims(tape, p, g, r, f)?;
    let edges = g.edges(r);
    let n_dst = g.node_count(g.schema().ran(r));
    let w_n = tape.param(store, p.theta_neigh);
    let a_dst = tape.param(store, p.attn_dst);
    let a_src = tape.param(store, p.attn_src);

    let proj_src = tape.matmul(f.src, w_n)?;
    let proj_dst = if f.dst == f.src {
        proj_src
    } else {
        tape.matmul(f.dst, w_n)?
    };
    let score_dst = tape.head_dot(proj_dst, a_dst, p.heads)?;
    let score_src = tape.head_dot(proj_src, a_src, p.heads)?;
    let per_edge_dst = tape.gather_rows(score_dst, edges.dst.clone())?;
    let per_edge_src = tape.gather_rows(score_src, edges.src.clone())?;
    let mut logits = tape.add(per_edge_dst, per_edge_src)?;
    let mut messages = tape.gather_rows(proj_src, edges.src.clone())?;

    if let (Some(w_id), Some(a_id), Some(e)) = (p.theta_edge, p.attn_edge, f.edge) {
        let w_e = tape.param(store, w_id);
        let a_e = tape.param(store, a_id);
        let proj_e = tape.matmul(e, w_e)?;
        let score_e = tape.head_dot(proj_e, a_e, p.heads)?;
        logits = tape.add(logits, score_e)?;
        messages = tape.add(messages, proj_e)?;
    }
    let logits = tape.leaky_relu(logits, T::from_f64(LEAKY_SLOPE))?;
    let alpha = tape.segment_softmax(logits, edges.dst.clone(), n_dst)?;
    Ok(Attended { alpha, messages })
}

/// Attention coefficients `[E_r × K]` of relation `r`.
pub fn edge_gat_attention<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    p: &EdgeGatParams,
    g: &HeteroGraph,
    r: RelationId,
    f: &RelationFeatures,
) -> Result<Var> {
    Ok(attend(tape, store, p, g, r, f)?.alpha)
}

/// Updated destination features `[n_ran(r) × out_dim]` of relation `r`.
pub fn edge_gat_forward<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    p: &EdgeGatParams,
    g: &HeteroGraph,
    r: RelationId,
    f: &RelationFeatures,
) -> Result<Var> {
    let Attended { alpha, messages } = attend(tape, store, p, g, r, f)?;
    let edges = g.edges(r);
    let n_dst = g.node_count(g.schema().ran(r));
    let weighted = tape.head_scale(messages, alpha)?;
    let aggregated = tape.scatter_add_rows(weighted, edges.dst.clone(), n_dst)?;
    let w_s = tape.param(store, p.theta_self);
    let residual = tape.matmul(f.dst, w_s)?;
    tape.add(residual, aggregated)
}

/// One heterogeneous layer: the relations it reads and the node type it updates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HetLayerParams {
    pub target: NodeType,
    pub relations: BTreeMap<RelationId, EdgeGatParams>,
}

impl HetLayerParams {
    pub fn out_dim(&self) -> Option<usize> {
        self.relations.values().next().map(|p| p.out_dim)
    }

    fn check(&self, g: &HeteroGraph) -> Result<()> {
        if self.relations.is_empty() {
            return Err(Error::Config("heterogeneous layer without active relations".into()));
        }
        let out = self.out_dim().unwrap_or(0);
        for (&r, p) in &self.relations {
            let def = g.schema().relation_def(r);
            if def.dst != self.target {
                return Err(Error::Config(format!(
                    "relation `{}` does not point into the updated node type",
                    def.name
                )));
            }
            if p.out_dim != out {
                return Err(Error::Config(format!(
                    "relation `{}` has output width {} but the layer uses {out}",
                    def.name, p.out_dim
                )));
            }
        }
        Ok(())
    }
}

/// `ReLU(Σ_r EdgeGAT_r)` for the layer's target type.
///
/// `nodes[t]` holds the current features of node type `t`; `edges[r]` the
/// (encoded) edge features of relation `r`, if any. Relations are summed in
/// ascending id order.
pub fn het_layer_forward<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    layer: &HetLayerParams,
    g: &HeteroGraph,
    nodes: &[Var],
    edges: &[Option<Var>],
) -> Result<Var> {
    layer.check(g)?;
    let mut parts = Vec::with_capacity(layer.relations.len());
    for (&r, p) in &layer.relations {
        let s = g.schema();
        let f = RelationFeatures {
            src: nodes[s.dom(r).0],
            dst: nodes[s.ran(r).0],
            edge: if p.edge_dim.is_some() { edges[r.0] } else { None },
        };
        parts.push(edge_gat_forward(tape, store, p, g, r, &f)?);
    }
    let sum = tape.add_all(&parts)?;
    Ok(tape.relu(sum))
}
