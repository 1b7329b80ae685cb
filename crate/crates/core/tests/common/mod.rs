//! Independent per-edge loop transcriptions of the attention operator and
//! random small graphs to compare against.
#![allow(dead_code)]

use std::sync::Arc;

use hetscene::gnn::{EdgeGatParams, HetLayerParams};
use hetscene::graph::{GraphBuilder, HeteroGraph, NodeType, NodeTypeDef, RelationDef, RelationId, Schema};
use hetscene::numeric::{ParamStore, Tensor};
use rand::Rng;

pub mod scenes;

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &Tensor<f64>) -> Mat {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

/// `x · W` for a row vector `x` and `W` given as rows.
fn vecmat(x: &[f64], w: &Mat) -> Vec<f64> {
    let cols = w.first().map_or(0, Vec::len);
    let mut out = vec![0.0; cols];
    for (xi, row) in x.iter().zip(w) {
        for (o, wv) in out.iter_mut().zip(row) {
            *o += xi * wv;
        }
    }
    out
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.2 * x
    }
}

pub struct RawGat {
    pub heads: usize,
    pub theta_self: Mat,
    pub theta_neigh: Mat,
    pub theta_edge: Option<Mat>,
    pub attn_dst: Vec<f64>,
    pub attn_src: Vec<f64>,
    pub attn_edge: Option<Vec<f64>>,
}

impl RawGat {
    pub fn from_store(store: &ParamStore<f64>, p: &EdgeGatParams) -> Self {
        RawGat {
            heads: p.heads,
            theta_self: to_mat(store.value(p.theta_self)),
            theta_neigh: to_mat(store.value(p.theta_neigh)),
            theta_edge: p.theta_edge.map(|id| to_mat(store.value(id))),
            attn_dst: store.value(p.attn_dst).data().to_vec(),
            attn_src: store.value(p.attn_src).data().to_vec(),
            attn_edge: p.attn_edge.map(|id| store.value(id).data().to_vec()),
        }
    }

    fn out_dim(&self) -> usize {
        self.theta_self[0].len()
    }
}

/// Per-edge attention `alpha[e][k]` computed with explicit loops.
pub fn oracle_attention(raw: &RawGat, src: &Mat, dst: &Mat, edge: Option<&Mat>, edges: &[(usize, usize)]) -> Mat {
    let width = raw.out_dim() / raw.heads;
    let mut alpha = vec![vec![0.0; raw.heads]; edges.len()];
    for k in 0..raw.heads {
        let block = k * width..(k + 1) * width;
        let logit = |e: usize| -> f64 {
            let (j, i) = edges[e];
            let pi = vecmat(&dst[i], &raw.theta_neigh);
            let pj = vecmat(&src[j], &raw.theta_neigh);
            let mut s = 0.0;
            for c in block.clone() {
                s += raw.attn_dst[c] * pi[c] + raw.attn_src[c] * pj[c];
            }
            if let (Some(we), Some(ae), Some(ef)) = (&raw.theta_edge, &raw.attn_edge, edge) {
                let pe = vecmat(&ef[e], we);
                for c in block.clone() {
                    s += ae[c] * pe[c];
                }
            }
            leaky(s)
        };
        for e in 0..edges.len() {
            let i = edges[e].1;
            let denom: f64 = (0..edges.len()).filter(|&f| edges[f].1 == i).map(|f| logit(f).exp()).sum();
            alpha[e][k] = logit(e).exp() / denom;
        }
    }
    alpha
}

/// Relation output for every destination node, computed with explicit loops.
pub fn oracle_edge_gat(
    raw: &RawGat,
    src: &Mat,
    dst: &Mat,
    edge: Option<&Mat>,
    edges: &[(usize, usize)],
) -> Mat {
    let alpha = oracle_attention(raw, src, dst, edge, edges);
    let width = raw.out_dim() / raw.heads;
    dst.iter()
        .enumerate()
        .map(|(i, vi)| {
            let mut out = vecmat(vi, &raw.theta_self);
            for (e, &(j, d)) in edges.iter().enumerate() {
                if d != i {
                    continue;
                }
                let mut msg = vecmat(&src[j], &raw.theta_neigh);
                if let (Some(we), Some(ef)) = (&raw.theta_edge, edge) {
                    for (m, p) in msg.iter_mut().zip(vecmat(&ef[e], we)) {
                        *m += p;
                    }
                }
                for (c, m) in msg.iter().enumerate() {
                    out[c] += alpha[e][c / width] * m;
                }
            }
            out
        })
        .collect()
}

pub fn relu_sum(parts: &[Mat]) -> Mat {
    let mut out = parts[0].clone();
    for p in &parts[1..] {
        for (orow, prow) in out.iter_mut().zip(p) {
            for (o, v) in orow.iter_mut().zip(prow) {
                *o += v;
            }
        }
    }
    for row in &mut out {
        for v in row.iter_mut() {
            *v = v.max(0.0);
        }
    }
    out
}

pub fn edge_list(g: &HeteroGraph, r: RelationId) -> Vec<(usize, usize)> {
    let e = g.edges(r);
    e.src.iter().copied().zip(e.dst.iter().copied()).collect()
}

/// Two node types `a`, `b` (feature width `dim`) and relations
/// `a→b`, `b→b`, `a→a`, each with `edge_dim` edge features.
pub fn toy_schema(dim: usize, edge_dim: usize) -> Arc<Schema> {
    let t = |n: &str| NodeTypeDef {
        name: n.into(),
        feature_dim: dim,
    };
    let r = |n: &str, s: usize, d: usize| RelationDef {
        name: n.into(),
        src: NodeType(s),
        dst: NodeType(d),
        edge_dim,
    };
    Arc::new(Schema::new(vec![t("a"), t("b")], vec![r("ab", 0, 1), r("bb", 1, 1), r("aa", 0, 0)]).unwrap())
}

/// Random graph over [`toy_schema`] with at most `max_nodes` nodes in total.
pub fn random_graph<R: Rng>(schema: &Arc<Schema>, max_nodes: usize, max_edges: usize, rng: &mut R) -> HeteroGraph {
    let dim = schema.node_types()[0].feature_dim;
    let edge_dim = schema.relations()[0].edge_dim;
    let na = rng.gen_range(1..max_nodes);
    let nb = rng.gen_range(1..=(max_nodes - na));
    let mut b = GraphBuilder::new(schema.clone());
    for _ in 0..na {
        let f: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        b.add_node(NodeType(0), &f).unwrap();
    }
    for _ in 0..nb {
        let f: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        b.add_node(NodeType(1), &f).unwrap();
    }
    for (r, (ns, nd)) in [(na, nb), (nb, nb), (na, na)].into_iter().enumerate() {
        for _ in 0..rng.gen_range(0..=max_edges) {
            let f: Vec<f64> = (0..edge_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            b.add_edge(RelationId(r), rng.gen_range(0..ns), rng.gen_range(0..nd), &f)
                .unwrap();
        }
    }
    b.build().unwrap()
}

pub fn layer_into_b(store: &mut ParamStore<f64>, dim: usize, edge_dim: usize, out: usize, heads: usize, rng: &mut impl Rng) -> HetLayerParams {
    let mut relations = std::collections::BTreeMap::new();
    for r in [0usize, 1] {
        relations.insert(
            RelationId(r),
            EdgeGatParams::new(store, &format!("rel{r}"), dim, Some(edge_dim), out, heads, rng).unwrap(),
        );
    }
    HetLayerParams {
        target: NodeType(1),
        relations,
    }
}
