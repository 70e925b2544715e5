//! Multi-head graph attention with scalar edge features and its exact
//! reverse-mode gradient.
//!
//! Per head `k`, for an edge `j → i` carrying feature `f_ij`:
//!
//! ```text
//! z_i  = W_node h_i
//! g_ij = W_edge f_ij
//! e_ij = LeakyReLU(aᵀ [z_i ‖ z_j ‖ g_ij])
//! α_ij = softmax_j(e_ij)               over the in-neighbours of i
//! ĥ_i  = act( (1/K) Σ_k Σ_j α_ij W_node h_j )
//! ```
//!
//! No self-loops are added. A node without in-neighbours aggregates only
//! itself: `ĥ_i = act((1/K) Σ_k W_node h_i)`.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::TeleconnectionGraph;
use crate::linalg::{axpy, dot, Mat};

pub const DEFAULT_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Sigmoid,
    Identity,
    Elu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    libm::expm1(x)
                }
            }
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[inline]
fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

#[inline]
fn leaky_grad(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

/// Numerically stable softmax, in place.
pub fn softmax(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in logits.iter_mut() {
        *v = libm::exp(*v - max);
        total += *v;
    }
    logits.iter_mut().for_each(|v| *v /= total);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatHead {
    /// `out_dim × in_dim`
    pub w_node: Mat,
    /// `edge_dim`; lifts the scalar edge feature.
    pub w_edge: Vec<f64>,
    /// `2·out_dim + edge_dim`, laid out as `[a_dst ‖ a_src ‖ a_edge]`.
    pub attn: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatWeights {
    pub heads: Vec<GatHead>,
    pub in_dim: usize,
    pub out_dim: usize,
    pub edge_dim: usize,
    pub slope: f64,
    pub activation: Activation,
}

/// Shape of a multi-head layer. Heads are reduced by averaging.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatConfig {
    pub heads: usize,
    pub in_dim: usize,
    pub hidden: usize,
    pub edge_dim: usize,
    pub slope: f64,
    pub activation: Activation,
}

impl GatConfig {
    pub fn new(heads: usize, in_dim: usize, hidden: usize) -> Self {
        Self {
            heads,
            in_dim,
            hidden,
            edge_dim: hidden,
            slope: DEFAULT_SLOPE,
            activation: Activation::Sigmoid,
        }
    }

    /// Independent heads, each tensor uniform in `±1/√fan_in`.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<GatWeights> {
        if self.heads < 1 {
            return Err(Error::InvalidParameter {
                name: "heads",
                reason: "at least one attention head is required".into(),
            });
        }
        if self.in_dim == 0 || self.hidden == 0 || self.edge_dim == 0 {
            return Err(Error::InvalidParameter {
                name: "gat dimensions",
                reason: "dimensions must be positive".into(),
            });
        }
        let mut uniform = |n: usize, fan_in: usize| -> Vec<f64> {
            let bound = 1.0 / libm::sqrt(fan_in as f64);
            (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
        };
        let heads = (0..self.heads)
            .map(|_| {
                let w_node = Mat::from_vec(
                    self.hidden,
                    self.in_dim,
                    uniform(self.hidden * self.in_dim, self.in_dim),
                )
                .expect("sized by construction");
                GatHead {
                    w_node,
                    w_edge: uniform(self.edge_dim, 1),
                    attn: uniform(2 * self.hidden + self.edge_dim, 2 * self.hidden + self.edge_dim),
                }
            })
            .collect();
        Ok(GatWeights {
            heads,
            in_dim: self.in_dim,
            out_dim: self.hidden,
            edge_dim: self.edge_dim,
            slope: self.slope,
            activation: self.activation,
        })
    }
}

impl GatWeights {
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        z
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.heads.len() * 3);
        for h in &self.heads {
            out.push(h.w_node.as_slice());
            out.push(h.w_edge.as_slice());
            out.push(h.attn.as_slice());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.heads.len() * 3);
        for h in &mut self.heads {
            out.push(h.w_node.as_mut_slice());
            out.push(h.w_edge.as_mut_slice());
            out.push(h.attn.as_mut_slice());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads.is_empty() {
            return Err(Error::InvalidParameter {
                name: "heads",
                reason: "at least one attention head is required".into(),
            });
        }
        for h in &self.heads {
            let dims = [
                (h.w_node.rows(), self.out_dim),
                (h.w_node.cols(), self.in_dim),
                (h.w_edge.len(), self.edge_dim),
                (h.attn.len(), 2 * self.out_dim + self.edge_dim),
            ];
            for (found, expected) in dims {
                if found != expected {
                    return Err(Error::DimensionMismatch {
                        what: "gat weights",
                        expected,
                        found,
                    });
                }
            }
        }
        if self.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("gat weights"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TopoEdge {
    pub src: usize,
    pub dst: usize,
    pub feature: f64,
}

/// Index-based view of a graph: edges plus each node's incoming edge ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    pub n_nodes: usize,
    pub edges: Vec<TopoEdge>,
    pub incoming: Vec<Vec<usize>>,
}

impl Topology {
    pub fn new(n_nodes: usize, edges: Vec<TopoEdge>) -> Result<Self> {
        let mut incoming = vec![Vec::new(); n_nodes];
        for (e, edge) in edges.iter().enumerate() {
            if edge.src >= n_nodes || edge.dst >= n_nodes {
                return Err(Error::DimensionMismatch {
                    what: "edge endpoint",
                    expected: n_nodes,
                    found: edge.src.max(edge.dst),
                });
            }
            if !edge.feature.is_finite() {
                return Err(Error::NonFinite("edge feature"));
            }
            incoming[edge.dst].push(e);
        }
        Ok(Self {
            n_nodes,
            edges,
            incoming,
        })
    }

    pub fn from_graph(graph: &TeleconnectionGraph) -> Result<Self> {
        let edges = graph
            .edges
            .iter()
            .map(|e| {
                Ok(TopoEdge {
                    src: graph
                        .node_index(&e.src)
                        .ok_or_else(|| Error::UnknownNode(e.src.clone()))?,
                    dst: graph
                        .node_index(&e.dst)
                        .ok_or_else(|| Error::UnknownNode(e.dst.clone()))?,
                    feature: e.feature,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(graph.nodes.len(), edges)
    }
}

/// Per head, `α` for every edge in topology order.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMatrix {
    pub heads: Vec<Vec<f64>>,
}

impl AttentionMatrix {
    /// `Σ_j α_ij` for node `i` under head `k`; `None` for isolated nodes.
    pub fn row_sum(&self, topo: &Topology, head: usize, node: usize) -> Option<f64> {
        let inc = &topo.incoming[node];
        (!inc.is_empty()).then(|| inc.iter().map(|&e| self.heads[head][e]).sum())
    }
}

/// Everything the backward pass needs from a forward evaluation.
#[derive(Clone, Debug)]
pub struct GatCache {
    x: Mat,
    z: Vec<Mat>,
    g: Vec<Mat>,
    scores: Vec<Vec<f64>>,
    alpha: Vec<Vec<f64>>,
    pre: Mat,
    out: Mat,
}

#[derive(Clone, Debug)]
pub struct GatOutput {
    pub embeddings: Mat,
    pub attention: AttentionMatrix,
    pub cache: GatCache,
}

pub fn gat_forward(x: &Mat, topo: &Topology, w: &GatWeights) -> Result<GatOutput> {
    if x.rows() != topo.n_nodes {
        return Err(Error::DimensionMismatch {
            what: "node feature rows",
            expected: topo.n_nodes,
            found: x.rows(),
        });
    }
    if x.cols() != w.in_dim {
        return Err(Error::DimensionMismatch {
            what: "node feature width",
            expected: w.in_dim,
            found: x.cols(),
        });
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("node features"));
    }
    if w.heads.is_empty() {
        return Err(Error::InvalidParameter {
            name: "heads",
            reason: "at least one attention head is required".into(),
        });
    }

    let n = topo.n_nodes;
    let d = w.out_dim;
    let inv_k = 1.0 / w.heads.len() as f64;
    let mut pre = Mat::zeros(n, d);
    let mut zs = Vec::with_capacity(w.heads.len());
    let mut gs = Vec::with_capacity(w.heads.len());
    let mut all_scores = Vec::with_capacity(w.heads.len());
    let mut all_alpha = Vec::with_capacity(w.heads.len());
    let mut logits = Vec::new();

    for head in &w.heads {
        let z = x.matmul(&head.w_node.transpose());
        let (a_dst, rest) = head.attn.split_at(d);
        let (a_src, a_edge) = rest.split_at(d);
        let dst_part: Vec<f64> = (0..n).map(|i| dot(z.row(i), a_dst)).collect();
        let src_part: Vec<f64> = (0..n).map(|i| dot(z.row(i), a_src)).collect();
        let edge_part = dot(&head.w_edge, a_edge);

        let mut g = Mat::zeros(topo.edges.len(), w.edge_dim);
        let mut scores = vec![0.0; topo.edges.len()];
        for (e, edge) in topo.edges.iter().enumerate() {
            for (gv, we) in g.row_mut(e).iter_mut().zip(&head.w_edge) {
                *gv = we * edge.feature;
            }
            scores[e] = dst_part[edge.dst] + src_part[edge.src] + edge_part * edge.feature;
        }

        let mut alpha = vec![0.0; topo.edges.len()];
        for i in 0..n {
            let inc = &topo.incoming[i];
            if inc.is_empty() {
                axpy(inv_k, z.row(i), pre.row_mut(i));
                continue;
            }
            logits.clear();
            logits.extend(inc.iter().map(|&e| leaky(scores[e], w.slope)));
            softmax(&mut logits);
            for (&e, &a) in inc.iter().zip(&logits) {
                alpha[e] = a;
                let src = topo.edges[e].src;
                axpy(inv_k * alpha[e], z.row(src), pre.row_mut(i));
            }
        }
        zs.push(z);
        gs.push(g);
        all_scores.push(scores);
        all_alpha.push(alpha);
    }

    let mut out = pre.clone();
    out.as_mut_slice().iter_mut().for_each(|v| *v = w.activation.apply(*v));

    Ok(GatOutput {
        embeddings: out.clone(),
        attention: AttentionMatrix {
            heads: all_alpha.clone(),
        },
        cache: GatCache {
            x: x.clone(),
            z: zs,
            g: gs,
            scores: all_scores,
            alpha: all_alpha,
            pre,
            out,
        },
    })
}

/// Gradients of a scalar loss with respect to the weights and the node
/// features, given `d_out = ∂L/∂ĥ`.
pub fn gat_backward(d_out: &Mat, cache: &GatCache, topo: &Topology, w: &GatWeights) -> Result<(GatWeights, Mat)> {
    let n = topo.n_nodes;
    let d = w.out_dim;
    if cache.z.len() != w.heads.len()
        || cache.x.rows() != n
        || cache.x.cols() != w.in_dim
        || cache.pre.shape() != (n, d)
        || cache.alpha.iter().any(|a| a.len() != topo.edges.len())
    {
        return Err(Error::StaleCache);
    }
    if d_out.shape() != (n, d) {
        return Err(Error::DimensionMismatch {
            what: "upstream gradient",
            expected: n * d,
            found: d_out.rows() * d_out.cols(),
        });
    }

    let inv_k = 1.0 / w.heads.len() as f64;
    // ∂L/∂(head aggregate) is the same for every head.
    let mut d_agg = Mat::zeros(n, d);
    for ((da, &g), (&p, &o)) in d_agg
        .as_mut_slice()
        .iter_mut()
        .zip(d_out.as_slice())
        .zip(cache.pre.as_slice().iter().zip(cache.out.as_slice()))
    {
        *da = g * w.activation.derivative(p, o) * inv_k;
    }

    let mut grad = w.zeros_like();
    let mut d_x = Mat::zeros(n, w.in_dim);

    for (k, head) in w.heads.iter().enumerate() {
        let z = &cache.z[k];
        let g = &cache.g[k];
        let scores = &cache.scores[k];
        let alpha = &cache.alpha[k];
        let (a_dst, rest) = head.attn.split_at(d);
        let (a_src, a_edge) = rest.split_at(d);
        let gh = &mut grad.heads[k];
        let mut d_z = Mat::zeros(n, d);
        let mut d_alpha = vec![0.0; topo.edges.len()];

        for i in 0..n {
            let inc = &topo.incoming[i];
            if inc.is_empty() {
                axpy(1.0, d_agg.row(i), d_z.row_mut(i));
                continue;
            }
            let mut weighted = 0.0;
            for &e in inc {
                let src = topo.edges[e].src;
                d_alpha[e] = dot(d_agg.row(i), z.row(src));
                weighted += alpha[e] * d_alpha[e];
                axpy(alpha[e], d_agg.row(i), d_z.row_mut(src));
            }
            for &e in inc {
                let edge = topo.edges[e];
                let d_e = alpha[e] * (d_alpha[e] - weighted);
                let d_s = d_e * leaky_grad(scores[e], w.slope);
                if d_s == 0.0 {
                    continue;
                }
                let (ga_dst, rest) = gh.attn.split_at_mut(d);
                let (ga_src, ga_edge) = rest.split_at_mut(d);
                axpy(d_s, z.row(edge.dst), ga_dst);
                axpy(d_s, z.row(edge.src), ga_src);
                axpy(d_s, g.row(e), ga_edge);
                axpy(d_s, a_dst, d_z.row_mut(edge.dst));
                axpy(d_s, a_src, d_z.row_mut(edge.src));
                axpy(d_s * edge.feature, a_edge, &mut gh.w_edge);
            }
        }

        // z = X W_nodeᵀ
        let gw = gh.w_node.as_mut_slice();
        for i in 0..n {
            let xi = cache.x.row(i);
            for (r, &dz) in d_z.row(i).iter().enumerate() {
                if dz != 0.0 {
                    axpy(dz, xi, &mut gw[r * w.in_dim..(r + 1) * w.in_dim]);
                }
            }
            let dxi = d_x.row_mut(i);
            for (r, &dz) in d_z.row(i).iter().enumerate() {
                if dz != 0.0 {
                    axpy(dz, head.w_node.row(r), dxi);
                }
            }
        }
    }
    Ok((grad, d_x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn weights(heads: usize, in_dim: usize, hidden: usize, seed: u64) -> GatWeights {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GatConfig::new(heads, in_dim, hidden).init(&mut rng).unwrap()
    }

    #[test]
    fn isolated_node_is_self_term() {
        let w = weights(1, 2, 3, 1);
        let x = Mat::from_vec(1, 2, vec![0.3, -1.2]).unwrap();
        let topo = Topology::new(1, vec![]).unwrap();
        let out = gat_forward(&x, &topo, &w).unwrap();
        let z = w.heads[0].w_node.matvec(x.row(0));
        for (o, zi) in out.embeddings.row(0).iter().zip(&z) {
            assert!((o - sigmoid(*zi)).abs() < 1e-15);
        }
        assert!(out.attention.heads[0].is_empty());
    }

    #[test]
    fn single_neighbour_gets_full_attention() {
        let w = weights(2, 3, 4, 7);
        let x = Mat::from_fn(2, 3, |r, c| (r * 3 + c) as f64 * 0.1 - 0.2);
        let topo = Topology::new(
            2,
            vec![TopoEdge {
                src: 1,
                dst: 0,
                feature: 2.5,
            }],
        )
        .unwrap();
        let out = gat_forward(&x, &topo, &w).unwrap();
        for h in 0..2 {
            assert_eq!(out.attention.heads[h][0], 1.0);
        }
    }

    #[test]
    fn symmetric_neighbours_split_evenly() {
        let w = weights(1, 2, 3, 3);
        let x = Mat::from_vec(3, 2, vec![0.5, 0.1, 1.0, -1.0, 1.0, -1.0]).unwrap();
        let topo = Topology::new(
            3,
            vec![
                TopoEdge {
                    src: 1,
                    dst: 0,
                    feature: 0.7,
                },
                TopoEdge {
                    src: 2,
                    dst: 0,
                    feature: 0.7,
                },
            ],
        )
        .unwrap();
        let out = gat_forward(&x, &topo, &w).unwrap();
        assert_eq!(out.attention.heads[0], vec![0.5, 0.5]);
    }

    #[test]
    fn duplicated_heads_match_single_head() {
        let single = weights(1, 3, 4, 11);
        let mut double = single.clone();
        double.heads.push(single.heads[0].clone());
        let x = Mat::from_fn(3, 3, |r, c| libm::sin((r * 3 + c) as f64));
        let topo = Topology::new(
            3,
            vec![
                TopoEdge {
                    src: 1,
                    dst: 0,
                    feature: 0.3,
                },
                TopoEdge {
                    src: 2,
                    dst: 0,
                    feature: 1.3,
                },
            ],
        )
        .unwrap();
        let a = gat_forward(&x, &topo, &single).unwrap().embeddings;
        let b = gat_forward(&x, &topo, &double).unwrap().embeddings;
        for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((u - v).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let w = weights(2, 2, 3, 5);
        let x = Mat::from_fn(3, 2, |r, c| (r + c) as f64 * 0.4);
        let topo = Topology::new(
            3,
            vec![
                TopoEdge {
                    src: 2,
                    dst: 0,
                    feature: 1.0,
                },
                TopoEdge {
                    src: 1,
                    dst: 0,
                    feature: 0.5,
                },
            ],
        )
        .unwrap();
        let out = gat_forward(&x, &topo, &w).unwrap();
        let (g, dx) = gat_backward(&Mat::zeros(3, 3), &out.cache, &topo, &w).unwrap();
        assert!(g.tensors().iter().all(|t| t.iter().all(|v| *v == 0.0)));
        assert!(dx.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mismatched_cache_is_rejected() {
        let w = weights(1, 2, 3, 5);
        let x = Mat::from_fn(2, 2, |r, c| (r + c) as f64);
        let topo = Topology::new(2, vec![]).unwrap();
        let out = gat_forward(&x, &topo, &w).unwrap();
        let bigger = Topology::new(3, vec![]).unwrap();
        assert!(matches!(
            gat_backward(&Mat::zeros(3, 3), &out.cache, &bigger, &w),
            Err(Error::StaleCache)
        ));
        let w2 = weights(2, 2, 3, 5);
        assert!(matches!(
            gat_backward(&Mat::zeros(2, 3), &out.cache, &topo, &w2),
            Err(Error::StaleCache)
        ));
    }

    #[test]
    fn rejects_bad_inputs() {
        let w = weights(1, 2, 3, 5);
        let topo = Topology::new(2, vec![]).unwrap();
        assert!(gat_forward(&Mat::zeros(2, 3), &topo, &w).is_err());
        assert!(gat_forward(&Mat::zeros(3, 2), &topo, &w).is_err());
        let nan = Mat::from_vec(2, 2, vec![0.0, f64::NAN, 0.0, 0.0]).unwrap();
        assert!(gat_forward(&nan, &topo, &w).is_err());
        assert!(GatConfig::new(0, 2, 3).init(&mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
