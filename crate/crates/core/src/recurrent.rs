//! Attention-gated LSTM over a static teleconnection graph.
//!
//! Each gate is its own graph-attention layer applied to the step input:
//!
//! ```text
//! f_t = σ(GAT_f(X_t) + h_{t−1} + b_f)
//! i_t = σ(GAT_i(X_t) + h_{t−1} + b_i)
//! c̃_t = tanh(GAT_c(X_t) + h_{t−1} + b_c)
//! o_t = σ(GAT_o(X_t) + h_{t−1} + b_o)
//! c_t = f_t ⊙ c_{t−1} + i_t ⊙ c̃_t
//! h_t = o_t ⊙ tanh(c_t)
//! ```
//!
//! With the recurrent projection enabled, `h_{t−1}` is replaced by
//! `h_{t−1} R_gᵀ`. Layers stack by feeding one layer's `h_t` to the next as
//! `X_t`. A shared affine readout maps the last `h` of every station node
//! to the forecast horizon.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::calendar::YearMonth;
use crate::error::{Error, Result};
use crate::gat::{gat_backward, gat_forward, sigmoid, Activation, GatCache, GatConfig, GatWeights, Topology};
use crate::graph::{NodeKind, TeleconnectionGraph};
use crate::ingest::{ColumnScaling, MonthlyPanel, NormalizationRecord, TIME_COS, TIME_SIN};
use crate::linalg::{axpy, Mat};
use crate::trainer::adaptive_huber;

/// Per-node input: scaled value, then the month's sine and cosine.
pub const NODE_FEATURES: usize = 3;
pub const GATES: usize = 4;
const FORGET: usize = 0;
const INPUT: usize = 1;
const CANDIDATE: usize = 2;
const OUTPUT: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    /// Forget, input, candidate and output gates, in that order.
    pub gates: Vec<GatWeights>,
    /// One `nodes × hidden` bias per gate.
    pub bias: Vec<Mat>,
    /// Optional `hidden × hidden` projection of `h_{t−1}` per gate.
    pub recurrent: Option<Vec<Mat>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellWeights {
    pub layers: Vec<LayerWeights>,
    /// `horizon × hidden`
    pub readout: Mat,
    pub readout_bias: Vec<f64>,
    pub n_nodes: usize,
    pub hidden: usize,
    pub horizon: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_nodes: usize,
    pub in_dim: usize,
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    pub horizon: usize,
    pub recurrent_projection: bool,
    pub activation: Activation,
    pub slope: f64,
}

impl ModelConfig {
    pub fn new(n_nodes: usize, heads: usize, hidden: usize, layers: usize, horizon: usize) -> Self {
        Self {
            n_nodes,
            in_dim: NODE_FEATURES,
            hidden,
            heads,
            layers,
            horizon,
            recurrent_projection: false,
            activation: Activation::Sigmoid,
            slope: crate::gat::DEFAULT_SLOPE,
        }
    }

    /// Gate attention weights and the readout are uniform in `±1/√fan_in`;
    /// biases start at zero.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<CellWeights> {
        if self.n_nodes == 0 || self.layers == 0 || self.horizon == 0 || self.hidden == 0 {
            return Err(Error::InvalidParameter {
                name: "model config",
                reason: "nodes, layers, hidden and horizon must be positive".into(),
            });
        }
        let mut layers = Vec::with_capacity(self.layers);
        for l in 0..self.layers {
            let gat = GatConfig {
                heads: self.heads,
                in_dim: if l == 0 { self.in_dim } else { self.hidden },
                hidden: self.hidden,
                edge_dim: self.hidden,
                slope: self.slope,
                activation: self.activation,
            };
            let gates = (0..GATES).map(|_| gat.init(rng)).collect::<Result<Vec<_>>>()?;
            let bound = 1.0 / libm::sqrt(self.hidden as f64);
            let recurrent = self.recurrent_projection.then(|| {
                (0..GATES)
                    .map(|_| Mat::from_fn(self.hidden, self.hidden, |_, _| rng.gen_range(-bound..=bound)))
                    .collect()
            });
            layers.push(LayerWeights {
                gates,
                bias: vec![Mat::zeros(self.n_nodes, self.hidden); GATES],
                recurrent,
            });
        }
        let bound = 1.0 / libm::sqrt(self.hidden as f64);
        let readout = Mat::from_fn(self.horizon, self.hidden, |_, _| rng.gen_range(-bound..=bound));
        Ok(CellWeights {
            layers,
            readout,
            readout_bias: vec![0.0; self.horizon],
            n_nodes: self.n_nodes,
            hidden: self.hidden,
            horizon: self.horizon,
        })
    }
}

impl CellWeights {
    /// Every learnable tensor in a fixed order shared with [`Self::tensors_mut`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            for g in &layer.gates {
                out.extend(g.tensors());
            }
            out.extend(layer.bias.iter().map(Mat::as_slice));
            if let Some(r) = &layer.recurrent {
                out.extend(r.iter().map(Mat::as_slice));
            }
        }
        out.push(self.readout.as_slice());
        out.push(&self.readout_bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            for g in &mut layer.gates {
                out.extend(g.tensors_mut());
            }
            out.extend(layer.bias.iter_mut().map(Mat::as_mut_slice));
            if let Some(r) = &mut layer.recurrent {
                out.extend(r.iter_mut().map(Mat::as_mut_slice));
            }
        }
        out.push(self.readout.as_mut_slice());
        out.push(&mut self.readout_bias);
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        z
    }

    /// `self += scale · other`, tensor by tensor.
    pub fn add_scaled(&mut self, scale: f64, other: &CellWeights) {
        for (d, s) in self.tensors_mut().into_iter().zip(other.tensors()) {
            axpy(scale, s, d);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn validate(&self) -> Result<()> {
        let mismatch = |what, expected, found| Error::DimensionMismatch { what, expected, found };
        if self.layers.is_empty() {
            return Err(Error::InvalidParameter {
                name: "layers",
                reason: "at least one layer is required".into(),
            });
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.gates.len() != GATES || layer.bias.len() != GATES {
                return Err(mismatch("gate count", GATES, layer.gates.len().min(layer.bias.len())));
            }
            for g in &layer.gates {
                g.validate()?;
                if g.out_dim != self.hidden {
                    return Err(mismatch("gate output width", self.hidden, g.out_dim));
                }
                if l > 0 && g.in_dim != self.hidden {
                    return Err(mismatch("stacked layer input width", self.hidden, g.in_dim));
                }
            }
            for b in &layer.bias {
                if b.shape() != (self.n_nodes, self.hidden) {
                    return Err(mismatch(
                        "gate bias size",
                        self.n_nodes * self.hidden,
                        b.rows() * b.cols(),
                    ));
                }
            }
            if let Some(r) = &layer.recurrent {
                if r.len() != GATES || r.iter().any(|m| m.shape() != (self.hidden, self.hidden)) {
                    return Err(mismatch("recurrent projection", GATES, r.len()));
                }
            }
        }
        if self.readout.shape() != (self.horizon, self.hidden) || self.readout_bias.len() != self.horizon {
            return Err(mismatch("readout", self.horizon, self.readout.rows()));
        }
        if !self.is_finite() {
            return Err(Error::NonFinite("model weights"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellState {
    pub h: Mat,
    pub c: Mat,
}

impl CellState {
    pub fn zeros(n_nodes: usize, hidden: usize) -> Self {
        Self {
            h: Mat::zeros(n_nodes, hidden),
            c: Mat::zeros(n_nodes, hidden),
        }
    }
}

/// Inverted-dropout masks on gate attention outputs, indexed by step,
/// layer and gate. Kept entries are scaled by `1/(1 − rate)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMasks {
    layers: usize,
    masks: Vec<Mat>,
}

impl DropoutMasks {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, rate: f64, steps: usize, w: &CellWeights) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidParameter {
                name: "dropout",
                reason: alloc::format!("{rate} outside [0, 1)"),
            });
        }
        let keep = 1.0 / (1.0 - rate);
        let masks = (0..steps * w.layers.len() * GATES)
            .map(|_| {
                Mat::from_fn(
                    w.n_nodes,
                    w.hidden,
                    |_, _| if rng.gen::<f64>() < rate { 0.0 } else { keep },
                )
            })
            .collect();
        Ok(Self {
            layers: w.layers.len(),
            masks,
        })
    }

    fn get(&self, t: usize, layer: usize) -> &[Mat] {
        let start = (t * self.layers + layer) * GATES;
        &self.masks[start..start + GATES]
    }
}

/// Forward quantities of one layer step kept for the backward pass.
#[derive(Clone, Debug)]
pub struct StepCache {
    gat: Vec<GatCache>,
    /// Post-activation f, i, c̃, o.
    gates: Vec<Mat>,
    h_prev: Mat,
    c_prev: Mat,
    tanh_c: Mat,
}

fn layer_step(
    x: &Mat,
    state: &CellState,
    layer: &LayerWeights,
    topo: &Topology,
    mask: Option<&[Mat]>,
) -> Result<(CellState, StepCache)> {
    let shape = state.h.shape();
    if state.c.shape() != shape {
        return Err(Error::DimensionMismatch {
            what: "cell state",
            expected: shape.0 * shape.1,
            found: state.c.rows() * state.c.cols(),
        });
    }
    let mut gat = Vec::with_capacity(GATES);
    let mut gates = Vec::with_capacity(GATES);
    for g in 0..GATES {
        let out = gat_forward(x, topo, &layer.gates[g])?;
        let mut a = out.embeddings;
        if a.shape() != shape {
            return Err(Error::DimensionMismatch {
                what: "gate attention output",
                expected: shape.0 * shape.1,
                found: a.rows() * a.cols(),
            });
        }
        if let Some(m) = mask {
            a.as_mut_slice()
                .iter_mut()
                .zip(m[g].as_slice())
                .for_each(|(v, k)| *v *= k);
        }
        match &layer.recurrent {
            None => axpy(1.0, state.h.as_slice(), a.as_mut_slice()),
            Some(r) => axpy(1.0, state.h.matmul(&r[g].transpose()).as_slice(), a.as_mut_slice()),
        }
        axpy(1.0, layer.bias[g].as_slice(), a.as_mut_slice());
        if g == CANDIDATE {
            a.as_mut_slice().iter_mut().for_each(|v| *v = libm::tanh(*v));
        } else {
            a.as_mut_slice().iter_mut().for_each(|v| *v = sigmoid(*v));
        }
        gat.push(out.cache);
        gates.push(a);
    }
    let mut c = Mat::zeros(shape.0, shape.1);
    let mut h = Mat::zeros(shape.0, shape.1);
    let mut tanh_c = Mat::zeros(shape.0, shape.1);
    for k in 0..shape.0 * shape.1 {
        let f = gates[FORGET].as_slice()[k];
        let i = gates[INPUT].as_slice()[k];
        let cand = gates[CANDIDATE].as_slice()[k];
        let o = gates[OUTPUT].as_slice()[k];
        debug_assert!((0.0..=1.0).contains(&f) && (0.0..=1.0).contains(&i) && (0.0..=1.0).contains(&o));
        debug_assert!((-1.0..=1.0).contains(&cand));
        let ck = f * state.c.as_slice()[k] + i * cand;
        let tc = libm::tanh(ck);
        c.as_mut_slice()[k] = ck;
        tanh_c.as_mut_slice()[k] = tc;
        h.as_mut_slice()[k] = o * tc;
    }
    Ok((
        CellState { h, c },
        StepCache {
            gat,
            gates,
            h_prev: state.h.clone(),
            c_prev: state.c.clone(),
            tanh_c,
        },
    ))
}

/// One step of a single layer: `c_t` first, then `h_t = o_t ⊙ tanh(c_t)`.
pub fn cell_step(x: &Mat, state: &CellState, layer: &LayerWeights, topo: &Topology) -> Result<CellState> {
    layer_step(x, state, layer, topo, None).map(|(s, _)| s)
}

/// Gate values `(f, i, c̃, o)` of one step, for inspection.
pub fn gate_values(x: &Mat, state: &CellState, layer: &LayerWeights, topo: &Topology) -> Result<[Mat; 4]> {
    let (_, cache) = layer_step(x, state, layer, topo, None)?;
    let mut g = cache.gates.into_iter();
    Ok([
        g.next().unwrap(),
        g.next().unwrap(),
        g.next().unwrap(),
        g.next().unwrap(),
    ])
}

fn layer_step_backward(
    dh: &Mat,
    dc: &Mat,
    cache: &StepCache,
    layer: &LayerWeights,
    topo: &Topology,
    mask: Option<&[Mat]>,
    grad: &mut LayerWeights,
) -> Result<(Mat, Mat, Mat)> {
    let (n, d) = dh.shape();
    let mut da: Vec<Mat> = (0..GATES).map(|_| Mat::zeros(n, d)).collect();
    let mut dc_prev = Mat::zeros(n, d);
    for k in 0..n * d {
        let f = cache.gates[FORGET].as_slice()[k];
        let i = cache.gates[INPUT].as_slice()[k];
        let cand = cache.gates[CANDIDATE].as_slice()[k];
        let o = cache.gates[OUTPUT].as_slice()[k];
        let tc = cache.tanh_c.as_slice()[k];
        let dhk = dh.as_slice()[k];
        let d_c = dc.as_slice()[k] + dhk * o * (1.0 - tc * tc);
        da[FORGET].as_mut_slice()[k] = d_c * cache.c_prev.as_slice()[k] * f * (1.0 - f);
        da[INPUT].as_mut_slice()[k] = d_c * cand * i * (1.0 - i);
        da[CANDIDATE].as_mut_slice()[k] = d_c * i * (1.0 - cand * cand);
        da[OUTPUT].as_mut_slice()[k] = dhk * tc * o * (1.0 - o);
        dc_prev.as_mut_slice()[k] = d_c * f;
    }

    let mut dh_prev = Mat::zeros(n, d);
    let mut dx: Option<Mat> = None;
    for g in 0..GATES {
        axpy(1.0, da[g].as_slice(), grad.bias[g].as_mut_slice());
        match (&layer.recurrent, &mut grad.recurrent) {
            (Some(r), Some(gr)) => {
                axpy(
                    1.0,
                    da[g].transpose().matmul(&cache.h_prev).as_slice(),
                    gr[g].as_mut_slice(),
                );
                axpy(1.0, da[g].matmul(&r[g]).as_slice(), dh_prev.as_mut_slice());
            }
            _ => axpy(1.0, da[g].as_slice(), dh_prev.as_mut_slice()),
        }
        let mut up = core::mem::replace(&mut da[g], Mat::zeros(0, 0));
        if let Some(m) = mask {
            up.as_mut_slice()
                .iter_mut()
                .zip(m[g].as_slice())
                .for_each(|(v, k)| *v *= k);
        }
        let (gw, gx) = gat_backward(&up, &cache.gat[g], topo, &layer.gates[g])?;
        for (dst, src) in grad.gates[g].tensors_mut().into_iter().zip(gw.tensors()) {
            axpy(1.0, src, dst);
        }
        match &mut dx {
            Some(acc) => axpy(1.0, gx.as_slice(), acc.as_mut_slice()),
            None => dx = Some(gx),
        }
    }
    Ok((dx.expect("four gates"), dh_prev, dc_prev))
}

/// Forward caches of a full multi-layer rollout.
#[derive(Clone, Debug)]
pub struct Rollout {
    /// `steps[t][layer]`
    steps: Vec<Vec<StepCache>>,
    /// Final state per layer.
    pub states: Vec<CellState>,
}

impl Rollout {
    pub fn top_hidden(&self) -> &Mat {
        &self.states.last().expect("at least one layer").h
    }
}

/// Runs every layer over `inputs` from a zero state.
pub fn forward_rollout(
    w: &CellWeights,
    inputs: &[Mat],
    topo: &Topology,
    masks: Option<&DropoutMasks>,
) -> Result<Rollout> {
    if inputs.is_empty() {
        return Err(Error::EmptyInput("rollout inputs"));
    }
    if topo.n_nodes != w.n_nodes {
        return Err(Error::DimensionMismatch {
            what: "graph nodes",
            expected: w.n_nodes,
            found: topo.n_nodes,
        });
    }
    let mut states: Vec<CellState> = (0..w.layers.len())
        .map(|_| CellState::zeros(w.n_nodes, w.hidden))
        .collect();
    let mut steps = Vec::with_capacity(inputs.len());
    for (t, x) in inputs.iter().enumerate() {
        let mut caches = Vec::with_capacity(w.layers.len());
        for (l, layer) in w.layers.iter().enumerate() {
            let input = if l == 0 { x } else { &states[l - 1].h };
            let (next, cache) = layer_step(input, &states[l], layer, topo, masks.map(|m| m.get(t, l)))?;
            states[l] = next;
            caches.push(cache);
        }
        steps.push(caches);
    }
    Ok(Rollout { steps, states })
}

/// Backpropagates `d_final_h = ∂L/∂h_T` of the top layer through time.
/// Returns gradients for every layer tensor (readout entries are zero) and
/// `∂L/∂X_t` per input step.
pub fn backward_rollout(
    w: &CellWeights,
    rollout: &Rollout,
    topo: &Topology,
    d_final_h: &Mat,
    masks: Option<&DropoutMasks>,
) -> Result<(CellWeights, Vec<Mat>)> {
    let n_layers = w.layers.len();
    if rollout.states.len() != n_layers || rollout.steps.iter().any(|s| s.len() != n_layers) {
        return Err(Error::StaleCache);
    }
    if d_final_h.shape() != (w.n_nodes, w.hidden) {
        return Err(Error::DimensionMismatch {
            what: "final hidden gradient",
            expected: w.n_nodes * w.hidden,
            found: d_final_h.rows() * d_final_h.cols(),
        });
    }
    let mut grad = w.zeros_like();
    let mut dh: Vec<Mat> = (0..n_layers).map(|_| Mat::zeros(w.n_nodes, w.hidden)).collect();
    let mut dc: Vec<Mat> = dh.clone();
    dh[n_layers - 1] = d_final_h.clone();
    let mut dxs = vec![Mat::zeros(0, 0); rollout.steps.len()];
    for t in (0..rollout.steps.len()).rev() {
        for l in (0..n_layers).rev() {
            let (dx, dh_prev, dc_prev) = layer_step_backward(
                &dh[l],
                &dc[l],
                &rollout.steps[t][l],
                &w.layers[l],
                topo,
                masks.map(|m| m.get(t, l)),
                &mut grad.layers[l],
            )?;
            dh[l] = dh_prev;
            dc[l] = dc_prev;
            if l > 0 {
                axpy(1.0, dx.as_slice(), dh[l - 1].as_mut_slice());
            } else {
                dxs[t] = dx;
            }
        }
    }
    Ok((grad, dxs))
}

/// `stations × horizon` forecast in scaled units from the top-layer `h`.
pub fn readout(w: &CellWeights, h: &Mat, stations: &[usize]) -> Mat {
    let mut out = Mat::zeros(stations.len(), w.horizon);
    for (s, &node) in stations.iter().enumerate() {
        let hv = h.row(node);
        for (k, v) in out.row_mut(s).iter_mut().enumerate() {
            *v = crate::linalg::dot(w.readout.row(k), hv) + w.readout_bias[k];
        }
    }
    out
}

/// Index view of a teleconnection graph plus the per-node lags and the
/// scaling of each station column.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphContext {
    pub topology: Topology,
    pub node_ids: Vec<String>,
    pub station_nodes: Vec<usize>,
    pub lags: Vec<u32>,
    pub station_scaling: Vec<ColumnScaling>,
}

impl GraphContext {
    pub fn new(graph: &TeleconnectionGraph, normalization: &NormalizationRecord) -> Result<Self> {
        graph.validate()?;
        let station_nodes: Vec<usize> = graph.station_nodes().map(|(i, _)| i).collect();
        if station_nodes.is_empty() {
            return Err(Error::EmptyInput("station nodes"));
        }
        let station_scaling = station_nodes
            .iter()
            .map(|&i| {
                let id = &graph.nodes[i].id;
                normalization
                    .get(id)
                    .cloned()
                    .ok_or_else(|| Error::UnknownNode(id.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            topology: Topology::from_graph(graph)?,
            node_ids: graph.nodes.iter().map(|n| n.id.clone()).collect(),
            lags: graph
                .nodes
                .iter()
                .map(|n| match n.kind {
                    NodeKind::Index => graph.node_lag(&n.id),
                    NodeKind::Station => 0,
                })
                .collect(),
            station_nodes,
            station_scaling,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn max_lag(&self) -> usize {
        self.lags.iter().copied().max().unwrap_or(0) as usize
    }

    pub fn station_ids(&self) -> impl Iterator<Item = &str> {
        self.station_nodes.iter().map(|&i| self.node_ids[i].as_str())
    }
}

/// Node features at panel row `t`; index nodes read their column `lag`
/// months earlier.
pub fn node_features(panel: &MonthlyPanel, ctx: &GraphContext, t: usize) -> Result<Mat> {
    if t >= panel.len() {
        return Err(Error::TooShort {
            what: "panel",
            needed: t + 1,
            found: panel.len(),
        });
    }
    let sin = &panel
        .column(TIME_SIN)
        .ok_or(Error::UnknownIndex(TIME_SIN.into()))?
        .values;
    let cos = &panel
        .column(TIME_COS)
        .ok_or(Error::UnknownIndex(TIME_COS.into()))?
        .values;
    let mut x = Mat::zeros(ctx.n_nodes(), NODE_FEATURES);
    for (n, id) in ctx.node_ids.iter().enumerate() {
        let column = &panel.column(id).ok_or_else(|| Error::UnknownNode(id.clone()))?.values;
        let lag = ctx.lags[n] as usize;
        if t < lag {
            return Err(Error::TooShort {
                what: "history before lagged input",
                needed: lag,
                found: t,
            });
        }
        let row = x.row_mut(n);
        row[0] = column[t - lag];
        row[1] = sin[t];
        row[2] = cos[t];
    }
    Ok(x)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotWindow {
    /// First input month.
    pub anchor: YearMonth,
    /// One `nodes × features` matrix per input month.
    pub inputs: Vec<Mat>,
    /// `stations × horizon`, scaled.
    pub targets: Mat,
}

impl SnapshotWindow {
    pub fn input_len(&self) -> usize {
        self.inputs.len()
    }

    pub fn horizon(&self) -> usize {
        self.targets.cols()
    }

    pub fn first_target(&self) -> YearMonth {
        self.anchor.offset(self.inputs.len() as i64)
    }

    pub fn last_target(&self) -> YearMonth {
        self.anchor.offset((self.inputs.len() + self.horizon()) as i64 - 1)
    }
}

/// Sliding windows of `w` input months and `h` target months. The first
/// window starts after the graph's largest lag so every lagged input is
/// inside the panel.
pub fn make_snapshots(
    panel: &MonthlyPanel,
    ctx: &GraphContext,
    w: usize,
    h: usize,
    stride: usize,
) -> Result<Vec<SnapshotWindow>> {
    if w == 0 || h == 0 || stride == 0 {
        return Err(Error::InvalidParameter {
            name: "window",
            reason: "input length, horizon and stride must be positive".into(),
        });
    }
    let first = ctx.max_lag();
    let needed = first + w + h;
    if panel.len() < needed {
        return Err(Error::TooShort {
            what: "panel for snapshots",
            needed,
            found: panel.len(),
        });
    }
    let features = (first..panel.len() - h)
        .map(|t| node_features(panel, ctx, t))
        .collect::<Result<Vec<_>>>()?;
    let station_values = ctx
        .station_nodes
        .iter()
        .map(|&i| &panel.column(&ctx.node_ids[i]).expect("checked by node_features").values)
        .collect::<Vec<_>>();
    let mut windows = Vec::new();
    for s in (first..=panel.len() - w - h).step_by(stride) {
        let targets = Mat::from_fn(station_values.len(), h, |si, k| station_values[si][s + w + k]);
        windows.push(SnapshotWindow {
            anchor: panel.months[s],
            inputs: features[s - first..s - first + w].to_vec(),
            targets,
        });
    }
    Ok(windows)
}

/// The last `w` months of the panel as model input.
pub fn latest_inputs(panel: &MonthlyPanel, ctx: &GraphContext, w: usize) -> Result<(YearMonth, Vec<Mat>)> {
    if w == 0 || panel.len() < w + ctx.max_lag() {
        return Err(Error::TooShort {
            what: "panel for forecast input",
            needed: w + ctx.max_lag(),
            found: panel.len(),
        });
    }
    let start = panel.len() - w;
    let inputs = (start..panel.len())
        .map(|t| node_features(panel, ctx, t))
        .collect::<Result<Vec<_>>>()?;
    Ok((panel.months[start], inputs))
}

/// Scaled `stations × horizon` forecast for one input sequence.
pub fn forecast_scaled(w: &CellWeights, inputs: &[Mat], ctx: &GraphContext) -> Result<Mat> {
    let r = forward_rollout(w, inputs, &ctx.topology, None)?;
    Ok(readout(w, r.top_hidden(), &ctx.station_nodes))
}

/// Per-station horizon forecasts in physical units.
pub fn rollout_forecast(window: &SnapshotWindow, w: &CellWeights, ctx: &GraphContext) -> Result<Vec<Vec<f64>>> {
    let scaled = forecast_scaled(w, &window.inputs, ctx)?;
    Ok(unscale(&scaled, ctx))
}

pub fn unscale(scaled: &Mat, ctx: &GraphContext) -> Vec<Vec<f64>> {
    (0..scaled.rows())
        .map(|s| {
            scaled
                .row(s)
                .iter()
                .map(|&v| ctx.station_scaling[s].inverse(v))
                .collect()
        })
        .collect()
}

/// Huber loss of one window and its gradient for every tensor.
pub fn window_loss_gradient(
    w: &CellWeights,
    window: &SnapshotWindow,
    ctx: &GraphContext,
    delta: f64,
    masks: Option<&DropoutMasks>,
) -> Result<(f64, CellWeights)> {
    let rollout = forward_rollout(w, &window.inputs, &ctx.topology, masks)?;
    let h = rollout.top_hidden();
    let pred = readout(w, h, &ctx.station_nodes);
    if pred.shape() != window.targets.shape() {
        return Err(Error::DimensionMismatch {
            what: "window targets",
            expected: pred.rows() * pred.cols(),
            found: window.targets.rows() * window.targets.cols(),
        });
    }
    let (loss, d_pred) = adaptive_huber(pred.as_slice(), window.targets.as_slice(), delta)?;

    let mut d_h = Mat::zeros(w.n_nodes, w.hidden);
    let mut d_readout = Mat::zeros(w.horizon, w.hidden);
    let mut d_bias = vec![0.0; w.horizon];
    for (s, &node) in ctx.station_nodes.iter().enumerate() {
        for k in 0..w.horizon {
            let g = d_pred[s * w.horizon + k];
            if g == 0.0 {
                continue;
            }
            d_bias[k] += g;
            axpy(g, h.row(node), d_readout.row_mut(k));
            axpy(g, w.readout.row(k), d_h.row_mut(node));
        }
    }
    let (mut grad, _) = backward_rollout(w, &rollout, &ctx.topology, &d_h, masks)?;
    grad.readout = d_readout;
    grad.readout_bias = d_bias;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gat::TopoEdge;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn topo4() -> Topology {
        Topology::new(
            4,
            vec![
                TopoEdge {
                    src: 2,
                    dst: 0,
                    feature: 0.4,
                },
                TopoEdge {
                    src: 3,
                    dst: 0,
                    feature: 1.1,
                },
                TopoEdge {
                    src: 2,
                    dst: 1,
                    feature: 0.9,
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_zero_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut cfg = ModelConfig::new(4, 2, 3, 1, 2);
        cfg.activation = Activation::Identity;
        let mut w = cfg.init(&mut rng).unwrap();
        w.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        let x = Mat::from_fn(4, 3, |r, c| (r + c) as f64);
        let s = cell_step(&x, &CellState::zeros(4, 3), &w.layers[0], &topo4()).unwrap();
        assert!(s.c.as_slice().iter().all(|&v| v == 0.0));
        assert!(s.h.as_slice().iter().all(|&v| v == 0.0));
        let [f, i, c, o] = gate_values(&x, &CellState::zeros(4, 3), &w.layers[0], &topo4()).unwrap();
        assert!(f
            .as_slice()
            .iter()
            .chain(i.as_slice())
            .chain(o.as_slice())
            .all(|&v| v == 0.5));
        assert!(c.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_gates_carry_memory() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut w = ModelConfig::new(4, 1, 3, 1, 2).init(&mut rng).unwrap();
        w.layers[0].bias[FORGET].fill(1e3);
        w.layers[0].bias[INPUT].fill(-1e3);
        let c_prev = Mat::from_fn(4, 3, |r, c| 0.1 * r as f64 - 0.3 * c as f64);
        let state = CellState {
            h: Mat::zeros(4, 3),
            c: c_prev.clone(),
        };
        let x = Mat::from_fn(4, 3, |r, c| libm::cos((r * 3 + c) as f64));
        let next = cell_step(&x, &state, &w.layers[0], &topo4()).unwrap();
        assert_eq!(next.c, c_prev);
    }

    #[test]
    fn forecast_is_bias_for_zero_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut cfg = ModelConfig::new(4, 1, 3, 2, 2);
        cfg.activation = Activation::Identity;
        let mut w = cfg.init(&mut rng).unwrap();
        w.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        w.readout_bias = vec![0.7, -0.2];
        let inputs = vec![Mat::zeros(4, 3); 5];
        let r = forward_rollout(&w, &inputs, &topo4(), None).unwrap();
        let out = readout(&w, r.top_hidden(), &[0, 1]);
        assert_eq!(out.as_slice(), &[0.7, -0.2, 0.7, -0.2]);
    }

    #[test]
    fn rollout_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = ModelConfig::new(4, 2, 5, 2, 3).init(&mut rng).unwrap();
        let inputs: Vec<Mat> = (0..6)
            .map(|t| Mat::from_fn(4, 3, |r, c| libm::sin((t * 12 + r * 3 + c) as f64)))
            .collect();
        let a = forward_rollout(&w, &inputs, &topo4(), None).unwrap();
        let b = forward_rollout(&w, &inputs, &topo4(), None).unwrap();
        assert_eq!(a.top_hidden(), b.top_hidden());
    }

    #[test]
    fn weights_validate_and_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut cfg = ModelConfig::new(3, 2, 4, 2, 6);
        cfg.recurrent_projection = true;
        let w = cfg.init(&mut rng).unwrap();
        w.validate().unwrap();
        let per_head0 = 4 * 3 + 4 + 12;
        let per_head1 = 4 * 4 + 4 + 12;
        let expected = 4 * 2 * per_head0 + 4 * 12 + 4 * 16 + 4 * 2 * per_head1 + 4 * 12 + 4 * 16 + 6 * 4 + 6;
        assert_eq!(w.n_params(), expected);
    }
}
