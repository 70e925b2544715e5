mod common;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use telerain_core::gat::{gat_backward, gat_forward, Activation, GatConfig, GatWeights, Topology};
use telerain_core::linalg::dot;
use telerain_core::recurrent::{
    backward_rollout, forward_rollout, window_loss_gradient, CellWeights, DropoutMasks, GraphContext, ModelConfig,
    SnapshotWindow,
};
use telerain_core::Mat;

fn weighted_sum(x: &Mat, topo: &Topology, w: &GatWeights, c: &Mat) -> f64 {
    dot(gat_forward(x, topo, w).unwrap().embeddings.as_slice(), c.as_slice())
}

fn check_gat(seed: u64, heads: usize, activation: Activation) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=8);
    let f = rng.gen_range(1..=3);
    let hidden = rng.gen_range(2..=5);
    let topo = random_topology(&mut rng, n, 0.4);
    let mut cfg = GatConfig::new(heads, f, hidden);
    cfg.activation = activation;
    let w = cfg.init(&mut rng).unwrap();
    let x = random_mat(&mut rng, n, f);
    let c = random_mat(&mut rng, n, hidden);

    let out = gat_forward(&x, &topo, &w).unwrap();
    let (grad, dx) = gat_backward(&c, &out.cache, &topo, &w).unwrap();

    let analytic: Vec<f64> = grad.tensors().iter().flat_map(|t| t.iter().copied()).collect();
    let mut k = 0;
    for t in 0..w.tensors().len() {
        for i in 0..w.tensors()[t].len() {
            let mut plus = w.clone();
            plus.tensors_mut()[t][i] += FD_STEP;
            let mut minus = w.clone();
            minus.tensors_mut()[t][i] -= FD_STEP;
            let numeric = (weighted_sum(&x, &topo, &plus, &c) - weighted_sum(&x, &topo, &minus, &c)) / (2.0 * FD_STEP);
            assert!(
                close(analytic[k], numeric),
                "seed {seed} heads {heads}: tensor {t} entry {i}: analytic {} numeric {numeric}",
                analytic[k]
            );
            k += 1;
        }
    }
    for i in 0..x.as_slice().len() {
        let mut plus = x.clone();
        plus.as_mut_slice()[i] += FD_STEP;
        let mut minus = x.clone();
        minus.as_mut_slice()[i] -= FD_STEP;
        let numeric = (weighted_sum(&plus, &topo, &w, &c) - weighted_sum(&minus, &topo, &w, &c)) / (2.0 * FD_STEP);
        assert!(close(dx.as_slice()[i], numeric), "seed {seed}: dX[{i}]");
        k += 1;
    }
    k
}

#[test]
fn gat_gradients_match_finite_differences() {
    for seed in 0..10 {
        for heads in [1, 4] {
            assert!(check_gat(seed, heads, Activation::Sigmoid) > 0);
        }
    }
}

#[test]
fn gat_gradients_other_activations() {
    for seed in 20..25 {
        check_gat(seed, 2, Activation::Identity);
        check_gat(seed, 2, Activation::Elu);
    }
}

#[test]
fn attention_vector_gradient_with_equal_logits() {
    // Only the destination part of the attention vector is non-zero, so
    // all logits into a node are equal (and off the LeakyReLU kink).
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let topo = random_topology(&mut rng, 5, 0.6);
    let mut w = GatConfig::new(1, 3, 4).init(&mut rng).unwrap();
    w.heads[0].attn[4..].fill(0.0);
    let x = random_mat(&mut rng, 5, 3);
    let c = random_mat(&mut rng, 5, 4);
    let out = gat_forward(&x, &topo, &w).unwrap();
    for i in 0..5 {
        if let Some(s) = out.attention.row_sum(&topo, 0, i) {
            assert!((s - 1.0).abs() < 1e-12);
            let uniform = 1.0 / topo.incoming[i].len() as f64;
            for &e in &topo.incoming[i] {
                assert!((out.attention.heads[0][e] - uniform).abs() < 1e-15);
            }
        }
    }
    let (grad, _) = gat_backward(&c, &out.cache, &topo, &w).unwrap();
    for i in 0..w.heads[0].attn.len() {
        let mut plus = w.clone();
        plus.heads[0].attn[i] += FD_STEP;
        let mut minus = w.clone();
        minus.heads[0].attn[i] -= FD_STEP;
        let numeric = (weighted_sum(&x, &topo, &plus, &c) - weighted_sum(&x, &topo, &minus, &c)) / (2.0 * FD_STEP);
        assert!(close(grad.heads[0].attn[i], numeric), "attn[{i}]");
    }
}

fn flat(w: &CellWeights) -> Vec<f64> {
    w.tensors().iter().flat_map(|t| t.iter().copied()).collect()
}

fn set_flat(w: &mut CellWeights, k: usize, v: f64) {
    let mut k = k;
    for t in w.tensors_mut() {
        if k < t.len() {
            t[k] = v;
            return;
        }
        k -= t.len();
    }
    panic!("index out of range");
}

fn four_node_context(rng: &mut ChaCha8Rng) -> GraphContext {
    use telerain_core::graph::{Edge, EdgeOrigin, Node, NodeKind, TeleconnectionGraph};
    use telerain_core::ingest::{ColumnScaling, NormalizationRecord};
    let node = |id: &str, kind| Node { id: id.into(), kind };
    let edge = |src: &str, dst: &str, feature| Edge {
        src: src.into(),
        dst: dst.into(),
        lag: 0,
        feature,
        origin: EdgeOrigin::Screening,
    };
    let graph = TeleconnectionGraph {
        cluster_id: 1,
        nodes: vec![
            node("s1", NodeKind::Station),
            node("s2", NodeKind::Station),
            node("enso", NodeKind::Index),
            node("iod", NodeKind::Index),
        ],
        edges: vec![
            edge("enso", "s1", rng.gen_range(0.1..1.5)),
            edge("iod", "s1", rng.gen_range(0.1..1.5)),
            edge("enso", "s2", rng.gen_range(0.1..1.5)),
        ],
    };
    let scaling = |name: &str| ColumnScaling {
        name: name.into(),
        mean: 100.0,
        std: 30.0,
        scaled: true,
        constant: false,
    };
    let norm = NormalizationRecord {
        columns: vec![scaling("s1"), scaling("s2")],
    };
    GraphContext::new(&graph, &norm).unwrap()
}

fn check_bptt(seed: u64, layers: usize, projection: bool, dropout: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ctx = four_node_context(&mut rng);
    let mut cfg = ModelConfig::new(4, 2, 3, layers, 2);
    cfg.recurrent_projection = projection;
    let w = cfg.init(&mut rng).unwrap();
    let window = SnapshotWindow {
        anchor: telerain_core::YearMonth::new(2000, 1).unwrap(),
        inputs: (0..3).map(|_| random_mat(&mut rng, 4, 3)).collect(),
        targets: random_mat(&mut rng, 2, 2),
    };
    let masks = (dropout > 0.0).then(|| DropoutMasks::sample(&mut rng, dropout, 3, &w).unwrap());
    let delta = 0.3;
    let (_, grad) = window_loss_gradient(&w, &window, &ctx, delta, masks.as_ref()).unwrap();
    let analytic = flat(&grad);
    let base = flat(&w);
    let loss = |w: &CellWeights| window_loss_gradient(w, &window, &ctx, delta, masks.as_ref()).unwrap().0;
    let mut probe = w.clone();
    for k in 0..base.len() {
        set_flat(&mut probe, k, base[k] + FD_STEP);
        let up = loss(&probe);
        set_flat(&mut probe, k, base[k] - FD_STEP);
        let down = loss(&probe);
        set_flat(&mut probe, k, base[k]);
        let numeric = (up - down) / (2.0 * FD_STEP);
        assert!(
            close(analytic[k], numeric),
            "seed {seed} layers {layers} projection {projection}: param {k}: analytic {} numeric {numeric}",
            analytic[k]
        );
    }
}

#[test]
fn bptt_gradients_single_layer() {
    check_bptt(1, 1, false, 0.0);
}

#[test]
fn bptt_gradients_stacked_with_projection() {
    check_bptt(2, 2, true, 0.0);
}

#[test]
fn bptt_gradients_with_dropout_masks() {
    check_bptt(3, 2, false, 0.3);
}

#[test]
fn final_hidden_sum_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ctx = four_node_context(&mut rng);
    let w = ModelConfig::new(4, 1, 3, 1, 2).init(&mut rng).unwrap();
    let inputs: Vec<Mat> = (0..3).map(|_| random_mat(&mut rng, 4, 3)).collect();
    let r = forward_rollout(&w, &inputs, &ctx.topology, None).unwrap();
    let ones = Mat::from_fn(4, 3, |_, _| 1.0);
    let (grad, dxs) = backward_rollout(&w, &r, &ctx.topology, &ones, None).unwrap();
    let sum_h = |w: &CellWeights, inputs: &[Mat]| -> f64 {
        forward_rollout(w, inputs, &ctx.topology, None)
            .unwrap()
            .top_hidden()
            .as_slice()
            .iter()
            .sum()
    };
    let analytic = flat(&grad);
    let base = flat(&w);
    let mut probe = w.clone();
    // Readout tensors are the last two and do not touch h.
    let n_cell = base.len() - w.readout.as_slice().len() - w.readout_bias.len();
    for k in 0..n_cell {
        set_flat(&mut probe, k, base[k] + FD_STEP);
        let up = sum_h(&probe, &inputs);
        set_flat(&mut probe, k, base[k] - FD_STEP);
        let down = sum_h(&probe, &inputs);
        set_flat(&mut probe, k, base[k]);
        assert!(close(analytic[k], (up - down) / (2.0 * FD_STEP)), "param {k}");
    }
    for t in 0..3 {
        for i in 0..12 {
            let mut x = inputs.clone();
            x[t].as_mut_slice()[i] += FD_STEP;
            let up = sum_h(&w, &x);
            x[t].as_mut_slice()[i] -= 2.0 * FD_STEP;
            let down = sum_h(&w, &x);
            assert!(
                close(dxs[t].as_slice()[i], (up - down) / (2.0 * FD_STEP)),
                "dX[{t}][{i}]"
            );
        }
    }
}
