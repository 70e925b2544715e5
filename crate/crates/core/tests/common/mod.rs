#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use telerain_core::gat::{TopoEdge, Topology};
use telerain_core::Mat;

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
/// Absolute floor for gradients that are zero up to rounding.
pub const ABS_FLOOR: f64 = 1e-8;

pub fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= REL_TOL * analytic.abs().max(numeric.abs()) + ABS_FLOOR
}

/// Random directed graph with every edge feature in `[0, 2)`.
pub fn random_topology(rng: &mut ChaCha8Rng, n: usize, p_edge: f64) -> Topology {
    let mut edges = Vec::new();
    for dst in 0..n {
        for src in 0..n {
            if src != dst && rng.gen::<f64>() < p_edge {
                edges.push(TopoEdge {
                    src,
                    dst,
                    feature: rng.gen_range(0.0..2.0),
                });
            }
        }
    }
    Topology::new(n, edges).unwrap()
}

pub fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}
