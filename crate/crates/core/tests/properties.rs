mod common;

use common::random_topology;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use telerain_core::evt::{fit_gpd_mle, gpd_cdf, gpd_quantile, P_MAX};
use telerain_core::gat::{gat_forward, softmax, GatConfig, TopoEdge, Topology};
use telerain_core::idw::{idw_interpolate, GridSpec, StationValue};
use telerain_core::ingest::{build_panel, median_impute, time_embedding, StationRecord};
use telerain_core::metrics::{nse, rmse, smape};
use telerain_core::physics::{simulate_field, OrographicConfig, TerrainGrid};
use telerain_core::trainer::adaptive_huber;
use telerain_core::{Mat, MonthlySeries, YearMonth};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_is_shift_invariant(logits in prop::collection::vec(-20.0f64..20.0, 1..10), c in -50.0f64..50.0) {
        let mut a = logits.clone();
        let mut b: Vec<f64> = logits.iter().map(|v| v + c).collect();
        softmax(&mut a);
        softmax(&mut b);
        let total: f64 = a.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(*x >= 0.0);
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_are_stochastic(seed in any::<u64>(), n in 1usize..9, heads in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let topo = random_topology(&mut rng, n, 0.5);
        let w = GatConfig::new(heads, 3, 4).init(&mut rng).unwrap();
        let x = common::random_mat(&mut rng, n, 3);
        let out = gat_forward(&x, &topo, &w).unwrap();
        for k in 0..heads {
            for i in 0..n {
                if let Some(s) = out.attention.row_sum(&topo, k, i) {
                    prop_assert!((s - 1.0).abs() < 1e-12);
                }
            }
            prop_assert!(out.attention.heads[k].iter().all(|&a| a >= 0.0));
        }
    }

    #[test]
    fn gat_is_permutation_equivariant(seed in any::<u64>(), n in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let topo = random_topology(&mut rng, n, 0.5);
        let w = GatConfig::new(2, 3, 4).init(&mut rng).unwrap();
        let x = common::random_mat(&mut rng, n, 3);
        // perm[old] = new
        let perm: Vec<usize> = (0..n).map(|i| (i * 5 + 3) % n).collect();
        let perm = if is_permutation(&perm) { perm } else { (0..n).rev().collect() };
        let edges = topo
            .edges
            .iter()
            .map(|e| TopoEdge { src: perm[e.src], dst: perm[e.dst], feature: e.feature })
            .collect();
        let permuted = Topology::new(n, edges).unwrap();
        let mut px = Mat::zeros(n, 3);
        for i in 0..n {
            px.row_mut(perm[i]).copy_from_slice(x.row(i));
        }
        let a = gat_forward(&x, &topo, &w).unwrap().embeddings;
        let b = gat_forward(&px, &permuted, &w).unwrap().embeddings;
        for i in 0..n {
            for (u, v) in a.row(i).iter().zip(b.row(perm[i])) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gpd_round_trip(xi_i in 0usize..5, scale in 0.5f64..200.0, u in 0.0f64..=1.0) {
        // Beyond P_MAX, 1 − p has too few significant bits to invert.
        let xi = [-0.5, -0.1, 0.0, 0.1, 0.5][xi_i];
        let x = u * gpd_quantile(P_MAX, xi, scale).unwrap();
        let p = gpd_cdf(x, xi, scale).unwrap();
        let back = gpd_quantile(p, xi, scale).unwrap();
        prop_assert!((back - x).abs() <= 1e-10 * x + 1e-300, "x {} back {}", x, back);
    }

    #[test]
    fn huber_is_continuous_at_delta(delta in 0.01f64..10.0) {
        let eps = 1e-14 * delta.max(1.0);
        let (l_in, g_in) = adaptive_huber(&[delta - eps], &[0.0], delta).unwrap();
        let (l_out, g_out) = adaptive_huber(&[delta + eps], &[0.0], delta).unwrap();
        prop_assert!((l_in - l_out).abs() < 1e-10);
        prop_assert!((g_in[0] - g_out[0]).abs() < 1e-10);
        let (l_at, _) = adaptive_huber(&[-delta], &[0.0], delta).unwrap();
        prop_assert!((l_at - 0.5 * delta * delta).abs() < 1e-12 * delta * delta.max(1.0));
    }

    #[test]
    fn rmse_non_negative_smape_symmetric(
        pairs in prop::collection::vec((0.0f64..500.0, 0.0f64..500.0), 1..40)
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assert!(rmse(&a, &b).unwrap() >= 0.0);
        prop_assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        if let (Ok(x), Ok(y)) = (smape(&a, &b), smape(&b, &a)) {
            prop_assert!((x - y).abs() < 1e-12);
            prop_assert!((0.0..=200.0).contains(&x));
        }
    }

    #[test]
    fn nse_affine_invariant(
        pairs in prop::collection::vec((0.0f64..500.0, 0.0f64..500.0), 3..40),
        scale in 0.1f64..10.0,
        shift in -100.0f64..100.0,
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        if let Ok(n1) = nse(&a, &b) {
            let ta: Vec<f64> = a.iter().map(|v| scale * v + shift).collect();
            let tb: Vec<f64> = b.iter().map(|v| scale * v + shift).collect();
            let n2 = nse(&ta, &tb).unwrap();
            prop_assert!(n1 <= 1.0);
            prop_assert!((n1 - n2).abs() <= 1e-8 * n1.abs().max(1.0));
        }
    }

    #[test]
    fn time_embedding_on_unit_circle(year in 1900i32..2100, month in 1u32..=12) {
        let (s, c) = time_embedding(YearMonth::new(year, month).unwrap());
        prop_assert!((s * s + c * c - 1.0).abs() < 1e-15);
    }

    #[test]
    fn imputation_is_idempotent(values in prop::collection::vec(prop::option::weighted(0.8, 0.0f64..400.0), 36..72)) {
        let start = YearMonth::new(1990, 1).unwrap();
        // Keep one observation per calendar month so the median exists.
        let mut values = values;
        for m in 0..12 {
            if values[m].is_none() {
                values[m] = Some(10.0 * m as f64);
            }
        }
        let r = StationRecord::new("s", 10.0, 100.0, 5.0, MonthlySeries::new(start, values)).unwrap();
        let once = median_impute(&r).unwrap();
        let twice = median_impute(&once).unwrap();
        prop_assert!(once.rainfall.is_complete());
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn panel_inverse_recovers_values(values in prop::collection::vec(0.0f64..900.0, 24..60)) {
        let start = YearMonth::new(2000, 1).unwrap();
        let r = StationRecord::new("s", 10.0, 100.0, 5.0, MonthlySeries::complete(start, &values)).unwrap();
        let panel = build_panel(&[r], &[], true, None).unwrap();
        let back = panel.unscaled("s").unwrap();
        for (x, y) in values.iter().zip(&back) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn idw_bounded_by_station_values(
        stations in prop::collection::vec((0.0f64..5.0, 0.0f64..5.0, -50.0f64..300.0), 1..8),
        power in 0.5f64..4.0,
    ) {
        let stations: Vec<StationValue> = stations
            .into_iter()
            .map(|(lon, lat, value)| StationValue { lon, lat, value })
            .collect();
        let spec = GridSpec { lon_min: 0.0, lat_min: 0.0, step: 0.5, nx: 11, ny: 11 };
        let r = idw_interpolate(&stations, &spec, power).unwrap();
        let lo = stations.iter().map(|s| s.value).fold(f64::INFINITY, f64::min);
        let hi = stations.iter().map(|s| s.value).fold(f64::NEG_INFINITY, f64::max);
        let tol = 1e-9 * hi.abs().max(lo.abs()).max(1.0);
        prop_assert!(r.values.iter().all(|&v| v >= lo - tol && v <= hi + tol));
    }
}

fn is_permutation(p: &[usize]) -> bool {
    let mut seen = vec![false; p.len()];
    p.iter().all(|&i| i < p.len() && !std::mem::replace(&mut seen[i], true))
}

fn terrain(seed: u64, nx: usize, ny: usize) -> TerrainGrid {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TerrainGrid::new(nx, ny, (0..nx * ny).map(|_| rng.gen_range(0.0..1500.0)).collect()).unwrap()
}

#[test]
fn orographic_field_is_linear_in_terrain() {
    let cfg = OrographicConfig {
        u: 12.0,
        v: -4.0,
        tau_c: 800.0,
        tau_h: 600.0,
        ..OrographicConfig::default()
    };
    let (a, b) = (terrain(1, 32, 24), terrain(2, 32, 24));
    let combo = TerrainGrid::new(
        32,
        24,
        a.elevations
            .iter()
            .zip(&b.elevations)
            .map(|(x, y)| 2.0 * x - 0.5 * y)
            .collect(),
    )
    .unwrap();
    let fa = simulate_field(&a, &cfg).unwrap();
    let fb = simulate_field(&b, &cfg).unwrap();
    let fc = simulate_field(&combo, &cfg).unwrap();
    let scale = fc.raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for k in 0..fc.raw.len() {
        assert!((fc.raw[k] - (2.0 * fa.raw[k] - 0.5 * fb.raw[k])).abs() < 1e-10 * scale);
    }
}

#[test]
fn reversing_wind_negates_undelayed_field() {
    let cfg = OrographicConfig {
        u: 9.0,
        v: 3.0,
        tau_c: 0.0,
        tau_h: 0.0,
        ..OrographicConfig::default()
    };
    let reversed = OrographicConfig {
        u: -9.0,
        v: -3.0,
        ..cfg
    };
    let t = terrain(3, 16, 16);
    let f = simulate_field(&t, &cfg).unwrap();
    let g = simulate_field(&t, &reversed).unwrap();
    let scale = f.raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (x, y) in f.raw.iter().zip(&g.raw) {
        assert!((x + y).abs() < 1e-10 * scale);
    }
    assert!(f.clamped.iter().all(|&v| v >= 0.0));
}

#[test]
fn mle_is_scale_equivariant() {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x: Vec<f64> = (0..400)
        .map(|_| gpd_quantile(rng.gen::<f64>(), 0.15, 30.0).unwrap())
        .collect();
    let base = fit_gpd_mle(&x).unwrap();
    for c in [0.01, 3.0, 250.0] {
        let scaled: Vec<f64> = x.iter().map(|v| c * v).collect();
        let fit = fit_gpd_mle(&scaled).unwrap();
        // The profile likelihood is flat to rounding within ~1e-7 of its peak.
        assert!(
            (fit.shape - base.shape).abs() < 1e-6,
            "shape {} vs {}",
            fit.shape,
            base.shape
        );
        assert!((fit.scale / (c * base.scale) - 1.0).abs() < 1e-6);
    }
}
