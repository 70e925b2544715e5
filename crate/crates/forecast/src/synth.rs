//! Deterministic synthetic teleconnection dataset: two station groups with
//! opposite monsoon phases, each driven by one climate index at a lag.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::path::{Path, PathBuf};
use telerain_core::ingest::{ClimateIndexSeries, StationRecord};

use telerain_core::physics::{TerrainGrid, Wind};
use telerain_core::trainer::{FoldSpec, HyperGrid, Hyperparams, Span};
use telerain_core::{MonthlySeries, YearMonth};

use crate::config::{ClusteringConfig, DataPaths, EvtConfig, MapConfig, PhysicsConfig, PipelineConfig, TrainingConfig};
use crate::error::Result;
use crate::io::{self, Terrain, WindTable};

#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    pub start: YearMonth,
    pub months: usize,
    pub seed: u64,
    pub seasonal_amplitude: f64,
    pub index_weight: f64,
    pub noise_std: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            start: YearMonth { year: 1982, month: 1 },
            months: 480,
            seed: 7,
            seasonal_amplitude: 150.0,
            index_weight: 110.0,
            noise_std: 20.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub stations: Vec<StationRecord>,
    pub indices: Vec<ClimateIndexSeries>,
    pub winds: WindTable,
    pub terrain: Terrain,
    /// `(index, lag)` driving each station group, in group order.
    pub drivers: Vec<(String, u32)>,
}

struct Group {
    prefix: &'static str,
    lat: f64,
    lon: f64,
    /// Calendar month of peak rainfall.
    peak_month: f64,
    driver: usize,
    lag: usize,
}

const GROUPS: [Group; 2] = [
    Group {
        prefix: "S",
        lat: 7.6,
        lon: 99.6,
        peak_month: 11.0,
        driver: 0,
        lag: 1,
    },
    Group {
        prefix: "N",
        lat: 18.6,
        lon: 99.0,
        peak_month: 8.0,
        driver: 1,
        lag: 2,
    },
];
pub const INDEX_NAMES: [&str; 2] = ["nino34", "dmi"];
const STATIONS_PER_GROUP: usize = 4;

pub fn generate(spec: &SyntheticSpec) -> SyntheticDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let max_lag = GROUPS.iter().map(|g| g.lag).max().unwrap_or(0);
    let total = spec.months + max_lag;

    // Quasi-periodic oscillations plus red noise, generated from
    // `max_lag` months before the start so lagged values exist.
    let periods = [(43.0, 17.0), (29.0, 61.0)];
    let mut index_values = Vec::new();
    for (k, &(p1, p2)) in periods.iter().enumerate() {
        let mut red = 0.0;
        let series: Vec<f64> = (0..total)
            .map(|t| {
                red = 0.6 * red + 0.25 * unit.sample(&mut rng);
                let t = t as f64;
                (2.0 * PI * t / p1 + k as f64).sin() + 0.4 * (2.0 * PI * t / p2 + 2.0 * k as f64).sin() + red
            })
            .collect();
        index_values.push(series);
    }

    let mut stations = Vec::new();
    let mut winds = BTreeMap::new();
    for g in &GROUPS {
        for s in 0..STATIONS_PER_GROUP {
            let id = format!("{}{}", g.prefix, s + 1);
            let scale = 1.0 + 0.04 * s as f64;
            let values: Vec<f64> = (0..spec.months)
                .map(|i| {
                    let month = spec.start.offset(i as i64).month as f64;
                    let season = (2.0 * PI * (month - g.peak_month) / 12.0).cos();
                    let drive = index_values[g.driver][i + max_lag - g.lag];
                    let v = 180.0 * scale
                        + spec.seasonal_amplitude * scale * season
                        + spec.index_weight * drive
                        + spec.noise_std * unit.sample(&mut rng);
                    v.max(0.0)
                })
                .collect();
            let lat = g.lat + 0.1 * s as f64;
            let lon = g.lon + 0.1 * (s as f64 - 1.5);
            stations.push(
                StationRecord::new(
                    &id,
                    lat,
                    lon,
                    40.0 + 180.0 * s as f64,
                    MonthlySeries::complete(spec.start, &values),
                )
                .expect("synthetic station is valid"),
            );
            let series = (0..spec.months)
                .map(|i| {
                    let month = spec.start.offset(i as i64);
                    let phase = 2.0 * PI * (month.month as f64 - g.peak_month) / 12.0;
                    let wind = Wind {
                        u: 6.0 + 4.0 * phase.cos() + 0.5 * unit.sample(&mut rng),
                        v: 2.0 * phase.sin() + 0.5 * unit.sample(&mut rng),
                    };
                    (month, wind)
                })
                .collect();
            winds.insert(id, series);
        }
    }

    let indices = INDEX_NAMES
        .iter()
        .zip(&index_values)
        .map(|(name, v)| ClimateIndexSeries::monthly(*name, spec.start, v[max_lag..].to_vec()))
        .collect();

    let terrain = Terrain {
        grid: TerrainGrid::from_fn(64, 64, |x, y| {
            let dx = x as f64 - 32.0;
            let dy = y as f64 - 32.0;
            2000.0 / (1.0 + (dx * dx + dy * dy) / 25.0).powf(1.5)
        })
        .expect("synthetic terrain is valid"),
        dx: 2000.0,
        dy: 2000.0,
    };

    SyntheticDataset {
        stations,
        indices,
        winds,
        terrain,
        drivers: GROUPS
            .iter()
            .map(|g| (INDEX_NAMES[g.driver].to_string(), g.lag as u32))
            .collect(),
    }
}

pub const CONFIG_FILE: &str = "config.json";

fn span(a: (i32, u8), b: (i32, u8)) -> Span {
    Span::new(YearMonth { year: a.0, month: a.1 }, YearMonth { year: b.0, month: b.1 })
}

/// Pipeline settings sized for the synthetic dataset: the default grid
/// point only, a reduced epoch budget, two folds ending in 2019 and 2021,
/// and the 90th percentile so every wet season has enough exceedances.
pub fn synthetic_config(spec: &SyntheticSpec) -> PipelineConfig {
    let end = spec.start.offset(spec.months as i64 - 1);
    let y = end.year;
    let base = Hyperparams {
        max_epochs: 60,
        patience: 10,
        ..Hyperparams::default()
    };
    PipelineConfig {
        data: DataPaths {
            stations: "stations.csv".into(),
            station_metadata: None,
            indices: Some("indices.csv".into()),
            daily_indices: None,
            winds: "winds.csv".into(),
            terrain: Some("terrain.bin".into()),
        },
        output_dir: "output".into(),
        seed: spec.seed,
        study: None,
        coverage: 0.8,
        clustering: ClusteringConfig {
            n_components: 3,
            distance_d: 3.0,
        },
        screening: Default::default(),
        physics: PhysicsConfig {
            dx: 2000.0,
            dy: 2000.0,
            ..PhysicsConfig::default()
        },
        training: TrainingConfig {
            grid: HyperGrid::single(&base),
            base,
            ..TrainingConfig::default()
        },
        folds: vec![
            FoldSpec {
                name: "fold1".into(),
                train: span((spec.start.year, spec.start.month), (y - 4, 12)),
                validation: span((y - 3, 1), (y - 3, 12)),
                test: span((y - 2, 1), (y - 2, 12)),
            },
            FoldSpec {
                name: "fold2".into(),
                train: span((spec.start.year, spec.start.month), (y - 2, 12)),
                validation: span((y - 1, 1), (y - 1, 12)),
                test: span((y, 1), (y, 12)),
            },
        ],
        evt: EvtConfig {
            percentile: 90.0,
            enable_dry: false,
            southern_clusters: vec![1],
        },
        map: MapConfig {
            horizons: vec![1, 3],
            ..MapConfig::default()
        },
    }
}

/// Writes the dataset and its config into `dir`; returns the config path.
pub fn write_dataset(dir: &Path, spec: &SyntheticSpec) -> Result<PathBuf> {
    let ds = generate(spec);
    io::write_stations(&dir.join("stations.csv"), &ds.stations)?;
    io::write_indices(&dir.join("indices.csv"), &ds.indices)?;
    io::write_winds(&dir.join("winds.csv"), &ds.winds)?;
    io::write_terrain_bin(&dir.join("terrain.bin"), &ds.terrain)?;
    let path = dir.join(CONFIG_FILE);
    io::write_json(&path, &synthetic_config(spec))?;
    Ok(path)
}
