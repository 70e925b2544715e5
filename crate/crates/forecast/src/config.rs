//! Pipeline configuration: a JSON file whose relative data paths resolve
//! against the file's own directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use telerain_core::evt::SeasonCalendar;
use telerain_core::graph::ForcedEdge;
use telerain_core::physics::{OrographicConfig, DEFAULT_CW};
use telerain_core::trainer::{FoldSpec, HyperGrid, Hyperparams, Objective, Span};
use telerain_core::YearMonth;

use crate::error::{PipelineError, Result};

pub const OUTPUT_DIR_ENV: &str = "FORECAST_OUTPUT_DIR";
pub const THREADS_ENV: &str = "FORECAST_THREADS";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    /// Station rainfall CSV, long or wide.
    pub stations: PathBuf,
    /// Coordinates for long files that do not carry them inline.
    pub station_metadata: Option<PathBuf>,
    /// Monthly indices, `index,year,month,value`.
    pub indices: Option<PathBuf>,
    /// Daily indices, `index,date,value`, reduced to monthly extremes.
    pub daily_indices: Option<PathBuf>,
    /// Monthly winds, `station_id,year,month,u,v`.
    pub winds: PathBuf,
    /// Terrain grid (`.csv`, or `.bin` with a `.json` header beside it).
    pub terrain: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub n_components: usize,
    pub distance_d: f64,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            n_components: 3,
            distance_d: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreeningConfig {
    pub r_threshold: f64,
    pub alpha: f64,
    pub max_lag: usize,
    /// Restrict correlations to months above this station percentile.
    pub extreme_percentile: Option<f64>,
    pub forced: Vec<ForcedEdge>,
}

impl Default for ScreeningConfig {
    fn default() -> Self {
        Self {
            r_threshold: 0.4,
            alpha: 0.1,
            max_lag: 3,
            extreme_percentile: None,
            forced: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsConfig {
    pub cw: f64,
    pub tau_c: f64,
    pub tau_h: f64,
    /// Wind used for the terrain field simulation, m/s.
    pub u: f64,
    pub v: f64,
    /// Terrain cell size in meters; binary terrain headers override it.
    pub dx: f64,
    pub dy: f64,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self {
            cw: DEFAULT_CW,
            tau_c: 1000.0,
            tau_h: 1000.0,
            u: 10.0,
            v: 0.0,
            dx: 1000.0,
            dy: 1000.0,
        }
    }
}

impl PhysicsConfig {
    pub fn orographic(&self, dx: f64, dy: f64) -> OrographicConfig {
        OrographicConfig {
            cw: self.cw,
            tau_c: self.tau_c,
            tau_h: self.tau_h,
            u: self.u,
            v: self.v,
            dx,
            dy,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub input_window: usize,
    pub horizon: usize,
    pub stride: usize,
    pub grid: HyperGrid,
    /// Values for everything the grid does not vary. Its `seed` is
    /// replaced by the pipeline seed.
    pub base: Hyperparams,
    pub objective: Objective,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            input_window: 24,
            horizon: 12,
            stride: 1,
            grid: HyperGrid::default(),
            base: Hyperparams::default(),
            objective: Objective::Nse,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvtConfig {
    pub percentile: f64,
    pub enable_dry: bool,
    /// Cluster ids following the southern season family.
    pub southern_clusters: Vec<usize>,
}

impl Default for EvtConfig {
    fn default() -> Self {
        Self {
            percentile: 95.0,
            enable_dry: false,
            southern_clusters: SeasonCalendar::default().southern,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapConfig {
    /// Cell size in degrees.
    pub step: f64,
    pub power: f64,
    /// Padding around the station bounding box, degrees.
    pub margin: f64,
    /// Forecast leads to render.
    pub horizons: Vec<usize>,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            step: 0.1,
            power: 2.0,
            margin: 0.5,
            horizons: vec![1],
        }
    }
}

fn ym(year: i32, month: u8) -> YearMonth {
    YearMonth { year, month }
}

fn span(a: (i32, u8), b: (i32, u8)) -> Span {
    Span::new(ym(a.0, a.1), ym(b.0, b.1))
}

/// Two chronological folds over 1982–2024: train to 2019 / 2022, then one
/// validation year and one test year each.
pub fn default_folds() -> Vec<FoldSpec> {
    vec![
        FoldSpec {
            name: "fold1".into(),
            train: span((1982, 1), (2019, 12)),
            validation: span((2020, 1), (2020, 12)),
            test: span((2021, 1), (2021, 12)),
        },
        FoldSpec {
            name: "fold2".into(),
            train: span((1982, 1), (2022, 12)),
            validation: span((2023, 1), (2023, 12)),
            test: span((2024, 1), (2024, 12)),
        },
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: DataPaths,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Study period; defaults to the common span of all series.
    pub study: Option<Span>,
    /// Minimum reporting fraction per calendar month.
    pub coverage: f64,
    pub clustering: ClusteringConfig,
    pub screening: ScreeningConfig,
    pub physics: PhysicsConfig,
    pub training: TrainingConfig,
    pub folds: Vec<FoldSpec>,
    pub evt: EvtConfig,
    pub map: MapConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            data: DataPaths::default(),
            output_dir: PathBuf::from("output"),
            seed: 0,
            study: None,
            coverage: 0.8,
            clustering: ClusteringConfig::default(),
            screening: ScreeningConfig::default(),
            physics: PhysicsConfig::default(),
            training: TrainingConfig::default(),
            folds: default_folds(),
            evt: EvtConfig::default(),
            map: MapConfig::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() && !p.as_os_str().is_empty() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    /// Reads a config file, resolves relative paths against its directory
    /// and applies the output-directory environment override.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
            if !dir.is_empty() {
                cfg.output_dir = PathBuf::from(dir);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let d = &mut self.data;
        resolve(base, &mut d.stations);
        resolve(base, &mut d.winds);
        for p in [
            &mut d.station_metadata,
            &mut d.indices,
            &mut d.daily_indices,
            &mut d.terrain,
        ]
        .into_iter()
        .flatten()
        {
            resolve(base, p);
        }
        resolve(base, &mut self.output_dir);
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(PipelineError::Config(m));
        if self.data.stations.as_os_str().is_empty() {
            return err("data.stations is required".into());
        }
        if self.data.winds.as_os_str().is_empty() {
            return err("data.winds is required".into());
        }
        if self.data.indices.is_none() && self.data.daily_indices.is_none() && self.screening.forced.is_empty() {
            log::warn!("no climate indices configured; graphs will hold station nodes only");
        }
        if !(0.0..=1.0).contains(&self.coverage) {
            return err(format!("coverage {} outside [0, 1]", self.coverage));
        }
        if !(90.0..=95.0).contains(&self.evt.percentile) {
            return err(format!("evt.percentile {} outside [90, 95]", self.evt.percentile));
        }
        if !(0.0..=1.0).contains(&self.screening.alpha) || self.screening.max_lag == 0 {
            return err("screening.alpha must lie in [0, 1] and max_lag be positive".into());
        }
        let t = &self.training;
        if t.input_window == 0 || t.horizon == 0 || t.stride == 0 {
            return err("training window, horizon and stride must be positive".into());
        }
        let g = &t.grid;
        if g.heads.is_empty() || g.hidden.is_empty() || g.layers.is_empty() || g.dropout.is_empty() {
            return err("training.grid lists must be non-empty".into());
        }
        for hp in g.points(&t.base) {
            hp.validate()
                .map_err(|e| PipelineError::Config(format!("training grid: {e}")))?;
        }
        if self.folds.is_empty() {
            return err("at least one fold is required".into());
        }
        for f in &self.folds {
            f.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        if !(self.map.step > 0.0) || !(self.map.power > 0.0) || self.map.margin < 0.0 {
            return err("map.step and map.power must be positive, map.margin non-negative".into());
        }
        if let Some(h) = self.map.horizons.iter().find(|&&h| h == 0 || h > t.horizon) {
            return err(format!("map horizon {h} outside 1..={}", t.horizon));
        }
        Ok(())
    }

    pub fn calendar(&self) -> SeasonCalendar {
        SeasonCalendar {
            southern: self.evt.southern_clusters.clone(),
        }
    }

    /// Training hyperparameters with the pipeline seed applied.
    pub fn base_hyperparams(&self) -> Hyperparams {
        Hyperparams {
            seed: self.seed,
            ..self.training.base.clone()
        }
    }

    /// SHA-256 of the canonical JSON form, excluding the output directory.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex(&Sha256::digest(json))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
