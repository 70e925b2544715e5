//! Stage orchestration. Each stage reads the artifacts of earlier stages
//! from the output directory, writes its own into `<output>/<stage>/` and
//! records a manifest; a rerun with the same config, seed and inputs is
//! skipped.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use telerain_core::evt::{apply_tail_mapping, build_tail_mapping, MappingOptions, TailMapping};
use telerain_core::graph::{
    assemble_graph, cluster_stations, granger_lag, pearson_screen, AcceptedIndex, ClusterAssignment,
    TeleconnectionGraph,
};
use telerain_core::idw::{idw_interpolate, GridSpec, StationValue};
use telerain_core::ingest::{
    build_panel, coverage_filter, median_impute, ClimateIndexSeries, ColumnKind, MonthlyPanel, NormalizationRecord,
    StationRecord,
};
use telerain_core::metrics::{EvalCell, EvalTable};
use telerain_core::physics::{build_edge_feature_table, simulate_field, EdgeFeatureTable};
use telerain_core::recurrent::{
    forecast_scaled, latest_inputs, make_snapshots, rollout_forecast, unscale, GraphContext, SnapshotWindow,
};
use telerain_core::trainer::{grid_search, two_fold_protocol, FoldWindows, Span};
use telerain_core::{Error as CoreError, YearMonth};

use crate::config::{PipelineConfig, THREADS_ENV};
use crate::error::{PipelineError, Result};
use crate::io::{self, float, CsvOut, Table};
use crate::manifest::{hash_files, list_outputs, Manifest, MANIFEST_FILE};
use crate::render;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Cluster,
    Physics,
    Graph,
    Train,
    Predict,
    MapExtremes,
    Evaluate,
    RenderMap,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Ingest,
        Stage::Cluster,
        Stage::Physics,
        Stage::Graph,
        Stage::Train,
        Stage::Predict,
        Stage::MapExtremes,
        Stage::Evaluate,
        Stage::RenderMap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Cluster => "cluster",
            Stage::Physics => "physics",
            Stage::Graph => "graph",
            Stage::Train => "train",
            Stage::Predict => "predict",
            Stage::MapExtremes => "map-extremes",
            Stage::Evaluate => "evaluate",
            Stage::RenderMap => "render-map",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    Skipped,
}

// Artifact paths, relative to the output directory.
const STATIONS_JSON: &str = "ingest/stations.json";
const PANEL_JSON: &str = "ingest/panel.json";
const NORMALIZATION_JSON: &str = "ingest/normalization.json";
const CLUSTERS_JSON: &str = "cluster/clusters.json";
const EDGE_FEATURES_JSON: &str = "physics/edge_features.json";
const TRAIN_LEAD1_CSV: &str = "predict/train_lead1.csv";
const TEST_PREDICTIONS_CSV: &str = "predict/test_predictions.csv";
const FORECASTS_CSV: &str = "predict/forecasts.csv";
const TEST_MAPPED_CSV: &str = "map-extremes/test_predictions_mapped.csv";
const FORECASTS_MAPPED_CSV: &str = "map-extremes/forecasts_mapped.csv";

fn graph_file(cluster: usize) -> String {
    format!("graph/cluster_{cluster}.json")
}

fn checkpoint_dir(cluster: usize, fold: &str) -> String {
    format!("train/cluster_{cluster}/{fold}")
}

pub struct Pipeline {
    pub config: PipelineConfig,
    pub force: bool,
    pool: rayon::ThreadPool,
}

impl Pipeline {
    /// Worker threads come from `FORECAST_THREADS` when set, otherwise
    /// rayon's default.
    pub fn new(config: PipelineConfig, force: bool) -> Result<Self> {
        let threads = match std::env::var(THREADS_ENV) {
            Ok(v) if !v.is_empty() => v
                .parse::<usize>()
                .map_err(|e| PipelineError::Config(format!("{THREADS_ENV}={v:?}: {e}")))?,
            _ => 0,
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))?;
        Ok(Self { config, force, pool })
    }

    pub fn output_dir(&self) -> &Path {
        &self.config.output_dir
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.config.output_dir.join(rel)
    }

    fn require(&self, rel: &str, producer: Stage) -> Result<PathBuf> {
        let path = self.path(rel);
        if path.exists() {
            Ok(path)
        } else {
            Err(PipelineError::MissingArtifact {
                stage: producer.name(),
                path,
            })
        }
    }

    fn require_data(&self, path: &Path, what: &str) -> Result<PathBuf> {
        if path.exists() {
            Ok(path.to_path_buf())
        } else {
            Err(PipelineError::Config(format!(
                "{what} {} does not exist",
                path.display()
            )))
        }
    }

    fn clusters(&self) -> Result<ClusterAssignment> {
        io::read_json(&self.require(CLUSTERS_JSON, Stage::Cluster)?)
    }

    fn panel(&self) -> Result<MonthlyPanel> {
        io::read_json(&self.require(PANEL_JSON, Stage::Ingest)?)
    }

    fn cluster_ids(&self) -> Result<Vec<usize>> {
        Ok((1..=self.clusters()?.n_clusters).collect())
    }

    /// Concrete input files of a stage; errors name the first missing one.
    fn inputs(&self, stage: Stage) -> Result<Vec<PathBuf>> {
        let d = &self.config.data;
        let mut files = Vec::new();
        match stage {
            Stage::Ingest => {
                files.push(self.require_data(&d.stations, "station file")?);
                for p in [&d.station_metadata, &d.indices, &d.daily_indices]
                    .into_iter()
                    .flatten()
                {
                    files.push(self.require_data(p, "data file")?);
                }
            }
            Stage::Cluster => files.push(self.require(STATIONS_JSON, Stage::Ingest)?),
            Stage::Physics => {
                files.push(self.require(STATIONS_JSON, Stage::Ingest)?);
                files.push(self.require_data(&d.winds, "wind file")?);
                if let Some(t) = &d.terrain {
                    files.push(self.require_data(t, "terrain file")?);
                    if t.extension().is_some_and(|e| e == "bin") {
                        files.push(self.require_data(&t.with_extension("json"), "terrain header")?);
                    }
                }
            }
            Stage::Graph => {
                files.push(self.require(PANEL_JSON, Stage::Ingest)?);
                files.push(self.require(CLUSTERS_JSON, Stage::Cluster)?);
                files.push(self.require(EDGE_FEATURES_JSON, Stage::Physics)?);
            }
            Stage::Train => {
                files.push(self.require(PANEL_JSON, Stage::Ingest)?);
                for k in self.cluster_ids()? {
                    files.push(self.require(&graph_file(k), Stage::Graph)?);
                }
            }
            Stage::Predict => {
                files.push(self.require(PANEL_JSON, Stage::Ingest)?);
                for k in self.cluster_ids()? {
                    files.push(self.require(&graph_file(k), Stage::Graph)?);
                    for f in &self.config.folds {
                        let dir = checkpoint_dir(k, &f.name);
                        files.push(self.require(&format!("{dir}/{}", io::CHECKPOINT_FILE), Stage::Train)?);
                        files.push(self.require(&format!("{dir}/{}", io::WEIGHTS_FILE), Stage::Train)?);
                    }
                }
            }
            Stage::MapExtremes => {
                files.push(self.require(PANEL_JSON, Stage::Ingest)?);
                files.push(self.require(CLUSTERS_JSON, Stage::Cluster)?);
                for rel in [TRAIN_LEAD1_CSV, TEST_PREDICTIONS_CSV, FORECASTS_CSV] {
                    files.push(self.require(rel, Stage::Predict)?);
                }
            }
            Stage::Evaluate => files.push(self.require(TEST_MAPPED_CSV, Stage::MapExtremes)?),
            Stage::RenderMap => {
                files.push(self.require(STATIONS_JSON, Stage::Ingest)?);
                files.push(self.require(FORECASTS_MAPPED_CSV, Stage::MapExtremes)?);
            }
        }
        Ok(files)
    }

    /// Runs one stage unless its manifest shows identical config, seed and
    /// inputs with intact outputs.
    pub fn run(&self, stage: Stage) -> Result<StageOutcome> {
        let root = self.output_dir().to_path_buf();
        let dir = root.join(stage.name());
        let manifest_path = dir.join(MANIFEST_FILE);
        let inputs = hash_files(&root, &self.inputs(stage)?)?;
        let config_hash = self.config.hash();

        if !self.force {
            if let Some(m) = Manifest::read(&manifest_path)? {
                if m.config_hash != config_hash || m.seed != self.config.seed {
                    return Err(PipelineError::StaleArtifacts { stage: stage.name() });
                }
                if m.inputs == inputs && m.outputs_intact(&root) {
                    log::info!("{stage}: up to date, skipped");
                    return Ok(StageOutcome::Skipped);
                }
            }
        }

        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
        }
        std::fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
        let started = Instant::now();
        match stage {
            Stage::Ingest => self.ingest()?,
            Stage::Cluster => self.cluster()?,
            Stage::Physics => self.physics()?,
            Stage::Graph => self.graph()?,
            Stage::Train => self.train()?,
            Stage::Predict => self.predict()?,
            Stage::MapExtremes => self.map_extremes()?,
            Stage::Evaluate => self.evaluate()?,
            Stage::RenderMap => self.render_map()?,
        }
        let manifest = Manifest {
            stage: stage.name().into(),
            config_hash,
            seed: self.config.seed,
            inputs,
            outputs: hash_files(&root, &list_outputs(&dir)?)?,
        };
        manifest.write(&manifest_path)?;
        log::info!("{stage}: done in {:.1}s", started.elapsed().as_secs_f64());
        Ok(StageOutcome::Ran)
    }

    pub fn run_all(&self) -> Result<Vec<(Stage, StageOutcome)>> {
        Stage::ALL.into_iter().map(|s| Ok((s, self.run(s)?))).collect()
    }

    // ---- stages -----------------------------------------------------------

    fn ingest(&self) -> Result<()> {
        let cfg = &self.config;
        let records = io::read_stations(&cfg.data.stations, cfg.data.station_metadata.as_deref())?;
        let study = cfg.study.map(|s| (s.start, s.end));
        let kept = coverage_filter(&records, cfg.coverage, study)?;
        for r in &records {
            if !kept.iter().any(|k| k.station_id == r.station_id) {
                log::warn!("ingest: station {} dropped by the coverage filter", r.station_id);
            }
        }
        if kept.is_empty() {
            return Err(CoreError::EmptyInput("stations passing the coverage filter").into());
        }
        let imputed = kept
            .iter()
            .map(median_impute)
            .collect::<telerain_core::Result<Vec<_>>>()?;

        let mut indices: Vec<ClimateIndexSeries> = Vec::new();
        if let Some(p) = &cfg.data.indices {
            indices.extend(io::read_indices(p)?);
        }
        if let Some(p) = &cfg.data.daily_indices {
            indices.extend(io::read_daily_indices(p)?);
        }
        for (i, s) in indices.iter().enumerate() {
            if indices[..i].iter().any(|o| o.name == s.name) || imputed.iter().any(|r| r.station_id == s.name) {
                return Err(PipelineError::Config(format!("series name {} is used twice", s.name)));
            }
        }

        let panel = build_panel(&imputed, &indices, true, study)?;
        log::info!(
            "ingest: {} stations, {} indices, {} months",
            imputed.len(),
            indices.len(),
            panel.len()
        );
        io::write_json(&self.path(STATIONS_JSON), &imputed)?;
        io::write_stations(&self.path("ingest/stations.csv"), &imputed)?;
        io::write_indices(&self.path("ingest/indices.csv"), &indices)?;
        io::write_json(&self.path(PANEL_JSON), &panel)?;
        io::write_json(&self.path(NORMALIZATION_JSON), &panel.normalization)
    }

    fn cluster(&self) -> Result<()> {
        let records: Vec<StationRecord> = io::read_json(&self.path(STATIONS_JSON))?;
        let c = &self.config.clustering;
        let assignment = cluster_stations(&records, c.n_components, c.distance_d)?;
        log::info!("cluster: {} clusters", assignment.n_clusters);
        io::write_json(&self.path(CLUSTERS_JSON), &assignment)?;
        let mut out = CsvOut::create(&self.path("cluster/clusters.csv"), &["station_id", "cluster_id"])?;
        for (s, k) in &assignment.assignments {
            out.row([s.clone(), k.to_string()])?;
        }
        out.finish()
    }

    fn physics(&self) -> Result<()> {
        let cfg = &self.config;
        let records: Vec<StationRecord> = io::read_json(&self.path(STATIONS_JSON))?;
        let winds = io::wind_values(&io::read_winds(&cfg.data.winds)?);
        let table = build_edge_feature_table(&records, &winds, cfg.physics.cw)?;
        io::write_json(&self.path(EDGE_FEATURES_JSON), &table)?;
        let mut out = CsvOut::create(&self.path("physics/edge_features.csv"), &["station_id", "feature"])?;
        for (s, v) in &table.features {
            out.row([s.clone(), float(*v)])?;
        }
        out.finish()?;
        if let Some(path) = &cfg.data.terrain {
            let terrain = io::read_terrain(path, cfg.physics.dx, cfg.physics.dy)?;
            let field = simulate_field(&terrain.grid, &cfg.physics.orographic(terrain.dx, terrain.dy))?;
            io::write_field(&self.path("physics/field.csv"), &field, true)?;
            io::write_field(&self.path("physics/field_raw.csv"), &field, false)?;
        }
        Ok(())
    }

    fn graph(&self) -> Result<()> {
        let cfg = &self.config.screening;
        let panel = self.panel()?;
        let clusters = self.clusters()?;
        let features: EdgeFeatureTable = io::read_json(&self.path(EDGE_FEATURES_JSON))?;
        let index_names: Vec<&str> = panel
            .columns
            .iter()
            .filter(|c| c.kind == ColumnKind::Index)
            .map(|c| c.name.as_str())
            .collect();
        let mut screening = CsvOut::create(
            &self.path("graph/screening.csv"),
            &["cluster_id", "index", "mean_abs_r", "accepted", "lag", "p_value"],
        )?;
        for k in 1..=clusters.n_clusters {
            let members = clusters.members(k);
            // Granger tests run on the cluster's mean standardized rainfall.
            let columns: Vec<&Vec<f64>> = members
                .iter()
                .map(|s| {
                    panel
                        .column(s)
                        .map(|c| &c.values)
                        .ok_or_else(|| CoreError::UnknownNode(s.to_string()))
                })
                .collect::<telerain_core::Result<_>>()?;
            let y: Vec<f64> = (0..panel.len())
                .map(|t| columns.iter().map(|c| c[t]).sum::<f64>() / columns.len() as f64)
                .collect();
            let mut accepted = Vec::new();
            for &index in &index_names {
                let outcome = match pearson_screen(&panel, index, &members, cfg.r_threshold, cfg.extreme_percentile) {
                    Ok(o) => o,
                    Err(CoreError::ZeroVariance(what)) => {
                        log::warn!("graph: cluster {k}, {index}: zero variance ({what}), rejected");
                        screening.row([
                            k.to_string(),
                            index.into(),
                            String::new(),
                            "false".into(),
                            String::new(),
                            String::new(),
                        ])?;
                        continue;
                    }
                    Err(e) => return Err(e.into()),
                };
                let (mut lag, mut p) = (String::new(), String::new());
                if outcome.accepted {
                    let x = &panel.column(index).expect("listed index").values;
                    let scan = granger_lag(index, &y, x, cfg.max_lag, cfg.alpha)?;
                    let selected = scan.selected.as_ref().map_or(0, |s| s.lag);
                    if let Some(s) = &scan.selected {
                        p = float(s.p_value);
                    }
                    lag = selected.to_string();
                    accepted.push(AcceptedIndex {
                        name: index.into(),
                        lag: selected as u32,
                    });
                }
                screening.row([
                    k.to_string(),
                    index.into(),
                    float(outcome.mean_abs_r),
                    outcome.accepted.to_string(),
                    lag,
                    p,
                ])?;
            }
            let graph = assemble_graph(k, &members, &accepted, &features, &cfg.forced, &index_names)?;
            log::info!(
                "graph: cluster {k}: {} stations, indices {:?}",
                members.len(),
                accepted.iter().map(|a| (&a.name, a.lag)).collect::<Vec<_>>()
            );
            io::write_json(&self.path(&graph_file(k)), &graph)?;
        }
        screening.finish()
    }

    fn fold_windows(&self, panel: &MonthlyPanel, ctx: &GraphContext) -> Result<Vec<FoldWindows>> {
        let t = &self.config.training;
        let windows = make_snapshots(panel, ctx, t.input_window, t.horizon, t.stride)?;
        Ok(two_fold_protocol(panel, &windows, &self.config.folds)?)
    }

    fn context(&self, k: usize, normalization: &NormalizationRecord) -> Result<GraphContext> {
        let graph: TeleconnectionGraph = io::read_json(&self.path(&graph_file(k)))?;
        Ok(GraphContext::new(&graph, normalization)?)
    }

    fn train(&self) -> Result<()> {
        let panel = self.panel()?;
        let ids = self.cluster_ids()?;
        let results: Vec<Result<Vec<Vec<String>>>> = self
            .pool
            .install(|| ids.par_iter().map(|&k| self.train_one(k, &panel)).collect());
        let mut summary = CsvOut::create(
            &self.path("train/summary.csv"),
            &[
                "cluster_id",
                "fold",
                "heads",
                "hidden",
                "layers",
                "dropout",
                "epochs",
                "best_epoch",
                "stop_reason",
                "val_rmse",
                "val_accuracy",
                "val_nse",
            ],
        )?;
        for rows in results {
            for row in rows? {
                summary.row(row)?;
            }
        }
        summary.finish()
    }

    fn train_one(&self, k: usize, panel: &MonthlyPanel) -> Result<Vec<Vec<String>>> {
        let t = &self.config.training;
        let ctx = self.context(k, &panel.normalization)?;
        let base = self.config.base_hyperparams();
        let mut rows = Vec::new();
        for fold in self.fold_windows(panel, &ctx)? {
            let started = Instant::now();
            let clock = move || started.elapsed().as_secs_f64();
            let result = grid_search(
                &ctx,
                &fold.train,
                &fold.validation,
                &t.grid,
                &base,
                t.objective,
                Some(&clock),
            )?;
            let name = &fold.spec.name;
            let dir = self.path(&checkpoint_dir(k, name));
            let best = &result.best;
            io::write_checkpoint(
                &dir,
                &result.best_weights,
                &io::Checkpoint {
                    cluster_id: k,
                    fold: name.clone(),
                    model: best.model_config(ctx.n_nodes(), t.horizon),
                    input_window: t.input_window,
                    horizon: t.horizon,
                    hyperparams: best.clone(),
                    normalization: NORMALIZATION_JSON.into(),
                    tensors: Vec::new(),
                    blob_sha256: String::new(),
                },
            )?;
            io::write_json(&dir.join("report.json"), &result.best_report)?;
            let mut board = CsvOut::create(
                &dir.join("leaderboard.csv"),
                &[
                    "rank",
                    "heads",
                    "hidden",
                    "layers",
                    "dropout",
                    "score",
                    "best_epoch",
                    "error",
                ],
            )?;
            for (i, e) in result.leaderboard.iter().enumerate() {
                let hp = &e.hyperparams;
                board.row([
                    (i + 1).to_string(),
                    hp.heads.to_string(),
                    hp.hidden.to_string(),
                    hp.layers.to_string(),
                    float(hp.dropout),
                    io::opt_float(e.score),
                    e.best_epoch.map(|b| b.to_string()).unwrap_or_default(),
                    e.error.clone().unwrap_or_default(),
                ])?;
            }
            board.finish()?;
            let report = &result.best_report;
            let m = report.final_metrics;
            log::info!(
                "train: cluster {k} {name}: best epoch {} of {}, validation NSE {}",
                report.best_epoch,
                report.epochs.len(),
                m.map_or("n/a".into(), |m| format!("{:.3}", m.nse))
            );
            rows.push(vec![
                k.to_string(),
                name.clone(),
                best.heads.to_string(),
                best.hidden.to_string(),
                best.layers.to_string(),
                float(best.dropout),
                report.epochs.len().to_string(),
                report.best_epoch.to_string(),
                format!("{:?}", report.stop_reason),
                io::opt_float(m.map(|m| m.rmse)),
                io::opt_float(m.map(|m| m.accuracy)),
                io::opt_float(m.map(|m| m.nse)),
            ]);
        }
        Ok(rows)
    }

    fn predict(&self) -> Result<()> {
        let panel = self.panel()?;
        let mut lead1 = CsvOut::create(
            &self.path(TRAIN_LEAD1_CSV),
            &["cluster_id", "fold", "station_id", "month", "observed", "predicted"],
        )?;
        let mut test = CsvOut::create(
            &self.path(TEST_PREDICTIONS_CSV),
            &[
                "cluster_id",
                "fold",
                "station_id",
                "origin",
                "horizon",
                "month",
                "observed",
                "predicted",
            ],
        )?;
        let mut forecasts = CsvOut::create(
            &self.path(FORECASTS_CSV),
            &["cluster_id", "station_id", "origin", "horizon", "month", "predicted"],
        )?;
        for k in self.cluster_ids()? {
            let ctx = self.context(k, &panel.normalization)?;
            let stations: Vec<String> = ctx.station_ids().map(String::from).collect();
            let folds = self.fold_windows(&panel, &ctx)?;
            let mut latest = None;
            for fold in &folds {
                let name = &fold.spec.name;
                let (weights, meta) = io::read_checkpoint(&self.path(&checkpoint_dir(k, name)))?;
                if meta.input_window != self.config.training.input_window
                    || meta.horizon != self.config.training.horizon
                {
                    return Err(PipelineError::Config(format!(
                        "checkpoint cluster {k} {name} was trained with a different window or horizon"
                    )));
                }
                for win in &fold.train {
                    let pred = rollout_forecast(win, &weights, &ctx)?;
                    let obs = unscale(&win.targets, &ctx);
                    for (s, id) in stations.iter().enumerate() {
                        lead1.row([
                            k.to_string(),
                            name.clone(),
                            id.clone(),
                            win.first_target().to_string(),
                            float(obs[s][0]),
                            float(pred[s][0]),
                        ])?;
                    }
                }
                for win in &fold.test {
                    write_window_rows(
                        &mut test,
                        k,
                        name,
                        &stations,
                        win,
                        &rollout_forecast(win, &weights, &ctx)?,
                        &ctx,
                    )?;
                }
                latest = Some(weights);
            }
            // The operational forecast uses the most recent fold's model.
            let weights = latest.expect("at least one fold");
            let (anchor, inputs) = latest_inputs(&panel, &ctx, self.config.training.input_window)?;
            let origin = anchor.offset(inputs.len() as i64 - 1);
            let pred = unscale(&forecast_scaled(&weights, &inputs, &ctx)?, &ctx);
            for (s, id) in stations.iter().enumerate() {
                for (h, v) in pred[s].iter().enumerate() {
                    forecasts.row([
                        k.to_string(),
                        id.clone(),
                        origin.to_string(),
                        (h + 1).to_string(),
                        origin.offset(h as i64 + 1).to_string(),
                        float(*v),
                    ])?;
                }
            }
        }
        lead1.finish()?;
        test.finish()?;
        forecasts.finish()
    }

    fn map_extremes(&self) -> Result<()> {
        let cfg = &self.config;
        let panel = self.panel()?;
        let clusters = self.clusters()?;
        let options = MappingOptions {
            calendar: cfg.calendar(),
            enable_dry: cfg.evt.enable_dry,
        };

        // (fold, station) → lead-1 training predictions.
        let lead1 = Table::read(&self.path(TRAIN_LEAD1_CSV))?;
        let mut predicted: BTreeMap<(String, String), Vec<(YearMonth, f64)>> = BTreeMap::new();
        let (fc, sc, mc, pc) = (
            lead1.column("fold")?,
            lead1.column("station_id")?,
            lead1.column("month")?,
            lead1.column("predicted")?,
        );
        for (line, rec) in &lead1.rows {
            predicted
                .entry((rec[fc].to_string(), rec[sc].to_string()))
                .or_default()
                .push((lead1.parse(*line, rec, mc)?, lead1.parse(*line, rec, pc)?));
        }

        let tasks: Vec<(String, Span, String, usize)> = cfg
            .folds
            .iter()
            .flat_map(|f| {
                clusters
                    .assignments
                    .iter()
                    .map(move |(s, k)| (f.name.clone(), f.train, s.clone(), *k))
            })
            .collect();
        let mappings: Vec<Result<((String, String), TailMapping)>> = self.pool.install(|| {
            tasks
                .par_iter()
                .map(|(fold, span, station, k)| {
                    let values = panel
                        .unscaled(station)
                        .ok_or_else(|| CoreError::UnknownNode(station.clone()))?;
                    let observed: Vec<(YearMonth, f64)> = panel
                        .months
                        .iter()
                        .zip(values)
                        .filter(|(m, _)| span.contains(**m))
                        .map(|(m, v)| (*m, v))
                        .collect();
                    let pred = predicted
                        .get(&(fold.clone(), station.clone()))
                        .map(Vec::as_slice)
                        .unwrap_or_default();
                    let mapping = build_tail_mapping(&observed, pred, station, *k, cfg.evt.percentile, &options)?;
                    Ok(((fold.clone(), station.clone()), mapping))
                })
                .collect()
        });
        let mappings: BTreeMap<(String, String), TailMapping> = mappings.into_iter().collect::<Result<_>>()?;

        let mut refused = CsvOut::create(
            &self.path("map-extremes/refused.csv"),
            &["fold", "station", "season", "reason"],
        )?;
        for f in &cfg.folds {
            let mut fits = Vec::new();
            for (s, _) in &clusters.assignments {
                let m = &mappings[&(f.name.clone(), s.clone())];
                for sm in &m.seasons {
                    fits.push(sm.observation.clone());
                    fits.push(sm.prediction.clone());
                }
                for (season, reason) in &m.refused {
                    log::warn!("map-extremes: {} {s} {season}: mapping disabled: {reason}", f.name);
                    refused.row([f.name.clone(), s.clone(), season.label().into(), reason.clone()])?;
                }
            }
            io::write_gpd_fits(&self.path(&format!("map-extremes/gpd_fits_{}.csv", f.name)), &fits)?;
        }
        refused.finish()?;

        let calendar = &options.calendar;
        let map_value = |fold: &str, station: &str, month: YearMonth, y: f64| -> f64 {
            let m = &mappings[&(fold.to_string(), station.to_string())];
            apply_tail_mapping(y, month, m, calendar).max(0.0)
        };

        let test = Table::read(&self.path(TEST_PREDICTIONS_CSV))?;
        let mut out = CsvOut::create(
            &self.path(TEST_MAPPED_CSV),
            &[
                "cluster_id",
                "fold",
                "station_id",
                "origin",
                "horizon",
                "month",
                "observed",
                "predicted",
                "mapped",
            ],
        )?;
        let (fc, sc, mc, pc) = (
            test.column("fold")?,
            test.column("station_id")?,
            test.column("month")?,
            test.column("predicted")?,
        );
        for (line, rec) in &test.rows {
            let y: f64 = test.parse(*line, rec, pc)?;
            let mapped = map_value(&rec[fc], &rec[sc], test.parse(*line, rec, mc)?, y);
            out.row(rec.iter().map(String::from).chain([float(mapped)]))?;
        }
        out.finish()?;

        let last = &cfg.folds.last().expect("validated non-empty").name;
        let fc_table = Table::read(&self.path(FORECASTS_CSV))?;
        let mut out = CsvOut::create(
            &self.path(FORECASTS_MAPPED_CSV),
            &[
                "cluster_id",
                "station_id",
                "origin",
                "horizon",
                "month",
                "predicted",
                "mapped",
            ],
        )?;
        let (sc, mc, pc) = (
            fc_table.column("station_id")?,
            fc_table.column("month")?,
            fc_table.column("predicted")?,
        );
        for (line, rec) in &fc_table.rows {
            let y: f64 = fc_table.parse(*line, rec, pc)?;
            let mapped = map_value(last, &rec[sc], fc_table.parse(*line, rec, mc)?, y);
            out.row(rec.iter().map(String::from).chain([float(mapped)]))?;
        }
        out.finish()
    }

    fn evaluate(&self) -> Result<()> {
        let t = Table::read(&self.path(TEST_MAPPED_CSV))?;
        let cols = ["cluster_id", "station_id", "horizon", "observed", "predicted", "mapped"]
            .map(|c| t.column(c))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        // (cluster, station, horizon) → (observed, raw, mapped), station
        // order as first seen.
        let mut order: Vec<(usize, String)> = Vec::new();
        let mut cells: BTreeMap<(usize, String, usize), [Vec<f64>; 3]> = BTreeMap::new();
        for (line, rec) in &t.rows {
            let k: usize = t.parse(*line, rec, cols[0])?;
            let s = rec[cols[1]].to_string();
            let h: usize = t.parse(*line, rec, cols[2])?;
            if !order.contains(&(k, s.clone())) {
                order.push((k, s.clone()));
            }
            let entry = cells.entry((k, s, h)).or_default();
            for (i, c) in cols[3..].iter().enumerate() {
                entry[i].push(t.parse(*line, rec, *c)?);
            }
        }
        let mut tables = [EvalTable::default(), EvalTable::default()];
        for (k, s) in &order {
            for ((_, _, h), v) in cells.range((*k, s.clone(), 0)..=(*k, s.clone(), usize::MAX)) {
                for (variant, table) in tables.iter_mut().enumerate() {
                    table.push(EvalCell::score(*k, s, *h, &v[0], &v[1 + variant])?);
                }
            }
        }

        const VARIANTS: [&str; 2] = ["attention_lstm", "attention_lstm_gpd"];
        let mut out = CsvOut::create(
            &self.path("evaluate/eval.csv"),
            &[
                "variant",
                "cluster_id",
                "station_id",
                "horizon",
                "count",
                "rmse",
                "accuracy",
                "accuracy_basis",
                "smape",
                "nse",
            ],
        )?;
        for (variant, table) in VARIANTS.iter().zip(&tables) {
            for c in &table.cells {
                out.row([
                    variant.to_string(),
                    c.cluster.to_string(),
                    c.station.clone(),
                    c.horizon.to_string(),
                    c.count.to_string(),
                    float(c.rmse),
                    float(c.accuracy),
                    format!("{:?}", c.accuracy_basis).to_lowercase(),
                    float(c.smape),
                    io::opt_float(c.nse),
                ])?;
            }
        }
        out.finish()?;

        let mut summary = CsvOut::create(
            &self.path("evaluate/summary.csv"),
            &["cluster", "metric", VARIANTS[0], VARIANTS[1]],
        )?;
        let scopes: Vec<Option<usize>> = tables[0].clusters().into_iter().map(Some).chain([None]).collect();
        for scope in scopes {
            let label = scope.map_or("all".to_string(), |k| k.to_string());
            let aggs = [tables[0].aggregate(scope), tables[1].aggregate(scope)];
            let metric = |f: &dyn Fn(&telerain_core::metrics::Aggregate) -> Option<f64>| {
                aggs.iter()
                    .map(|a| io::opt_float(a.as_ref().and_then(f)))
                    .collect::<Vec<_>>()
            };
            for (name, values) in [
                ("rmse", metric(&|a| Some(a.rmse))),
                ("accuracy", metric(&|a| Some(a.accuracy))),
                ("smape", metric(&|a| Some(a.smape))),
                ("nse", metric(&|a| a.nse)),
            ] {
                summary.row([label.clone(), name.to_string(), values[0].clone(), values[1].clone()])?;
            }
        }
        summary.finish()
    }

    fn render_map(&self) -> Result<()> {
        let cfg = &self.config.map;
        let records: Vec<StationRecord> = io::read_json(&self.path(STATIONS_JSON))?;
        let t = Table::read(&self.path(FORECASTS_MAPPED_CSV))?;
        let (sc, hc, vc) = (t.column("station_id")?, t.column("horizon")?, t.column("mapped")?);
        for &h in &cfg.horizons {
            let mut stations = Vec::new();
            for (line, rec) in &t.rows {
                if t.parse::<usize>(*line, rec, hc)? != h {
                    continue;
                }
                let r = records
                    .iter()
                    .find(|r| r.station_id == rec[sc])
                    .ok_or_else(|| t.error(*line, format!("unknown station {}", &rec[sc])))?;
                stations.push(StationValue {
                    lon: r.lon,
                    lat: r.lat,
                    value: t.parse(*line, rec, vc)?,
                });
            }
            if stations.is_empty() {
                return Err(PipelineError::Config(format!("no forecasts at horizon {h}")));
            }
            let spec = grid_around(&stations, cfg.step, cfg.margin);
            let raster = idw_interpolate(&stations, &spec, cfg.power)?;
            let (lo, hi) = raster.min_max();
            if lo == hi {
                log::warn!("render-map: horizon {h}: all cells equal {lo}, image is flat");
            }
            let stem = format!("forecast_h{h}");
            render::write_raster_csv(&self.path(&format!("render-map/{stem}.csv")), &raster)?;
            render::write_ppm(
                &self.path(&format!("render-map/{}", render::image_name(&stem, &raster))),
                &raster,
            )?;
        }
        Ok(())
    }
}

fn write_window_rows(
    out: &mut CsvOut,
    k: usize,
    fold: &str,
    stations: &[String],
    win: &SnapshotWindow,
    pred: &[Vec<f64>],
    ctx: &GraphContext,
) -> Result<()> {
    let obs = unscale(&win.targets, ctx);
    let origin = win.first_target().offset(-1);
    for (s, id) in stations.iter().enumerate() {
        for h in 0..win.horizon() {
            out.row([
                k.to_string(),
                fold.to_string(),
                id.clone(),
                origin.to_string(),
                (h + 1).to_string(),
                origin.offset(h as i64 + 1).to_string(),
                float(obs[s][h]),
                float(pred[s][h]),
            ])?;
        }
    }
    Ok(())
}

/// Grid covering the stations' bounding box plus `margin` degrees.
pub fn grid_around(stations: &[StationValue], step: f64, margin: f64) -> GridSpec {
    let (mut lon0, mut lon1, mut lat0, mut lat1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for s in stations {
        lon0 = lon0.min(s.lon);
        lon1 = lon1.max(s.lon);
        lat0 = lat0.min(s.lat);
        lat1 = lat1.max(s.lat);
    }
    let cells = |lo: f64, hi: f64| ((hi - lo + 2.0 * margin) / step).round() as usize + 1;
    GridSpec {
        lon_min: lon0 - margin,
        lat_min: lat0 - margin,
        step,
        nx: cells(lon0, lon1),
        ny: cells(lat0, lat1),
    }
}
