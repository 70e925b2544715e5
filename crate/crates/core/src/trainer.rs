//! Robust loss, optimizers, the epoch loop with early stopping, grid search
//! and chronological fold splitting.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calendar::YearMonth;
use crate::error::{Error, Result};
use crate::gat::Activation;
use crate::ingest::MonthlyPanel;
use crate::metrics;
use crate::recurrent::{
    forecast_scaled, unscale, window_loss_gradient, CellWeights, DropoutMasks, GraphContext, ModelConfig,
    SnapshotWindow, NODE_FEATURES,
};

/// Mean Huber loss and its gradient with respect to `pred`.
pub fn adaptive_huber(pred: &[f64], truth: &[f64], delta: f64) -> Result<(f64, Vec<f64>)> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            what: "huber inputs",
            expected: truth.len(),
            found: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("huber inputs"));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "delta",
            reason: format!("{delta} must be positive"),
        });
    }
    if pred.iter().chain(truth).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("huber inputs"));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(truth)
        .map(|(p, y)| {
            let r = p - y;
            if r.abs() <= delta {
                loss += 0.5 * r * r;
                r / n
            } else {
                loss += delta * (r.abs() - 0.5 * delta);
                delta * r.signum() / n
            }
        })
        .collect();
    Ok((loss / n, grad))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub heads: usize,
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
    pub lr: f64,
    pub delta: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub optimizer: OptimizerKind,
    /// Global gradient-norm bound; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub recurrent_projection: bool,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            heads: 8,
            hidden: 32,
            layers: 1,
            dropout: 0.0,
            lr: 0.01,
            delta: 1.0,
            max_epochs: 200,
            patience: 50,
            optimizer: OptimizerKind::Adam,
            clip_norm: Some(5.0),
            recurrent_projection: false,
            activation: Activation::Sigmoid,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason: String| Err(Error::InvalidParameter { name, reason });
        if self.heads == 0 || self.hidden == 0 || self.layers == 0 {
            return bad("hyperparameters", "heads, hidden and layers must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", format!("{} outside [0, 1)", self.dropout));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", format!("{} must be positive", self.lr));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad("delta", format!("{} must be positive", self.delta));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs", "must be positive".into());
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad("clip_norm", format!("{c} must be positive"));
            }
        }
        Ok(())
    }

    pub fn model_config(&self, n_nodes: usize, horizon: usize) -> ModelConfig {
        ModelConfig {
            n_nodes,
            in_dim: NODE_FEATURES,
            hidden: self.hidden,
            heads: self.heads,
            layers: self.layers,
            horizon,
            recurrent_projection: self.recurrent_projection,
            activation: self.activation,
            slope: crate::gat::DEFAULT_SLOPE,
        }
    }
}

/// Adam with the usual bias correction, or plain gradient descent.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: &CellWeights) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| alloc::vec![0.0; t.len()]).collect();
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut CellWeights, grad: &CellWeights) {
        self.step += 1;
        let grads = grad.tensors();
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.tensors_mut().into_iter().zip(grads) {
                    crate::linalg::axpy(-self.lr, g, p);
                }
            }
            OptimizerKind::Adam => {
                let c1 = 1.0 - libm::pow(self.beta1, self.step as f64);
                let c2 = 1.0 - libm::pow(self.beta2, self.step as f64);
                for (((p, g), m), v) in params
                    .tensors_mut()
                    .into_iter()
                    .zip(grads)
                    .zip(&mut self.m)
                    .zip(&mut self.v)
                {
                    for k in 0..p.len() {
                        m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                        v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                        p[k] -= self.lr * (m[k] / c1) / (libm::sqrt(v[k] / c2) + self.eps);
                    }
                }
            }
        }
    }
}

/// Scales `grad` down to `max_norm` when its global norm exceeds it.
/// Returns whether clipping was applied.
pub fn clip_global_norm(grad: &mut CellWeights, max_norm: f64) -> bool {
    let norm = libm::sqrt(grad.tensors().iter().flat_map(|t| t.iter()).map(|v| v * v).sum());
    if norm > max_norm {
        let s = max_norm / norm;
        grad.tensors_mut()
            .into_iter()
            .for_each(|t| t.iter_mut().for_each(|v| *v *= s));
        true
    } else {
        false
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStopping,
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub clipped_steps: usize,
    pub wall_seconds: Option<f64>,
}

/// Validation scores in physical units, pooled over windows and horizons.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationMetrics {
    pub rmse: f64,
    pub accuracy: f64,
    /// Mean over stations of the per-station NSE.
    pub nse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop_reason: StopReason,
    pub final_metrics: Option<ValidationMetrics>,
    pub n_params: usize,
}

fn mean_loss(w: &CellWeights, windows: &[SnapshotWindow], ctx: &GraphContext, delta: f64) -> Result<f64> {
    let mut total = 0.0;
    for win in windows {
        let pred = forecast_scaled(w, &win.inputs, ctx)?;
        total += adaptive_huber(pred.as_slice(), win.targets.as_slice(), delta)?.0;
    }
    Ok(total / windows.len() as f64)
}

/// Observed and predicted values in physical units, per station, pooled
/// over windows and horizons.
pub fn station_pairs(
    w: &CellWeights,
    windows: &[SnapshotWindow],
    ctx: &GraphContext,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let mut pairs = alloc::vec![(Vec::new(), Vec::new()); ctx.station_nodes.len()];
    for win in windows {
        let pred = unscale(&forecast_scaled(w, &win.inputs, ctx)?, ctx);
        let obs = unscale(&win.targets, ctx);
        for (s, (o, p)) in obs.into_iter().zip(pred).enumerate() {
            pairs[s].0.extend(o);
            pairs[s].1.extend(p);
        }
    }
    Ok(pairs)
}

pub fn validation_metrics(
    w: &CellWeights,
    windows: &[SnapshotWindow],
    ctx: &GraphContext,
) -> Result<ValidationMetrics> {
    let pairs = station_pairs(w, windows, ctx)?;
    let obs: Vec<f64> = pairs.iter().flat_map(|p| p.0.iter().copied()).collect();
    let pred: Vec<f64> = pairs.iter().flat_map(|p| p.1.iter().copied()).collect();
    let nses = pairs
        .iter()
        .map(|(o, p)| metrics::nse(o, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(ValidationMetrics {
        rmse: metrics::rmse(&obs, &pred)?,
        accuracy: metrics::accuracy(&obs, &pred)?.value,
        nse: nses.iter().sum::<f64>() / nses.len() as f64,
    })
}

/// Clock used for per-epoch wall time; the core has no clock of its own.
pub type Timer<'a> = &'a dyn Fn() -> f64;

/// Trains one cluster model: one window per optimizer step, shuffled each
/// epoch, early stopping on the validation Huber loss. Returns the weights
/// of the best validation epoch.
pub fn train_cluster(
    ctx: &GraphContext,
    train: &[SnapshotWindow],
    validation: &[SnapshotWindow],
    hp: &Hyperparams,
    timer: Option<Timer<'_>>,
) -> Result<(CellWeights, TrainReport)> {
    hp.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training windows"));
    }
    if validation.is_empty() {
        return Err(Error::EmptyInput("validation windows"));
    }
    let horizon = train[0].horizon();
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut weights = hp.model_config(ctx.n_nodes(), horizon).init(&mut rng)?;
    let mut optimizer = Optimizer::new(hp.optimizer, hp.lr, &weights);
    let mut best = weights.clone();
    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stop_reason: StopReason::MaxEpochs,
        final_metrics: None,
        n_params: weights.n_params(),
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stale = 0usize;

    for epoch in 1..=hp.max_epochs {
        let started = timer.map(|t| t());
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut clipped = 0;
        for &i in &order {
            let win = &train[i];
            let masks = if hp.dropout > 0.0 {
                Some(DropoutMasks::sample(&mut rng, hp.dropout, win.input_len(), &weights)?)
            } else {
                None
            };
            let (loss, mut grad) = window_loss_gradient(&weights, win, ctx, hp.delta, masks.as_ref())?;
            if !loss.is_finite() || !grad.is_finite() {
                report.stop_reason = StopReason::Diverged;
                return Err(Error::Diverged(Box::new(report)));
            }
            if let Some(max_norm) = hp.clip_norm {
                clipped += usize::from(clip_global_norm(&mut grad, max_norm));
            }
            optimizer.step(&mut weights, &grad);
            total += loss;
        }
        let train_loss = total / train.len() as f64;
        let val_loss = if weights.is_finite() {
            mean_loss(&weights, validation, ctx, hp.delta).unwrap_or(f64::NAN)
        } else {
            f64::NAN
        };
        report.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            clipped_steps: clipped,
            wall_seconds: timer.zip(started).map(|(t, s)| t() - s),
        });
        if !train_loss.is_finite() || !val_loss.is_finite() {
            report.stop_reason = StopReason::Diverged;
            return Err(Error::Diverged(Box::new(report)));
        }
        if val_loss < report.best_val_loss {
            report.best_val_loss = val_loss;
            report.best_epoch = epoch;
            best = weights.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale > hp.patience {
                report.stop_reason = StopReason::EarlyStopping;
                break;
            }
        }
    }
    report.final_metrics = validation_metrics(&best, validation, ctx).ok();
    Ok((best, report))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Accuracy,
    Rmse,
    Nse,
}

impl Objective {
    pub fn maximize(self) -> bool {
        !matches!(self, Objective::Rmse)
    }

    pub fn score(self, m: &ValidationMetrics) -> f64 {
        match self {
            Objective::Accuracy => m.accuracy,
            Objective::Rmse => m.rmse,
            Objective::Nse => m.nse,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub heads: Vec<usize>,
    pub hidden: Vec<usize>,
    pub layers: Vec<usize>,
    pub dropout: Vec<f64>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        Self {
            heads: alloc::vec![1, 4, 8, 16],
            hidden: alloc::vec![16, 32, 64],
            layers: alloc::vec![1, 2, 3],
            dropout: alloc::vec![0.0, 0.2, 0.5],
        }
    }
}

impl HyperGrid {
    pub fn single(hp: &Hyperparams) -> Self {
        Self {
            heads: alloc::vec![hp.heads],
            hidden: alloc::vec![hp.hidden],
            layers: alloc::vec![hp.layers],
            dropout: alloc::vec![hp.dropout],
        }
    }

    /// Every combination, heads varying slowest, on top of `base`.
    pub fn points(&self, base: &Hyperparams) -> Vec<Hyperparams> {
        let mut out = Vec::new();
        for &heads in &self.heads {
            for &hidden in &self.hidden {
                for &layers in &self.layers {
                    for &dropout in &self.dropout {
                        out.push(Hyperparams {
                            heads,
                            hidden,
                            layers,
                            dropout,
                            ..base.clone()
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub hyperparams: Hyperparams,
    pub score: Option<f64>,
    pub best_epoch: Option<usize>,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct GridResult {
    pub best: Hyperparams,
    pub best_weights: CellWeights,
    pub best_report: TrainReport,
    /// Scored entries best first, failures last.
    pub leaderboard: Vec<LeaderboardEntry>,
}

/// Sorts scored entries best first; failed entries keep their order at
/// the end.
pub fn sort_leaderboard(entries: &mut [LeaderboardEntry], objective: Objective) {
    entries.sort_by(|a, b| match (a.score, b.score) {
        (Some(x), Some(y)) => {
            if objective.maximize() {
                y.total_cmp(&x)
            } else {
                x.total_cmp(&y)
            }
        }
        (Some(_), None) => core::cmp::Ordering::Less,
        (None, Some(_)) => core::cmp::Ordering::Greater,
        (None, None) => core::cmp::Ordering::Equal,
    });
}

/// Trains every grid point and ranks them on the validation windows.
/// Failing points are recorded on the leaderboard.
pub fn grid_search(
    ctx: &GraphContext,
    train: &[SnapshotWindow],
    validation: &[SnapshotWindow],
    grid: &HyperGrid,
    base: &Hyperparams,
    objective: Objective,
    timer: Option<Timer<'_>>,
) -> Result<GridResult> {
    let points = grid.points(base);
    if points.is_empty() {
        return Err(Error::EmptyInput("hyperparameter grid"));
    }
    let mut leaderboard = Vec::with_capacity(points.len());
    let mut best: Option<(f64, Hyperparams, CellWeights, TrainReport)> = None;
    for hp in points {
        let outcome = train_cluster(ctx, train, validation, &hp, timer).and_then(|(w, report)| {
            let m = report
                .final_metrics
                .map(Ok)
                .unwrap_or_else(|| validation_metrics(&w, validation, ctx))?;
            Ok((objective.score(&m), w, report))
        });
        match outcome {
            Ok((score, w, report)) => {
                leaderboard.push(LeaderboardEntry {
                    hyperparams: hp.clone(),
                    score: Some(score),
                    best_epoch: Some(report.best_epoch),
                    error: None,
                });
                let better =
                    best.as_ref()
                        .is_none_or(|(s, ..)| if objective.maximize() { score > *s } else { score < *s });
                if better {
                    best = Some((score, hp, w, report));
                }
            }
            Err(e) => leaderboard.push(LeaderboardEntry {
                hyperparams: hp,
                score: None,
                best_epoch: None,
                error: Some(format!("{e}")),
            }),
        }
    }
    sort_leaderboard(&mut leaderboard, objective);
    let (_, best, best_weights, best_report) = best.ok_or_else(|| Error::InvalidParameter {
        name: "grid",
        reason: "every grid point failed".into(),
    })?;
    Ok(GridResult {
        best,
        best_weights,
        best_report,
        leaderboard,
    })
}

/// Inclusive month span.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: YearMonth,
    pub end: YearMonth,
}

impl Span {
    pub fn new(start: YearMonth, end: YearMonth) -> Self {
        Self { start, end }
    }

    /// Month count; zero for an inverted span.
    pub fn months(&self) -> usize {
        (self.start.months_until(self.end) + 1).max(0) as usize
    }

    pub fn contains(&self, m: YearMonth) -> bool {
        self.start <= m && m <= self.end
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub name: String,
    pub train: Span,
    pub validation: Span,
    pub test: Span,
}

impl FoldSpec {
    pub fn validate(&self) -> Result<()> {
        for (label, span) in [
            ("train", self.train),
            ("validation", self.validation),
            ("test", self.test),
        ] {
            if span.months() == 0 {
                return Err(Error::OverlappingSplits(format!("{}: empty {label} span", self.name)));
            }
        }
        if self.train.end >= self.validation.start || self.validation.end >= self.test.start {
            return Err(Error::OverlappingSplits(format!(
                "{}: spans must be ordered train < validation < test",
                self.name
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FoldWindows {
    pub spec: FoldSpec,
    pub train: Vec<SnapshotWindow>,
    pub validation: Vec<SnapshotWindow>,
    pub test: Vec<SnapshotWindow>,
}

/// Windows whose targets fall entirely inside `span`; their inputs may
/// reach back before it.
pub fn windows_in(windows: &[SnapshotWindow], span: Span) -> Vec<SnapshotWindow> {
    windows
        .iter()
        .filter(|w| span.contains(w.first_target()) && span.contains(w.last_target()))
        .cloned()
        .collect()
}

/// Splits `windows` chronologically per fold. Every span must lie inside
/// the panel and yield at least one window.
pub fn two_fold_protocol(
    panel: &MonthlyPanel,
    windows: &[SnapshotWindow],
    folds: &[FoldSpec],
) -> Result<Vec<FoldWindows>> {
    if folds.is_empty() {
        return Err(Error::EmptyInput("fold specs"));
    }
    let (Some(&first), Some(&last)) = (panel.months.first(), panel.months.last()) else {
        return Err(Error::EmptyInput("panel"));
    };
    folds
        .iter()
        .map(|f| {
            f.validate()?;
            if f.train.start < first || f.test.end > last {
                return Err(Error::EmptySpan);
            }
            let split = FoldWindows {
                spec: f.clone(),
                train: windows_in(windows, f.train),
                validation: windows_in(windows, f.validation),
                test: windows_in(windows, f.test),
            };
            for (label, set) in [
                ("train", &split.train),
                ("validation", &split.validation),
                ("test", &split.test),
            ] {
                if set.is_empty() {
                    return Err(Error::OverlappingSplits(format!(
                        "{}: no complete window has its targets in the {label} span",
                        f.name
                    )));
                }
            }
            Ok(split)
        })
        .collect()
}

/// Arithmetic mean across folds.
pub fn average_folds(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn huber_branches() {
        assert_eq!(adaptive_huber(&[0.5], &[0.0], 1.0).unwrap().0, 0.125);
        assert_eq!(adaptive_huber(&[2.0], &[0.0], 1.0).unwrap().0, 1.5);
        let (l, g) = adaptive_huber(&[1.0], &[0.0], 1.0).unwrap();
        assert_eq!(l, 0.5);
        assert_eq!(g, alloc::vec![1.0]);
        let (_, g) = adaptive_huber(&[-3.0, 0.25], &[0.0, 0.0], 1.0).unwrap();
        assert_eq!(g, alloc::vec![-0.5, 0.125]);
        assert!(adaptive_huber(&[1.0], &[0.0], 0.0).is_err());
        assert!(adaptive_huber(&[f64::NAN], &[0.0], 1.0).is_err());
    }

    #[test]
    fn grid_enumeration() {
        assert_eq!(HyperGrid::default().points(&Hyperparams::default()).len(), 108);
        let hp = Hyperparams::default();
        let pts = HyperGrid::single(&hp).points(&hp);
        assert_eq!(pts, alloc::vec![hp]);
    }

    #[test]
    fn leaderboard_order() {
        let entry = |score| LeaderboardEntry {
            hyperparams: Hyperparams::default(),
            score,
            best_epoch: None,
            error: None,
        };
        let mut v = alloc::vec![entry(Some(80.0)), entry(None), entry(Some(95.0)), entry(Some(90.0))];
        sort_leaderboard(&mut v, Objective::Accuracy);
        let s: Vec<_> = v.iter().map(|e| e.score).collect();
        assert_eq!(s, alloc::vec![Some(95.0), Some(90.0), Some(80.0), None]);
        sort_leaderboard(&mut v, Objective::Rmse);
        assert_eq!(v[0].score, Some(80.0));
    }

    #[test]
    fn fold_validation() {
        let ym = |y, m| YearMonth::new(y, m).unwrap();
        let fold = FoldSpec {
            name: "fold1".into(),
            train: Span::new(ym(1982, 1), ym(2019, 12)),
            validation: Span::new(ym(2020, 1), ym(2020, 12)),
            test: Span::new(ym(2021, 1), ym(2021, 12)),
        };
        fold.validate().unwrap();
        assert_eq!(fold.train.months(), 456);
        assert_eq!(fold.validation.months(), 12);
        assert_eq!(fold.test.months(), 12);
        let mut empty = fold.clone();
        empty.test = Span::new(ym(2022, 1), ym(2021, 12));
        assert!(matches!(empty.validate(), Err(Error::OverlappingSplits(_))));
        let mut overlap = fold;
        overlap.validation.start = ym(2019, 6);
        assert!(overlap.validate().is_err());
        assert_eq!(average_folds(&[0.7, 0.7]), Some(0.7));
    }
}
