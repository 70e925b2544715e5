//! Season-aware peaks-over-threshold modelling: season calendars,
//! percentile thresholds, Generalized Pareto fitting by profile likelihood,
//! and quantile mapping of predicted tails onto observed tails.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::calendar::YearMonth;
use crate::error::{Error, Result};

/// Shapes with `|ξ|` below this use the exponential limit.
pub const XI_ZERO: f64 = 1e-9;
/// Probability cap applied before inverting an observation fit.
pub const P_MAX: f64 = 1.0 - 1e-6;
/// A fit needs strictly more exceedances than this.
pub const MIN_EXCEEDANCES: usize = 10;
pub const XI_MIN: f64 = -0.99;
pub const XI_MAX: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Season {
    SwMonsoon,
    NeMonsoon,
    Onset,
    Peak,
    Dry,
}

impl Season {
    pub const ALL: [Season; 5] = [
        Season::SwMonsoon,
        Season::NeMonsoon,
        Season::Onset,
        Season::Peak,
        Season::Dry,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Season::SwMonsoon => "sw_monsoon",
            Season::NeMonsoon => "ne_monsoon",
            Season::Onset => "onset",
            Season::Peak => "peak",
            Season::Dry => "dry",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.label() == label)
    }

    pub fn is_wet(self) -> bool {
        self != Season::Dry
    }
}

impl fmt::Display for Season {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeasonFamily {
    /// SW monsoon May–Sep, NE monsoon Oct–Dec, dry Jan–Apr.
    Southern,
    /// Onset Mar–May, peak Jun–Oct, dry Nov–Feb.
    Northern,
}

impl SeasonFamily {
    pub fn season(self, month: u8) -> Season {
        match (self, month) {
            (SeasonFamily::Southern, 5..=9) => Season::SwMonsoon,
            (SeasonFamily::Southern, 10..=12) => Season::NeMonsoon,
            (SeasonFamily::Southern, _) => Season::Dry,
            (SeasonFamily::Northern, 3..=5) => Season::Onset,
            (SeasonFamily::Northern, 6..=10) => Season::Peak,
            (SeasonFamily::Northern, _) => Season::Dry,
        }
    }

    pub fn seasons(self) -> [Season; 3] {
        match self {
            SeasonFamily::Southern => [Season::SwMonsoon, Season::NeMonsoon, Season::Dry],
            SeasonFamily::Northern => [Season::Onset, Season::Peak, Season::Dry],
        }
    }
}

/// Maps `(cluster, calendar month)` to a season. Clusters listed in
/// `southern` follow the southern family, all others the northern one.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeasonCalendar {
    pub southern: Vec<usize>,
}

impl Default for SeasonCalendar {
    fn default() -> Self {
        Self {
            southern: (1..=4).collect(),
        }
    }
}

impl SeasonCalendar {
    pub fn family(&self, cluster: usize) -> SeasonFamily {
        if self.southern.contains(&cluster) {
            SeasonFamily::Southern
        } else {
            SeasonFamily::Northern
        }
    }

    pub fn season(&self, cluster: usize, month: YearMonth) -> Season {
        self.family(cluster).season(month.month)
    }

    pub fn seasons(&self, cluster: usize) -> [Season; 3] {
        self.family(cluster).seasons()
    }
}

/// Empirical `q`-th percentile (`q` in `[0, 100]`) by linear interpolation
/// between order statistics at position `(n − 1)·q/100`.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("percentile values"));
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::InvalidParameter {
            name: "percentile",
            reason: format!("{q} outside [0, 100]"),
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("percentile values"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = (sorted.len() - 1) as f64 * q / 100.0;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotSample {
    pub threshold: f64,
    pub excesses: Vec<f64>,
    pub max_value: f64,
}

/// Threshold at the `q`-th percentile and the excesses `y − u` of values
/// strictly above it.
pub fn pot_excesses(values: &[f64], q: f64) -> Result<PotSample> {
    let threshold = percentile(values, q)?;
    let first = values[0];
    if values.iter().all(|&v| v == first) {
        return Err(Error::DegeneratePercentile);
    }
    Ok(PotSample {
        threshold,
        excesses: values
            .iter()
            .filter(|&&v| v > threshold)
            .map(|&v| v - threshold)
            .collect(),
        max_value: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Values whose month falls in `season` for `cluster`.
pub fn seasonal_values(
    series: &[(YearMonth, f64)],
    calendar: &SeasonCalendar,
    cluster: usize,
    season: Season,
) -> Vec<f64> {
    series
        .iter()
        .filter(|(m, _)| calendar.season(cluster, *m) == season)
        .map(|&(_, v)| v)
        .collect()
}

fn check_scale(scale: f64) -> Result<()> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "gpd scale",
            reason: format!("{scale} must be positive and finite"),
        });
    }
    Ok(())
}

/// Upper end of the excess support, finite only for `ξ < 0`.
pub fn gpd_upper(shape: f64, scale: f64) -> Option<f64> {
    (shape < -XI_ZERO).then(|| -scale / shape)
}

/// `P(Y − u ≤ excess)` for a GPD with shape `ξ` and scale `a_u`.
pub fn gpd_cdf(excess: f64, shape: f64, scale: f64) -> Result<f64> {
    check_scale(scale)?;
    if !excess.is_finite() || !shape.is_finite() {
        return Err(Error::NonFinite("gpd cdf arguments"));
    }
    if excess < 0.0 {
        return Err(Error::OutsideSupport {
            excess,
            upper: gpd_upper(shape, scale).unwrap_or(f64::INFINITY),
        });
    }
    if shape.abs() < XI_ZERO {
        return Ok(-libm::expm1(-excess / scale));
    }
    if let Some(upper) = gpd_upper(shape, scale) {
        if excess > upper * (1.0 + 1e-12) {
            return Err(Error::OutsideSupport { excess, upper });
        }
        if excess >= upper {
            return Ok(1.0);
        }
    }
    let t = libm::log1p(shape * excess / scale);
    Ok(-libm::expm1(-t / shape))
}

/// Excess at probability `p`, the exact inverse of [`gpd_cdf`].
pub fn gpd_quantile(p: f64, shape: f64, scale: f64) -> Result<f64> {
    check_scale(scale)?;
    if !p.is_finite() || !shape.is_finite() || !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter {
            name: "probability",
            reason: format!("{p} outside [0, 1]"),
        });
    }
    if p == 1.0 {
        return gpd_upper(shape, scale).ok_or(Error::InfiniteQuantile(p));
    }
    let l = libm::log1p(-p);
    if shape.abs() < XI_ZERO {
        return Ok(-scale * l);
    }
    Ok(scale * libm::expm1(-shape * l) / shape)
}

/// GPD log-likelihood of `excesses`; `-∞` outside the support.
pub fn gpd_log_likelihood(excesses: &[f64], shape: f64, scale: f64) -> f64 {
    if !(scale > 0.0) {
        return f64::NEG_INFINITY;
    }
    let n = excesses.len() as f64;
    if shape.abs() < XI_ZERO {
        return -n * libm::log(scale) - excesses.iter().sum::<f64>() / scale;
    }
    let mut acc = 0.0;
    for &x in excesses {
        let t = 1.0 + shape * x / scale;
        if t <= 0.0 {
            return f64::NEG_INFINITY;
        }
        acc += libm::log(t);
    }
    -n * libm::log(scale) - (1.0 + 1.0 / shape) * acc
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpdEstimate {
    pub shape: f64,
    pub scale: f64,
    pub log_likelihood: f64,
    /// False when the shape sits on a search bound or the refinement ran
    /// out of iterations.
    pub converged: bool,
}

/// Scale maximizing the likelihood at fixed `shape`: the root of
/// `Σ x/(a + ξx) = n/(1 + ξ)`, which is monotone in `a`.
fn profile_scale(excesses: &[f64], max_x: f64, mean_x: f64, shape: f64) -> f64 {
    if shape.abs() < XI_ZERO {
        return mean_x;
    }
    let n = excesses.len() as f64;
    let target = n / (1.0 + shape);
    let score = |a: f64| excesses.iter().map(|&x| x / (a + shape * x)).sum::<f64>() - target;

    let mut lo = if shape < 0.0 { -shape * max_x } else { 0.0 };
    // Score falls from +∞ (or n/ξ − target > 0) at `lo` towards −target.
    let mut hi = (lo.max(mean_x)).max(f64::MIN_POSITIVE) * 2.0;
    while score(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if score(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Maximum-likelihood GPD fit by a profile search over `ξ ∈ [−0.99, 2]`
/// with the scale solved exactly at each `ξ`.
pub fn fit_gpd_mle(excesses: &[f64]) -> Result<GpdEstimate> {
    if excesses.len() <= MIN_EXCEEDANCES {
        return Err(Error::TooFewExceedances {
            found: excesses.len(),
            required: MIN_EXCEEDANCES,
        });
    }
    if excesses.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("excesses"));
    }
    if excesses.iter().any(|&x| x < 0.0) {
        return Err(Error::InvalidParameter {
            name: "excesses",
            reason: "excesses must be non-negative".into(),
        });
    }
    let max_x = excesses.iter().copied().fold(0.0, f64::max);
    if max_x <= 0.0 {
        return Err(Error::DegeneratePercentile);
    }
    // Search on excesses divided by their mean so the path does not depend
    // on the data's units.
    let unit = excesses.iter().sum::<f64>() / excesses.len() as f64;
    let x: Vec<f64> = excesses.iter().map(|v| v / unit).collect();
    let max_x = max_x / unit;
    let profile = |xi: f64| {
        let a = profile_scale(&x, max_x, 1.0, xi);
        (gpd_log_likelihood(&x, xi, a), a)
    };

    const STEPS: usize = 60;
    let step = (XI_MAX - XI_MIN) / STEPS as f64;
    let mut best_i = 0;
    let mut best_ll = f64::NEG_INFINITY;
    for i in 0..=STEPS {
        let (ll, _) = profile(XI_MIN + step * i as f64);
        if ll > best_ll {
            best_ll = ll;
            best_i = i;
        }
    }

    let mut lo = XI_MIN + step * best_i.saturating_sub(1) as f64;
    let mut hi = (XI_MIN + step * (best_i + 1) as f64).min(XI_MAX);
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = profile(x1).0;
    let mut f2 = profile(x2).0;
    let mut refined = false;
    for _ in 0..200 {
        if hi - lo < 1e-10 {
            refined = true;
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = profile(x2).0;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = profile(x1).0;
        }
    }

    let mut shape = 0.5 * (lo + hi);
    let (mut ll, mut scale) = profile(shape);
    // Guard against the refinement settling below the best grid point.
    let grid_xi = XI_MIN + step * best_i as f64;
    if best_ll > ll {
        shape = grid_xi;
        (ll, scale) = profile(grid_xi);
    }
    if !ll.is_finite() {
        return Err(Error::NonFinite("gpd log-likelihood"));
    }
    let at_bound = (shape - XI_MIN).abs() < 1e-6 || (XI_MAX - shape).abs() < 1e-6;
    Ok(GpdEstimate {
        shape,
        scale: scale * unit,
        log_likelihood: ll - excesses.len() as f64 * libm::log(unit),
        converged: refined && !at_bound,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitSource {
    Observation,
    Prediction,
}

impl FitSource {
    pub fn label(self) -> &'static str {
        match self {
            FitSource::Observation => "observation",
            FitSource::Prediction => "prediction",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        match label {
            "observation" => Some(FitSource::Observation),
            "prediction" => Some(FitSource::Prediction),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpdFit {
    pub station_id: String,
    pub season: Season,
    pub source: FitSource,
    /// Threshold `u` in mm/month.
    pub threshold: f64,
    pub shape: f64,
    pub scale: f64,
    pub n_exceedances: usize,
    /// Largest value of the fitted series; mapped values never exceed it.
    pub cap: f64,
    pub converged: bool,
}

impl GpdFit {
    pub fn validate(&self) -> Result<()> {
        check_scale(self.scale)?;
        if !self.threshold.is_finite() || !self.shape.is_finite() || !self.cap.is_finite() {
            return Err(Error::NonFinite("gpd fit"));
        }
        if self.n_exceedances <= MIN_EXCEEDANCES {
            return Err(Error::TooFewExceedances {
                found: self.n_exceedances,
                required: MIN_EXCEEDANCES,
            });
        }
        if self.cap < self.threshold {
            return Err(Error::InvalidParameter {
                name: "gpd cap",
                reason: format!("cap {} below threshold {}", self.cap, self.threshold),
            });
        }
        Ok(())
    }

    pub fn cdf(&self, excess: f64) -> Result<f64> {
        gpd_cdf(excess, self.shape, self.scale)
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        gpd_quantile(p, self.shape, self.scale)
    }
}

/// Thresholds `values` at the `q`-th percentile and fits the excesses.
pub fn fit_pot(values: &[f64], q: f64, station: &str, season: Season, source: FitSource) -> Result<GpdFit> {
    let sample = pot_excesses(values, q)?;
    let est = fit_gpd_mle(&sample.excesses)?;
    Ok(GpdFit {
        station_id: station.into(),
        season,
        source,
        threshold: sample.threshold,
        shape: est.shape,
        scale: est.scale,
        n_exceedances: sample.excesses.len(),
        cap: sample.max_value,
        converged: est.converged,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeasonMapping {
    pub season: Season,
    pub observation: GpdFit,
    pub prediction: GpdFit,
    pub enabled: bool,
}

impl SeasonMapping {
    /// Identity below the prediction threshold; from it upwards the
    /// prediction-tail probability is carried to the observation tail and
    /// clamped to the observation cap.
    pub fn map(&self, y_pred: f64) -> f64 {
        let pred = &self.prediction;
        let obs = &self.observation;
        if !self.enabled || !y_pred.is_finite() || y_pred < pred.threshold {
            return y_pred;
        }
        let excess = y_pred - pred.threshold;
        let p = match pred.cdf(excess) {
            Ok(p) => p,
            Err(Error::OutsideSupport { .. }) => 1.0,
            Err(_) => return y_pred,
        };
        let Ok(q) = obs.quantile(p.min(P_MAX)) else {
            return y_pred;
        };
        (obs.threshold + q).min(obs.cap)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailMapping {
    pub station_id: String,
    pub cluster_id: usize,
    pub percentile: f64,
    pub seasons: Vec<SeasonMapping>,
    /// Seasons without a usable pair of fits and the reason.
    pub refused: Vec<(Season, String)>,
}

impl TailMapping {
    pub fn season(&self, season: Season) -> Option<&SeasonMapping> {
        self.seasons.iter().find(|s| s.season == season)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MappingOptions {
    pub calendar: SeasonCalendar,
    pub enable_dry: bool,
}

/// Fits paired observation and prediction tails for every season of the
/// station's cluster. Seasons where either fit is refused stay unmapped.
pub fn build_tail_mapping(
    observed: &[(YearMonth, f64)],
    predicted: &[(YearMonth, f64)],
    station: &str,
    cluster: usize,
    q: f64,
    options: &MappingOptions,
) -> Result<TailMapping> {
    if !(90.0..=95.0).contains(&q) {
        return Err(Error::InvalidParameter {
            name: "percentile",
            reason: format!("{q} outside [90, 95]"),
        });
    }
    if observed.is_empty() || predicted.is_empty() {
        return Err(Error::EmptyInput("tail mapping series"));
    }
    let cal = &options.calendar;
    let mut seasons = Vec::new();
    let mut refused = Vec::new();
    for season in cal.seasons(cluster) {
        let obs = seasonal_values(observed, cal, cluster, season);
        let pred = seasonal_values(predicted, cal, cluster, season);
        let fits = (|| {
            if obs.is_empty() || pred.is_empty() {
                return Err(Error::EmptyInput("season values"));
            }
            Ok((
                fit_pot(&obs, q, station, season, FitSource::Observation)?,
                fit_pot(&pred, q, station, season, FitSource::Prediction)?,
            ))
        })();
        match fits {
            Ok((observation, prediction)) => seasons.push(SeasonMapping {
                season,
                observation,
                prediction,
                enabled: season.is_wet() || options.enable_dry,
            }),
            Err(e) => refused.push((season, format!("{e}"))),
        }
    }
    Ok(TailMapping {
        station_id: station.into(),
        cluster_id: cluster,
        percentile: q,
        seasons,
        refused,
    })
}

/// Corrects a prediction for `month` using the mapping of that month's
/// season; identity when the season has no enabled mapping.
pub fn apply_tail_mapping(y_pred: f64, month: YearMonth, mapping: &TailMapping, calendar: &SeasonCalendar) -> f64 {
    let season = calendar.season(mapping.cluster_id, month);
    match mapping.season(season) {
        Some(m) => m.map(y_pred),
        None => y_pred,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calendar_families() {
        let cal = SeasonCalendar::default();
        let ym = |m| YearMonth::new(2001, m).unwrap();
        assert_eq!(cal.season(1, ym(5)), Season::SwMonsoon);
        assert_eq!(cal.season(4, ym(9)), Season::SwMonsoon);
        assert_eq!(cal.season(2, ym(11)), Season::NeMonsoon);
        assert_eq!(cal.season(3, ym(2)), Season::Dry);
        assert_eq!(cal.season(5, ym(4)), Season::Onset);
        assert_eq!(cal.season(7, ym(10)), Season::Peak);
        assert_eq!(cal.season(12, ym(12)), Season::Dry);
        for cluster in 1..=12 {
            let seasons = cal.seasons(cluster);
            for m in 1..=12 {
                let s = cal.season(cluster, ym(m));
                assert_eq!(seasons.iter().filter(|&&x| x == s).count(), 1);
            }
        }
    }

    #[test]
    fn percentile_interpolates() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert!((percentile(&v, 95.0).unwrap() - 95.05).abs() < 1e-12);
        assert_eq!(percentile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(percentile(&v, 100.0).unwrap(), 100.0);
        assert_eq!(percentile(&[7.0], 40.0).unwrap(), 7.0);
        assert!(percentile(&[], 50.0).is_err());
        assert!(percentile(&v, 101.0).is_err());
    }

    #[test]
    fn pot_counts() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = pot_excesses(&v, 95.0).unwrap();
        assert_eq!(s.excesses.len(), 5);
        assert_eq!(pot_excesses(&v, 100.0).unwrap().excesses.len(), 0);
        assert!(matches!(
            pot_excesses(&[3.0; 20], 95.0),
            Err(Error::DegeneratePercentile)
        ));
    }

    #[test]
    fn cdf_reference_points() {
        assert_eq!(gpd_cdf(0.0, 0.3, 2.0).unwrap(), 0.0);
        assert!((gpd_cdf(core::f64::consts::LN_2, 0.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        let upper = gpd_upper(-0.25, 102.35).unwrap();
        assert!((upper - 409.4).abs() < 1e-9);
        assert_eq!(gpd_cdf(upper, -0.25, 102.35).unwrap(), 1.0);
        assert!(gpd_cdf(upper + 1.0, -0.25, 102.35).is_err());
        assert!(gpd_cdf(-1.0, 0.1, 1.0).is_err());
    }

    #[test]
    fn quantile_edges() {
        assert_eq!(gpd_quantile(0.0, 0.2, 3.0).unwrap(), 0.0);
        assert!(matches!(gpd_quantile(1.0, 0.0, 3.0), Err(Error::InfiniteQuantile(_))));
        assert!((gpd_quantile(1.0, -0.5, 3.0).unwrap() - 6.0).abs() < 1e-12);
        assert!(gpd_quantile(0.5, 0.1, 0.0).is_err());
    }

    #[test]
    fn fit_refuses_small_samples() {
        assert!(matches!(
            fit_gpd_mle(&[1.0; 8]),
            Err(Error::TooFewExceedances { found: 8, .. })
        ));
        assert!(fit_gpd_mle(&[1.0; 10]).is_err());
    }

    #[test]
    fn mapping_boundaries() {
        let fit = |source, threshold| GpdFit {
            station_id: "s".into(),
            season: Season::Peak,
            source,
            threshold,
            shape: -0.1,
            scale: 40.0,
            n_exceedances: 20,
            cap: 500.0,
            converged: true,
        };
        let m = SeasonMapping {
            season: Season::Peak,
            observation: fit(FitSource::Observation, 300.0),
            prediction: fit(FitSource::Prediction, 250.0),
            enabled: true,
        };
        assert_eq!(m.map(250.0), 300.0);
        assert_eq!(m.map(120.0), 120.0);
        assert!(m.map(1e6) <= 500.0);
        let mut off = m.clone();
        off.enabled = false;
        assert_eq!(off.map(400.0), 400.0);
    }
}
