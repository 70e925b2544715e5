use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evt::percentile;
use crate::ingest::MonthlyPanel;
use crate::linalg::{least_squares, Mat};
use crate::special::chi2_sf;

/// Minimum overlap for correlation screening.
pub const MIN_SCREEN_MONTHS: usize = 24;

/// Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            what: "pearson series",
            expected: x.len(),
            found: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::TooShort {
            what: "pearson series",
            needed: 2,
            found: x.len(),
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::ZeroVariance(String::from("pearson input")));
    }
    Ok((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreenOutcome {
    pub index: String,
    pub accepted: bool,
    pub mean_abs_r: f64,
    pub per_station: Vec<(String, f64)>,
}

/// Correlates an index column with each station column. With
/// `extreme_percentile`, each station only contributes months where its
/// rainfall exceeds that percentile of its own series. The index is kept
/// when the mean `|r|` across stations exceeds `r_threshold`.
pub fn pearson_screen(
    panel: &MonthlyPanel,
    index: &str,
    stations: &[&str],
    r_threshold: f64,
    extreme_percentile: Option<f64>,
) -> Result<ScreenOutcome> {
    if stations.is_empty() {
        return Err(Error::EmptyInput("stations to screen"));
    }
    if panel.len() < MIN_SCREEN_MONTHS {
        return Err(Error::TooShort {
            what: "screening overlap (months)",
            needed: MIN_SCREEN_MONTHS,
            found: panel.len(),
        });
    }
    let x = &panel
        .column(index)
        .ok_or_else(|| Error::UnknownIndex(index.into()))?
        .values;
    let mut per_station = Vec::with_capacity(stations.len());
    for &station in stations {
        let y = &panel
            .column(station)
            .ok_or_else(|| Error::UnknownNode(station.into()))?
            .values;
        let r = match extreme_percentile {
            None => pearson(x, y),
            Some(q) => {
                let cut = percentile(y, q)?;
                let (xs, ys): (Vec<f64>, Vec<f64>) =
                    x.iter().zip(y).filter(|(_, &v)| v > cut).map(|(&a, &b)| (a, b)).unzip();
                if xs.len() < 3 {
                    return Err(Error::TooShort {
                        what: "extreme-event months",
                        needed: 3,
                        found: xs.len(),
                    });
                }
                pearson(&xs, &ys)
            }
        }
        .map_err(|e| match e {
            Error::ZeroVariance(_) => Error::ZeroVariance(format!("{index} vs {station}")),
            other => other,
        })?;
        per_station.push((String::from(station), r));
    }
    let mean_abs_r = per_station.iter().map(|(_, r)| r.abs()).sum::<f64>() / per_station.len() as f64;
    Ok(ScreenOutcome {
        index: String::from(index),
        accepted: mean_abs_r > r_threshold,
        mean_abs_r,
        per_station,
    })
}

/// One restricted/unrestricted regression pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrangerTest {
    pub lag: usize,
    pub n_obs: usize,
    pub rss_restricted: f64,
    pub rss_unrestricted: f64,
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrangerResult {
    pub index: String,
    pub lag: usize,
    pub p_value: f64,
    pub statistic: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrangerScan {
    pub selected: Option<GrangerResult>,
    pub tests: Vec<GrangerTest>,
    /// Lags whose design matrix was rank deficient.
    pub skipped: Vec<usize>,
}

fn lagged_design(y: &[f64], x: Option<&[f64]>, lag: usize) -> Mat {
    let rows = y.len() - lag;
    let cols = 1 + lag + if x.is_some() { lag } else { 0 };
    Mat::from_fn(rows, cols, |r, c| {
        let t = r + lag;
        if c == 0 {
            1.0
        } else if c <= lag {
            y[t - c]
        } else {
            x.expect("x columns only exist with x")[t - (c - lag)]
        }
    })
}

/// Tests whether `lag` past values of `x` improve a regression of `y` on
/// its own `lag` past values (both with intercept). The statistic is
/// `n·(RSS_r − RSS_u)/RSS_u`, asymptotically χ² with `lag` degrees of
/// freedom.
pub fn granger_test(y: &[f64], x: &[f64], lag: usize) -> Result<GrangerTest> {
    if y.len() != x.len() {
        return Err(Error::DimensionMismatch {
            what: "granger series",
            expected: y.len(),
            found: x.len(),
        });
    }
    if lag == 0 || y.len() <= 2 * lag + 1 {
        return Err(Error::TooShort {
            what: "granger series",
            needed: 2 * lag + 2,
            found: y.len(),
        });
    }
    if y.iter().chain(x).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("granger series"));
    }
    let target = &y[lag..];
    let restricted = least_squares(&lagged_design(y, None, lag), target)?;
    let unrestricted = least_squares(&lagged_design(y, Some(x), lag), target)?;
    let n_obs = target.len();
    let rss_r = restricted.rss;
    let rss_u = unrestricted.rss;
    let statistic = if rss_u > 0.0 {
        (n_obs as f64 * (rss_r - rss_u) / rss_u).max(0.0)
    } else {
        f64::INFINITY
    };
    Ok(GrangerTest {
        lag,
        n_obs,
        rss_restricted: rss_r,
        rss_unrestricted: rss_u,
        statistic,
        p_value: if statistic.is_infinite() {
            0.0
        } else {
            chi2_sf(statistic, lag)
        },
    })
}

/// Runs [`granger_test`] for lags `1..=max_lag` and selects the smallest
/// lag with `p ≤ alpha`. Rank-deficient lags are recorded and skipped.
pub fn granger_lag(index: &str, y: &[f64], x: &[f64], max_lag: usize, alpha: f64) -> Result<GrangerScan> {
    if max_lag == 0 {
        return Err(Error::InvalidParameter {
            name: "max_lag",
            reason: "must be at least 1".into(),
        });
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter {
            name: "alpha",
            reason: format!("{alpha} outside [0, 1]"),
        });
    }
    if y.len() <= 2 * max_lag + 10 {
        return Err(Error::TooShort {
            what: "granger series",
            needed: 2 * max_lag + 11,
            found: y.len(),
        });
    }
    let mut scan = GrangerScan {
        selected: None,
        tests: Vec::new(),
        skipped: Vec::new(),
    };
    for lag in 1..=max_lag {
        match granger_test(y, x, lag) {
            Ok(test) => {
                if scan.selected.is_none() && test.p_value <= alpha {
                    scan.selected = Some(GrangerResult {
                        index: String::from(index),
                        lag,
                        p_value: test.p_value,
                        statistic: test.statistic,
                    });
                }
                scan.tests.push(test);
            }
            Err(Error::RankDeficient) => scan.skipped.push(lag),
            Err(e) => return Err(e),
        }
    }
    Ok(scan)
}
