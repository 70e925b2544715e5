//! Point-forecast scores and their per-station, per-horizon tables.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_pair(obs: &[f64], pred: &[f64]) -> Result<()> {
    if obs.is_empty() {
        return Err(Error::EmptyInput("metric inputs"));
    }
    if obs.len() != pred.len() {
        return Err(Error::DimensionMismatch {
            what: "metric inputs",
            expected: obs.len(),
            found: pred.len(),
        });
    }
    if obs.iter().chain(pred).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("metric inputs"));
    }
    Ok(())
}

pub fn rmse(obs: &[f64], pred: &[f64]) -> Result<f64> {
    check_pair(obs, pred)?;
    let mse = obs.iter().zip(pred).map(|(y, p)| (y - p) * (y - p)).sum::<f64>() / obs.len() as f64;
    Ok(libm::sqrt(mse))
}

/// Mean absolute percentage error; every observation must be positive.
pub fn mape(obs: &[f64], pred: &[f64]) -> Result<f64> {
    check_pair(obs, pred)?;
    if obs.iter().any(|&y| y <= 0.0) {
        return Err(Error::InvalidParameter {
            name: "mape observations",
            reason: "undefined for non-positive observations".into(),
        });
    }
    Ok(100.0 * obs.iter().zip(pred).map(|(y, p)| ((y - p) / y).abs()).sum::<f64>() / obs.len() as f64)
}

/// Symmetric percentage error in `[0, 200]`. Pairs where both values are
/// zero score 0; an input made only of such pairs is rejected.
pub fn smape(obs: &[f64], pred: &[f64]) -> Result<f64> {
    check_pair(obs, pred)?;
    let mut total = 0.0;
    let mut informative = false;
    for (y, p) in obs.iter().zip(pred) {
        let denom = y.abs() + p.abs();
        if denom > 0.0 {
            informative = true;
            total += 2.0 * (y - p).abs() / denom;
        }
    }
    if !informative {
        return Err(Error::InvalidParameter {
            name: "smape inputs",
            reason: "every observation and prediction is zero".into(),
        });
    }
    Ok(100.0 * total / obs.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyBasis {
    Mape,
    Smape,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub value: f64,
    pub basis: AccuracyBasis,
}

/// `100 − MAPE`, or `100 − SMAPE` when any observation is not positive.
pub fn accuracy(obs: &[f64], pred: &[f64]) -> Result<Accuracy> {
    check_pair(obs, pred)?;
    if obs.iter().all(|&y| y > 0.0) {
        Ok(Accuracy {
            value: 100.0 - mape(obs, pred)?,
            basis: AccuracyBasis::Mape,
        })
    } else {
        Ok(Accuracy {
            value: 100.0 - smape(obs, pred)?,
            basis: AccuracyBasis::Smape,
        })
    }
}

/// Nash–Sutcliffe efficiency against the mean of `obs`.
pub fn nse(obs: &[f64], pred: &[f64]) -> Result<f64> {
    check_pair(obs, pred)?;
    let mean = obs.iter().sum::<f64>() / obs.len() as f64;
    let ss_tot: f64 = obs.iter().map(|y| (y - mean) * (y - mean)).sum();
    if ss_tot <= 0.0 {
        return Err(Error::ZeroVariance("nse observations".into()));
    }
    let ss_res: f64 = obs.iter().zip(pred).map(|(y, p)| (y - p) * (y - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalCell {
    pub cluster: usize,
    pub station: String,
    /// 1-based lead in months.
    pub horizon: usize,
    pub count: usize,
    pub rmse: f64,
    pub accuracy: f64,
    pub accuracy_basis: AccuracyBasis,
    pub smape: f64,
    /// `None` when the observations in the cell are constant.
    pub nse: Option<f64>,
}

impl EvalCell {
    pub fn score(cluster: usize, station: &str, horizon: usize, obs: &[f64], pred: &[f64]) -> Result<Self> {
        let acc = accuracy(obs, pred)?;
        Ok(Self {
            cluster,
            station: station.into(),
            horizon,
            count: obs.len(),
            rmse: rmse(obs, pred)?,
            accuracy: acc.value,
            accuracy_basis: acc.basis,
            smape: smape(obs, pred).unwrap_or(0.0),
            nse: match nse(obs, pred) {
                Ok(v) => Some(v),
                Err(Error::ZeroVariance(_)) => None,
                Err(e) => return Err(e),
            },
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub cells: usize,
    pub rmse: f64,
    pub accuracy: f64,
    pub smape: f64,
    /// Mean over cells with a defined NSE.
    pub nse: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    pub cells: Vec<EvalCell>,
}

impl EvalTable {
    pub fn push(&mut self, cell: EvalCell) {
        self.cells.push(cell);
    }

    pub fn clusters(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.cells.iter().map(|c| c.cluster).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Arithmetic mean of the cells of `cluster`, or all cells for `None`.
    pub fn aggregate(&self, cluster: Option<usize>) -> Option<Aggregate> {
        let cells: Vec<&EvalCell> = self
            .cells
            .iter()
            .filter(|c| cluster.is_none_or(|k| c.cluster == k))
            .collect();
        if cells.is_empty() {
            return None;
        }
        let n = cells.len() as f64;
        let nses: Vec<f64> = cells.iter().filter_map(|c| c.nse).collect();
        Some(Aggregate {
            cells: cells.len(),
            rmse: cells.iter().map(|c| c.rmse).sum::<f64>() / n,
            accuracy: cells.iter().map(|c| c.accuracy).sum::<f64>() / n,
            smape: cells.iter().map(|c| c.smape).sum::<f64>() / n,
            nse: (!nses.is_empty()).then(|| nses.iter().sum::<f64>() / nses.len() as f64),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let y = [12.0, 40.0, 3.5, 90.0];
        assert_eq!(rmse(&y, &y).unwrap(), 0.0);
        assert_eq!(accuracy(&y, &y).unwrap().value, 100.0);
        assert_eq!(smape(&y, &y).unwrap(), 0.0);
        assert_eq!(nse(&y, &y).unwrap(), 1.0);
    }

    #[test]
    fn reference_values() {
        assert!((rmse(&[3.0, 4.0], &[0.0, 0.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(rmse(&[1.0, 2.0, 3.0], &[3.0, 4.0, 5.0]).unwrap(), 2.0);
        assert!((accuracy(&[100.0], &[90.0]).unwrap().value - 90.0).abs() < 1e-12);
        assert_eq!(smape(&[10.0], &[30.0]).unwrap(), 100.0);
        assert_eq!(smape(&[0.0], &[5.0]).unwrap(), 200.0);
    }

    #[test]
    fn zero_observations_fall_back() {
        let a = accuracy(&[0.0, 10.0], &[0.0, 10.0]).unwrap();
        assert_eq!(a.basis, AccuracyBasis::Smape);
        assert_eq!(a.value, 100.0);
        assert!(smape(&[0.0, 0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn nse_of_mean_and_worse() {
        let y = [1.0, 2.0, 6.0];
        assert!(nse(&y, &[3.0; 3]).unwrap().abs() < 1e-15);
        assert!(nse(&y, &[6.0, 1.0, 2.0]).unwrap() < 0.0);
        assert!(nse(&[2.0; 3], &[2.0; 3]).is_err());
    }

    #[test]
    fn aggregate_is_cell_mean() {
        let mut t = EvalTable::default();
        t.push(EvalCell::score(1, "a", 1, &[1.0, 2.0], &[1.0, 3.0]).unwrap());
        t.push(EvalCell::score(1, "b", 1, &[4.0, 2.0], &[3.0, 2.0]).unwrap());
        t.push(EvalCell::score(2, "c", 1, &[4.0, 2.0], &[4.0, 2.0]).unwrap());
        let agg = t.aggregate(Some(1)).unwrap();
        assert_eq!(agg.cells, 2);
        assert!((agg.rmse - (t.cells[0].rmse + t.cells[1].rmse) / 2.0).abs() < 1e-15);
        assert_eq!(t.clusters(), alloc::vec![1, 2]);
        assert!(t.aggregate(Some(9)).is_none());
    }
}
