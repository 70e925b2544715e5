//! Station and climate-index series: validation, coverage screening,
//! median imputation, daily reduction and model-ready panels.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::calendar::{MonthlySeries, YearMonth};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationRecord {
    pub station_id: String,
    pub lat: f64,
    pub lon: f64,
    pub elevation: f64,
    pub rainfall: MonthlySeries,
}

impl StationRecord {
    pub fn new(
        station_id: impl Into<String>,
        lat: f64,
        lon: f64,
        elevation: f64,
        rainfall: MonthlySeries,
    ) -> Result<Self> {
        let record = Self {
            station_id: station_id.into(),
            lat,
            lon,
            elevation,
            rainfall,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: String| Error::InvalidStation {
            station: self.station_id.clone(),
            reason,
        };
        if !(self.lat.is_finite() && (-90.0..=90.0).contains(&self.lat)) {
            return Err(invalid(format!("latitude {} outside [-90, 90]", self.lat)));
        }
        if !(self.lon.is_finite() && (-180.0..=180.0).contains(&self.lon)) {
            return Err(invalid(format!("longitude {} outside [-180, 180]", self.lon)));
        }
        if !(self.elevation.is_finite() && self.elevation >= 0.0) {
            return Err(invalid(format!("elevation {} is negative", self.elevation)));
        }
        for (month, value) in self.rainfall.iter() {
            if let Some(v) = value {
                if !v.is_finite() {
                    return Err(invalid(format!("non-finite rainfall at {month}")));
                }
                if v < 0.0 {
                    return Err(Error::NegativeRainfall {
                        station: self.station_id.clone(),
                        month,
                        value: v,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Builds a dense series from unordered `(month, value)` observations.
/// Months between the first and last observation that are not listed
/// become explicit absences.
pub fn series_from_observations(
    station: &str,
    observations: impl IntoIterator<Item = (YearMonth, Option<f64>)>,
) -> Result<MonthlySeries> {
    let mut by_month: BTreeMap<YearMonth, Option<f64>> = BTreeMap::new();
    for (month, value) in observations {
        if by_month.insert(month, value).is_some() {
            return Err(Error::DuplicateMonth {
                station: station.to_string(),
                month,
            });
        }
    }
    let (Some((&first, _)), Some((&last, _))) = (by_month.first_key_value(), by_month.last_key_value()) else {
        return Err(Error::EmptyInput("station observations"));
    };
    let len = first.months_until(last) as usize + 1;
    let values = (0..len)
        .map(|i| by_month.get(&first.offset(i as i64)).copied().flatten())
        .collect();
    Ok(MonthlySeries::new(first, values))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cadence {
    Monthly,
    DailyReducedToMonthly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClimateIndexSeries {
    pub name: String,
    pub start: YearMonth,
    pub values: Vec<f64>,
    pub cadence: Cadence,
}

impl ClimateIndexSeries {
    pub fn monthly(name: impl Into<String>, start: YearMonth, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            start,
            values,
            cadence: Cadence::Monthly,
        }
    }

    /// Reduces a daily index (e.g. an intraseasonal oscillation) to months
    /// with [`monthly_max_amplitude`].
    pub fn from_daily(name: impl Into<String>, daily: &[(YearMonth, f64)]) -> Result<Self> {
        let monthly = monthly_max_amplitude(daily)?;
        let start = monthly[0].0;
        Ok(Self {
            name: name.into(),
            start,
            values: monthly.into_iter().map(|(_, v)| v).collect(),
            cadence: Cadence::DailyReducedToMonthly,
        })
    }

    pub fn end(&self) -> YearMonth {
        self.start.offset(self.values.len() as i64 - 1)
    }

    pub fn get(&self, month: YearMonth) -> Option<f64> {
        let i = self.start.months_until(month);
        if i < 0 {
            return None;
        }
        self.values.get(i as usize).copied()
    }
}

fn intersection_span(records: &[StationRecord]) -> Option<(YearMonth, YearMonth)> {
    let start = records.iter().map(|r| r.rainfall.start).max()?;
    let end = records.iter().map(|r| r.rainfall.end()).min()?;
    (start <= end).then_some((start, end))
}

/// Keeps stations whose reporting fraction reaches `min_fraction` for every
/// calendar month of the study period. Without explicit bounds the period
/// is the intersection of all station spans.
pub fn coverage_filter(
    records: &[StationRecord],
    min_fraction: f64,
    study: Option<(YearMonth, YearMonth)>,
) -> Result<Vec<StationRecord>> {
    if records.is_empty() {
        return Err(Error::EmptyInput("station records"));
    }
    if !(0.0..=1.0).contains(&min_fraction) {
        return Err(Error::InvalidParameter {
            name: "min_fraction",
            reason: format!("{min_fraction} outside [0, 1]"),
        });
    }
    let Some((start, end)) = study.or_else(|| intersection_span(records)) else {
        return Err(Error::EmptySpan);
    };
    if start > end {
        return Err(Error::EmptySpan);
    }
    let span = start.months_until(end) as usize + 1;

    Ok(records
        .iter()
        .filter(|record| {
            let mut expected = [0usize; 12];
            let mut present = [0usize; 12];
            for i in 0..span {
                let month = start.offset(i as i64);
                let m = month.month as usize - 1;
                expected[m] += 1;
                if record.rainfall.get(month).is_some() {
                    present[m] += 1;
                }
            }
            (0..12).all(|m| expected[m] == 0 || present[m] as f64 >= min_fraction * expected[m] as f64)
        })
        .cloned()
        .collect())
}

/// Median of a non-empty slice; even counts average the middle pair.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

/// Fills each missing month with the median of that station's observed
/// values for the same calendar month.
pub fn median_impute(record: &StationRecord) -> Result<StationRecord> {
    let mut by_calendar: [Vec<f64>; 12] = Default::default();
    let mut needs = [false; 12];
    for (month, value) in record.rainfall.iter() {
        let m = month.month as usize - 1;
        match value {
            Some(v) => by_calendar[m].push(v),
            None => needs[m] = true,
        }
    }
    let mut medians = [0.0; 12];
    for m in 0..12 {
        if needs[m] {
            medians[m] = median(&by_calendar[m]).ok_or_else(|| Error::NoObservations {
                station: record.station_id.clone(),
                month: m as u8 + 1,
            })?;
        }
    }
    let mut out = record.clone();
    for (i, value) in out.rainfall.values.iter_mut().enumerate() {
        if value.is_none() {
            let m = record.rainfall.month_at(i).month as usize - 1;
            *value = Some(medians[m]);
        }
    }
    Ok(out)
}

/// Reduces daily values to one value per month: the element of largest
/// absolute value, keeping its sign. Ties keep the earliest element.
/// Every month between the first and last daily value must have data.
pub fn monthly_max_amplitude(daily: &[(YearMonth, f64)]) -> Result<Vec<(YearMonth, f64)>> {
    let mut best: BTreeMap<YearMonth, f64> = BTreeMap::new();
    for &(month, v) in daily {
        if !v.is_finite() {
            return Err(Error::NonFinite("daily index"));
        }
        best.entry(month)
            .and_modify(|b| {
                if v.abs() > b.abs() {
                    *b = v;
                }
            })
            .or_insert(v);
    }
    let (Some((&first, _)), Some((&last, _))) = (best.first_key_value(), best.last_key_value()) else {
        return Err(Error::EmptyInput("daily series"));
    };
    let len = first.months_until(last) + 1;
    (0..len)
        .map(|i| {
            let month = first.offset(i);
            best.get(&month).map(|&v| (month, v)).ok_or(Error::EmptyMonth(month))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Station,
    Index,
    TimeSin,
    TimeCos,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaling {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    /// Whether the stored column is z-scored.
    pub scaled: bool,
    /// Zero-variance column left unscaled.
    pub constant: bool,
}

impl ColumnScaling {
    fn identity(name: &str) -> Self {
        Self {
            name: name.to_string(),
            mean: 0.0,
            std: 1.0,
            scaled: false,
            constant: false,
        }
    }

    #[inline]
    pub fn forward(&self, v: f64) -> f64 {
        if self.scaled {
            (v - self.mean) / self.std
        } else {
            v
        }
    }

    #[inline]
    pub fn inverse(&self, v: f64) -> f64 {
        if self.scaled {
            v * self.std + self.mean
        } else {
            v
        }
    }
}

/// Per-column scaling, in panel column order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord {
    pub columns: Vec<ColumnScaling>,
}

impl NormalizationRecord {
    pub fn get(&self, name: &str) -> Option<&ColumnScaling> {
        self.columns.iter().find(|c| c.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelColumn {
    pub name: String,
    pub kind: ColumnKind,
    pub values: Vec<f64>,
}

/// Rectangular monthly panel: station columns, index columns, then the
/// two time-embedding columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonthlyPanel {
    pub months: Vec<YearMonth>,
    pub columns: Vec<PanelColumn>,
    pub normalization: NormalizationRecord,
}

pub const TIME_SIN: &str = "time_sin";
pub const TIME_COS: &str = "time_cos";

/// `(sin(2πt/12), cos(2πt/12))` with `t` the calendar month number.
pub fn time_embedding(month: YearMonth) -> (f64, f64) {
    let angle = 2.0 * PI * month.month as f64 / 12.0;
    (libm::sin(angle), libm::cos(angle))
}

impl MonthlyPanel {
    pub fn len(&self) -> usize {
        self.months.len()
    }

    pub fn is_empty(&self) -> bool {
        self.months.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<&PanelColumn> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn scaling(&self, name: &str) -> Option<&ColumnScaling> {
        self.normalization.get(name)
    }

    pub fn month_index(&self, month: YearMonth) -> Option<usize> {
        let i = self.months.first()?.months_until(month);
        (0..self.months.len() as i64).contains(&i).then_some(i as usize)
    }

    /// Column values mapped back to physical units.
    pub fn unscaled(&self, name: &str) -> Option<Vec<f64>> {
        let column = self.column(name)?;
        let scaling = self.scaling(name)?;
        Some(column.values.iter().map(|&v| scaling.inverse(v)).collect())
    }

    /// Restricts the panel to `[start, end]`, keeping the scaling record.
    pub fn slice(&self, start: YearMonth, end: YearMonth) -> Result<MonthlyPanel> {
        let (Some(a), Some(b)) = (self.month_index(start), self.month_index(end)) else {
            return Err(Error::EmptySpan);
        };
        if a > b {
            return Err(Error::EmptySpan);
        }
        Ok(MonthlyPanel {
            months: self.months[a..=b].to_vec(),
            columns: self
                .columns
                .iter()
                .map(|c| PanelColumn {
                    name: c.name.clone(),
                    kind: c.kind,
                    values: c.values[a..=b].to_vec(),
                })
                .collect(),
            normalization: self.normalization.clone(),
        })
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, libm::sqrt(var))
}

/// Assembles station and index series over their common span (or the
/// explicit `span`) and appends the time embeddings. With `normalize`, each
/// data column is z-scored with population statistics; zero-variance
/// columns are flagged and left as-is.
pub fn build_panel(
    records: &[StationRecord],
    indices: &[ClimateIndexSeries],
    normalize: bool,
    span: Option<(YearMonth, YearMonth)>,
) -> Result<MonthlyPanel> {
    let starts = records
        .iter()
        .map(|r| r.rainfall.start)
        .chain(indices.iter().map(|s| s.start));
    let ends = records
        .iter()
        .map(|r| r.rainfall.end())
        .chain(indices.iter().map(ClimateIndexSeries::end));
    let (Some(common_start), Some(common_end)) = (starts.max(), ends.min()) else {
        return Err(Error::EmptyInput("panel series"));
    };
    let (start, end) = match span {
        Some((s, e)) => {
            if s < common_start || e > common_end {
                return Err(Error::EmptySpan);
            }
            (s, e)
        }
        None => (common_start, common_end),
    };
    if start > end {
        return Err(Error::EmptySpan);
    }
    let len = start.months_until(end) as usize + 1;
    let months: Vec<YearMonth> = (0..len).map(|i| start.offset(i as i64)).collect();

    let mut columns = Vec::with_capacity(records.len() + indices.len() + 2);
    for r in records {
        let values = months
            .iter()
            .map(|&m| {
                r.rainfall.get(m).ok_or_else(|| Error::InvalidStation {
                    station: r.station_id.clone(),
                    reason: format!("missing value at {m} inside panel span; impute first"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        columns.push(PanelColumn {
            name: r.station_id.clone(),
            kind: ColumnKind::Station,
            values,
        });
    }
    for s in indices {
        let values = months
            .iter()
            .map(|&m| s.get(m).ok_or(Error::EmptySpan))
            .collect::<Result<Vec<f64>>>()?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("climate index"));
        }
        columns.push(PanelColumn {
            name: s.name.clone(),
            kind: ColumnKind::Index,
            values,
        });
    }

    let mut normalization = NormalizationRecord::default();
    for column in &mut columns {
        let mut scaling = ColumnScaling::identity(&column.name);
        if normalize {
            let (mean, std) = mean_std(&column.values);
            scaling.mean = mean;
            if std > 1e-12 * mean.abs().max(1.0) {
                scaling.std = std;
                scaling.scaled = true;
                column.values.iter_mut().for_each(|v| *v = (*v - mean) / std);
            } else {
                scaling.constant = true;
            }
        }
        normalization.columns.push(scaling);
    }

    let (sin, cos): (Vec<f64>, Vec<f64>) = months.iter().map(|&m| time_embedding(m)).unzip();
    for (name, kind, values) in [
        (TIME_SIN, ColumnKind::TimeSin, sin),
        (TIME_COS, ColumnKind::TimeCos, cos),
    ] {
        normalization.columns.push(ColumnScaling::identity(name));
        columns.push(PanelColumn {
            name: name.to_string(),
            kind,
            values,
        });
    }

    Ok(MonthlyPanel {
        months,
        columns,
        normalization,
    })
}
