//! Month arithmetic and dense monthly series.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A calendar month. Ordering is chronological. Serializes as `"YYYY-MM"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth {
    pub year: i32,
    pub month: u8,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::InvalidMonth { year, month });
        }
        Ok(Self {
            year,
            month: month as u8,
        })
    }

    /// Months since year 0, January.
    pub fn ordinal(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    pub fn from_ordinal(ordinal: i64) -> Self {
        Self {
            year: ordinal.div_euclid(12) as i32,
            month: (ordinal.rem_euclid(12) + 1) as u8,
        }
    }

    pub fn offset(self, months: i64) -> Self {
        Self::from_ordinal(self.ordinal() + months)
    }

    /// Signed number of months from `self` to `other`.
    pub fn months_until(self, other: YearMonth) -> i64 {
        other.ordinal() - self.ordinal()
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter {
            name: "year-month",
            reason: alloc::format!("expected YYYY-MM, got {s:?}"),
        };
        let (y, m) = s.trim().rsplit_once('-').ok_or_else(bad)?;
        let year = y.parse::<i32>().map_err(|_| bad())?;
        let month = m.parse::<u32>().map_err(|_| bad())?;
        YearMonth::new(year, month)
    }
}

impl Serialize for YearMonth {
    fn serialize<S: Serializer>(&self, serializer: S) -> core::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for YearMonth {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> core::result::Result<Self, D::Error> {
        struct Visitor;
        impl serde::de::Visitor<'_> for Visitor {
            type Value = YearMonth;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a YYYY-MM string")
            }

            fn visit_str<E: serde::de::Error>(self, v: &str) -> core::result::Result<YearMonth, E> {
                v.parse().map_err(E::custom)
            }
        }
        deserializer.deserialize_str(Visitor)
    }
}

/// Contiguous monthly series starting at `start`. Entries may be absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonthlySeries {
    pub start: YearMonth,
    pub values: Vec<Option<f64>>,
}

impl MonthlySeries {
    pub fn new(start: YearMonth, values: Vec<Option<f64>>) -> Self {
        Self { start, values }
    }

    pub fn complete(start: YearMonth, values: &[f64]) -> Self {
        Self {
            start,
            values: values.iter().copied().map(Some).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Last covered month. Meaningless for an empty series.
    pub fn end(&self) -> YearMonth {
        self.start.offset(self.values.len() as i64 - 1)
    }

    pub fn month_at(&self, i: usize) -> YearMonth {
        self.start.offset(i as i64)
    }

    pub fn get(&self, month: YearMonth) -> Option<f64> {
        let i = self.start.months_until(month);
        if i < 0 {
            return None;
        }
        self.values.get(i as usize).copied().flatten()
    }

    pub fn iter(&self) -> impl Iterator<Item = (YearMonth, Option<f64>)> + '_ {
        self.values.iter().enumerate().map(move |(i, v)| (self.month_at(i), *v))
    }

    pub fn is_complete(&self) -> bool {
        self.values.iter().all(Option::is_some)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_displays() {
        let m: YearMonth = "2020-03".parse().unwrap();
        assert_eq!(m, YearMonth::new(2020, 3).unwrap());
        assert_eq!(alloc::format!("{m}"), "2020-03");
        assert!("2020-13".parse::<YearMonth>().is_err());
        assert!("2020".parse::<YearMonth>().is_err());
    }

    #[test]
    fn ordinal_round_trip() {
        let m = YearMonth::new(1982, 1).unwrap();
        assert_eq!(YearMonth::from_ordinal(m.ordinal()), m);
        assert_eq!(m.offset(12), YearMonth::new(1983, 1).unwrap());
        assert_eq!(m.offset(-1), YearMonth::new(1981, 12).unwrap());
        assert_eq!(m.months_until(YearMonth::new(2019, 12).unwrap()), 455);
    }

    #[test]
    fn rejects_month_thirteen() {
        assert!(YearMonth::new(2020, 13).is_err());
        assert!(YearMonth::new(2020, 0).is_err());
    }

    #[test]
    fn series_lookup() {
        let s = MonthlySeries::new(
            YearMonth::new(2020, 11).unwrap(),
            alloc::vec![Some(1.0), None, Some(3.0)],
        );
        assert_eq!(s.end(), YearMonth::new(2021, 1).unwrap());
        assert_eq!(s.get(YearMonth::new(2021, 1).unwrap()), Some(3.0));
        assert_eq!(s.get(YearMonth::new(2020, 12).unwrap()), None);
        assert_eq!(s.get(YearMonth::new(2019, 1).unwrap()), None);
    }
}
