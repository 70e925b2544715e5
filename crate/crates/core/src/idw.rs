//! Inverse-distance gridding of station values onto a lon/lat raster.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distance (degrees) below which a cell takes a station's value.
pub const SNAP_EPS: f64 = 1e-9;
pub const DEFAULT_POWER: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lon_min: f64,
    pub lat_min: f64,
    /// Cell spacing in degrees.
    pub step: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) || self.nx == 0 || self.ny == 0 {
            return Err(Error::InvalidParameter {
                name: "grid",
                reason: format!("step {} and size {}x{} must be positive", self.step, self.nx, self.ny),
            });
        }
        if !self.lon_min.is_finite() || !self.lat_min.is_finite() {
            return Err(Error::NonFinite("grid origin"));
        }
        Ok(())
    }

    pub fn lon(&self, x: usize) -> f64 {
        self.lon_min + self.step * x as f64
    }

    pub fn lat(&self, y: usize) -> f64 {
        self.lat_min + self.step * y as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationValue {
    pub lon: f64,
    pub lat: f64,
    pub value: f64,
}

/// Row-major raster, row `y` at latitude `lat_min + y·step`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Raster {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl Raster {
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.spec.nx + x]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Value at one point: `Σ w v / Σ w` with `w = d^(−p)`.
pub fn idw_at(stations: &[StationValue], lon: f64, lat: f64, power: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for s in stations {
        let d = libm::hypot(s.lon - lon, s.lat - lat);
        if d < SNAP_EPS {
            return s.value;
        }
        let w = libm::pow(d, -power);
        num += w * s.value;
        den += w;
    }
    num / den
}

pub fn idw_interpolate(stations: &[StationValue], spec: &GridSpec, power: f64) -> Result<Raster> {
    if stations.is_empty() {
        return Err(Error::EmptyInput("idw stations"));
    }
    if !(power > 0.0 && power.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "idw power",
            reason: format!("{power} must be positive"),
        });
    }
    if stations
        .iter()
        .any(|s| !s.lon.is_finite() || !s.lat.is_finite() || !s.value.is_finite())
    {
        return Err(Error::NonFinite("idw stations"));
    }
    spec.validate()?;
    let mut values = Vec::with_capacity(spec.nx * spec.ny);
    for y in 0..spec.ny {
        for x in 0..spec.nx {
            values.push(idw_at(stations, spec.lon(x), spec.lat(y), power));
        }
    }
    Ok(Raster { spec: *spec, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(lon: f64, lat: f64, value: f64) -> StationValue {
        StationValue { lon, lat, value }
    }

    #[test]
    fn snaps_to_station() {
        let spec = GridSpec {
            lon_min: 100.0,
            lat_min: 10.0,
            step: 0.5,
            nx: 3,
            ny: 3,
        };
        let s = [sv(100.5, 10.5, 42.0), sv(101.0, 11.0, 7.0)];
        let r = idw_interpolate(&s, &spec, 2.0).unwrap();
        assert_eq!(r.at(1, 1), 42.0);
        assert_eq!(r.at(2, 2), 7.0);
    }

    #[test]
    fn single_station_is_constant() {
        let spec = GridSpec {
            lon_min: 0.0,
            lat_min: 0.0,
            step: 1.0,
            nx: 4,
            ny: 2,
        };
        let r = idw_interpolate(&[sv(0.3, 0.7, 5.5)], &spec, 2.0).unwrap();
        assert!(r.values.iter().all(|&v| v == 5.5));
    }

    #[test]
    fn midpoint_of_two() {
        let v = idw_at(&[sv(0.0, 0.0, 0.0), sv(2.0, 0.0, 10.0)], 1.0, 0.0, 2.0);
        assert!((v - 5.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let spec = GridSpec {
            lon_min: 0.0,
            lat_min: 0.0,
            step: 1.0,
            nx: 1,
            ny: 1,
        };
        assert!(idw_interpolate(&[], &spec, 2.0).is_err());
        assert!(idw_interpolate(&[sv(0.0, 0.0, 1.0)], &spec, 0.0).is_err());
    }
}
