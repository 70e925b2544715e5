//! Linear orographic precipitation evaluated in spectral space, and the
//! per-station scalar edge features derived from it.
//!
//! For terrain `h` with transform `ĥ(k, l)` the precipitation transform is
//!
//! ```text
//! P̂(k, l) = C_w · iσ · ĥ / ((1 + iστ_c)(1 + iστ_h)),   σ = U·k + V·l
//! ```
//!
//! Wavenumbers follow `k_j = 2π·f_j / (nx·dx)` with `f_j` the signed
//! frequency of bin `j` (see [`crate::fft::signed_frequency`]).

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{fft2, signed_frequency, Direction};
use crate::ingest::StationRecord;

/// Default condensation-efficiency constant, kg·m⁻³.
pub const DEFAULT_CW: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrographicConfig {
    pub cw: f64,
    pub tau_c: f64,
    pub tau_h: f64,
    pub u: f64,
    pub v: f64,
    pub dx: f64,
    pub dy: f64,
}

impl Default for OrographicConfig {
    fn default() -> Self {
        Self {
            cw: DEFAULT_CW,
            tau_c: 0.0,
            tau_h: 0.0,
            u: 0.0,
            v: 0.0,
            dx: 1000.0,
            dy: 1000.0,
        }
    }
}

impl OrographicConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, name: &'static str, value: f64| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidParameter {
                    name,
                    reason: format!("{value} out of range"),
                })
            }
        };
        check(self.cw.is_finite() && self.cw > 0.0, "cw", self.cw)?;
        check(self.tau_c.is_finite() && self.tau_c >= 0.0, "tau_c", self.tau_c)?;
        check(self.tau_h.is_finite() && self.tau_h >= 0.0, "tau_h", self.tau_h)?;
        check(self.u.is_finite(), "u", self.u)?;
        check(self.v.is_finite(), "v", self.v)?;
        check(self.dx.is_finite() && self.dx > 0.0, "dx", self.dx)?;
        check(self.dy.is_finite() && self.dy > 0.0, "dy", self.dy)
    }
}

/// Terrain elevations in meters, row-major with `ny` rows of `nx` cells;
/// `x` runs along a row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerrainGrid {
    pub nx: usize,
    pub ny: usize,
    pub elevations: Vec<f64>,
}

impl TerrainGrid {
    pub fn new(nx: usize, ny: usize, elevations: Vec<f64>) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidParameter {
                name: "terrain size",
                reason: format!("{nx}x{ny}, need at least 2x2"),
            });
        }
        if elevations.len() != nx * ny {
            return Err(Error::DimensionMismatch {
                what: "terrain cells",
                expected: nx * ny,
                found: elevations.len(),
            });
        }
        if elevations.iter().any(|h| !h.is_finite()) {
            return Err(Error::NonFinite("terrain"));
        }
        Ok(Self { nx, ny, elevations })
    }

    pub fn from_fn(nx: usize, ny: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut cells = Vec::with_capacity(nx * ny);
        for y in 0..ny {
            for x in 0..nx {
                cells.push(f(x, y));
            }
        }
        Self::new(nx, ny, cells)
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.elevations[y * self.nx + x]
    }
}

/// Precipitation on the terrain grid. `raw` keeps the signed model output;
/// `clamped` zeroes negative (evaporative) values.
#[derive(Clone, Debug, PartialEq)]
pub struct PrecipitationField {
    pub nx: usize,
    pub ny: usize,
    pub raw: Vec<f64>,
    pub clamped: Vec<f64>,
}

impl PrecipitationField {
    #[inline]
    pub fn raw_at(&self, x: usize, y: usize) -> f64 {
        self.raw[y * self.nx + x]
    }

    /// `(x, y)` of the largest clamped value; the first on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.clamped.iter().enumerate() {
            if *v > self.clamped[best] {
                best = i;
            }
        }
        (best % self.nx, best / self.nx)
    }
}

pub fn simulate_field(terrain: &TerrainGrid, cfg: &OrographicConfig) -> Result<PrecipitationField> {
    cfg.validate()?;
    let (nx, ny) = (terrain.nx, terrain.ny);
    if nx == 0 || ny == 0 {
        return Err(Error::EmptyInput("terrain grid"));
    }
    if terrain.elevations.iter().any(|h| !h.is_finite()) {
        return Err(Error::NonFinite("terrain"));
    }

    let mut spectrum: Vec<Complex64> = terrain.elevations.iter().map(|&h| Complex64::new(h, 0.0)).collect();
    fft2(&mut spectrum, nx, ny, Direction::Forward);

    let i = Complex64::i();
    for y in 0..ny {
        let l = 2.0 * PI * signed_frequency(y, ny) as f64 / (ny as f64 * cfg.dy);
        for x in 0..nx {
            let k = 2.0 * PI * signed_frequency(x, nx) as f64 / (nx as f64 * cfg.dx);
            let sigma = cfg.u * k + cfg.v * l;
            let numerator = i * (cfg.cw * sigma);
            let denominator = (1.0 + i * (sigma * cfg.tau_c)) * (1.0 + i * (sigma * cfg.tau_h));
            spectrum[y * nx + x] *= numerator / denominator;
        }
    }
    fft2(&mut spectrum, nx, ny, Direction::Inverse);

    let raw: Vec<f64> = spectrum.iter().map(|c| c.re).collect();
    let clamped = raw.iter().map(|&p| p.max(0.0)).collect();
    Ok(PrecipitationField { nx, ny, raw, clamped })
}

/// Wind components for one month, m/s.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wind {
    pub u: f64,
    pub v: f64,
}

impl Wind {
    pub fn speed(self) -> f64 {
        libm::hypot(self.u, self.v)
    }
}

fn check_station_inputs(station: &StationRecord, winds: &[Wind]) -> Result<()> {
    if !(station.elevation.is_finite() && station.elevation >= 0.0) {
        return Err(Error::InvalidStation {
            station: station.station_id.clone(),
            reason: format!("elevation {} is negative", station.elevation),
        });
    }
    if winds.is_empty() {
        return Err(Error::EmptyInput("wind series"));
    }
    if winds.iter().any(|w| !w.u.is_finite() || !w.v.is_finite()) {
        return Err(Error::NonFinite("wind series"));
    }
    Ok(())
}

/// Per-month edge features `C_w · |wind| · h_station`, clamped at zero.
/// With instantaneous conversion and fallout the spectral model reduces
/// to `C_w · (U ∂h/∂x + V ∂h/∂y)`; the station elevation stands in for the
/// slope magnitude.
pub fn station_edge_feature_series(station: &StationRecord, winds: &[Wind], cw: f64) -> Result<Vec<f64>> {
    check_station_inputs(station, winds)?;
    Ok(winds
        .iter()
        .map(|w| (cw * w.speed() * station.elevation).max(0.0))
        .collect())
}

/// Static edge feature: the climatological mean of
/// [`station_edge_feature_series`].
pub fn station_edge_feature(station: &StationRecord, winds: &[Wind], cw: f64) -> Result<f64> {
    let series = station_edge_feature_series(station, winds, cw)?;
    Ok((series.iter().sum::<f64>() / series.len() as f64).max(0.0))
}

/// Station id → static edge feature.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EdgeFeatureTable {
    pub features: BTreeMap<String, f64>,
}

impl EdgeFeatureTable {
    pub fn get(&self, station: &str) -> Option<f64> {
        self.features.get(station).copied()
    }
}

pub fn build_edge_feature_table(
    stations: &[StationRecord],
    winds: &BTreeMap<String, Vec<Wind>>,
    cw: f64,
) -> Result<EdgeFeatureTable> {
    let mut table = EdgeFeatureTable::default();
    for station in stations {
        let series = winds
            .get(&station.station_id)
            .ok_or_else(|| Error::MissingEdgeFeature(station.station_id.clone()))?;
        let feature = station_edge_feature(station, series, cw)?;
        table.features.insert(station.station_id.clone(), feature);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calendar::{MonthlySeries, YearMonth};
    use alloc::vec;

    fn station(id: &str, elevation: f64) -> StationRecord {
        StationRecord::new(
            id,
            14.0,
            101.0,
            elevation,
            MonthlySeries::complete(YearMonth::new(2020, 1).unwrap(), &[1.0]),
        )
        .unwrap()
    }

    #[test]
    fn flat_terrain_gives_zero_field() {
        let terrain = TerrainGrid::new(8, 8, vec![350.0; 64]).unwrap();
        let cfg = OrographicConfig {
            u: 10.0,
            v: -4.0,
            tau_c: 1000.0,
            tau_h: 500.0,
            ..Default::default()
        };
        let field = simulate_field(&terrain, &cfg).unwrap();
        assert!(field.raw.iter().all(|p| p.abs() < 1e-9));
    }

    #[test]
    fn rejects_invalid_config() {
        let terrain = TerrainGrid::new(4, 4, vec![0.0; 16]).unwrap();
        let bad = OrographicConfig {
            tau_c: -1.0,
            ..Default::default()
        };
        assert!(simulate_field(&terrain, &bad).is_err());
        assert!(TerrainGrid::new(1, 4, vec![0.0; 4]).is_err());
        assert!(TerrainGrid::new(2, 2, vec![0.0, f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn station_feature_examples() {
        let cw = 0.01;
        let calm = [Wind { u: 0.0, v: 0.0 }; 3];
        assert_eq!(
            station_edge_feature(&station("sea", 0.0), &[Wind { u: 3.0, v: 4.0 }], cw).unwrap(),
            0.0
        );
        assert_eq!(station_edge_feature(&station("calm", 500.0), &calm, cw).unwrap(), 0.0);
        let f = station_edge_feature(&station("a", 100.0), &[Wind { u: 3.0, v: 4.0 }], cw).unwrap();
        assert!((f - 5.0).abs() < 1e-12);
        assert!(station_edge_feature(&station("a", 100.0), &[], cw).is_err());
    }

    #[test]
    fn feature_table_linear_in_cw_and_ordered_by_elevation() {
        let stations = [station("coast", 5.0), station("upland", 380.0), station("twin", 380.0)];
        let mut winds = BTreeMap::new();
        for s in &stations {
            winds.insert(
                s.station_id.clone(),
                vec![Wind { u: -3.0, v: 1.5 }, Wind { u: 6.0, v: 2.0 }],
            );
        }
        let t1 = build_edge_feature_table(&stations, &winds, 0.01).unwrap();
        let t2 = build_edge_feature_table(&stations, &winds, 0.02).unwrap();
        for (id, f) in &t1.features {
            assert!((t2.features[id] - 2.0 * f).abs() < 1e-12);
        }
        assert_eq!(t1.get("upland"), t1.get("twin"));
        assert!(t1.get("upland").unwrap() > t1.get("coast").unwrap());

        winds.remove("coast");
        assert!(matches!(
            build_edge_feature_table(&stations, &winds, 0.01),
            Err(Error::MissingEdgeFeature(_))
        ));
    }
}
