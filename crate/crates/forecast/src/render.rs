//! Raster output: a `lon,lat,value` CSV and a binary PPM image with a
//! linear colour ramp.

use std::fs;
use std::path::Path;

use telerain_core::idw::{GridSpec, Raster};

use crate::error::{PipelineError, Result};
use crate::io::{ensure_parent, float, CsvOut, Table};

const LOW: [f64; 3] = [255.0, 255.0, 204.0];
const HIGH: [f64; 3] = [8.0, 48.0, 107.0];

/// Colour for `t` in `[0, 1]`, light yellow to dark blue.
pub fn ramp(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let mut px = [0u8; 3];
    for c in 0..3 {
        px[c] = (LOW[c] + (HIGH[c] - LOW[c]) * t).round() as u8;
    }
    px
}

/// Pixels top row first (northernmost latitude). A flat raster maps to
/// the low end of the ramp.
pub fn pixels(raster: &Raster) -> Vec<[u8; 3]> {
    let (lo, hi) = raster.min_max();
    let span = hi - lo;
    let (nx, ny) = (raster.spec.nx, raster.spec.ny);
    let mut out = Vec::with_capacity(nx * ny);
    for y in (0..ny).rev() {
        for x in 0..nx {
            let t = if span > 0.0 { (raster.at(x, y) - lo) / span } else { 0.0 };
            out.push(ramp(t));
        }
    }
    out
}

pub fn write_ppm(path: &Path, raster: &Raster) -> Result<()> {
    ensure_parent(path)?;
    let mut bytes = format!("P6\n{} {}\n255\n", raster.spec.nx, raster.spec.ny).into_bytes();
    bytes.extend(pixels(raster).into_iter().flatten());
    fs::write(path, bytes).map_err(|e| PipelineError::io(path, e))
}

/// File name carrying the legend range, e.g. `forecast_h1_min12.3_max456.7.ppm`.
pub fn image_name(stem: &str, raster: &Raster) -> String {
    let (lo, hi) = raster.min_max();
    format!("{stem}_min{lo:.1}_max{hi:.1}.ppm")
}

pub fn write_raster_csv(path: &Path, raster: &Raster) -> Result<()> {
    let mut out = CsvOut::create(path, &["lon", "lat", "value"])?;
    for y in 0..raster.spec.ny {
        for x in 0..raster.spec.nx {
            out.row([
                float(raster.spec.lon(x)),
                float(raster.spec.lat(y)),
                float(raster.at(x, y)),
            ])?;
        }
    }
    out.finish()
}

/// Rebuilds a raster written by [`write_raster_csv`] with the given cell
/// size.
pub fn read_raster_csv(path: &Path, step: f64) -> Result<Raster> {
    let t = Table::read(path)?;
    let (lon, lat, value) = (t.column("lon")?, t.column("lat")?, t.column("value")?);
    let mut cells = Vec::with_capacity(t.rows.len());
    for (line, rec) in &t.rows {
        let c: (f64, f64, f64) = (
            t.parse(*line, rec, lon)?,
            t.parse(*line, rec, lat)?,
            t.parse(*line, rec, value)?,
        );
        cells.push(c);
    }
    let Some(&(lon_min, lat_min, _)) = cells.first() else {
        return Err(PipelineError::format(path, "empty raster"));
    };
    let nx = cells.iter().take_while(|c| c.1 == lat_min).count();
    if nx == 0 || cells.len() % nx != 0 {
        return Err(PipelineError::format(path, "raster rows are ragged"));
    }
    Ok(Raster {
        spec: GridSpec {
            lon_min,
            lat_min,
            step,
            nx,
            ny: cells.len() / nx,
        },
        values: cells.into_iter().map(|c| c.2).collect(),
    })
}
