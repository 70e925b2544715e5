//! File formats: station, index, wind and terrain inputs, and the
//! pipeline's JSON, CSV and binary artifacts.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use csv::StringRecord;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use telerain_core::evt::{FitSource, GpdFit, Season};
use telerain_core::ingest::{series_from_observations, ClimateIndexSeries, StationRecord};
use telerain_core::physics::{PrecipitationField, TerrainGrid, Wind};
use telerain_core::recurrent::{CellWeights, ModelConfig};
use telerain_core::trainer::Hyperparams;
use telerain_core::{MonthlySeries, YearMonth};

use crate::config::hex;
use crate::error::{PipelineError, Result};

/// Parsed CSV with the line number of every data row.
pub struct Table {
    pub path: PathBuf,
    pub headers: Vec<String>,
    pub rows: Vec<(u64, StringRecord)>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| PipelineError::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let headers = reader
            .headers()
            .map_err(|e| csv_error(path, e))?
            .iter()
            .map(|h| h.trim_start_matches('\u{feff}').to_string())
            .collect();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            let line = rec.position().map_or(0, |p| p.line());
            rows.push((line, rec));
        }
        Ok(Self {
            path: path.to_path_buf(),
            headers,
            rows,
        })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.find(name).ok_or_else(|| PipelineError::Parse {
            path: self.path.clone(),
            line: 1,
            message: format!("missing column `{name}`"),
        })
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    pub fn error(&self, line: u64, message: impl Into<String>) -> PipelineError {
        PipelineError::Parse {
            path: self.path.clone(),
            line,
            message: message.into(),
        }
    }

    pub fn parse<T: FromStr>(&self, line: u64, rec: &StringRecord, col: usize) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = rec.get(col).unwrap_or("");
        raw.parse().map_err(|e| {
            self.error(
                line,
                format!("column `{}`: cannot parse {raw:?}: {e}", self.headers[col]),
            )
        })
    }

    /// Empty cells parse as `None`.
    pub fn parse_opt<T: FromStr>(&self, line: u64, rec: &StringRecord, col: usize) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match rec.get(col).unwrap_or("") {
            "" | "NA" | "NaN" | "nan" => Ok(None),
            _ => self.parse(line, rec, col).map(Some),
        }
    }

    fn month(&self, line: u64, rec: &StringRecord, year: usize, month: usize) -> Result<YearMonth> {
        let y: i32 = self.parse(line, rec, year)?;
        let m: u32 = self.parse(line, rec, month)?;
        YearMonth::new(y, m).map_err(|e| self.error(line, e.to_string()))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> PipelineError {
    let line = e.position().map_or(0, |p| p.line());
    PipelineError::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

/// Buffered CSV writer that formats floats with their shortest
/// round-trip representation.
pub struct CsvOut {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
}

impl CsvOut {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        }
        let file = File::create(path).map_err(|e| PipelineError::io(path, e))?;
        let mut out = Self {
            path: path.to_path_buf(),
            writer: csv::Writer::from_writer(BufWriter::new(file)),
        };
        out.row(header.iter().map(|s| s.to_string()))?;
        Ok(out)
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).map_err(|e| csv_error(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush().map_err(|e| PipelineError::io(&self.path, e))
    }
}

pub fn float(v: f64) -> String {
    format!("{v}")
}

pub fn opt_float(v: Option<f64>) -> String {
    v.map(float).unwrap_or_default()
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::format(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::format(path, e))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(hex(&Sha256::digest(bytes)))
}

// ---- stations -------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
struct Location {
    lat: f64,
    lon: f64,
    elevation: f64,
}

fn location_columns(t: &Table) -> Option<(usize, usize, usize)> {
    Some((t.find("lat")?, t.find("lon")?, t.find("elevation_m")?))
}

fn parse_location(t: &Table, line: u64, rec: &StringRecord, cols: (usize, usize, usize)) -> Result<Location> {
    let loc = Location {
        lat: t.parse(line, rec, cols.0)?,
        lon: t.parse(line, rec, cols.1)?,
        elevation: t.parse(line, rec, cols.2)?,
    };
    if !(-90.0..=90.0).contains(&loc.lat) || !(-180.0..=180.0).contains(&loc.lon) || !(loc.elevation >= 0.0) {
        return Err(t.error(
            line,
            format!(
                "malformed coordinates lat={} lon={} elevation_m={}",
                loc.lat, loc.lon, loc.elevation
            ),
        ));
    }
    Ok(loc)
}

/// Station metadata, `station_id,lat,lon,elevation_m`.
fn read_locations(path: &Path) -> Result<BTreeMap<String, Location>> {
    let t = Table::read(path)?;
    let id = t.column("station_id")?;
    let cols = location_columns(&t).ok_or_else(|| t.error(1, "expected columns lat, lon, elevation_m"))?;
    let mut out = BTreeMap::new();
    for (line, rec) in &t.rows {
        let loc = parse_location(&t, *line, rec, cols)?;
        if out.insert(rec[id].to_string(), loc).is_some() {
            return Err(t.error(*line, format!("duplicate station {}", &rec[id])));
        }
    }
    Ok(out)
}

/// Loads station rainfall in long form (`station_id,year,month,rain_mm`,
/// optionally with `lat,lon,elevation_m` inline) or wide form
/// (`station_id,lat,lon,elevation_m,YYYY-MM,...`). Empty cells are
/// missing values. Long files without coordinates need `metadata`.
/// Stations keep their order of first appearance.
pub fn read_stations(path: &Path, metadata: Option<&Path>) -> Result<Vec<StationRecord>> {
    let t = Table::read(path)?;
    let id_col = t.column("station_id")?;
    let inline = location_columns(&t);
    let external = metadata.map(read_locations).transpose()?;
    let mut order: Vec<String> = Vec::new();
    let mut locations: BTreeMap<String, Location> = BTreeMap::new();
    let mut observations: BTreeMap<String, Vec<(YearMonth, Option<f64>)>> = BTreeMap::new();

    let mut note_station = |id: &str, loc: Option<Location>, line: u64| -> Result<()> {
        if !locations.contains_key(id) {
            let loc = match (loc, external.as_ref().and_then(|m| m.get(id))) {
                (Some(l), _) => l,
                (None, Some(l)) => *l,
                (None, None) => return Err(t.error(line, format!("no coordinates for station {id}"))),
            };
            locations.insert(id.to_string(), loc);
            order.push(id.to_string());
        } else if let Some(l) = loc {
            if locations[id] != l {
                return Err(t.error(line, format!("coordinates of station {id} change between rows")));
            }
        }
        Ok(())
    };

    if let (Some(year), Some(month)) = (t.find("year"), t.find("month")) {
        let rain = t.column("rain_mm")?;
        for (line, rec) in &t.rows {
            let id = &rec[id_col];
            let loc = inline.map(|c| parse_location(&t, *line, rec, c)).transpose()?;
            note_station(id, loc, *line)?;
            let m = t.month(*line, rec, year, month)?;
            let v: Option<f64> = t.parse_opt(*line, rec, rain)?;
            observations.entry(id.to_string()).or_default().push((m, v));
        }
    } else {
        let cols = inline.ok_or_else(|| t.error(1, "wide station files need lat, lon, elevation_m"))?;
        let months = t
            .headers
            .iter()
            .enumerate()
            .filter(|(i, _)| ![id_col, cols.0, cols.1, cols.2].contains(i))
            .map(|(i, h)| {
                h.parse::<YearMonth>()
                    .map(|m| (i, m))
                    .map_err(|_| t.error(1, format!("column {h:?} is not a YYYY-MM month")))
            })
            .collect::<Result<Vec<_>>>()?;
        for (line, rec) in &t.rows {
            let id = &rec[id_col];
            if observations.contains_key(id) {
                return Err(t.error(*line, format!("station {id} appears twice")));
            }
            note_station(id, Some(parse_location(&t, *line, rec, cols)?), *line)?;
            let obs = months
                .iter()
                .map(|&(i, m)| Ok((m, t.parse_opt(*line, rec, i)?)))
                .collect::<Result<Vec<_>>>()?;
            observations.insert(id.to_string(), obs);
        }
    }

    order
        .iter()
        .map(|id| {
            let loc = locations[id];
            let series = series_from_observations(id, observations.remove(id).unwrap_or_default())?;
            Ok(StationRecord::new(id.clone(), loc.lat, loc.lon, loc.elevation, series)?)
        })
        .collect()
}

/// Canonical long form with inline coordinates.
pub fn write_stations(path: &Path, records: &[StationRecord]) -> Result<()> {
    let mut out = CsvOut::create(
        path,
        &["station_id", "lat", "lon", "elevation_m", "year", "month", "rain_mm"],
    )?;
    for r in records {
        for (m, v) in r.rainfall.iter() {
            out.row([
                r.station_id.clone(),
                float(r.lat),
                float(r.lon),
                float(r.elevation),
                m.year.to_string(),
                m.month.to_string(),
                opt_float(v),
            ])?;
        }
    }
    out.finish()
}

// ---- climate indices ------------------------------------------------------

fn complete_index(t: &Table, name: &str, rows: Vec<(u64, YearMonth, f64)>) -> Result<ClimateIndexSeries> {
    let mut by_month = BTreeMap::new();
    for (line, m, v) in rows {
        if by_month.insert(m, v).is_some() {
            return Err(t.error(line, format!("index {name}: duplicate month {m}")));
        }
    }
    let (&start, _) = by_month.first_key_value().expect("at least one row per index");
    let values: Vec<f64> = by_month.values().copied().collect();
    let (&end, _) = by_month.last_key_value().expect("non-empty");
    if start.months_until(end) as usize + 1 != values.len() {
        return Err(PipelineError::format(&t.path, format!("index {name} has gaps")));
    }
    Ok(ClimateIndexSeries::monthly(name, start, values))
}

/// Monthly indices, `index,year,month,value`, one complete series per
/// index in order of first appearance.
pub fn read_indices(path: &Path) -> Result<Vec<ClimateIndexSeries>> {
    let t = Table::read(path)?;
    let (name, year, month, value) = (
        t.column("index")?,
        t.column("year")?,
        t.column("month")?,
        t.column("value")?,
    );
    let mut order = Vec::new();
    let mut rows: BTreeMap<String, Vec<(u64, YearMonth, f64)>> = BTreeMap::new();
    for (line, rec) in &t.rows {
        let n = rec[name].to_string();
        let v: f64 = t.parse(*line, rec, value)?;
        if !v.is_finite() {
            return Err(t.error(*line, "non-finite index value"));
        }
        let m = t.month(*line, rec, year, month)?;
        if !rows.contains_key(&n) {
            order.push(n.clone());
        }
        rows.entry(n).or_default().push((*line, m, v));
    }
    order
        .into_iter()
        .map(|n| {
            let r = rows.remove(&n).unwrap_or_default();
            complete_index(&t, &n, r)
        })
        .collect()
}

pub fn write_indices(path: &Path, indices: &[ClimateIndexSeries]) -> Result<()> {
    let mut out = CsvOut::create(path, &["index", "year", "month", "value"])?;
    for s in indices {
        for (i, v) in s.values.iter().enumerate() {
            let m = s.start.offset(i as i64);
            out.row([s.name.clone(), m.year.to_string(), m.month.to_string(), float(*v)])?;
        }
    }
    out.finish()
}

/// Daily indices, `index,date,value` with ISO dates, reduced to the signed
/// monthly maximum amplitude.
pub fn read_daily_indices(path: &Path) -> Result<Vec<ClimateIndexSeries>> {
    let t = Table::read(path)?;
    let (name, date, value) = (t.column("index")?, t.column("date")?, t.column("value")?);
    let mut order = Vec::new();
    let mut days: BTreeMap<String, Vec<(YearMonth, f64)>> = BTreeMap::new();
    for (line, rec) in &t.rows {
        let d = &rec[date];
        let parts: Vec<&str> = d.split('-').collect();
        let month = match parts.as_slice() {
            [y, m, day] if day.parse::<u32>().is_ok_and(|x| (1..=31).contains(&x)) => {
                match (y.parse::<i32>(), m.parse::<u32>()) {
                    (Ok(y), Ok(m)) => YearMonth::new(y, m).ok(),
                    _ => None,
                }
            }
            _ => None,
        }
        .ok_or_else(|| t.error(*line, format!("malformed date {d:?}, expected YYYY-MM-DD")))?;
        let v: f64 = t.parse(*line, rec, value)?;
        let n = rec[name].to_string();
        if !days.contains_key(&n) {
            order.push(n.clone());
        }
        days.entry(n).or_default().push((month, v));
    }
    order
        .into_iter()
        .map(|n| {
            let mut d = days.remove(&n).unwrap_or_default();
            d.sort_by_key(|(m, _)| *m);
            let series = ClimateIndexSeries::from_daily(n.clone(), &d)?;
            if series.values.len() != series.start.months_until(series.end()) as usize + 1 {
                return Err(PipelineError::format(&t.path, format!("index {n} has gaps")));
            }
            Ok(series)
        })
        .collect()
}

// ---- winds ----------------------------------------------------------------

pub type WindTable = BTreeMap<String, Vec<(YearMonth, Wind)>>;

/// Monthly winds, `station_id,year,month,u,v`, sorted by month.
pub fn read_winds(path: &Path) -> Result<WindTable> {
    let t = Table::read(path)?;
    let (id, year, month, u, v) = (
        t.column("station_id")?,
        t.column("year")?,
        t.column("month")?,
        t.column("u")?,
        t.column("v")?,
    );
    let mut out: WindTable = BTreeMap::new();
    for (line, rec) in &t.rows {
        let m = t.month(*line, rec, year, month)?;
        let w = Wind {
            u: t.parse(*line, rec, u)?,
            v: t.parse(*line, rec, v)?,
        };
        if !w.u.is_finite() || !w.v.is_finite() {
            return Err(t.error(*line, "non-finite wind"));
        }
        out.entry(rec[id].to_string()).or_default().push((m, w));
    }
    for (station, series) in out.iter_mut() {
        series.sort_by_key(|(m, _)| *m);
        if series.windows(2).any(|p| p[0].0 == p[1].0) {
            return Err(PipelineError::format(
                path,
                format!("station {station}: duplicate wind month"),
            ));
        }
    }
    Ok(out)
}

pub fn write_winds(path: &Path, winds: &WindTable) -> Result<()> {
    let mut out = CsvOut::create(path, &["station_id", "year", "month", "u", "v"])?;
    for (station, series) in winds {
        for (m, w) in series {
            out.row([
                station.clone(),
                m.year.to_string(),
                m.month.to_string(),
                float(w.u),
                float(w.v),
            ])?;
        }
    }
    out.finish()
}

pub fn wind_values(table: &WindTable) -> BTreeMap<String, Vec<Wind>> {
    table
        .iter()
        .map(|(k, v)| (k.clone(), v.iter().map(|(_, w)| *w).collect()))
        .collect()
}

// ---- terrain --------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerrainHeader {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Terrain {
    pub grid: TerrainGrid,
    pub dx: f64,
    pub dy: f64,
}

/// CSV grid: one row of `nx` elevations per line, `ny` lines, no header.
pub fn read_grid_csv(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let file = File::open(path).map_err(|e| PipelineError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut values = Vec::new();
    let mut nx = None;
    let mut ny = 0;
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if *nx.get_or_insert(rec.len()) != rec.len() {
            return Err(PipelineError::Parse {
                path: path.into(),
                line,
                message: "ragged grid row".into(),
            });
        }
        for cell in rec.iter() {
            values.push(cell.parse::<f64>().map_err(|e| PipelineError::Parse {
                path: path.into(),
                line,
                message: format!("cannot parse {cell:?}: {e}"),
            })?);
        }
        ny += 1;
    }
    Ok((nx.unwrap_or(0), ny, values))
}

pub fn write_grid_csv(path: &Path, nx: usize, values: &[f64]) -> Result<()> {
    ensure_parent(path)?;
    let file = File::create(path).map_err(|e| PipelineError::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(BufWriter::new(file));
    for row in values.chunks(nx) {
        w.write_record(row.iter().map(|v| float(*v)))
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| PipelineError::io(path, e))
}

/// Reads a `.csv` grid (cell sizes from the arguments) or a `.bin` file of
/// little-endian f64 with a JSON header next to it (same stem, `.json`).
pub fn read_terrain(path: &Path, dx: f64, dy: f64) -> Result<Terrain> {
    let is_bin = path.extension().is_some_and(|e| e == "bin");
    if !is_bin {
        let (nx, ny, values) = read_grid_csv(path)?;
        return Ok(Terrain {
            grid: TerrainGrid::new(nx, ny, values)?,
            dx,
            dy,
        });
    }
    let header: TerrainHeader = read_json(&path.with_extension("json"))?;
    let bytes = fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    if bytes.len() != header.nx * header.ny * 8 {
        return Err(PipelineError::format(
            path,
            format!(
                "{} bytes, header declares {}x{} f64 cells",
                bytes.len(),
                header.nx,
                header.ny
            ),
        ));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(Terrain {
        grid: TerrainGrid::new(header.nx, header.ny, values)?,
        dx: header.dx,
        dy: header.dy,
    })
}

pub fn write_terrain_bin(path: &Path, terrain: &Terrain) -> Result<()> {
    ensure_parent(path)?;
    let bytes: Vec<u8> = terrain.grid.elevations.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| PipelineError::io(path, e))?;
    write_json(
        &path.with_extension("json"),
        &TerrainHeader {
            nx: terrain.grid.nx,
            ny: terrain.grid.ny,
            dx: terrain.dx,
            dy: terrain.dy,
        },
    )
}

pub fn write_field(path: &Path, field: &PrecipitationField, clamped: bool) -> Result<()> {
    write_grid_csv(path, field.nx, if clamped { &field.clamped } else { &field.raw })
}

// ---- GPD fits -------------------------------------------------------------

pub const GPD_HEADER: [&str; 9] = [
    "station",
    "season",
    "source",
    "u",
    "xi",
    "a_u",
    "exceedances",
    "cap",
    "converged",
];

pub fn write_gpd_fits(path: &Path, fits: &[GpdFit]) -> Result<()> {
    let mut out = CsvOut::create(path, &GPD_HEADER)?;
    for f in fits {
        out.row([
            f.station_id.clone(),
            f.season.label().to_string(),
            f.source.label().to_string(),
            float(f.threshold),
            float(f.shape),
            float(f.scale),
            f.n_exceedances.to_string(),
            if f.cap.is_finite() { float(f.cap) } else { String::new() },
            f.converged.to_string(),
        ])?;
    }
    out.finish()
}

/// Reads fits in the column order of [`GPD_HEADER`]; `cap` and `converged`
/// may be absent (no cap, converged).
pub fn read_gpd_fits(path: &Path) -> Result<Vec<GpdFit>> {
    let t = Table::read(path)?;
    let cols: Vec<usize> = GPD_HEADER[..7].iter().map(|c| t.column(c)).collect::<Result<_>>()?;
    let cap = t.find("cap");
    let converged = t.find("converged");
    t.rows
        .iter()
        .map(|(line, rec)| {
            let season = Season::from_label(&rec[cols[1]])
                .ok_or_else(|| t.error(*line, format!("unknown season {:?}", &rec[cols[1]])))?;
            let source = FitSource::from_label(&rec[cols[2]])
                .ok_or_else(|| t.error(*line, format!("unknown source {:?}", &rec[cols[2]])))?;
            Ok(GpdFit {
                station_id: rec[cols[0]].to_string(),
                season,
                source,
                threshold: t.parse(*line, rec, cols[3])?,
                shape: t.parse(*line, rec, cols[4])?,
                scale: t.parse(*line, rec, cols[5])?,
                n_exceedances: t.parse(*line, rec, cols[6])?,
                cap: match cap {
                    Some(c) => t.parse_opt(*line, rec, c)?.unwrap_or(f64::INFINITY),
                    None => f64::INFINITY,
                },
                converged: match converged {
                    Some(c) => t.parse_opt(*line, rec, c)?.unwrap_or(true),
                    None => true,
                },
            })
        })
        .collect()
}

// ---- checkpoints ----------------------------------------------------------

pub const WEIGHTS_FILE: &str = "weights.bin";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub cluster_id: usize,
    pub fold: String,
    pub model: ModelConfig,
    pub input_window: usize,
    pub horizon: usize,
    pub hyperparams: Hyperparams,
    /// Normalization record the weights were trained against, relative to
    /// the output directory.
    pub normalization: String,
    /// Length of every tensor in blob order.
    pub tensors: Vec<usize>,
    pub blob_sha256: String,
}

pub fn write_checkpoint(dir: &Path, weights: &CellWeights, meta: &Checkpoint) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    let blob: Vec<u8> = weights
        .tensors()
        .into_iter()
        .flat_map(|t| t.iter().flat_map(|v| v.to_le_bytes()))
        .collect();
    let meta = Checkpoint {
        tensors: weights.tensors().iter().map(|t| t.len()).collect(),
        blob_sha256: hex(&Sha256::digest(&blob)),
        ..meta.clone()
    };
    let path = dir.join(WEIGHTS_FILE);
    fs::write(&path, &blob).map_err(|e| PipelineError::io(&path, e))?;
    write_json(&dir.join(CHECKPOINT_FILE), &meta)
}

pub fn read_checkpoint(dir: &Path) -> Result<(CellWeights, Checkpoint)> {
    let meta: Checkpoint = read_json(&dir.join(CHECKPOINT_FILE))?;
    let path = dir.join(WEIGHTS_FILE);
    let blob = fs::read(&path).map_err(|e| PipelineError::io(&path, e))?;
    if hex(&Sha256::digest(&blob)) != meta.blob_sha256 {
        return Err(PipelineError::format(&path, "blob does not match the checkpoint hash"));
    }
    // Any initialization has the right shapes; every value is overwritten.
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let mut weights = meta.model.init(&mut rng)?;
    let lengths: Vec<usize> = weights.tensors().iter().map(|t| t.len()).collect();
    if lengths != meta.tensors || blob.len() != lengths.iter().sum::<usize>() * 8 {
        return Err(PipelineError::format(
            &path,
            "tensor layout does not match the model config",
        ));
    }
    let mut values = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    for t in weights.tensors_mut() {
        for v in t.iter_mut() {
            *v = values.next().expect("length checked");
        }
    }
    Ok((weights, meta))
}

pub fn series_to_pairs(series: &MonthlySeries) -> Vec<(YearMonth, f64)> {
    series.iter().filter_map(|(m, v)| v.map(|v| (m, v))).collect()
}
