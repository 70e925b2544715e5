use std::fs;

use tempfile::TempDir;

use telerain::io::{
    read_checkpoint, read_gpd_fits, read_indices, read_stations, write_checkpoint, write_gpd_fits, write_indices,
    write_stations, Checkpoint,
};
use telerain::render::{image_name, pixels, ramp, read_raster_csv, write_ppm, write_raster_csv};
use telerain::PipelineError;
use telerain_core::evt::{FitSource, GpdFit, Season};
use telerain_core::idw::{GridSpec, Raster};
use telerain_core::ingest::ClimateIndexSeries;
use telerain_core::recurrent::ModelConfig;
use telerain_core::trainer::Hyperparams;
use telerain_core::YearMonth;

fn ym(y: i32, m: u32) -> YearMonth {
    YearMonth::new(y, m).unwrap()
}

#[test]
fn long_and_wide_station_files_agree() {
    let dir = TempDir::new().unwrap();
    let long = dir.path().join("long.csv");
    fs::write(
        &long,
        "station_id,year,month,rain_mm\n\
         a,2000,1,10.5\na,2000,2,\na,2000,3,7\nb,2000,1,1\nb,2000,2,2\nb,2000,3,3\n",
    )
    .unwrap();
    let meta = dir.path().join("meta.csv");
    fs::write(
        &meta,
        "station_id,lat,lon,elevation_m\na,7.5,99.1,12\nb,18.2,98.9,310\n",
    )
    .unwrap();
    let wide = dir.path().join("wide.csv");
    fs::write(
        &wide,
        "station_id,lat,lon,elevation_m,2000-01,2000-02,2000-03\n\
         a,7.5,99.1,12,10.5,,7\nb,18.2,98.9,310,1,2,3\n",
    )
    .unwrap();

    let from_long = read_stations(&long, Some(&meta)).unwrap();
    let from_wide = read_stations(&wide, None).unwrap();
    assert_eq!(from_long, from_wide);
    assert_eq!(from_long[0].station_id, "a");
    assert_eq!(from_long[0].rainfall.get(ym(2000, 2)), None);
    assert_eq!(from_long[0].rainfall.get(ym(2000, 3)), Some(7.0));

    let canonical = dir.path().join("canonical.csv");
    write_stations(&canonical, &from_long).unwrap();
    assert_eq!(read_stations(&canonical, None).unwrap(), from_long);
}

#[test]
fn malformed_coordinates_report_the_line() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("stations.csv");
    fs::write(
        &path,
        "station_id,lat,lon,elevation_m,year,month,rain_mm\n\
         a,7.5,99.1,12,2000,1,10\n\
         a,7.5,99.1,12,2000,2,11\n\
         b,95.0,99.1,12,2000,1,3\n",
    )
    .unwrap();
    match read_stations(&path, None) {
        Err(PipelineError::Parse { line, message, .. }) => {
            assert_eq!(line, 4);
            assert!(message.contains("malformed coordinates"), "{message}");
        }
        other => panic!("expected a parse error, got {other:?}"),
    }

    fs::write(
        &path,
        "station_id,lat,lon,elevation_m,year,month,rain_mm\na,7.5,abc,12,2000,1,10\n",
    )
    .unwrap();
    assert!(matches!(
        read_stations(&path, None),
        Err(PipelineError::Parse { line: 2, .. })
    ));
}

#[test]
fn long_file_without_coordinates_needs_metadata() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("stations.csv");
    fs::write(&path, "station_id,year,month,rain_mm\na,2000,1,10\n").unwrap();
    let e = read_stations(&path, None).unwrap_err();
    assert!(e.to_string().contains("no coordinates for station a"), "{e}");
}

#[test]
fn indices_round_trip() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("indices.csv");
    let series = vec![
        ClimateIndexSeries::monthly("nino34", ym(1999, 11), vec![0.25, -1.5, 0.1, 2.0]),
        ClimateIndexSeries::monthly("dmi", ym(1999, 11), vec![0.3, 0.2, -0.7, 1.0 / 3.0]),
    ];
    write_indices(&path, &series).unwrap();
    let back = read_indices(&path).unwrap();
    assert_eq!(back.len(), 2);
    for s in &series {
        let b = back.iter().find(|b| b.name == s.name).unwrap();
        assert_eq!(b.start, s.start);
        assert_eq!(b.values, s.values);
    }
}

fn fit(season: Season, source: FitSource, cap: f64) -> GpdFit {
    GpdFit {
        station_id: "567201".into(),
        season,
        source,
        threshold: 345.8,
        shape: -0.25,
        scale: 102.35,
        n_exceedances: 20,
        cap,
        converged: false,
    }
}

#[test]
fn gpd_fits_round_trip_with_and_without_cap() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("fits.csv");
    let fits = vec![
        fit(Season::NeMonsoon, FitSource::Observation, 612.25),
        fit(Season::Peak, FitSource::Prediction, f64::INFINITY),
    ];
    write_gpd_fits(&path, &fits).unwrap();
    assert_eq!(read_gpd_fits(&path).unwrap(), fits);

    fs::write(
        &path,
        "station,season,source,u,xi,a_u,exceedances\n387401,onset,observation,188.3,-0.13,80.22,20\n",
    )
    .unwrap();
    let minimal = read_gpd_fits(&path).unwrap();
    assert!(minimal[0].cap.is_infinite() && minimal[0].converged);
    assert_eq!(minimal[0].season, Season::Onset);

    fs::write(
        &path,
        "station,season,source,u,xi,a_u,exceedances\n1,monsoon,observation,1,0,1,20\n",
    )
    .unwrap();
    assert!(matches!(
        read_gpd_fits(&path),
        Err(PipelineError::Parse { line: 2, .. })
    ));
}

#[test]
fn checkpoint_round_trip_and_tamper_detection() {
    use rand::SeedableRng;
    let dir = TempDir::new().unwrap();
    let model = ModelConfig::new(5, 2, 4, 1, 3);
    let weights = model.init(&mut rand_chacha::ChaCha8Rng::seed_from_u64(3)).unwrap();
    let meta = Checkpoint {
        cluster_id: 2,
        fold: "fold1".into(),
        model,
        input_window: 24,
        horizon: 3,
        hyperparams: Hyperparams::default(),
        normalization: "ingest/normalization.json".into(),
        tensors: Vec::new(),
        blob_sha256: String::new(),
    };
    write_checkpoint(dir.path(), &weights, &meta).unwrap();
    let (back, back_meta) = read_checkpoint(dir.path()).unwrap();
    assert_eq!(back, weights);
    assert_eq!(back_meta.cluster_id, 2);
    assert_eq!(
        back_meta.tensors.iter().sum::<usize>() * 8,
        fs::metadata(dir.path().join("weights.bin")).unwrap().len() as usize
    );

    let blob = dir.path().join("weights.bin");
    let mut bytes = fs::read(&blob).unwrap();
    bytes[0] ^= 1;
    fs::write(&blob, bytes).unwrap();
    assert!(matches!(read_checkpoint(dir.path()), Err(PipelineError::Format { .. })));
}

fn raster(values: Vec<f64>) -> Raster {
    Raster {
        spec: GridSpec {
            lon_min: 98.5,
            lat_min: 7.0,
            step: 0.5,
            nx: 3,
            ny: 2,
        },
        values,
    }
}

#[test]
fn raster_csv_round_trip() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("r.csv");
    let r = raster(vec![1.0, 2.5, 3.0, 40.0, 5.0, 6.25]);
    write_raster_csv(&path, &r).unwrap();
    let back = read_raster_csv(&path, 0.5).unwrap();
    assert_eq!(back, r);
}

#[test]
fn ppm_has_north_on_top_and_legend_in_name() {
    let dir = TempDir::new().unwrap();
    let r = raster(vec![0.0, 0.0, 0.0, 10.0, 10.0, 10.0]);
    let px = pixels(&r);
    assert_eq!(px[0], ramp(1.0));
    assert_eq!(px[5], ramp(0.0));
    assert_eq!(image_name("forecast_h1", &r), "forecast_h1_min0.0_max10.0.ppm");
    let path = dir.path().join("r.ppm");
    write_ppm(&path, &r).unwrap();
    let bytes = fs::read(&path).unwrap();
    let header = b"P6\n3 2\n255\n";
    assert!(bytes.starts_with(header));
    assert_eq!(bytes.len(), header.len() + 3 * 6);
}

#[test]
fn flat_raster_uses_low_end_of_ramp() {
    let r = raster(vec![7.0; 6]);
    assert!(pixels(&r).iter().all(|p| *p == ramp(0.0)));
    assert_eq!(ramp(0.0), [255, 255, 204]);
    assert_eq!(ramp(1.0), [8, 48, 107]);
}
