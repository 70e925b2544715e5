use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::StationRecord;
use crate::linalg::{symmetric_eigen, Mat};

/// Station id → 1-based cluster id, in input station order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub assignments: Vec<(String, usize)>,
    pub n_clusters: usize,
}

impl ClusterAssignment {
    pub fn cluster_of(&self, station: &str) -> Option<usize> {
        self.assignments.iter().find(|(s, _)| s == station).map(|(_, c)| *c)
    }

    pub fn members(&self, cluster: usize) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|(_, c)| *c == cluster)
            .map(|(s, _)| s.as_str())
            .collect()
    }
}

/// Mean observed rainfall per calendar month.
pub fn climatology(record: &StationRecord) -> Result<[f64; 12]> {
    let mut sum = [0.0; 12];
    let mut count = [0usize; 12];
    for (month, value) in record.rainfall.iter() {
        if let Some(v) = value {
            let m = month.month as usize - 1;
            sum[m] += v;
            count[m] += 1;
        }
    }
    let mut out = [0.0; 12];
    for m in 0..12 {
        if count[m] == 0 {
            return Err(Error::NoObservations {
                station: record.station_id.clone(),
                month: m as u8 + 1,
            });
        }
        out[m] = sum[m] / count[m] as f64;
    }
    Ok(out)
}

const FEATURES: usize = 14;

fn standardize_columns(data: &mut Mat) {
    let (n, p) = data.shape();
    for c in 0..p {
        let mean = (0..n).map(|r| data[(r, c)]).sum::<f64>() / n as f64;
        let var = (0..n)
            .map(|r| (data[(r, c)] - mean) * (data[(r, c)] - mean))
            .sum::<f64>()
            / n as f64;
        let std = libm::sqrt(var);
        for r in 0..n {
            data[(r, c)] = if std > 1e-12 { (data[(r, c)] - mean) / std } else { 0.0 };
        }
    }
}

/// Principal-component scores of the standardized station features.
fn pca_scores(data: &Mat, n_components: usize) -> Result<Mat> {
    let n = data.rows();
    let cov = {
        let mut c = data.transpose().matmul(data);
        c.as_mut_slice().iter_mut().for_each(|v| *v /= n as f64);
        c
    };
    let (_, vectors) = symmetric_eigen(&cov)?;
    let basis = Mat::from_fn(data.cols(), n_components, |r, c| vectors[(r, c)]);
    Ok(data.matmul(&basis))
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Groups stations by centroid-linkage agglomeration on PCA scores of
/// `[lat, lon, climatology]` (every feature z-scored across stations).
/// Clusters merge while the closest pair of centroids is nearer than
/// `distance_d`; ties go to the lowest pair of working cluster positions.
/// Final ids are numbered by each cluster's first station in input order.
pub fn cluster_stations(records: &[StationRecord], n_components: usize, distance_d: f64) -> Result<ClusterAssignment> {
    if records.len() < 2 {
        return Err(Error::TooShort {
            what: "station list for clustering",
            needed: 2,
            found: records.len(),
        });
    }
    if n_components == 0 || n_components > FEATURES {
        return Err(Error::InvalidParameter {
            name: "n_components",
            reason: format!("{n_components} outside 1..={FEATURES}"),
        });
    }
    if distance_d.is_nan() || distance_d < 0.0 {
        return Err(Error::InvalidParameter {
            name: "distance_d",
            reason: format!("{distance_d} must be non-negative"),
        });
    }

    let mut data = Mat::zeros(records.len(), FEATURES);
    for (r, record) in records.iter().enumerate() {
        let clim = climatology(record)?;
        let row = data.row_mut(r);
        row[0] = record.lat;
        row[1] = record.lon;
        row[2..].copy_from_slice(&clim);
    }
    standardize_columns(&mut data);
    let scores = pca_scores(&data, n_components)?;

    struct Group {
        members: Vec<usize>,
        centroid: Vec<f64>,
    }
    let mut groups: Vec<Group> = (0..records.len())
        .map(|i| Group {
            members: vec![i],
            centroid: scores.row(i).to_vec(),
        })
        .collect();

    while groups.len() > 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..groups.len() {
            for b in a + 1..groups.len() {
                let d = distance(&groups[a].centroid, &groups[b].centroid);
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, a, b));
                }
            }
        }
        let Some((d, a, b)) = best else { break };
        if d >= distance_d {
            break;
        }
        let absorbed = groups.remove(b);
        let target = &mut groups[a];
        target.members.extend(absorbed.members);
        target.members.sort_unstable();
        let k = target.members.len() as f64;
        target.centroid = (0..n_components)
            .map(|c| target.members.iter().map(|&m| scores[(m, c)]).sum::<f64>() / k)
            .collect();
    }

    groups.sort_by_key(|g| g.members[0]);
    let mut ids = vec![0usize; records.len()];
    for (gi, g) in groups.iter().enumerate() {
        for &m in &g.members {
            ids[m] = gi + 1;
        }
    }
    Ok(ClusterAssignment {
        assignments: records
            .iter()
            .zip(ids)
            .map(|(r, id)| (r.station_id.clone(), id))
            .collect(),
        n_clusters: groups.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calendar::{MonthlySeries, YearMonth};

    fn station(id: &str, lat: f64, lon: f64, clim: impl Fn(usize) -> f64) -> StationRecord {
        let values: Vec<f64> = (0..24).map(|i| clim(i % 12)).collect();
        StationRecord::new(
            id,
            lat,
            lon,
            0.0,
            MonthlySeries::complete(YearMonth::new(2000, 1).unwrap(), &values),
        )
        .unwrap()
    }

    fn two_groups() -> Vec<StationRecord> {
        let wet_summer = |m: usize| 100.0 + 80.0 * libm::sin(core::f64::consts::PI * (m as f64 + 0.5) / 6.0);
        let wet_winter = |m: usize| 100.0 - 80.0 * libm::sin(core::f64::consts::PI * (m as f64 + 0.5) / 6.0);
        vec![
            station("n1", 18.0, 99.0, wet_summer),
            station("s1", 7.0, 100.0, wet_winter),
            station("n2", 18.2, 99.1, |m| wet_summer(m) + 2.0),
            station("s2", 7.1, 100.2, |m| wet_winter(m) + 1.0),
            station("n3", 17.9, 98.9, |m| wet_summer(m) - 1.0),
        ]
    }

    #[test]
    fn zero_distance_gives_singletons() {
        let out = cluster_stations(&two_groups(), 3, 0.0).unwrap();
        assert_eq!(out.n_clusters, 5);
        let ids: Vec<usize> = out.assignments.iter().map(|(_, c)| *c).collect();
        assert_eq!(ids, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn infinite_distance_gives_one_cluster() {
        let out = cluster_stations(&two_groups(), 3, f64::INFINITY).unwrap();
        assert_eq!(out.n_clusters, 1);
        assert!(out.assignments.iter().all(|(_, c)| *c == 1));
    }

    #[test]
    fn separates_two_groups() {
        let records = two_groups();
        // Pairwise score distances: at most 0.49 within a group, at least 7.5 across.
        let out = cluster_stations(&records, 2, 1.5).unwrap();
        assert_eq!(out.n_clusters, 2);
        assert_eq!(out.members(1), vec!["n1", "n2", "n3"]);
        assert_eq!(out.members(2), vec!["s1", "s2"]);
    }

    #[test]
    fn validates_inputs() {
        let records = two_groups();
        assert!(cluster_stations(&records[..1], 2, 1.0).is_err());
        assert!(cluster_stations(&records, 0, 1.0).is_err());
        assert!(cluster_stations(&records, 15, 1.0).is_err());
        assert!(cluster_stations(&records, 2, -1.0).is_err());
    }
}
