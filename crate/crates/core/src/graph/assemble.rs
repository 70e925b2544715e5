use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Edge, EdgeOrigin, Node, NodeKind, TeleconnectionGraph};
use crate::error::{Error, Result};
use crate::physics::EdgeFeatureTable;

/// An index that passed screening, with its selected lag (0 when it was
/// accepted on correlation alone).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcceptedIndex {
    pub name: String,
    pub lag: u32,
}

/// Expert constraint: connect `index` to every station regardless of
/// screening.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForcedEdge {
    pub index: String,
    pub lag: u32,
}

pub fn assemble_graph(
    cluster_id: usize,
    stations: &[&str],
    accepted: &[AcceptedIndex],
    edge_features: &EdgeFeatureTable,
    forced: &[ForcedEdge],
    known_indices: &[&str],
) -> Result<TeleconnectionGraph> {
    for f in forced {
        if !known_indices.contains(&f.index.as_str()) {
            return Err(Error::UnknownIndex(f.index.clone()));
        }
    }
    let features = stations
        .iter()
        .map(|s| {
            edge_features
                .get(s)
                .ok_or_else(|| Error::MissingEdgeFeature(String::from(*s)))
        })
        .collect::<Result<Vec<f64>>>()?;

    let mut nodes: Vec<Node> = stations
        .iter()
        .map(|s| Node {
            id: String::from(*s),
            kind: NodeKind::Station,
        })
        .collect();

    // (index, lag, origin) in first-seen order; constraints override.
    let mut sources: Vec<(String, u32, EdgeOrigin)> = Vec::new();
    for a in accepted {
        if !sources.iter().any(|(n, _, _)| *n == a.name) {
            sources.push((a.name.clone(), a.lag, EdgeOrigin::Screening));
        }
    }
    for f in forced {
        match sources.iter_mut().find(|(n, _, _)| *n == f.index) {
            Some(entry) => {
                entry.1 = f.lag;
                entry.2 = EdgeOrigin::Constraint;
            }
            None => sources.push((f.index.clone(), f.lag, EdgeOrigin::Constraint)),
        }
    }

    let mut edges = Vec::with_capacity(sources.len() * stations.len());
    for (name, lag, origin) in &sources {
        nodes.push(Node {
            id: name.clone(),
            kind: NodeKind::Index,
        });
        for (station, &feature) in stations.iter().zip(&features) {
            edges.push(Edge {
                src: name.clone(),
                dst: String::from(*station),
                lag: *lag,
                feature,
                origin: *origin,
            });
        }
    }

    let graph = TeleconnectionGraph {
        cluster_id,
        nodes,
        edges,
    };
    graph.validate()?;
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn table(stations: &[&str]) -> EdgeFeatureTable {
        let mut t = EdgeFeatureTable::default();
        for (i, s) in stations.iter().enumerate() {
            t.features.insert(String::from(*s), 1.0 + i as f64);
        }
        t
    }

    #[test]
    fn six_stations_three_indices() {
        let stations = ["567201", "551203", "552201", "564201", "564202", "570201"];
        let accepted = vec![
            AcceptedIndex {
                name: "DMI".into(),
                lag: 1,
            },
            AcceptedIndex {
                name: "MEIV2".into(),
                lag: 2,
            },
        ];
        let forced = vec![ForcedEdge {
            index: "PDO".into(),
            lag: 1,
        }];
        let g = assemble_graph(
            1,
            &stations,
            &accepted,
            &table(&stations),
            &forced,
            &["DMI", "MEIV2", "PDO", "ONI"],
        )
        .unwrap();
        assert_eq!(g.nodes.len(), 9);
        assert_eq!(g.edges.len(), 18);
        assert_eq!(g.node_lag("MEIV2"), 2);
        assert_eq!(g.node_lag("PDO"), 1);
        assert!(g
            .edges
            .iter()
            .filter(|e| e.src == "PDO")
            .all(|e| e.origin == EdgeOrigin::Constraint));
        for e in &g.edges {
            assert_eq!(Some(e.feature), table(&stations).get(&e.dst));
        }
    }

    #[test]
    fn station_only_graph() {
        let stations = ["a", "b"];
        let g = assemble_graph(3, &stations, &[], &table(&stations), &[], &[]).unwrap();
        assert_eq!(g.nodes.len(), 2);
        assert!(g.edges.is_empty());
    }

    #[test]
    fn deterministic() {
        let stations = ["a", "b"];
        let accepted = vec![AcceptedIndex {
            name: "ONI".into(),
            lag: 0,
        }];
        let a = assemble_graph(1, &stations, &accepted, &table(&stations), &[], &["ONI"]).unwrap();
        let b = assemble_graph(1, &stations, &accepted, &table(&stations), &[], &["ONI"]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forced_edge_must_reference_known_index() {
        let stations = ["a"];
        let forced = vec![ForcedEdge {
            index: "XYZ".into(),
            lag: 1,
        }];
        assert!(matches!(
            assemble_graph(1, &stations, &[], &table(&stations), &forced, &["PDO"]),
            Err(Error::UnknownIndex(_))
        ));
    }

    #[test]
    fn missing_feature_is_an_error() {
        let stations = ["a", "b"];
        assert!(matches!(
            assemble_graph(1, &stations, &[], &table(&["a"]), &[], &[]),
            Err(Error::MissingEdgeFeature(_))
        ));
    }
}
