//! Station clustering, teleconnection screening and static graph assembly.

mod assemble;
mod cluster;
mod screen;

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use assemble::{assemble_graph, AcceptedIndex, ForcedEdge};
pub use cluster::{climatology, cluster_stations, ClusterAssignment};
pub use screen::{
    granger_lag, granger_test, pearson, pearson_screen, GrangerResult, GrangerScan, GrangerTest, ScreenOutcome,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Station,
    Index,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
}

/// Why an edge exists.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeOrigin {
    Screening,
    Constraint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: String,
    pub dst: String,
    pub lag: u32,
    pub feature: f64,
    pub origin: EdgeOrigin,
}

/// Static directed graph for one station cluster. Edges run from index
/// nodes to station nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeleconnectionGraph {
    pub cluster_id: usize,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

impl TeleconnectionGraph {
    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn station_nodes(&self) -> impl Iterator<Item = (usize, &Node)> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.kind == NodeKind::Station)
    }

    /// Lag applied to an index node's series: the largest lag on its
    /// outgoing edges (all edges of an index share one lag when built by
    /// [`assemble_graph`]).
    pub fn node_lag(&self, id: &str) -> u32 {
        self.edges
            .iter()
            .filter(|e| e.src == id)
            .map(|e| e.lag)
            .max()
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, n) in self.nodes.iter().enumerate() {
            if self.nodes[..i].iter().any(|m| m.id == n.id) {
                return Err(Error::InvalidParameter {
                    name: "graph nodes",
                    reason: alloc::format!("duplicate node {}", n.id),
                });
            }
        }
        for e in &self.edges {
            let src = self
                .node_index(&e.src)
                .ok_or_else(|| Error::UnknownNode(e.src.clone()))?;
            let dst = self
                .node_index(&e.dst)
                .ok_or_else(|| Error::UnknownNode(e.dst.clone()))?;
            if self.nodes[src].kind != NodeKind::Index || self.nodes[dst].kind != NodeKind::Station {
                return Err(Error::InvalidParameter {
                    name: "graph edges",
                    reason: alloc::format!("edge {} -> {} is not index -> station", e.src, e.dst),
                });
            }
            if !(e.feature.is_finite() && e.feature >= 0.0) {
                return Err(Error::NonFinite("edge feature"));
            }
        }
        Ok(())
    }
}
