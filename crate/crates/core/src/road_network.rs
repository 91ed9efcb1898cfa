//! Undirected road graph with Dijkstra queries.
//!
//! Shortest routes are unique: among equal-length paths the one with the
//! lexicographically smallest node-id sequence is returned. Length ties are
//! detected with a small relative tolerance so that, e.g., `0.1 + 0.2` and
//! `0.3` count as the same length.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance used to decide that two path lengths are equal.
const TIE_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoadError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("no path from {from} to {to}")]
    NoPath { from: NodeId, to: NodeId },
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("edge {a}-{b} has non-positive or non-finite length {length}")]
    BadEdgeLength { a: NodeId, b: NodeId, length: f64 },
    #[error("negative proximity threshold {0}")]
    NegativeThreshold(f64),
    #[error("failed to read road network: {0}")]
    Io(String),
    #[error("malformed road network file: {0}")]
    Parse(String),
}

/// Amenities near an intersection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Amenities {
    pub restaurant: bool,
    pub shopping: bool,
    pub supermarket: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    /// km
    pub x: f64,
    /// km
    pub y: f64,
    #[serde(default)]
    pub restaurant: bool,
    #[serde(default)]
    pub shopping: bool,
    #[serde(default)]
    pub supermarket: bool,
}

impl Node {
    pub fn amenities(&self) -> Amenities {
        Amenities {
            restaurant: self.restaurant,
            shopping: self.shopping,
            supermarket: self.supermarket,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: NodeId,
    pub b: NodeId,
    /// km, strictly positive
    pub length: f64,
}

/// On-disk layout of a road network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoadNetworkFile {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub nodes: Vec<NodeId>,
    /// km
    pub length: f64,
}

/// Immutable road graph. All queries take `&self`, so a network can be
/// shared across threads freely.
#[derive(Debug, Clone)]
pub struct RoadNetwork {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    index: HashMap<NodeId, usize>,
    /// Adjacency sorted by neighbour id; parallel edges keep only the shortest.
    adj: Vec<Vec<(usize, f64)>>,
}

#[derive(Copy, Clone, PartialEq)]
struct HeapEntry {
    cost: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on cost, then on node index for a stable pop order
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn lengths_equal(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_RTOL * a.abs().max(b.abs()).max(1.0)
}

impl RoadNetwork {
    pub fn new(nodes: Vec<Node>, edges: Vec<Edge>) -> Result<Self, RoadError> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id, i).is_some() {
                return Err(RoadError::DuplicateNode(n.id));
            }
        }
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nodes.len()];
        for e in &edges {
            if !(e.length.is_finite() && e.length > 0.0) {
                return Err(RoadError::BadEdgeLength {
                    a: e.a,
                    b: e.b,
                    length: e.length,
                });
            }
            let ia = *index.get(&e.a).ok_or(RoadError::UnknownNode(e.a))?;
            let ib = *index.get(&e.b).ok_or(RoadError::UnknownNode(e.b))?;
            if ia == ib {
                continue;
            }
            adj[ia].push((ib, e.length));
            adj[ib].push((ia, e.length));
        }
        // Sorting by (neighbour id, length) and keeping the first entry per
        // neighbour makes the graph independent of edge insertion order.
        for list in adj.iter_mut() {
            list.sort_by(|x, y| {
                nodes[x.0]
                    .id
                    .cmp(&nodes[y.0].id)
                    .then(x.1.total_cmp(&y.1))
            });
            list.dedup_by(|later, earlier| later.0 == earlier.0);
        }
        Ok(Self {
            nodes,
            edges,
            index,
            adj,
        })
    }

    pub fn from_json_str(s: &str) -> Result<Self, RoadError> {
        let file: RoadNetworkFile =
            serde_json::from_str(s).map_err(|e| RoadError::Parse(e.to_string()))?;
        Self::new(file.nodes, file.edges)
    }

    pub fn load(path: &Path) -> Result<Self, RoadError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RoadError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_file(&self) -> RoadNetworkFile {
        RoadNetworkFile {
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn node(&self, id: NodeId) -> Result<&Node, RoadError> {
        self.index_of(id).map(|i| &self.nodes[i])
    }

    pub fn index_of(&self, id: NodeId) -> Result<usize, RoadError> {
        self.index.get(&id).copied().ok_or(RoadError::UnknownNode(id))
    }

    /// Bounding box `(min_x, min_y, max_x, max_y)`; `None` for an empty graph.
    pub fn bounding_box(&self) -> Option<(f64, f64, f64, f64)> {
        let first = self.nodes.first()?;
        Some(self.nodes.iter().fold(
            (first.x, first.y, first.x, first.y),
            |(x0, y0, x1, y1), n| (x0.min(n.x), y0.min(n.y), x1.max(n.x), y1.max(n.y)),
        ))
    }

    /// True when every node can reach every other node.
    pub fn is_connected(&self) -> bool {
        if self.nodes.is_empty() {
            return true;
        }
        self.dijkstra(0).iter().all(|d| d.is_finite())
    }

    /// Single-source distances indexed like [`RoadNetwork::nodes`];
    /// `f64::INFINITY` for unreachable nodes.
    pub fn distances_from(&self, origin: NodeId) -> Result<Vec<f64>, RoadError> {
        Ok(self.dijkstra(self.index_of(origin)?))
    }

    fn dijkstra(&self, start: usize) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.nodes.len()];
        let mut heap = BinaryHeap::new();
        dist[start] = 0.0;
        heap.push(HeapEntry {
            cost: 0.0,
            node: start,
        });
        while let Some(HeapEntry { cost, node }) = heap.pop() {
            if cost > dist[node] {
                continue;
            }
            for &(next, w) in &self.adj[node] {
                let c = cost + w;
                if c < dist[next] {
                    dist[next] = c;
                    heap.push(HeapEntry { cost: c, node: next });
                }
            }
        }
        dist
    }

    /// Shortest-path distance between two nodes, `INFINITY` when unreachable.
    pub fn distance(&self, a: NodeId, b: NodeId) -> Result<f64, RoadError> {
        let ib = self.index_of(b)?;
        Ok(self.distances_from(a)?[ib])
    }

    pub fn shortest_path(&self, origin: NodeId, dest: NodeId) -> Result<Route, RoadError> {
        let io = self.index_of(origin)?;
        let id = self.index_of(dest)?;
        let from_origin = self.dijkstra(io);
        if !from_origin[id].is_finite() {
            return Err(RoadError::NoPath {
                from: origin,
                to: dest,
            });
        }
        let to_dest = self.dijkstra(id);
        let total = from_origin[id];

        // Walk forward, always stepping to the smallest-id neighbour that
        // still lies on some shortest path. Adjacency is sorted by id, so the
        // first qualifying neighbour wins.
        let mut nodes = vec![origin];
        let mut cur = io;
        let mut travelled = 0.0;
        while cur != id {
            let (next, w) = self.adj[cur]
                .iter()
                .copied()
                .find(|&(v, w)| {
                    to_dest[v].is_finite() && lengths_equal(travelled + w + to_dest[v], total)
                })
                .expect("a shortest-path successor exists on a reachable route");
            travelled += w;
            cur = next;
            nodes.push(self.nodes[cur].id);
        }
        Ok(Route {
            nodes,
            length: travelled,
        })
    }

    /// Extra distance driven when a trip `origin → dest` detours via `station`.
    pub fn deviating_distance(
        &self,
        origin: NodeId,
        dest: NodeId,
        station: NodeId,
    ) -> Result<f64, RoadError> {
        let is = self.index_of(station)?;
        let id = self.index_of(dest)?;
        let from_origin = self.distances_from(origin)?;
        let from_station = self.dijkstra(is);
        if !from_origin[id].is_finite() {
            return Err(RoadError::NoPath {
                from: origin,
                to: dest,
            });
        }
        if !from_origin[is].is_finite() {
            return Err(RoadError::NoPath {
                from: origin,
                to: station,
            });
        }
        if !from_station[id].is_finite() {
            return Err(RoadError::NoPath {
                from: station,
                to: dest,
            });
        }
        Ok(detour(from_origin[is], from_station[id], from_origin[id]))
    }

    /// 1 when `station` is within `d_th` km (inclusive) of `dest`, else 0.
    pub fn destination_indicator(
        &self,
        dest: NodeId,
        station: NodeId,
        d_th: f64,
    ) -> Result<u8, RoadError> {
        if d_th < 0.0 || d_th.is_nan() {
            return Err(RoadError::NegativeThreshold(d_th));
        }
        Ok(u8::from(self.distance(dest, station)? <= d_th))
    }

    /// All-pairs distance table (one Dijkstra per node).
    pub fn distance_table(&self) -> DistanceTable {
        use rayon::prelude::*;
        let rows: Vec<Vec<f64>> = (0..self.nodes.len())
            .into_par_iter()
            .map(|i| self.dijkstra(i))
            .collect();
        DistanceTable {
            index: self.index.clone(),
            rows,
        }
    }
}

/// Detour length from the three leg lengths; clamps rounding noise at 0.
pub(crate) fn detour(to_station: f64, station_to_dest: f64, direct: f64) -> f64 {
    let d = to_station + station_to_dest - direct;
    if lengths_equal(to_station + station_to_dest, direct) {
        0.0
    } else {
        d.max(0.0)
    }
}

/// Precomputed shortest-path distances between every pair of nodes.
#[derive(Debug, Clone)]
pub struct DistanceTable {
    index: HashMap<NodeId, usize>,
    rows: Vec<Vec<f64>>,
}

impl DistanceTable {
    pub fn get(&self, a: NodeId, b: NodeId) -> Result<f64, RoadError> {
        let ia = *self.index.get(&a).ok_or(RoadError::UnknownNode(a))?;
        let ib = *self.index.get(&b).ok_or(RoadError::UnknownNode(b))?;
        Ok(self.rows[ia][ib])
    }

    pub fn deviating_distance(
        &self,
        origin: NodeId,
        dest: NodeId,
        station: NodeId,
    ) -> Result<f64, RoadError> {
        let direct = self.get(origin, dest)?;
        let a = self.get(origin, station)?;
        let b = self.get(station, dest)?;
        if !direct.is_finite() {
            return Err(RoadError::NoPath {
                from: origin,
                to: dest,
            });
        }
        if !a.is_finite() {
            return Err(RoadError::NoPath {
                from: origin,
                to: station,
            });
        }
        if !b.is_finite() {
            return Err(RoadError::NoPath {
                from: station,
                to: dest,
            });
        }
        Ok(detour(a, b, direct))
    }
}
