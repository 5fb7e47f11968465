//! Graph topology and batching.
//!
//! A [`Graph`] stores directed edges as `(sender, receiver)` pairs sorted by
//! `(receiver, sender)`, so incoming messages for a node occupy a contiguous
//! run of the edge list. Mesh edges are always present in both directions.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use ndarray::{concatenate, s, Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Directed edge `(sender j, receiver i)`.
pub type Edge = (usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Graph<T> {
    positions: Array2<T>,
    edges: Vec<Edge>,
    node_features: Array2<T>,
    edge_features: Array2<T>,
    node_targets: Option<Array2<T>>,
    graph_target: Option<Array1<T>>,
}

impl<T: Scalar> Graph<T> {
    /// Builds a graph from positions and an explicit edge list without
    /// checking any invariant. Edges are kept in the given order.
    /// Use [`Graph::validate`] to inspect the result.
    pub fn from_raw_parts(positions: Array2<T>, edges: Vec<Edge>) -> Self {
        let n = positions.nrows();
        let e = edges.len();
        Self {
            positions,
            edges,
            node_features: Array2::zeros((n, 0)),
            edge_features: Array2::zeros((e, 0)),
            node_targets: None,
            graph_target: None,
        }
    }

    fn from_undirected(positions: Array2<T>, pairs: impl IntoIterator<Item = Edge>) -> Self {
        let mut set = BTreeSet::new();
        for (a, b) in pairs {
            // keyed by (receiver, sender) so iteration order is the storage order
            set.insert((b, a));
            set.insert((a, b));
        }
        let edges = set.into_iter().map(|(recv, send)| (send, recv)).collect();
        Self::from_raw_parts(positions, edges)
    }

    /// Mesh connectivity to bidirectional edges. A cell of `k >= 3` nodes is
    /// treated as a closed polygon (consecutive pairs plus the closing pair);
    /// a 2-node cell is a single segment. Shared edges are deduplicated.
    pub fn build_from_mesh(positions: Array2<T>, cells: &[Vec<usize>]) -> Result<Self> {
        let n = positions.nrows();
        let mut pairs = Vec::new();
        for (c, cell) in cells.iter().enumerate() {
            if cell.len() < 2 {
                return Err(Error::InvalidMesh(format!(
                    "cell {c} has {} node(s), need at least 2",
                    cell.len()
                )));
            }
            if let Some(&bad) = cell.iter().find(|&&idx| idx >= n) {
                return Err(Error::InvalidMesh(format!(
                    "cell {c} references node {bad}, mesh has {n} nodes"
                )));
            }
            let k = cell.len();
            let closing = if k >= 3 { k } else { k - 1 };
            for p in 0..closing {
                let (a, b) = (cell[p], cell[(p + 1) % k]);
                if a == b {
                    return Err(Error::InvalidMesh(format!(
                        "cell {c} repeats node {a} on an edge"
                    )));
                }
                pairs.push((a, b));
            }
        }
        Ok(Self::from_undirected(positions, pairs))
    }

    /// Ordered surface points to a chain graph; each node links to its
    /// neighbours along the chain, and `closed` also links the last node to the first.
    pub fn build_surface_chain(positions: Array2<T>, closed: bool) -> Result<Self> {
        let n = positions.nrows();
        if n < 2 {
            return Err(Error::InvalidChain(format!("need at least 2 points, got {n}")));
        }
        let mut pairs: Vec<Edge> = (1..n).map(|k| (k - 1, k)).collect();
        if closed && n > 2 {
            pairs.push((n - 1, 0));
        }
        Ok(Self::from_undirected(positions, pairs))
    }

    pub fn num_nodes(&self) -> usize {
        self.positions.nrows()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Spatial dimension `D` of the node positions.
    pub fn dim(&self) -> usize {
        self.positions.ncols()
    }

    pub fn positions(&self) -> &Array2<T> {
        &self.positions
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_features(&self) -> &Array2<T> {
        &self.node_features
    }

    pub fn edge_features(&self) -> &Array2<T> {
        &self.edge_features
    }

    pub fn node_targets(&self) -> Option<&Array2<T>> {
        self.node_targets.as_ref()
    }

    pub fn graph_target(&self) -> Option<&Array1<T>> {
        self.graph_target.as_ref()
    }

    pub fn with_node_features(mut self, features: Array2<T>) -> Result<Self> {
        if features.nrows() != self.num_nodes() {
            return Err(Error::Shape(format!(
                "node features have {} rows, graph has {} nodes",
                features.nrows(),
                self.num_nodes()
            )));
        }
        self.node_features = features;
        Ok(self)
    }

    pub fn with_edge_features(mut self, features: Array2<T>) -> Result<Self> {
        if features.nrows() != self.num_edges() {
            return Err(Error::Shape(format!(
                "edge features have {} rows, graph has {} edges",
                features.nrows(),
                self.num_edges()
            )));
        }
        self.edge_features = features;
        Ok(self)
    }

    pub fn with_node_targets(mut self, targets: Array2<T>) -> Result<Self> {
        if targets.nrows() != self.num_nodes() {
            return Err(Error::Shape(format!(
                "node targets have {} rows, graph has {} nodes",
                targets.nrows(),
                self.num_nodes()
            )));
        }
        self.node_targets = Some(targets);
        Ok(self)
    }

    pub fn with_graph_target(mut self, target: Array1<T>) -> Self {
        self.graph_target = Some(target);
        self
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`. Positions,
    /// features and targets move with their node; edges are re-sorted.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.num_nodes();
        if perm.len() != n || perm.iter().collect::<HashSet<_>>().len() != n || perm.iter().any(|&p| p >= n) {
            return Err(Error::Shape(format!("not a permutation of 0..{n}")));
        }
        let scatter = |m: &Array2<T>| {
            let mut out = Array2::zeros(m.raw_dim());
            for (old, &new) in perm.iter().enumerate() {
                out.row_mut(new).assign(&m.row(old));
            }
            out
        };
        let mut order: Vec<(Edge, usize)> = self
            .edges
            .iter()
            .enumerate()
            .map(|(k, &(s, r))| ((perm[s], perm[r]), k))
            .collect();
        order.sort_by_key(|&((s, r), _)| (r, s));
        let edges = order.iter().map(|&(e, _)| e).collect();
        let edge_features = self.edge_features.select(Axis(0), &order.iter().map(|&(_, k)| k).collect::<Vec<_>>());
        Ok(Self {
            positions: scatter(&self.positions),
            edges,
            node_features: scatter(&self.node_features),
            edge_features,
            node_targets: self.node_targets.as_ref().map(scatter),
            graph_target: self.graph_target.clone(),
        })
    }

    /// Every violated structural invariant, in edge order then row checks.
    pub fn validate(&self) -> Vec<Violation> {
        let n = self.num_nodes();
        let mut out = Vec::new();
        let set: HashSet<Edge> = self.edges.iter().copied().collect();
        let mut seen = HashSet::new();
        for (k, &(s, r)) in self.edges.iter().enumerate() {
            if s >= n || r >= n {
                out.push(Violation::IndexOutOfRange { edge: k, sender: s, receiver: r });
                continue;
            }
            if s == r {
                out.push(Violation::SelfLoop { edge: k, node: s });
                continue;
            }
            if !seen.insert((s, r)) {
                out.push(Violation::DuplicateEdge { edge: k, sender: s, receiver: r });
            }
            if !set.contains(&(r, s)) {
                out.push(Violation::MissingReverse { edge: k, sender: s, receiver: r });
            }
        }
        if self.node_features.nrows() != n {
            out.push(Violation::RowCount { what: "node_features", rows: self.node_features.nrows(), expected: n });
        }
        if self.edge_features.nrows() != self.num_edges() {
            out.push(Violation::RowCount {
                what: "edge_features",
                rows: self.edge_features.nrows(),
                expected: self.num_edges(),
            });
        }
        if let Some(t) = &self.node_targets {
            if t.nrows() != n {
                out.push(Violation::RowCount { what: "node_targets", rows: t.nrows(), expected: n });
            }
        }
        out
    }

    /// Sender indices, one per edge.
    pub fn senders(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.0).collect()
    }

    /// Receiver indices, one per edge.
    pub fn receivers(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.1).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    IndexOutOfRange { edge: usize, sender: usize, receiver: usize },
    SelfLoop { edge: usize, node: usize },
    DuplicateEdge { edge: usize, sender: usize, receiver: usize },
    MissingReverse { edge: usize, sender: usize, receiver: usize },
    RowCount { what: &'static str, rows: usize, expected: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::IndexOutOfRange { edge, sender, receiver } => {
                write!(f, "edge {edge} ({sender}->{receiver}) has an out-of-range index")
            }
            Violation::SelfLoop { edge, node } => write!(f, "edge {edge} is a self-loop on node {node}"),
            Violation::DuplicateEdge { edge, sender, receiver } => {
                write!(f, "edge {edge} ({sender}->{receiver}) is a duplicate")
            }
            Violation::MissingReverse { edge, sender, receiver } => {
                write!(f, "edge {edge} ({sender}->{receiver}) has no reverse edge")
            }
            Violation::RowCount { what, rows, expected } => {
                write!(f, "{what} has {rows} rows, expected {expected}")
            }
        }
    }
}

/// Disjoint union of member graphs, with each member's node range recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchedGraph<T> {
    graph: Graph<T>,
    segments: Vec<(usize, usize)>,
    edge_segments: Vec<(usize, usize)>,
}

impl<T: Scalar> BatchedGraph<T> {
    pub fn merge(graphs: &[Graph<T>]) -> Result<Self> {
        let first = graphs
            .first()
            .ok_or_else(|| Error::IncompatibleGraphs("cannot merge an empty list".into()))?;
        let width = |o: Option<&Array2<T>>| o.map(|a| a.ncols());
        for (k, g) in graphs.iter().enumerate().skip(1) {
            let mismatch = g.dim() != first.dim()
                || g.node_features.ncols() != first.node_features.ncols()
                || g.edge_features.ncols() != first.edge_features.ncols()
                || width(g.node_targets()) != width(first.node_targets())
                || g.graph_target.as_ref().map(|t| t.len()) != first.graph_target.as_ref().map(|t| t.len());
            if mismatch {
                return Err(Error::IncompatibleGraphs(format!(
                    "graph {k} differs from graph 0 in dimension, feature width or target arity"
                )));
            }
        }

        let mut segments = Vec::with_capacity(graphs.len());
        let mut edge_segments = Vec::with_capacity(graphs.len());
        let mut edges = Vec::with_capacity(graphs.iter().map(Graph::num_edges).sum());
        let (mut node_off, mut edge_off) = (0, 0);
        for g in graphs {
            segments.push((node_off, g.num_nodes()));
            edge_segments.push((edge_off, g.num_edges()));
            edges.extend(g.edges.iter().map(|&(s, r)| (s + node_off, r + node_off)));
            node_off += g.num_nodes();
            edge_off += g.num_edges();
        }

        let stack = |f: &dyn Fn(&Graph<T>) -> &Array2<T>| {
            let views: Vec<_> = graphs.iter().map(|g| f(g).view()).collect();
            concatenate(Axis(0), &views).expect("widths checked above")
        };
        let node_targets = first.node_targets.as_ref().map(|_| stack(&|g| g.node_targets.as_ref().unwrap()));
        let graph_target = first.graph_target.as_ref().map(|_| {
            let views: Vec<_> = graphs.iter().map(|g| g.graph_target.as_ref().unwrap().view()).collect();
            concatenate(Axis(0), &views).expect("lengths checked above")
        });

        Ok(Self {
            graph: Graph {
                positions: stack(&|g| &g.positions),
                edges,
                node_features: stack(&|g| &g.node_features),
                edge_features: stack(&|g| &g.edge_features),
                node_targets,
                graph_target,
            },
            segments,
            edge_segments,
        })
    }

    pub fn graph(&self) -> &Graph<T> {
        &self.graph
    }

    /// Per-member `(start, length)` node ranges.
    pub fn segments(&self) -> &[(usize, usize)] {
        &self.segments
    }

    pub fn num_graphs(&self) -> usize {
        self.segments.len()
    }

    /// Member index of every node.
    pub fn node_segment_ids(&self) -> Vec<usize> {
        let mut ids = Vec::with_capacity(self.graph.num_nodes());
        for (g, &(_, len)) in self.segments.iter().enumerate() {
            ids.extend(std::iter::repeat_n(g, len));
        }
        ids
    }

    /// Recovers member `k` as a standalone graph.
    pub fn extract(&self, k: usize) -> Graph<T> {
        let (start, len) = self.segments[k];
        let (estart, elen) = self.edge_segments[k];
        let rows = s![start..start + len, ..];
        let erows = s![estart..estart + elen, ..];
        let g = &self.graph;
        let width = g.graph_target.as_ref().map(|t| t.len() / self.num_graphs());
        Graph {
            positions: g.positions.slice(rows).to_owned(),
            edges: g.edges[estart..estart + elen].iter().map(|&(s, r)| (s - start, r - start)).collect(),
            node_features: g.node_features.slice(rows).to_owned(),
            edge_features: g.edge_features.slice(erows).to_owned(),
            node_targets: g.node_targets.as_ref().map(|t| t.slice(rows).to_owned()),
            graph_target: g
                .graph_target
                .as_ref()
                .zip(width)
                .map(|(t, w)| t.slice(s![k * w..(k + 1) * w]).to_owned()),
        }
    }

    /// Graph-level targets as a `(num_graphs, width)` matrix.
    pub fn graph_targets(&self) -> Option<Array2<T>> {
        let t = self.graph.graph_target.as_ref()?;
        let w = t.len() / self.num_graphs();
        Some(t.clone().into_shape_with_order((self.num_graphs(), w)).expect("uniform target arity"))
    }
}
