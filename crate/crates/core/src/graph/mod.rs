//! Graph data model, synthetic benchmark generators, computational sub-graph
//! extraction, dataset files and the benzene-NO₂ molecule filter.

mod generators;
mod io;
mod motif;
mod subgraph;

pub use generators::{generate_ba_shapes, generate_tree_cycles, split_indices};
pub use io::{load_dataset, parse_dataset, save_dataset, to_json_string};
pub use motif::{benzene_no2_edges, filter_mutag0, AtomEncoding};
pub use subgraph::{extract_computational_subgraph, Instance};

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{EdgeIndex, Matrix};

pub type Edge = (usize, usize);

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{path}: parse error at line {line}, column {column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl GraphError {
    pub(crate) fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        GraphError::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}

/// Orders an undirected pair as `(min, max)`.
#[inline]
pub fn canonical(u: usize, v: usize) -> Edge {
    if u < v {
        (u, v)
    } else {
        (v, u)
    }
}

/// Undirected simple graph with node features and optional labels and
/// ground-truth motif edges.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<Edge>,
    features: Matrix,
    label: Option<usize>,
    node_labels: Option<Vec<usize>>,
    gt_edges: Option<Vec<Edge>>,
}

impl Graph {
    /// Builds a graph from an undirected edge list. Pairs may be given in
    /// either orientation; self loops and repeated pairs are rejected.
    pub fn new(n: usize, edges: &[Edge], features: Matrix) -> Result<Self, GraphError> {
        if features.rows() != n {
            return Err(GraphError::invalid(
                "features",
                format!("{} rows for {} nodes", features.rows(), n),
            ));
        }
        if !features.is_finite() {
            return Err(GraphError::invalid("features", "non-finite value"));
        }
        let mut set = BTreeSet::new();
        for &(u, v) in edges {
            if u == v {
                return Err(GraphError::invalid("edges", format!("self loop on node {u}")));
            }
            if u >= n || v >= n {
                return Err(GraphError::invalid(
                    "edges",
                    format!("({u},{v}) out of range for {n} nodes"),
                ));
            }
            if !set.insert(canonical(u, v)) {
                return Err(GraphError::invalid("edges", format!("({u},{v}) listed twice")));
            }
        }
        Ok(Self {
            n,
            edges: set.into_iter().collect(),
            features,
            label: None,
            node_labels: None,
            gt_edges: None,
        })
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_node_labels(mut self, labels: Vec<usize>) -> Result<Self, GraphError> {
        if labels.len() != self.n {
            return Err(GraphError::invalid(
                "node_labels",
                format!("{} labels for {} nodes", labels.len(), self.n),
            ));
        }
        self.node_labels = Some(labels);
        Ok(self)
    }

    /// Attaches ground-truth edges; each must be an edge of the graph.
    pub fn with_ground_truth(mut self, gt: &[Edge]) -> Result<Self, GraphError> {
        let mut set = BTreeSet::new();
        for &(u, v) in gt {
            let e = canonical(u, v);
            if !self.has_edge(e.0, e.1) {
                return Err(GraphError::invalid(
                    "gt_edges",
                    format!("({u},{v}) is not an edge of the graph"),
                ));
            }
            set.insert(e);
        }
        self.gt_edges = Some(set.into_iter().collect());
        Ok(self)
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Canonical `(u, v)` pairs with `u < v`, sorted.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn node_labels(&self) -> Option<&[usize]> {
        self.node_labels.as_deref()
    }

    pub fn ground_truth(&self) -> Option<&[Edge]> {
        self.gt_edges.as_deref()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.binary_search(&canonical(u, v)).is_ok()
    }

    /// Position of an edge in [`Graph::edges`].
    pub fn edge_position(&self, u: usize, v: usize) -> Option<usize> {
        self.edges.binary_search(&canonical(u, v)).ok()
    }

    /// Dense 0/1 adjacency.
    pub fn adjacency(&self) -> Matrix {
        let mut a = Matrix::zeros(self.n, self.n);
        for &(u, v) in &self.edges {
            a.set(u, v, 1.0);
            a.set(v, u, 1.0);
        }
        a
    }

    pub fn edge_index(&self) -> Arc<EdgeIndex> {
        Arc::new(EdgeIndex::new(self.n, self.edges.clone()).expect("edges are canonical"))
    }

    /// Sorted neighbor lists.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Ground-truth edges of the motif containing `node`: the connected
    /// component of the ground-truth edge set that touches it.
    pub fn motif_edges_of(&self, node: usize) -> Option<Vec<Edge>> {
        let gt = self.gt_edges.as_ref()?;
        let mut adj: HashMap<usize, Vec<usize>> = HashMap::new();
        for &(u, v) in gt {
            adj.entry(u).or_default().push(v);
            adj.entry(v).or_default().push(u);
        }
        adj.get(&node)?;
        let mut seen = BTreeSet::from([node]);
        let mut queue = VecDeque::from([node]);
        while let Some(u) = queue.pop_front() {
            for &w in &adj[&u] {
                if seen.insert(w) {
                    queue.push_back(w);
                }
            }
        }
        Some(
            gt.iter()
                .copied()
                .filter(|(u, _)| seen.contains(u))
                .collect(),
        )
    }

    /// Induced sub-graph on `nodes` (local id = position in `nodes`).
    /// Labels and ground truth are carried over where both endpoints survive.
    pub fn induced(&self, nodes: &[usize]) -> Graph {
        let local: HashMap<usize, usize> = nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let map_edges = |edges: &[Edge]| -> Vec<Edge> {
            edges
                .iter()
                .filter_map(|&(u, v)| Some(canonical(*local.get(&u)?, *local.get(&v)?)))
                .collect()
        };
        let mut edges = map_edges(&self.edges);
        edges.sort_unstable();
        let mut features = Matrix::zeros(nodes.len(), self.features.cols());
        for (i, &v) in nodes.iter().enumerate() {
            features.data_mut()[i * self.features.cols()..(i + 1) * self.features.cols()]
                .copy_from_slice(self.features.row(v));
        }
        let gt_edges = self.gt_edges.as_ref().map(|gt| {
            let mut mapped = map_edges(gt);
            mapped.sort_unstable();
            mapped
        });
        Graph {
            n: nodes.len(),
            edges,
            features,
            label: self.label,
            node_labels: self
                .node_labels
                .as_ref()
                .map(|l| nodes.iter().map(|&v| l[v]).collect()),
            gt_edges,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Graph,
    Node,
}

/// Free-form provenance stored next to a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DatasetMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_edges: Option<usize>,
}

/// A set of graphs (graph task) or one graph with node labels (node task),
/// plus its train/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub graphs: Vec<Graph>,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub meta: Option<DatasetMeta>,
}

impl Dataset {
    /// Number of classifiable instances: graphs, or nodes of the single graph.
    pub fn num_instances(&self) -> usize {
        match self.task {
            Task::Graph => self.graphs.len(),
            Task::Node => self.graphs.first().map_or(0, Graph::num_nodes),
        }
    }

    pub fn true_label(&self, id: usize) -> usize {
        match self.task {
            Task::Graph => self.graphs[id].label.expect("validated"),
            Task::Node => self.graphs[0].node_labels.as_ref().expect("validated")[id],
        }
    }

    /// Checks every structural invariant of the dataset.
    pub fn validate(&self) -> Result<(), GraphError> {
        if self.num_classes == 0 {
            return Err(GraphError::invalid("num_classes", "must be at least 1"));
        }
        if self.task == Task::Node && self.graphs.len() != 1 {
            return Err(GraphError::invalid(
                "graphs",
                format!("node task needs exactly one graph, found {}", self.graphs.len()),
            ));
        }
        for (gi, g) in self.graphs.iter().enumerate() {
            if g.feature_dim() != self.feature_dim {
                return Err(GraphError::invalid(
                    format!("graphs[{gi}].features"),
                    format!("width {} but feature_dim is {}", g.feature_dim(), self.feature_dim),
                ));
            }
            match self.task {
                Task::Graph => match g.label {
                    None => {
                        return Err(GraphError::invalid(format!("graphs[{gi}].label"), "missing"))
                    }
                    Some(l) if l >= self.num_classes => {
                        return Err(GraphError::invalid(
                            format!("graphs[{gi}].label"),
                            format!("{l} >= num_classes {}", self.num_classes),
                        ))
                    }
                    _ => {}
                },
                Task::Node => {
                    let labels = g.node_labels.as_ref().ok_or_else(|| {
                        GraphError::invalid(format!("graphs[{gi}].node_labels"), "missing")
                    })?;
                    if let Some((i, l)) = labels
                        .iter()
                        .enumerate()
                        .find(|(_, &l)| l >= self.num_classes)
                    {
                        return Err(GraphError::invalid(
                            format!("graphs[{gi}].node_labels[{i}]"),
                            format!("{l} >= num_classes {}", self.num_classes),
                        ));
                    }
                }
            }
        }
        let total = self.num_instances();
        let mut seen = vec![false; total];
        for (field, list) in [("train_idx", &self.train_idx), ("test_idx", &self.test_idx)] {
            for &i in list {
                if i >= total {
                    return Err(GraphError::invalid(
                        field,
                        format!("index {i} out of range for {total} instances"),
                    ));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(GraphError::invalid(field, format!("index {i} appears twice")));
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(GraphError::invalid(
                "train_idx/test_idx",
                format!("instance {missing} is in neither split"),
            ));
        }
        Ok(())
    }

    /// The unit that gets classified and explained: a whole graph, or the
    /// `num_layers`-hop computational sub-graph of a node.
    pub fn instance(&self, id: usize, num_layers: usize) -> Result<Instance, GraphError> {
        match self.task {
            Task::Graph => {
                let g = self.graphs.get(id).ok_or_else(|| {
                    GraphError::Usage(format!("graph {id} out of range ({})", self.graphs.len()))
                })?;
                Ok(Instance {
                    id,
                    node_map: (0..g.num_nodes()).collect(),
                    target: None,
                    label: g.label.expect("validated"),
                    ground_truth: g.gt_edges.clone(),
                    boundary_degree: vec![0.0; g.num_nodes()],
                    graph: g.clone(),
                })
            }
            Task::Node => extract_computational_subgraph(&self.graphs[0], id, num_layers),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(n: usize) -> Graph {
        let edges: Vec<Edge> = (0..n - 1).map(|i| (i, i + 1)).collect();
        Graph::new(n, &edges, Matrix::filled(n, 1, 1.0)).unwrap()
    }

    #[test]
    fn edges_are_canonical_and_sorted() {
        let g = Graph::new(3, &[(2, 1), (1, 0)], Matrix::zeros(3, 1)).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        let a = g.adjacency();
        assert_eq!(a, a.transpose());
        assert!((0..3).all(|i| a.get(i, i) == 0.0));
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(Graph::new(2, &[(0, 0)], Matrix::zeros(2, 1)).is_err());
        assert!(Graph::new(2, &[(0, 1), (1, 0)], Matrix::zeros(2, 1)).is_err());
        assert!(Graph::new(2, &[(0, 2)], Matrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn ground_truth_must_exist() {
        assert!(path(3).with_ground_truth(&[(0, 2)]).is_err());
        assert!(path(3).with_ground_truth(&[(1, 0)]).is_ok());
    }

    #[test]
    fn motif_component() {
        let g = Graph::new(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)], Matrix::zeros(6, 1))
            .unwrap()
            .with_ground_truth(&[(0, 1), (1, 2), (4, 5)])
            .unwrap();
        assert_eq!(g.motif_edges_of(2), Some(vec![(0, 1), (1, 2)]));
        assert_eq!(g.motif_edges_of(5), Some(vec![(4, 5)]));
        assert_eq!(g.motif_edges_of(3), None);
    }

    #[test]
    fn split_must_cover() {
        let ds = Dataset {
            task: Task::Graph,
            num_classes: 2,
            feature_dim: 1,
            graphs: vec![path(2).with_label(0), path(3).with_label(1)],
            train_idx: vec![0],
            test_idx: vec![],
            meta: None,
        };
        assert!(ds.validate().is_err());
        let ok = Dataset {
            test_idx: vec![1],
            ..ds
        };
        ok.validate().unwrap();
    }
}
