//! JSON dataset files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetMeta, Edge, Graph, GraphError, Task};
use crate::tensor::Matrix;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    task: Task,
    num_classes: usize,
    feature_dim: usize,
    graphs: Vec<GraphRecord>,
    train_idx: Vec<usize>,
    test_idx: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<DatasetMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphRecord {
    n: usize,
    edges: Vec<[usize; 2]>,
    features: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_edges: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    node_labels: Option<Vec<usize>>,
}

fn record_of(g: &Graph) -> GraphRecord {
    let pairs = |edges: &[Edge]| edges.iter().map(|&(u, v)| [u, v]).collect();
    GraphRecord {
        n: g.num_nodes(),
        edges: pairs(g.edges()),
        features: g.features().to_rows(),
        label: g.label(),
        gt_edges: g.ground_truth().map(pairs),
        node_labels: g.node_labels().map(<[usize]>::to_vec),
    }
}

fn graph_of(gi: usize, rec: GraphRecord, feature_dim: usize) -> Result<Graph, GraphError> {
    let field = |name: &str| format!("graphs[{gi}].{name}");
    for (ei, &[u, v]) in rec.edges.iter().enumerate() {
        // listed once per pair with u < v: a reversed or repeated pair would
        // describe an asymmetric adjacency
        if u >= v {
            return Err(GraphError::invalid(
                format!("graphs[{gi}].edges[{ei}]"),
                format!("[{u},{v}] must satisfy u < v (asymmetric or self-loop entry)"),
            ));
        }
    }
    let features = if rec.features.is_empty() {
        Matrix::zeros(0, feature_dim)
    } else {
        Matrix::from_rows(&rec.features)
            .map_err(|e| GraphError::invalid(field("features"), e.to_string()))?
    };
    let edges: Vec<Edge> = rec.edges.iter().map(|&[u, v]| (u, v)).collect();
    let mut g = Graph::new(rec.n, &edges, features).map_err(|e| prefix(e, &field("")))?;
    if let Some(l) = rec.label {
        g = g.with_label(l);
    }
    if let Some(labels) = rec.node_labels {
        g = g.with_node_labels(labels).map_err(|e| prefix(e, &field("")))?;
    }
    if let Some(gt) = rec.gt_edges {
        let gt: Vec<Edge> = gt.iter().map(|&[u, v]| (u, v)).collect();
        g = g.with_ground_truth(&gt).map_err(|e| prefix(e, &field("")))?;
    }
    Ok(g)
}

fn prefix(err: GraphError, at: &str) -> GraphError {
    match err {
        GraphError::Validation { field, message } => GraphError::Validation {
            field: format!("{at}{field}"),
            message,
        },
        other => other,
    }
}

fn file_of(ds: &Dataset) -> DatasetFile {
    DatasetFile {
        task: ds.task,
        num_classes: ds.num_classes,
        feature_dim: ds.feature_dim,
        graphs: ds.graphs.iter().map(record_of).collect(),
        train_idx: ds.train_idx.clone(),
        test_idx: ds.test_idx.clone(),
        meta: ds.meta.clone(),
    }
}

pub fn to_json_string(ds: &Dataset) -> String {
    serde_json::to_string(&file_of(ds)).expect("dataset serializes")
}

/// Parses and validates a dataset document; `origin` names it in errors.
pub fn parse_dataset(text: &str, origin: &str) -> Result<Dataset, GraphError> {
    let file: DatasetFile = serde_json::from_str(text).map_err(|e| GraphError::Parse {
        path: origin.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let graphs = file
        .graphs
        .into_iter()
        .enumerate()
        .map(|(gi, rec)| graph_of(gi, rec, file.feature_dim))
        .collect::<Result<Vec<_>, _>>()?;
    let ds = Dataset {
        task: file.task,
        num_classes: file.num_classes,
        feature_dim: file.feature_dim,
        graphs,
        train_idx: file.train_idx,
        test_idx: file.test_idx,
        meta: file.meta,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, GraphError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(&text, &path.display().to_string())
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), GraphError> {
    let path = path.as_ref();
    fs::write(path, to_json_string(ds)).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })
}
