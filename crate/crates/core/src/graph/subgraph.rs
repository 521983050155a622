use std::collections::VecDeque;
use std::sync::Arc;

use super::{canonical, Edge, Graph, GraphError};
use crate::tensor::EdgeIndex;

/// One explainable prediction. For node classification this is the L-hop
/// computational sub-graph with the target node at local id 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    /// Graph index (graph task) or target node id (node task).
    pub id: usize,
    pub graph: Graph,
    /// Local id → id in the source graph.
    pub node_map: Vec<usize>,
    /// Local node whose prediction is explained; `None` for graph task.
    pub target: Option<usize>,
    pub label: usize,
    /// Ground-truth motif edges in local ids.
    pub ground_truth: Option<Vec<Edge>>,
    /// Per local node, the number of its source-graph edges that leave the
    /// sub-graph. They enter degree normalization only, so an unmasked
    /// instance reproduces the full-graph prediction.
    pub boundary_degree: Vec<f64>,
}

impl Instance {
    /// Sparse propagation structure including boundary degrees.
    pub fn edge_index(&self) -> Arc<EdgeIndex> {
        let index = EdgeIndex::new(self.graph.num_nodes(), self.graph.edges().to_vec())
            .and_then(|e| e.with_boundary_degrees(self.boundary_degree.clone()))
            .expect("instance edges are valid");
        Arc::new(index)
    }

    /// Sparse propagation structure without boundary degrees: the source
    /// graph with every edge outside the sub-graph removed.
    pub fn local_edge_index(&self) -> Arc<EdgeIndex> {
        let index = EdgeIndex::new(self.graph.num_nodes(), self.graph.edges().to_vec())
            .expect("instance edges are valid");
        Arc::new(index)
    }

    /// Maps a local edge back to source-graph node ids.
    pub fn to_source_edge(&self, (u, v): Edge) -> Edge {
        canonical(self.node_map[u], self.node_map[v])
    }

    /// Maps a source-graph edge into local ids, if both ends are present.
    pub fn to_local_edge(&self, (u, v): Edge) -> Option<Edge> {
        let lu = self.node_map.iter().position(|&x| x == u)?;
        let lv = self.node_map.iter().position(|&x| x == v)?;
        Some(canonical(lu, lv))
    }
}

/// Nodes within `num_layers` hops of `node`, with all edges among them.
/// Local ids follow BFS discovery order, so the target is local 0.
pub fn extract_computational_subgraph(
    g: &Graph,
    node: usize,
    num_layers: usize,
) -> Result<Instance, GraphError> {
    if node >= g.num_nodes() {
        return Err(GraphError::Usage(format!(
            "node {node} out of range for {} nodes",
            g.num_nodes()
        )));
    }
    if num_layers == 0 {
        return Err(GraphError::Usage("layer count must be at least 1".into()));
    }
    let adj = g.neighbors();
    let mut dist = vec![usize::MAX; g.num_nodes()];
    dist[node] = 0;
    let mut order = vec![node];
    let mut queue = VecDeque::from([node]);
    while let Some(u) = queue.pop_front() {
        if dist[u] == num_layers {
            continue;
        }
        for &w in &adj[u] {
            if dist[w] == usize::MAX {
                dist[w] = dist[u] + 1;
                order.push(w);
                queue.push_back(w);
            }
        }
    }
    let sub = g.induced(&order);
    let ground_truth = g.motif_edges_of(node).map(|motif| {
        let local: std::collections::HashMap<usize, usize> =
            order.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut edges: Vec<Edge> = motif
            .iter()
            .filter_map(|&(u, v)| Some(canonical(*local.get(&u)?, *local.get(&v)?)))
            .collect();
        edges.sort_unstable();
        edges
    });
    let boundary_degree = order
        .iter()
        .map(|&v| adj[v].iter().filter(|&&w| dist[w] == usize::MAX).count() as f64)
        .collect();
    let label = g.node_labels().map_or(0, |l| l[node]);
    Ok(Instance {
        id: node,
        graph: sub,
        node_map: order,
        target: Some(0),
        label,
        ground_truth,
        boundary_degree,
    })
}
