use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::masks::{FeatureScope, Masks};
use super::ExplainError;
use crate::graph::{canonical, Instance};
use crate::tensor::Matrix;

/// Objective components at the final latents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct LossTerms {
    pub l1: f64,
    pub lf: f64,
    pub lc: f64,
}

/// Kept feature entries: column ids, or `[source node, column]` pairs for
/// node-scoped masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KeptFeatures {
    Columns(Vec<usize>),
    Entries(Vec<[usize; 2]>),
}

impl KeptFeatures {
    pub fn len(&self) -> usize {
        match self {
            KeptFeatures::Columns(c) => c.len(),
            KeptFeatures::Entries(e) => e.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Relaxed mask snapshot. Edges carry their source-graph endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct MaskValues {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<(usize, usize, f64)>>,
    /// Row-major flattening of the 1×d or n×d feature mask.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
    #[serde(default)]
    pub feature_scope: FeatureScope,
}

/// One binarized explanation. `None` for a mask kind means it was not
/// learned and the instance keeps that input whole.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Explanation {
    pub instance: usize,
    pub kept_edges: Option<Vec<[usize; 2]>>,
    pub kept_features: Option<KeptFeatures>,
    pub mask_values: MaskValues,
    pub loss: LossTerms,
    pub size: usize,
}

impl Explanation {
    /// Binary masks over the instance's local edges and features.
    pub fn binary_masks(&self, instance: &Instance) -> Result<Masks, ExplainError> {
        let g = &instance.graph;
        let edges = match &self.kept_edges {
            None => None,
            Some(kept) => {
                let kept: HashSet<(usize, usize)> = kept.iter().map(|&[u, v]| canonical(u, v)).collect();
                let mut m = Matrix::zeros(1, g.num_edges());
                let mut found = 0;
                for (e, &edge) in g.edges().iter().enumerate() {
                    if kept.contains(&instance.to_source_edge(edge)) {
                        m.set(0, e, 1.0);
                        found += 1;
                    }
                }
                if found != kept.len() {
                    return Err(ExplainError::Usage(format!(
                        "explanation {} keeps edges that are not in the instance",
                        self.instance
                    )));
                }
                Some(m)
            }
        };
        let d = g.feature_dim();
        let out_of_range = || {
            ExplainError::Usage(format!(
                "explanation {} keeps features outside the instance",
                self.instance
            ))
        };
        let features = match (&self.kept_features, self.mask_values.feature_scope) {
            (None, _) => None,
            (Some(kept), FeatureScope::Column) => {
                let KeptFeatures::Columns(cols) = kept else {
                    return Err(out_of_range());
                };
                let mut f = Matrix::zeros(1, d);
                for &c in cols {
                    if c >= d {
                        return Err(out_of_range());
                    }
                    f.set(0, c, 1.0);
                }
                Some(f)
            }
            (Some(kept), FeatureScope::Node) => {
                let entries: &[[usize; 2]] = match kept {
                    KeptFeatures::Entries(e) => e,
                    KeptFeatures::Columns(c) if c.is_empty() => &[],
                    KeptFeatures::Columns(_) => return Err(out_of_range()),
                };
                let mut f = Matrix::zeros(g.num_nodes(), d);
                for &[node, c] in entries {
                    let local = instance
                        .node_map
                        .iter()
                        .position(|&s| s == node)
                        .ok_or_else(out_of_range)?;
                    if c >= d {
                        return Err(out_of_range());
                    }
                    f.set(local, c, 1.0);
                }
                Some(f)
            }
        };
        Ok(Masks { edges, features })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("explanation serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ExplainError> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| ExplainError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExplainError> {
        let path = path.as_ref();
        let io = |message: String| ExplainError::Io {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| io(e.to_string()))
    }
}
