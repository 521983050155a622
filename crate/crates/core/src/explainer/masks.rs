use serde::{Deserialize, Serialize};

use super::ExplainError;
use crate::gnn::GcnModel;
use std::sync::Arc;

use crate::graph::Instance;
use crate::tensor::{EdgeIndex, Matrix};

/// Which inputs carry a learnable mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    #[default]
    Edges,
    Features,
    Both,
}

impl MaskMode {
    pub fn edges(self) -> bool {
        matches!(self, MaskMode::Edges | MaskMode::Both)
    }

    pub fn features(self) -> bool {
        matches!(self, MaskMode::Features | MaskMode::Both)
    }
}

/// Granularity of the feature mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FeatureScope {
    /// One latent per feature column, shared by all nodes.
    #[default]
    Column,
    /// One latent per node and feature.
    Node,
}

/// Relaxed masks as latent reals; the activated mask is their sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPair {
    /// 1×E, one per existing undirected edge in instance edge order.
    pub edge_latents: Option<Matrix>,
    /// 1×d (column scope) or n×d (node scope).
    pub feature_latents: Option<Matrix>,
    pub scope: FeatureScope,
}

impl MaskPair {
    /// Latents at zero (activated value 0.5) for the enabled mask kinds.
    pub fn zeros(instance: &Instance, mode: MaskMode, scope: FeatureScope) -> Self {
        let g = &instance.graph;
        let feature_rows = match scope {
            FeatureScope::Column => 1,
            FeatureScope::Node => g.num_nodes(),
        };
        Self {
            edge_latents: mode.edges().then(|| Matrix::zeros(1, g.num_edges())),
            feature_latents: mode
                .features()
                .then(|| Matrix::zeros(feature_rows, g.feature_dim())),
            scope,
        }
    }

    pub fn edge_values(&self) -> Option<Matrix> {
        self.edge_latents.as_ref().map(Matrix::sigmoid)
    }

    pub fn feature_values(&self) -> Option<Matrix> {
        self.feature_latents.as_ref().map(Matrix::sigmoid)
    }

    /// Activated masks in the form [`masked_probs`] consumes.
    pub fn activated(&self) -> Masks {
        Masks {
            edges: self.edge_values(),
            features: self.feature_values(),
        }
    }
}

/// Edge and feature masks with values in [0, 1]. `None` means the input
/// is not masked: it enters the factual and the complement pass unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct Masks {
    /// 1×E per-edge values.
    pub edges: Option<Matrix>,
    /// 1×d or n×d.
    pub features: Option<Matrix>,
}

/// `(A⊙M, X⊙F)` on dense inputs. `f` is either a 1×d column mask or an
/// n×d mask.
pub fn apply_masks(
    a: &Matrix,
    x: &Matrix,
    m: &Matrix,
    f: &Matrix,
) -> Result<(Matrix, Matrix), ExplainError> {
    Ok((a.hadamard(m)?, feature_product(x, f)?))
}

/// `(A − A⊙M, X − X⊙F)`.
pub fn apply_complement(
    a: &Matrix,
    x: &Matrix,
    m: &Matrix,
    f: &Matrix,
) -> Result<(Matrix, Matrix), ExplainError> {
    Ok((a.sub(&a.hadamard(m)?)?, x.sub(&feature_product(x, f)?)?))
}

fn feature_product(x: &Matrix, f: &Matrix) -> Result<Matrix, ExplainError> {
    if f.rows() == 1 && x.rows() != 1 {
        Ok(x.mul_row(f)?)
    } else {
        Ok(x.hadamard(f)?)
    }
}

/// Factual and complement inputs for one instance as per-edge weights and
/// feature matrices (edge support has weight 1 in the original graph).
pub(crate) fn masked_inputs(
    instance: &Instance,
    masks: &Masks,
) -> Result<[(Matrix, Matrix); 2], ExplainError> {
    let g = &instance.graph;
    let x = g.features();
    let ones = Matrix::filled(1, g.num_edges(), 1.0);
    let (wf, wc) = match &masks.edges {
        Some(m) => {
            check_shape("edge mask", m.shape(), (1, g.num_edges()))?;
            (ones.hadamard(m)?, ones.sub(&ones.hadamard(m)?)?)
        }
        None => (ones.clone(), ones),
    };
    let (xf, xc) = match &masks.features {
        Some(f) => {
            if f.shape() != (1, g.feature_dim()) {
                check_shape("feature mask", f.shape(), x.shape())?;
            }
            let xf = feature_product(x, f)?;
            let xc = x.sub(&xf)?;
            (xf, xc)
        }
        None => (x.clone(), x.clone()),
    };
    Ok([(wf, xf), (wc, xc)])
}

fn check_shape(what: &str, got: (usize, usize), want: (usize, usize)) -> Result<(), ExplainError> {
    if got != want {
        return Err(ExplainError::Usage(format!(
            "{what} is {}x{}, instance needs {}x{}",
            got.0, got.1, want.0, want.1
        )));
    }
    Ok(())
}

/// Probability rows of the explained prediction under the factual input
/// and under the complement input.
pub fn masked_probs(
    model: &GcnModel,
    instance: &Instance,
    masks: &Masks,
) -> Result<(Vec<f64>, Vec<f64>), ExplainError> {
    let graph = instance.edge_index();
    let factual = factual_graph(instance, masks.edges.is_some());
    let row = instance.target.unwrap_or(0);
    let [(wf, xf), (wc, xc)] = masked_inputs(instance, masks)?;
    let pf = model.forward_weighted(&factual, &wf, &xf)?;
    let pc = model.forward_weighted(&graph, &wc, &xc)?;
    Ok((pf.row(row).to_vec(), pc.row(row).to_vec()))
}

/// Propagation structure of the factual pass. A masked edge set drops every
/// edge outside the sub-graph too, so boundary degrees only survive when
/// edges are left unmasked.
pub(crate) fn factual_graph(instance: &Instance, edges_masked: bool) -> Arc<EdgeIndex> {
    if edges_masked {
        instance.local_edge_index()
    } else {
        instance.edge_index()
    }
}

/// How relaxed masks become binary ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Binarize {
    /// Keep entries strictly above 0.5.
    #[default]
    Threshold,
    /// Keep the K largest entries of each enabled mask, ties to the lower
    /// index.
    TopK(usize),
}

/// Binary keep/drop decision per entry of one relaxed mask.
pub fn binarize(values: &[f64], mode: Binarize) -> Result<Vec<bool>, ExplainError> {
    match mode {
        Binarize::Threshold => Ok(values.iter().map(|&v| v > 0.5).collect()),
        Binarize::TopK(k) => {
            if k > values.len() {
                return Err(ExplainError::Usage(format!(
                    "top-K with K = {k} but only {} entries",
                    values.len()
                )));
            }
            let mut order: Vec<usize> = (0..values.len()).collect();
            // stable sort keeps lower indices first among equal values
            order.sort_by(|&i, &j| values[j].total_cmp(&values[i]));
            let mut keep = vec![false; values.len()];
            for &i in &order[..k] {
                keep[i] = true;
            }
            Ok(keep)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_is_strict() {
        assert_eq!(binarize(&[0.9, 0.4, 0.5], Binarize::Threshold).unwrap(), vec![true, false, false]);
    }

    #[test]
    fn top_k_ties_prefer_lower_index() {
        let keep = binarize(&[0.3, 0.7, 0.3, 0.3], Binarize::TopK(2)).unwrap();
        assert_eq!(keep, vec![true, true, false, false]);
        assert_eq!(binarize(&[0.1, 0.2], Binarize::TopK(2)).unwrap(), vec![true, true]);
        assert!(binarize(&[0.1], Binarize::TopK(2)).is_err());
    }

    #[test]
    fn full_mask_and_empty_mask() {
        let a = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let ones = Matrix::filled(2, 2, 1.0);
        let (am, xm) = apply_masks(&a, &x, &ones, &Matrix::filled(1, 2, 1.0)).unwrap();
        assert_eq!((am, xm), (a.clone(), x.clone()));
        let (ac, xc) = apply_complement(&a, &x, &ones, &Matrix::filled(1, 2, 1.0)).unwrap();
        assert_eq!((ac, xc), (Matrix::zeros(2, 2), Matrix::zeros(2, 2)));
        let zero = Matrix::zeros(2, 2);
        let (ac, _) = apply_complement(&a, &x, &zero, &zero).unwrap();
        assert_eq!(ac, a);
    }
}
