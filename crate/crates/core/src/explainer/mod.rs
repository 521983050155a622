//! Per-instance mask search balancing a factual (sufficiency) and a
//! counterfactual (necessity) margin loss against the ℓ₁ size of the masks.

mod masks;
mod output;

pub use masks::{
    apply_complement, apply_masks, binarize, masked_probs, Binarize, FeatureScope, MaskMode,
    MaskPair, Masks,
};
pub use output::{Explanation, KeptFeatures, LossTerms, MaskValues};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gnn::{runner_up, GcnModel, GnnError, Prediction};
use crate::graph::Instance;
use crate::tensor::{Adam, Matrix, Tape, TensorError, Var};

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] GnnError),
    #[error("{0}")]
    Usage(String),
    #[error("objective is not finite at step {step}")]
    NonFinite { step: usize },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// How the runner-up class ŷ_s is chosen inside the margin losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RunnerUpMode {
    /// Best non-ŷ class on the current masked (resp. complement) input.
    #[default]
    Recompute,
    /// Best non-ŷ class on the unmasked instance, fixed for the whole run.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainConfig {
    pub lambda: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub mask_mode: MaskMode,
    pub feature_scope: FeatureScope,
    pub binarize: Binarize,
    pub runner_up: RunnerUpMode,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            lambda: 500.0,
            alpha: 0.6,
            gamma: 0.5,
            epochs: 500,
            learning_rate: 0.01,
            mask_mode: MaskMode::Edges,
            feature_scope: FeatureScope::Column,
            binarize: Binarize::Threshold,
            runner_up: RunnerUpMode::Recompute,
        }
    }
}

impl ExplainConfig {
    pub fn validate(&self) -> Result<(), ExplainError> {
        let bad = |m: &str| Err(ExplainError::Usage(m.to_string()));
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad("lambda must be a finite value >= 0");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return bad("gamma must be a finite value >= 0");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning rate must be > 0");
        }
        Ok(())
    }
}

/// `ReLU(γ + P(ŷ_s | masked) − S_f)`.
pub fn loss_factual(gamma: f64, runner_up_prob: f64, s_f: f64) -> f64 {
    (gamma + runner_up_prob - s_f).max(0.0)
}

/// `ReLU(γ − S_c − P(ŷ_s | complement))`.
pub fn loss_counterfactual(gamma: f64, s_c: f64, runner_up_prob: f64) -> f64 {
    (gamma - s_c - runner_up_prob).max(0.0)
}

/// Explanation strengths and the runner-up probabilities beside them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Strengths {
    /// `P(ŷ | A⊙M, X⊙F)`.
    pub s_f: f64,
    /// `−P(ŷ | A−A⊙M, X−X⊙F)`.
    pub s_c: f64,
    pub runner_up_f: usize,
    pub runner_up_c: usize,
    pub runner_up_prob_f: f64,
    pub runner_up_prob_c: f64,
}

/// Strengths of (possibly relaxed) masks for prediction `pred`, using the
/// runner-up rule of `mode`.
pub fn strengths(
    model: &GcnModel,
    instance: &Instance,
    pred: &Prediction,
    masks: &Masks,
    mode: RunnerUpMode,
) -> Result<Strengths, ExplainError> {
    let (pf, pc) = masked_probs(model, instance, masks)?;
    let (rf, rc) = match mode {
        RunnerUpMode::Recompute => (runner_up(&pf, pred.label), runner_up(&pc, pred.label)),
        RunnerUpMode::Fixed => (pred.runner_up, pred.runner_up),
    };
    Ok(Strengths {
        s_f: pf[pred.label],
        s_c: -pc[pred.label],
        runner_up_f: rf,
        runner_up_c: rc,
        runner_up_prob_f: pf[rf],
        runner_up_prob_c: pc[rc],
    })
}

/// Objective value and its parts at one set of latents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub l1: f64,
    pub lf: f64,
    pub lc: f64,
    pub total: f64,
}

/// Gradients of the total objective w.r.t. the latents.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGradients {
    pub edges: Option<Matrix>,
    pub features: Option<Matrix>,
}

struct Recorded {
    l1: Var,
    lf: Var,
    lc: Var,
    total: Var,
    edge_latents: Option<Var>,
    feature_latents: Option<Var>,
}

/// Records `ℓ₁(M*) + ℓ₁(F*) + λ(α·L_f + (1−α)·L_c)` on `tape`. Terms with
/// zero weight are still evaluated for reporting but left out of the total.
fn record(
    tape: &mut Tape,
    model: &GcnModel,
    instance: &Instance,
    pred: &Prediction,
    latents: &MaskPair,
    cfg: &ExplainConfig,
) -> Result<Recorded, ExplainError> {
    let g = &instance.graph;
    let graph = instance.edge_index();
    let bound = model.bind(tape, false);
    let row = instance.target.unwrap_or(0);
    let ones = tape.constant(Matrix::filled(1, g.num_edges(), 1.0));
    let x = tape.constant(g.features().clone());

    let mut l1_parts = Vec::new();
    let edge_latents = latents.edge_latents.as_ref().map(|l| tape.param(l.clone()));
    let (wf, wc) = match edge_latents {
        Some(le) => {
            let m = tape.sigmoid(le)?;
            l1_parts.push(tape.sum(m)?);
            let wf = tape.mul(ones, m)?;
            (wf, tape.sub(ones, wf)?)
        }
        None => (ones, ones),
    };
    let feature_latents = latents.feature_latents.as_ref().map(|l| tape.param(l.clone()));
    let (xf, xc) = match feature_latents {
        Some(lf) => {
            let f = tape.sigmoid(lf)?;
            l1_parts.push(tape.sum(f)?);
            let xf = if tape.value(f).rows() == 1 && g.num_nodes() != 1 {
                tape.mul_row(x, f)?
            } else {
                tape.mul(x, f)?
            };
            (xf, tape.sub(x, xf)?)
        }
        None => (x, x),
    };
    let l1 = match l1_parts.as_slice() {
        [] => return Err(ExplainError::Usage("no mask is enabled".into())),
        [only] => *only,
        [a, b] => tape.add(*a, *b)?,
        _ => unreachable!("at most two mask kinds"),
    };

    let factual = masks::factual_graph(instance, latents.edge_latents.is_some());
    let pf = model.probs_on_tape(tape, &bound, &factual, wf, xf)?;
    let pc = model.probs_on_tape(tape, &bound, &graph, wc, xc)?;
    let (rf, rc) = match cfg.runner_up {
        RunnerUpMode::Recompute => (
            runner_up(tape.value(pf).row(row), pred.label),
            runner_up(tape.value(pc).row(row), pred.label),
        ),
        RunnerUpMode::Fixed => (pred.runner_up, pred.runner_up),
    };
    // L_f = ReLU(γ + P(ŷ_s|masked) − P(ŷ|masked))
    let s_f = tape.pick(pf, row, pred.label)?;
    let q_f = tape.pick(pf, row, rf)?;
    let shifted = tape.affine(q_f, 1.0, cfg.gamma)?;
    let lf = tape.sub(shifted, s_f)?;
    let lf = tape.relu(lf)?;
    // L_c = ReLU(γ + P(ŷ|complement) − P(ŷ_s|complement))
    let p_c = tape.pick(pc, row, pred.label)?;
    let q_c = tape.pick(pc, row, rc)?;
    let shifted = tape.affine(p_c, 1.0, cfg.gamma)?;
    let lc = tape.sub(shifted, q_c)?;
    let lc = tape.relu(lc)?;

    let mut total = l1;
    for (term, weight) in [(lf, cfg.lambda * cfg.alpha), (lc, cfg.lambda * (1.0 - cfg.alpha))] {
        if weight != 0.0 {
            let weighted = tape.scale(term, weight)?;
            total = tape.add(total, weighted)?;
        }
    }
    Ok(Recorded {
        l1,
        lf,
        lc,
        total,
        edge_latents,
        feature_latents,
    })
}

/// Evaluates the objective at `latents`, with gradients when asked.
pub fn objective(
    model: &GcnModel,
    instance: &Instance,
    pred: &Prediction,
    latents: &MaskPair,
    cfg: &ExplainConfig,
    with_gradients: bool,
) -> Result<(Objective, Option<LatentGradients>), ExplainError> {
    let mut tape = Tape::new();
    let r = record(&mut tape, model, instance, pred, latents, cfg)?;
    let value = Objective {
        l1: tape.value(r.l1).item(),
        lf: tape.value(r.lf).item(),
        lc: tape.value(r.lc).item(),
        total: tape.value(r.total).item(),
    };
    if !with_gradients {
        return Ok((value, None));
    }
    let grads = tape.backward(r.total)?;
    let take = |v: Option<Var>| {
        v.map(|v| {
            let shape = tape.value(v).shape();
            grads
                .get(v)
                .cloned()
                .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
        })
    };
    let g = LatentGradients {
        edges: take(r.edge_latents),
        features: take(r.feature_latents),
    };
    Ok((value, Some(g)))
}

/// Result of one mask search.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub explanation: Explanation,
    pub prediction: Prediction,
    /// Final latents.
    pub latents: MaskPair,
    /// Objective before each update.
    pub trace: Vec<f64>,
}

/// Learns masks for one instance and binarizes them.
pub fn explain(model: &GcnModel, instance: &Instance, cfg: &ExplainConfig) -> Result<Outcome, ExplainError> {
    cfg.validate()?;
    let pred = model.predict(instance)?;
    let mut latents = MaskPair::zeros(instance, cfg.mask_mode, cfg.feature_scope);
    let shapes: Vec<_> = [&latents.edge_latents, &latents.feature_latents]
        .into_iter()
        .flatten()
        .map(Matrix::shape)
        .collect();
    let mut adam = Adam::new(cfg.learning_rate, &shapes);
    let mut trace = Vec::with_capacity(cfg.epochs);
    for step in 0..cfg.epochs {
        let (value, grads) = objective(model, instance, &pred, &latents, cfg, true)?;
        if !value.total.is_finite() {
            return Err(ExplainError::NonFinite { step });
        }
        trace.push(value.total);
        let grads = grads.expect("requested");
        let mut params: Vec<Matrix> = [&latents.edge_latents, &latents.feature_latents]
            .into_iter()
            .flatten()
            .cloned()
            .collect();
        let g: Vec<Option<&Matrix>> = [&grads.edges, &grads.features]
            .into_iter()
            .flatten()
            .map(Some)
            .collect();
        adam.step(&mut params, &g);
        let mut params = params.into_iter();
        for slot in [&mut latents.edge_latents, &mut latents.feature_latents]
            .into_iter()
            .flatten()
        {
            *slot = params.next().expect("one per latent");
        }
    }
    let (final_value, _) = objective(model, instance, &pred, &latents, cfg, false)?;
    if !final_value.total.is_finite() {
        return Err(ExplainError::NonFinite { step: cfg.epochs });
    }
    let explanation = summarize(instance, &latents, cfg, final_value)?;
    Ok(Outcome {
        explanation,
        prediction: pred,
        latents,
        trace,
    })
}

/// Binarizes final latents into the serialized explanation.
fn summarize(
    instance: &Instance,
    latents: &MaskPair,
    cfg: &ExplainConfig,
    value: Objective,
) -> Result<Explanation, ExplainError> {
    let g = &instance.graph;
    let mut size = 0;
    let mut mask_values = MaskValues {
        feature_scope: latents.scope,
        ..MaskValues::default()
    };
    let kept_edges = match latents.edge_values() {
        None => None,
        Some(m) => {
            let keep = binarize(m.data(), cfg.binarize)?;
            let source: Vec<_> = g.edges().iter().map(|&e| instance.to_source_edge(e)).collect();
            mask_values.edges = Some(
                source
                    .iter()
                    .zip(m.data())
                    .map(|(&(u, v), &w)| (u, v, w))
                    .collect(),
            );
            let kept: Vec<[usize; 2]> = source
                .iter()
                .zip(&keep)
                .filter(|(_, &k)| k)
                .map(|(&(u, v), _)| [u, v])
                .collect();
            size += kept.len();
            Some(kept)
        }
    };
    let kept_features = match latents.feature_values() {
        None => None,
        Some(f) => {
            let keep = binarize(f.data(), cfg.binarize)?;
            mask_values.features = Some(f.data().to_vec());
            let d = f.cols();
            let kept = match latents.scope {
                FeatureScope::Column => {
                    KeptFeatures::Columns((0..d).filter(|&c| keep[c]).collect())
                }
                FeatureScope::Node => KeptFeatures::Entries(
                    (0..keep.len())
                        .filter(|&i| keep[i])
                        .map(|i| [instance.node_map[i / d], i % d])
                        .collect(),
                ),
            };
            size += kept.len();
            Some(kept)
        }
    };
    Ok(Explanation {
        instance: instance.id,
        kept_edges,
        kept_features,
        mask_values,
        loss: LossTerms {
            l1: value.l1,
            lf: value.lf,
            lc: value.lc,
        },
        size,
    })
}
