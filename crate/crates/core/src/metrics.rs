//! Explanation scores: probability of necessity and sufficiency, ground-truth
//! motif overlap, and rank correlation between score families.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::explainer::{masked_probs, ExplainError, Explanation};
use crate::gnn::{GcnModel, GnnError};
use crate::graph::{canonical, Edge, Instance};
use crate::tensor::argmax;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Model(#[from] GnnError),
    #[error("{0}")]
    Usage(String),
    #[error("correlation undefined: {0}")]
    Undefined(String),
}

/// Harmonic mean of PN and PS; 0 when both are 0.
pub fn f_ns(pn: f64, ps: f64) -> f64 {
    if pn + ps == 0.0 {
        0.0
    } else {
        2.0 * pn * ps / (pn + ps)
    }
}

/// Necessity and sufficiency of one explanation for the model's own
/// prediction on the whole instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Verdict {
    pub necessary: bool,
    pub sufficient: bool,
}

pub fn verdict(
    model: &GcnModel,
    instance: &Instance,
    explanation: &Explanation,
) -> Result<Verdict, MetricsError> {
    let label = model.predict(instance)?.label;
    let masks = explanation.binary_masks(instance)?;
    let (factual, complement) = masked_probs(model, instance, &masks)?;
    Ok(Verdict {
        necessary: argmax(&complement) != label,
        sufficient: argmax(&factual) == label,
    })
}

fn check_pairing(instances: &[Instance], explanations: &[Explanation]) -> Result<(), MetricsError> {
    if instances.len() != explanations.len() {
        return Err(MetricsError::Usage(format!(
            "{} instances but {} explanations",
            instances.len(),
            explanations.len()
        )));
    }
    if instances.is_empty() {
        return Err(MetricsError::Usage("no explanations to evaluate".into()));
    }
    for (inst, exp) in instances.iter().zip(explanations) {
        if inst.id != exp.instance {
            return Err(MetricsError::Usage(format!(
                "explanation for instance {} paired with instance {}",
                exp.instance, inst.id
            )));
        }
    }
    Ok(())
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, count) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// PS and the per-instance sufficiency flags.
pub fn probability_of_sufficiency(
    model: &GcnModel,
    instances: &[Instance],
    explanations: &[Explanation],
) -> Result<(f64, Vec<bool>), MetricsError> {
    check_pairing(instances, explanations)?;
    let flags = instances
        .iter()
        .zip(explanations)
        .map(|(i, e)| Ok(verdict(model, i, e)?.sufficient))
        .collect::<Result<Vec<_>, MetricsError>>()?;
    Ok((mean(flags.iter().map(|&f| f as u8 as f64)), flags))
}

/// PN and the per-instance necessity flags.
pub fn probability_of_necessity(
    model: &GcnModel,
    instances: &[Instance],
    explanations: &[Explanation],
) -> Result<(f64, Vec<bool>), MetricsError> {
    check_pairing(instances, explanations)?;
    let flags = instances
        .iter()
        .zip(explanations)
        .map(|(i, e)| Ok(verdict(model, i, e)?.necessary))
        .collect::<Result<Vec<_>, MetricsError>>()?;
    Ok((mean(flags.iter().map(|&f| f as u8 as f64)), flags))
}

/// Overlap of kept edges with a ground-truth edge set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthScores {
    pub acc: f64,
    pub pr: f64,
    pub re: f64,
    pub f1: f64,
}

/// Scores over the undirected edges of `universe`; edges outside it are
/// ignored.
pub fn ground_truth_scores(kept: &[Edge], truth: &[Edge], universe: &[Edge]) -> GroundTruthScores {
    let norm = |edges: &[Edge]| edges.iter().map(|&(u, v)| canonical(u, v)).collect::<HashSet<_>>();
    let universe = norm(universe);
    let kept: HashSet<Edge> = norm(kept).intersection(&universe).copied().collect();
    let truth: HashSet<Edge> = norm(truth).intersection(&universe).copied().collect();
    let tp = kept.intersection(&truth).count() as f64;
    let fp = kept.len() as f64 - tp;
    let fn_ = truth.len() as f64 - tp;
    let tn = universe.len() as f64 - tp - fp - fn_;
    let pr = if kept.is_empty() { 0.0 } else { tp / kept.len() as f64 };
    let re = if truth.is_empty() { 0.0 } else { tp / truth.len() as f64 };
    let f1 = if pr + re == 0.0 { 0.0 } else { 2.0 * pr * re / (pr + re) };
    let acc = if universe.is_empty() { 0.0 } else { (tp + tn) / universe.len() as f64 };
    GroundTruthScores { acc, pr, re, f1 }
}

/// Ground-truth scores of one explanation against its instance's motif,
/// over the instance's own edges.
pub fn instance_ground_truth(
    instance: &Instance,
    explanation: &Explanation,
) -> Result<GroundTruthScores, MetricsError> {
    let truth = instance.ground_truth.as_ref().ok_or_else(|| {
        MetricsError::Usage(format!("instance {} has no ground-truth motif", instance.id))
    })?;
    let kept = explanation.kept_edges.as_ref().ok_or_else(|| {
        MetricsError::Usage(format!(
            "explanation {} has no edge mask to compare with the motif",
            explanation.instance
        ))
    })?;
    let to_source = |edges: &[Edge]| edges.iter().map(|&e| instance.to_source_edge(e)).collect::<Vec<_>>();
    let universe = to_source(instance.graph.edges());
    let truth = to_source(truth);
    let kept: Vec<Edge> = kept.iter().map(|&[u, v]| canonical(u, v)).collect();
    Ok(ground_truth_scores(&kept, &truth, &universe))
}

/// Per-instance means of the ground-truth scores.
pub fn ground_truth_metrics(
    instances: &[Instance],
    explanations: &[Explanation],
) -> Result<(GroundTruthScores, Vec<GroundTruthScores>), MetricsError> {
    check_pairing(instances, explanations)?;
    let per = instances
        .iter()
        .zip(explanations)
        .map(|(i, e)| instance_ground_truth(i, e))
        .collect::<Result<Vec<_>, _>>()?;
    let agg = GroundTruthScores {
        acc: mean(per.iter().map(|s| s.acc)),
        pr: mean(per.iter().map(|s| s.pr)),
        re: mean(per.iter().map(|s| s.re)),
        f1: mean(per.iter().map(|s| s.f1)),
    };
    Ok((agg, per))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub instance: usize,
    pub pn: u8,
    pub ps: u8,
    pub size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt: Option<GroundTruthScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub pn: f64,
    pub ps: f64,
    pub f_ns: f64,
    pub mean_size: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt: Option<GroundTruthScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: Vec<InstanceRecord>,
    pub aggregate: Aggregate,
}

/// PN/PS for every explanation, plus ground-truth scores when asked.
pub fn evaluate(
    model: &GcnModel,
    instances: &[Instance],
    explanations: &[Explanation],
    with_ground_truth: bool,
) -> Result<EvalReport, MetricsError> {
    check_pairing(instances, explanations)?;
    let mut records = Vec::with_capacity(instances.len());
    for (inst, exp) in instances.iter().zip(explanations) {
        let v = verdict(model, inst, exp)?;
        let gt = if with_ground_truth {
            Some(instance_ground_truth(inst, exp)?)
        } else {
            None
        };
        records.push(InstanceRecord {
            instance: inst.id,
            pn: v.necessary as u8,
            ps: v.sufficient as u8,
            size: exp.size,
            gt,
        });
    }
    Ok(EvalReport {
        aggregate: aggregate(&records),
        records,
    })
}

pub fn aggregate(records: &[InstanceRecord]) -> Aggregate {
    let pn = mean(records.iter().map(|r| r.pn as f64));
    let ps = mean(records.iter().map(|r| r.ps as f64));
    let gt = if !records.is_empty() && records.iter().all(|r| r.gt.is_some()) {
        let scores: Vec<_> = records.iter().filter_map(|r| r.gt).collect();
        Some(GroundTruthScores {
            acc: mean(scores.iter().map(|s| s.acc)),
            pr: mean(scores.iter().map(|s| s.pr)),
            re: mean(scores.iter().map(|s| s.re)),
            f1: mean(scores.iter().map(|s| s.f1)),
        })
    } else {
        None
    };
    Aggregate {
        count: records.len(),
        pn,
        ps,
        f_ns: f_ns(pn, ps),
        mean_size: mean(records.iter().map(|r| r.size as f64)),
        gt,
    }
}

impl EvalReport {
    /// One row per instance and a final `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("instance,pn,ps,size,acc,pr,re,f1\n");
        let gt_cells = |gt: &Option<GroundTruthScores>| match gt {
            Some(s) => format!("{},{},{},{}", s.acc, s.pr, s.re, s.f1),
            None => ",,,".to_string(),
        };
        for r in &self.records {
            let _ = writeln!(out, "{},{},{},{},{}", r.instance, r.pn, r.ps, r.size, gt_cells(&r.gt));
        }
        let a = &self.aggregate;
        let _ = writeln!(out, "mean,{},{},{},{}", a.pn, a.ps, a.mean_size, gt_cells(&a.gt));
        out
    }
}

fn check_lists(xs: &[f64], ys: &[f64]) -> Result<(), MetricsError> {
    if xs.len() != ys.len() {
        return Err(MetricsError::Usage(format!(
            "lists differ in length ({} vs {})",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(MetricsError::Usage("correlation needs at least two pairs".into()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(MetricsError::Usage("correlation inputs must be finite".into()));
    }
    Ok(())
}

/// Kendall's τ-b.
pub fn kendall_tau(xs: &[f64], ys: &[f64]) -> Result<f64, MetricsError> {
    check_lists(xs, ys)?;
    let n = xs.len();
    let (mut concordant, mut discordant, mut ties_x, mut ties_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = (xs[i] - xs[j]).partial_cmp(&0.0).unwrap() as i64;
            let dy = (ys[i] - ys[j]).partial_cmp(&0.0).unwrap() as i64;
            if dx == 0 {
                ties_x += 1;
            }
            if dy == 0 {
                ties_y += 1;
            }
            match dx * dy {
                1 => concordant += 1,
                -1 => discordant += 1,
                _ => {}
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as i64;
    if ties_x == pairs || ties_y == pairs {
        return Err(MetricsError::Undefined("a list has no variation".into()));
    }
    let denom = (((pairs - ties_x) * (pairs - ties_y)) as f64).sqrt();
    Ok((concordant - discordant) as f64 / denom)
}

/// 1-based ranks with ties sharing their average rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman's ρ as the Pearson correlation of average ranks.
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> Result<f64, MetricsError> {
    check_lists(xs, ys)?;
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let mx = mean(rx.iter().copied());
    let my = mean(ry.iter().copied());
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::Undefined("a list has no variation".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f_ns_cases() {
        assert!((f_ns(0.9744, 1.0) - 0.9870).abs() < 1e-4);
        assert!((f_ns(1.0, 0.8194) - 0.9008).abs() < 1e-4);
        assert_eq!(f_ns(0.0, 0.0), 0.0);
        assert_eq!(f_ns(0.37, 0.37), 0.37);
    }

    #[test]
    fn ground_truth_hand_count() {
        let universe: Vec<Edge> = (0..10).map(|i| (i, i + 1)).collect();
        let truth = &universe[..6];
        let mut kept = universe[..5].to_vec();
        kept.push(universe[9]);
        let s = ground_truth_scores(&kept, truth, &universe);
        assert!((s.pr - 5.0 / 6.0).abs() < 1e-15);
        assert!((s.re - 5.0 / 6.0).abs() < 1e-15);
        assert!((s.f1 - 5.0 / 6.0).abs() < 1e-15);
        assert!((s.acc - 0.8).abs() < 1e-15);
    }

    #[test]
    fn ground_truth_edge_cases() {
        let universe = [(0, 1), (1, 2), (2, 3)];
        let exact = ground_truth_scores(&[(1, 0)], &[(0, 1)], &universe);
        assert_eq!((exact.acc, exact.pr, exact.re, exact.f1), (1.0, 1.0, 1.0, 1.0));
        let miss = ground_truth_scores(&[(2, 3)], &[(0, 1)], &universe);
        assert_eq!((miss.pr, miss.re, miss.f1), (0.0, 0.0, 0.0));
        let empty = ground_truth_scores(&[], &[(0, 1)], &universe);
        assert_eq!(empty.pr, 0.0);
    }

    #[test]
    fn rank_correlation_extremes() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let rev = [4.0, 3.0, 2.0, 1.0];
        assert_eq!(kendall_tau(&xs, &xs).unwrap(), 1.0);
        assert_eq!(spearman_rho(&xs, &xs).unwrap(), 1.0);
        assert_eq!(kendall_tau(&xs, &rev).unwrap(), -1.0);
        assert_eq!(spearman_rho(&xs, &rev).unwrap(), -1.0);
        assert!(matches!(kendall_tau(&xs, &[1.0; 4]), Err(MetricsError::Undefined(_))));
        assert!(matches!(spearman_rho(&[2.0; 4], &xs), Err(MetricsError::Undefined(_))));
        assert!(kendall_tau(&xs, &xs[..3]).is_err());
    }

    #[test]
    fn tau_b_with_ties() {
        // scipy.stats.kendalltau([1,2,2,3],[1,2,3,3]) = 0.8
        let t = kendall_tau(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 3.0]).unwrap();
        assert!((t - 0.8).abs() < 1e-12);
    }

    #[test]
    fn csv_layout() {
        let records = vec![InstanceRecord {
            instance: 4,
            pn: 1,
            ps: 0,
            size: 3,
            gt: None,
        }];
        let report = EvalReport {
            aggregate: aggregate(&records),
            records,
        };
        let csv = report.to_csv();
        assert_eq!(csv, "instance,pn,ps,size,acc,pr,re,f1\n4,1,0,3,,,,\nmean,1,0,3,,,,\n");
    }
}
