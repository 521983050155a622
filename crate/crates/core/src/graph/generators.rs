//! Seeded synthetic node-classification benchmarks with planted motifs.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{canonical, Dataset, DatasetMeta, Edge, Graph, Task};
use crate::tensor::Matrix;

const BA_BASE_NODES: usize = 300;
const BA_ATTACHMENT: usize = 5;
const HOUSES: usize = 80;
const TREE_DEPTH: u32 = 8;
const CYCLES: usize = 60;
const CYCLE_LEN: usize = 6;
const CONSTANT_FEATURE_DIM: usize = 10;

/// Seeded shuffle split: one fifth (rounded) of the instances go to test.
pub fn split_indices(count: usize, rng: &mut impl Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..count).collect();
    idx.shuffle(rng);
    let test_len = (count + 2) / 5;
    let test = idx[..test_len].to_vec();
    let train = idx[test_len..].to_vec();
    (train, test)
}

/// Preferential attachment: every new node links to `m` distinct existing
/// nodes drawn proportionally to degree.
fn barabasi_albert(n: usize, m: usize, rng: &mut ChaCha8Rng, edges: &mut BTreeSet<Edge>) {
    let mut targets: Vec<usize> = (0..m).collect();
    let mut repeated: Vec<usize> = Vec::new();
    for source in m..n {
        for &t in &targets {
            edges.insert(canonical(source, t));
        }
        repeated.extend_from_slice(&targets);
        repeated.extend(std::iter::repeat(source).take(m));
        let mut chosen = BTreeSet::new();
        while chosen.len() < m {
            chosen.insert(repeated[rng.gen_range(0..repeated.len())]);
        }
        targets = chosen.into_iter().collect();
    }
}

fn add_random_edges(n: usize, count: usize, rng: &mut ChaCha8Rng, edges: &mut BTreeSet<Edge>) {
    let mut added = 0;
    while added < count {
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        if u != v && edges.insert(canonical(u, v)) {
            added += 1;
        }
    }
}

fn assemble(
    name: &str,
    seed: u64,
    n: usize,
    num_classes: usize,
    edges: BTreeSet<Edge>,
    labels: Vec<usize>,
    gt: Vec<Edge>,
    rng: &mut ChaCha8Rng,
) -> Dataset {
    let edges: Vec<Edge> = edges.into_iter().collect();
    let num_edges = edges.len();
    let graph = Graph::new(n, &edges, Matrix::filled(n, CONSTANT_FEATURE_DIM, 1.0))
        .and_then(|g| g.with_node_labels(labels))
        .and_then(|g| g.with_ground_truth(&gt))
        .expect("generator output is well formed");
    let (train_idx, test_idx) = split_indices(n, rng);
    Dataset {
        task: Task::Node,
        num_classes,
        feature_dim: CONSTANT_FEATURE_DIM,
        graphs: vec![graph],
        train_idx,
        test_idx,
        meta: Some(DatasetMeta {
            name: Some(name.to_string()),
            seed: Some(seed),
            num_edges: Some(num_edges),
        }),
    }
}

/// 300-node preferential-attachment base with 80 five-node houses.
///
/// Labels: 0 base, 1 house top, 2 house middle, 3 house bottom. Each house
/// is laid out as `[top, mid, mid, bottom, bottom]` and hangs off a random
/// base node through its first bottom node.
pub fn generate_ba_shapes(seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = BA_BASE_NODES + HOUSES * 5;
    let mut edges = BTreeSet::new();
    barabasi_albert(BA_BASE_NODES, BA_ATTACHMENT, &mut rng, &mut edges);
    let mut labels = vec![0; BA_BASE_NODES];
    let mut gt = Vec::with_capacity(HOUSES * 6);
    for h in 0..HOUSES {
        let s = BA_BASE_NODES + h * 5;
        let (top, m1, m2, b1, b2) = (s, s + 1, s + 2, s + 3, s + 4);
        let house = [(top, m1), (top, m2), (m1, m2), (m1, b1), (m2, b2), (b1, b2)];
        for &(u, v) in &house {
            edges.insert(canonical(u, v));
            gt.push(canonical(u, v));
        }
        labels.extend_from_slice(&[1, 2, 2, 3, 3]);
        let anchor = rng.gen_range(0..BA_BASE_NODES);
        edges.insert(canonical(b1, anchor));
    }
    add_random_edges(n, n / 10, &mut rng, &mut edges);
    assemble("ba-shapes", seed, n, 4, edges, labels, gt, &mut rng)
}

/// Balanced binary tree of depth 8 with 60 six-node cycles.
/// Labels: 0 tree node, 1 cycle node.
pub fn generate_tree_cycles(seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tree_nodes = (1usize << (TREE_DEPTH + 1)) - 1;
    let n = tree_nodes + CYCLES * CYCLE_LEN;
    let mut edges = BTreeSet::new();
    for child in 1..tree_nodes {
        edges.insert(canonical((child - 1) / 2, child));
    }
    let mut labels = vec![0; tree_nodes];
    let mut gt = Vec::with_capacity(CYCLES * CYCLE_LEN);
    for c in 0..CYCLES {
        let s = tree_nodes + c * CYCLE_LEN;
        for k in 0..CYCLE_LEN {
            let e = canonical(s + k, s + (k + 1) % CYCLE_LEN);
            edges.insert(e);
            gt.push(e);
        }
        labels.extend(std::iter::repeat(1).take(CYCLE_LEN));
        let anchor = rng.gen_range(0..tree_nodes);
        edges.insert(canonical(s, anchor));
    }
    add_random_edges(n, n / 20, &mut rng, &mut edges);
    assemble("tree-cycles", seed, n, 2, edges, labels, gt, &mut rng)
}
