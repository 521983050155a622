//! Independent oracles and invariant checks shared by the integration tests
//! and the acceptance runner. Each check returns `Err` with a description
//! of the first violation.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use gexplain::explainer::{apply_complement, apply_masks, explain, ExplainConfig, Explanation, MaskMode};
use gexplain::gnn::{Architecture, GcnModel};
use gexplain::graph::{
    canonical, extract_computational_subgraph, generate_ba_shapes, generate_tree_cycles, parse_dataset,
    to_json_string, Dataset, Edge, Graph, Task,
};
use gexplain::tensor::{EdgeIndex, Matrix};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

pub type Check = Result<(), String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn random_edges(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<Edge> {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    edges
}

pub fn random_graph(n: usize, p: f64, d: usize, rng: &mut ChaCha8Rng) -> Graph {
    let edges = random_edges(n, p, rng);
    Graph::new(n, &edges, random_matrix(n, d, -1.0, 1.0, rng)).unwrap()
}

pub fn random_model(task: Task, d: usize, layers: usize, classes: usize, seed: u64) -> GcnModel {
    let arch = Architecture {
        feature_dim: d,
        hidden_dim: 6,
        num_layers: layers,
        num_classes: classes,
        task,
    };
    GcnModel::init(arch, seed).unwrap()
}

/// A node-task dataset over one random graph, every node in the test split.
pub fn node_dataset(g: Graph, classes: usize) -> Dataset {
    let n = g.num_nodes();
    let g = g.with_node_labels((0..n).map(|i| i % classes).collect()).unwrap();
    Dataset {
        task: Task::Node,
        num_classes: classes,
        feature_dim: g.feature_dim(),
        graphs: vec![g],
        train_idx: vec![],
        test_idx: (0..n).collect(),
        meta: None,
    }
}

pub fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut s = 0.0;
            for k in 0..a.cols() {
                s += a.get(i, k) * b.get(k, j);
            }
            out.set(i, j, s);
        }
    }
    out
}

/// Nodes within `hops` of `v`, by relaxing hop counts over the edge list
/// until nothing changes.
pub fn ball_oracle(n: usize, edges: &[Edge], v: usize, hops: usize) -> BTreeSet<usize> {
    let mut dist = vec![usize::MAX; n];
    dist[v] = 0;
    loop {
        let mut changed = false;
        for &(a, b) in edges {
            for (x, y) in [(a, b), (b, a)] {
                if dist[x] != usize::MAX && dist[x] + 1 < dist[y] {
                    dist[y] = dist[x] + 1;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    (0..n).filter(|&i| dist[i] <= hops).collect()
}

/// `D^{-1/2}(A + I)D^{-1/2}` with `D_ii = 1 + Σ_j A_ij + extra_i`, entry by
/// entry.
pub fn naive_normalize(a: &[Vec<f64>], extra: &[f64]) -> Vec<Vec<f64>> {
    let n = a.len();
    let deg: Vec<f64> = (0..n).map(|i| 1.0 + a[i].iter().sum::<f64>() + extra[i]).collect();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let aij = a[i][j] + if i == j { 1.0 } else { 0.0 };
                    aij / (deg[i].sqrt() * deg[j].sqrt())
                })
                .collect()
        })
        .collect()
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Replay oracle: PN/PS straight from the JSON files, with its own sub-graph
// extraction and dense forward pass.

struct RawLayer {
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

pub struct RawModel {
    layers: Vec<RawLayer>,
    head: RawLayer,
    graph_task: bool,
}

fn as_usize(v: &Value) -> usize {
    v.as_u64().expect("unsigned integer") as usize
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().expect("array").iter().map(|x| x.as_f64().expect("number")).collect()
}

fn raw_layer(flat: &Value, bias: &Value, input: usize, output: usize) -> RawLayer {
    let flat = floats(flat);
    assert_eq!(flat.len(), input * output);
    RawLayer {
        weight: flat.chunks(output).map(<[f64]>::to_vec).collect(),
        bias: floats(bias),
    }
}

pub fn raw_model(path: &Path) -> RawModel {
    let v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let arch = &v["arch"];
    let (d, h, layers, c) = (
        as_usize(&arch["feature_dim"]),
        as_usize(&arch["hidden_dim"]),
        as_usize(&arch["num_layers"]),
        as_usize(&arch["num_classes"]),
    );
    let w = v["weights"].as_array().unwrap();
    assert_eq!(w.len(), 2 * layers + 2);
    let layers_raw = (0..layers)
        .map(|l| raw_layer(&w[2 * l], &w[2 * l + 1], if l == 0 { d } else { h }, h))
        .collect();
    RawModel {
        layers: layers_raw,
        head: raw_layer(&w[2 * layers], &w[2 * layers + 1], h, c),
        graph_task: v["arch"]["task"] == "graph",
    }
}

fn dense(x: &[Vec<f64>], layer: &RawLayer) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            (0..layer.bias.len())
                .map(|j| layer.bias[j] + row.iter().zip(&layer.weight).map(|(a, w)| a * w[j]).sum::<f64>())
                .collect()
        })
        .collect()
}

impl RawModel {
    /// Logits of `target` (or of the pooled graph) on an `n`-node graph
    /// given as an unweighted edge list, by neighbour sums.
    fn logits(&self, n: usize, edges: &[Edge], x: &[Vec<f64>], target: usize) -> Vec<f64> {
        let mut adj = vec![Vec::new(); n];
        for &(u, v) in edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        let deg: Vec<f64> = adj.iter().map(|a| 1.0 + a.len() as f64).collect();
        let mut h = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let hw: Vec<Vec<f64>> = h
                .iter()
                .map(|row| {
                    (0..layer.bias.len())
                        .map(|j| row.iter().zip(&layer.weight).map(|(a, w)| a * w[j]).sum::<f64>())
                        .collect()
                })
                .collect();
            h = (0..n)
                .map(|i| {
                    (0..layer.bias.len())
                        .map(|j| {
                            let own = hw[i][j] / deg[i];
                            let msgs: f64 = adj[i].iter().map(|&k| hw[k][j] / (deg[i] * deg[k]).sqrt()).sum();
                            layer.bias[j] + own + msgs
                        })
                        .collect()
                })
                .collect();
            if l + 1 < self.layers.len() {
                for row in &mut h {
                    for v in row.iter_mut() {
                        *v = v.max(0.0);
                    }
                }
            }
        }
        let pooled = if self.graph_task {
            let k = h[0].len();
            vec![(0..k).map(|j| h.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect()]
        } else {
            vec![h[target].clone()]
        };
        dense(&pooled, &self.head).remove(0)
    }
}

fn first_max(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Per-instance `(id, necessary, sufficient)` recomputed from the dataset,
/// model and explanation files alone. Only edge explanations are supported.
pub fn replay_verdicts(data: &Path, model: &Path, explanations: &[impl AsRef<Path>]) -> Vec<(usize, bool, bool)> {
    let ds: Value = serde_json::from_str(&std::fs::read_to_string(data).unwrap()).unwrap();
    let m = raw_model(model);
    let node_task = ds["task"] == "node";
    let mut out = Vec::new();
    for path in explanations {
        let e: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        assert!(e["kept_features"].is_null(), "replay handles edge explanations only");
        let id = as_usize(&e["instance"]);
        let kept: HashSet<Edge> = e["kept_edges"]
            .as_array()
            .unwrap()
            .iter()
            .map(|p| canonical(as_usize(&p[0]), as_usize(&p[1])))
            .collect();
        let g = &ds["graphs"][if node_task { 0 } else { id }];
        let n = as_usize(&g["n"]);
        let edges: Vec<Edge> = g["edges"]
            .as_array()
            .unwrap()
            .iter()
            .map(|p| canonical(as_usize(&p[0]), as_usize(&p[1])))
            .collect();
        let x: Vec<Vec<f64>> = g["features"].as_array().unwrap().iter().map(floats).collect();
        // whole source graph: the explanation alone, and everything else
        let (fact, comp): (Vec<Edge>, Vec<Edge>) = edges.iter().partition(|e| kept.contains(e));
        let target = if node_task { id } else { 0 };
        let label = first_max(&m.logits(n, &edges, &x, target));
        let yf = first_max(&m.logits(n, &fact, &x, target));
        let yc = first_max(&m.logits(n, &comp, &x, target));
        out.push((id, yc != label, yf == label));
    }
    out
}

// ---------------------------------------------------------------------------
// Exhaustive benzene-NO₂ oracle: every injective, species-respecting
// assignment of the nine pattern atoms, tested edge by edge.

pub const C: usize = 0;
pub const O: usize = 1;
pub const N: usize = 4;
pub const H: usize = 3;

const RING: [Edge; 9] = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5), (0, 6), (6, 7), (6, 8)];

pub fn motif_oracle(species: &[usize], edges: &[Edge]) -> BTreeSet<Edge> {
    let adj: HashSet<Edge> = edges.iter().map(|&(u, v)| canonical(u, v)).collect();
    let pick = |s| (0..species.len()).filter(|&i| species[i] == s).collect::<Vec<_>>();
    let (cs, ns, os) = (pick(C), pick(N), pick(O));
    let mut found = BTreeSet::new();
    let mut slots = [0usize; 9];
    permutations(&cs, 6, &mut Vec::new(), &mut |ring| {
        slots[..6].copy_from_slice(ring);
        for &nn in &ns {
            slots[6] = nn;
            for &o1 in &os {
                for &o2 in &os {
                    if o1 == o2 {
                        continue;
                    }
                    slots[7] = o1;
                    slots[8] = o2;
                    if RING.iter().all(|&(a, b)| adj.contains(&canonical(slots[a], slots[b]))) {
                        for &(a, b) in &RING {
                            found.insert(canonical(slots[a], slots[b]));
                        }
                    }
                }
            }
        }
    });
    found
}

fn permutations(pool: &[usize], k: usize, prefix: &mut Vec<usize>, visit: &mut impl FnMut(&[usize])) {
    if prefix.len() == k {
        visit(prefix);
        return;
    }
    for &p in pool {
        if !prefix.contains(&p) {
            prefix.push(p);
            permutations(pool, k, prefix, visit);
            prefix.pop();
        }
    }
}

/// Random molecule of at most 12 atoms: sometimes a planted (possibly
/// broken) nitrobenzene, sometimes a random C/N/O graph.
pub fn random_molecule(rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<Edge>) {
    let mut species = Vec::new();
    let mut edges = BTreeSet::new();
    if rng.gen_bool(0.6) {
        species.extend([C, C, C, C, C, C, N, O, O]);
        for &(a, b) in &RING {
            edges.insert((a, b));
        }
        if rng.gen_bool(0.3) {
            let drop = RING[rng.gen_range(0..RING.len())];
            edges.remove(&drop);
        }
    }
    let total = rng.gen_range(species.len().max(6)..=12);
    while species.len() < total {
        species.push(*[C, C, N, O, H].choose(rng).unwrap());
    }
    let n = species.len();
    for _ in 0..rng.gen_range(n / 2..=n + 2) {
        let (u, v) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if u != v {
            edges.insert(canonical(u, v));
        }
    }
    // shuffle atom ids so the planted ring is not always at 0..9
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut shuffled = vec![0; n];
    for (i, &p) in perm.iter().enumerate() {
        shuffled[p] = species[i];
    }
    let edges = edges.into_iter().map(|(u, v)| canonical(perm[u], perm[v])).collect();
    (shuffled, edges)
}

pub fn one_hot(species: &[usize], dim: usize) -> Matrix {
    let mut x = Matrix::zeros(species.len(), dim);
    for (i, &s) in species.iter().enumerate() {
        x.set(i, s, 1.0);
    }
    x
}

// ---------------------------------------------------------------------------
// Invariant checks.

pub fn check_matmul(cases: usize, seed: u64) -> Check {
    let mut r = rng(seed);
    for _ in 0..cases {
        let (m, k, n, p) = (r.gen_range(1..7), r.gen_range(1..7), r.gen_range(1..7), r.gen_range(1..7));
        let a = random_matrix(m, k, -2.0, 2.0, &mut r);
        let b = random_matrix(k, n, -2.0, 2.0, &mut r);
        let c = random_matrix(n, p, -2.0, 2.0, &mut r);
        let ab = a.matmul(&b).unwrap();
        if max_abs_diff(&ab, &naive_matmul(&a, &b)) > 1e-12 {
            return Err(format!("matmul disagrees with the naive product at {m}x{k}x{n}"));
        }
        let left = ab.matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        for (x, y) in left.data().iter().zip(right.data()) {
            if (x - y).abs() > 1e-9 * x.abs().max(y.abs()).max(1.0) {
                return Err(format!("(AB)C = {x} but A(BC) = {y}"));
            }
        }
    }
    Ok(())
}

pub fn check_generator_determinism() -> Check {
    for seed in [0, 7] {
        for (name, gen) in [
            ("ba-shapes", generate_ba_shapes as fn(u64) -> Dataset),
            ("tree-cycles", generate_tree_cycles),
        ] {
            let a = to_json_string(&gen(seed));
            if a != to_json_string(&gen(seed)) {
                return Err(format!("{name} seed {seed} is not reproducible"));
            }
            let ds = gen(seed);
            let g = &ds.graphs[0];
            let adj = g.adjacency();
            if adj != adj.transpose() || (0..g.num_nodes()).any(|i| adj.get(i, i) != 0.0) {
                return Err(format!("{name} adjacency is not symmetric with zero diagonal"));
            }
            if !g.ground_truth().unwrap().iter().all(|&(u, v)| g.has_edge(u, v)) {
                return Err(format!("{name} ground truth names a missing edge"));
            }
        }
    }
    Ok(())
}

pub fn check_subgraph_oracle(cases: usize, seed: u64) -> Check {
    let mut r = rng(seed);
    for _ in 0..cases {
        let n = r.gen_range(1..=50);
        let p = r.gen_range(0.01..0.2);
        let g = random_graph(n, p, 2, &mut r);
        let v = r.gen_range(0..n);
        let hops = r.gen_range(1..=4);
        let inst = extract_computational_subgraph(&g, v, hops).map_err(|e| e.to_string())?;
        let want = ball_oracle(n, g.edges(), v, hops);
        let got: BTreeSet<usize> = inst.node_map.iter().copied().collect();
        if got != want || inst.node_map[0] != v {
            return Err(format!("ball of {v} ({hops} hops, n={n}): got {got:?}, want {want:?}"));
        }
        let want_edges: BTreeSet<Edge> =
            g.edges().iter().copied().filter(|(a, b)| want.contains(a) && want.contains(b)).collect();
        let got_edges: BTreeSet<Edge> = inst.graph.edges().iter().map(|&e| inst.to_source_edge(e)).collect();
        if got_edges != want_edges {
            return Err(format!("edges of the ball around {v} differ"));
        }
        for (local, &src) in inst.node_map.iter().enumerate() {
            let outside = g.edges().iter().filter(|&&(a, b)| (a == src && !want.contains(&b)) || (b == src && !want.contains(&a))).count();
            if inst.boundary_degree[local] != outside as f64 {
                return Err(format!("boundary degree of {src} is {}, want {outside}", inst.boundary_degree[local]));
            }
        }
    }
    Ok(())
}

pub fn check_normalization(cases: usize, seed: u64) -> Check {
    let mut r = rng(seed);
    for _ in 0..cases {
        let n = r.gen_range(1..12);
        let edges = random_edges(n, 0.4, &mut r);
        let w: Vec<f64> = edges.iter().map(|_| r.gen_range(0.0..1.0)).collect();
        let extra: Vec<f64> = (0..n).map(|_| r.gen_range(0..3) as f64).collect();
        let mut a = vec![vec![0.0; n]; n];
        for (&(u, v), &x) in edges.iter().zip(&w) {
            a[u][v] = x;
            a[v][u] = x;
        }
        let want = naive_normalize(&a, &vec![0.0; n]);
        let dense = Matrix::from_rows(&a).unwrap().normalize_adjacency().unwrap();
        let want_m = Matrix::from_rows(&want).unwrap();
        if max_abs_diff(&dense, &want_m) > 1e-12 {
            return Err("dense normalization differs from the naive formula".into());
        }
        let index = EdgeIndex::new(n, edges.clone())
            .and_then(|e| e.with_boundary_degrees(extra.clone()))
            .unwrap();
        let got = index.propagate(&Matrix::row_vector(w.clone()), &Matrix::identity(n)).unwrap();
        let want = Matrix::from_rows(&naive_normalize(&a, &extra)).unwrap();
        if max_abs_diff(&got, &want) > 1e-12 {
            return Err("sparse normalization with boundary degrees differs from the naive formula".into());
        }
    }
    Ok(())
}

pub fn permute_graph(g: &Graph, perm: &[usize]) -> Graph {
    let n = g.num_nodes();
    let edges: Vec<Edge> = g.edges().iter().map(|&(u, v)| (perm[u], perm[v])).collect();
    let mut x = Matrix::zeros(n, g.feature_dim());
    for i in 0..n {
        for j in 0..g.feature_dim() {
            x.set(perm[i], j, g.features().get(i, j));
        }
    }
    Graph::new(n, &edges, x).unwrap()
}

pub fn check_permutation_equivariance(cases: usize, seed: u64) -> Check {
    let mut r = rng(seed);
    for case in 0..cases {
        let n = r.gen_range(2..10);
        let g = random_graph(n, 0.4, 3, &mut r);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let pg = permute_graph(&g, &perm);
        for task in [Task::Node, Task::Graph] {
            let model = random_model(task, 3, 2, 3, case as u64);
            let ones = |g: &Graph| Matrix::filled(1, g.num_edges(), 1.0);
            let p = model.forward_weighted(&g.edge_index(), &ones(&g), g.features()).unwrap();
            let q = model.forward_weighted(&pg.edge_index(), &ones(&pg), pg.features()).unwrap();
            for i in 0..p.rows() {
                let j = if task == Task::Node { perm[i] } else { i };
                for c in 0..p.cols() {
                    if (p.get(i, c) - q.get(j, c)).abs() > 1e-9 {
                        return Err(format!("{task:?} output moved under relabeling"));
                    }
                }
            }
        }
    }
    Ok(())
}

pub fn check_mask_complement(cases: usize, seed: u64) -> Check {
    let mut r = rng(seed);
    for _ in 0..cases {
        let n = r.gen_range(1..9);
        let d = r.gen_range(1..5);
        let g = random_graph(n, 0.5, d, &mut r);
        let a = g.adjacency();
        let x = g.features().clone();
        let bits = |rows, cols, r: &mut ChaCha8Rng| {
            let data = (0..rows * cols).map(|_| if r.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
            Matrix::from_vec(rows, cols, data).unwrap()
        };
        let m = bits(n, n, &mut r);
        let m = m.add(&m.transpose()).unwrap().map(|v| v.min(1.0));
        let f = if r.gen_bool(0.5) { bits(1, d, &mut r) } else { bits(n, d, &mut r) };
        let (am, xm) = apply_masks(&a, &x, &m, &f).map_err(|e| e.to_string())?;
        let (ac, xc) = apply_complement(&a, &x, &m, &f).map_err(|e| e.to_string())?;
        if am.add(&ac).unwrap() != a || xm.add(&xc).unwrap() != x {
            return Err("masked part plus complement does not rebuild the input".into());
        }
    }
    Ok(())
}

pub fn check_io_round_trip(dir: &Path, seed: u64) -> Check {
    let ds = generate_tree_cycles(seed);
    let text = to_json_string(&ds);
    let back = parse_dataset(&text, "memory").map_err(|e| e.to_string())?;
    if back != ds || to_json_string(&back) != text {
        return Err("dataset JSON round trip changed the dataset".into());
    }
    let mut r = rng(seed);
    let model = random_model(Task::Node, ds.feature_dim, 3, ds.num_classes, seed);
    let path = dir.join("model.json");
    model.save(&path).map_err(|e| e.to_string())?;
    let loaded = GcnModel::load(&path).map_err(|e| e.to_string())?;
    if loaded != model {
        return Err("checkpoint round trip changed the model".into());
    }
    let g = random_graph(7, 0.5, 3, &mut r);
    let tiny = node_dataset(g, 2);
    let m2 = random_model(Task::Node, 3, 2, 2, seed);
    let inst = tiny.instance(0, 2).unwrap();
    let cfg = ExplainConfig { epochs: 20, mask_mode: MaskMode::Both, ..ExplainConfig::default() };
    let exp = explain(&m2, &inst, &cfg).map_err(|e| e.to_string())?.explanation;
    let p = dir.join("exp.json");
    exp.save(&p).map_err(|e| e.to_string())?;
    if Explanation::load(&p).map_err(|e| e.to_string())? != exp {
        return Err("explanation round trip changed the explanation".into());
    }
    Ok(())
}

pub fn check_mutag_oracle(cases: usize, seed: u64) -> Check {
    use gexplain::graph::{benzene_no2_edges, filter_mutag0, AtomEncoding};
    let mut r = rng(seed);
    let enc = AtomEncoding::default();
    let mut graphs = Vec::new();
    let mut expected_keep = Vec::new();
    let mut hits = 0;
    for i in 0..cases {
        let (species, edges) = random_molecule(&mut r);
        let label = i % 2;
        let g = Graph::new(species.len(), &edges, one_hot(&species, 14)).unwrap().with_label(label);
        let want = motif_oracle(&species, &edges);
        let got: BTreeSet<Edge> = benzene_no2_edges(&g, &enc).map_err(|e| e.to_string())?.into_iter().collect();
        if got != want {
            return Err(format!("molecule {i}: matcher found {got:?}, oracle {want:?}"));
        }
        hits += !want.is_empty() as usize;
        expected_keep.push(if label == enc.mutagenic_label { !want.is_empty() } else { want.is_empty() });
        graphs.push(g);
    }
    if hits == 0 || hits == cases {
        return Err("oracle sample lacks positive or negative molecules".into());
    }
    let n = graphs.len();
    let ds = Dataset {
        task: Task::Graph,
        num_classes: 2,
        feature_dim: 14,
        graphs,
        train_idx: (0..n).collect(),
        test_idx: vec![],
        meta: None,
    };
    let kept = filter_mutag0(&ds, &enc).map_err(|e| e.to_string())?;
    if kept.graphs.len() != expected_keep.iter().filter(|&&k| k).count() {
        return Err("filter keeps a different number of molecules than the oracle".into());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Mask-search objective checks.

use gexplain::explainer::{objective, strengths, FeatureScope, MaskPair, RunnerUpMode};
use gexplain::graph::Instance;

/// A random small instance (at most 12 nodes): a whole graph for the graph
/// task, or a 2-hop sub-graph with boundary degrees for the node task.
pub fn random_instance(r: &mut ChaCha8Rng, case: u64) -> (GcnModel, Instance) {
    let n = r.gen_range(4..=12);
    let g = random_graph(n, 0.3, 3, r);
    if case % 2 == 0 {
        let ds = node_dataset(g, 3);
        let model = random_model(Task::Node, 3, 2, 3, case);
        let v = r.gen_range(0..n);
        (model, ds.instance(v, 2).unwrap())
    } else {
        let mut ds = node_dataset(g, 3);
        ds.task = Task::Graph;
        ds.graphs[0] = ds.graphs[0].clone().with_label(0);
        let model = random_model(Task::Graph, 3, 2, 3, case);
        (model, ds.instance(0, 2).unwrap())
    }
}

fn latents_for(inst: &Instance, scope: FeatureScope, r: &mut ChaCha8Rng) -> MaskPair {
    let mut p = MaskPair::zeros(inst, MaskMode::Both, scope);
    for m in [&mut p.edge_latents, &mut p.feature_latents].into_iter().flatten() {
        for v in m.data_mut() {
            *v = r.gen_range(-2.0..2.0);
        }
    }
    p
}

/// True when both hinges and both runner-up choices are at least `guard`
/// away from switching, and no mask value sits within `guard` of saturation.
fn smooth_at(model: &GcnModel, inst: &Instance, latents: &MaskPair, cfg: &ExplainConfig, guard: f64) -> bool {
    let pred = model.predict(inst).unwrap();
    let masks = latents.activated();
    let s = strengths(model, inst, &pred, &masks, cfg.runner_up).unwrap();
    let kink_f = cfg.gamma + s.runner_up_prob_f - s.s_f;
    let kink_c = cfg.gamma - s.s_c - s.runner_up_prob_c;
    let (pf, pc) = gexplain::explainer::masked_probs(model, inst, &masks).unwrap();
    let gap = |p: &[f64]| {
        let mut others: Vec<f64> = p.iter().enumerate().filter(|&(i, _)| i != pred.label).map(|(_, &v)| v).collect();
        others.sort_by(|a, b| b.total_cmp(a));
        others.get(1).map_or(1.0, |&second| others[0] - second)
    };
    let saturated = [masks.edges.as_ref(), masks.features.as_ref()]
        .into_iter()
        .flatten()
        .flat_map(|m| m.data().iter())
        .any(|&v| v < guard || v > 1.0 - guard);
    kink_f.abs() > guard && kink_c.abs() > guard && gap(&pf) > guard && gap(&pc) > guard && !saturated
}

/// Objective gradient against central differences on `count` random
/// instances. Returns the largest relative error seen.
pub fn check_objective_gradient(count: usize, seed: u64) -> Result<f64, String> {
    let mut r = rng(seed);
    let mut accepted = 0;
    let mut worst: f64 = 0.0;
    let mut case = 0u64;
    while accepted < count {
        case += 1;
        if case > 50 * count as u64 {
            return Err(format!("only {accepted} smooth samples found"));
        }
        let (model, inst) = random_instance(&mut r, case);
        if inst.graph.num_edges() == 0 {
            continue;
        }
        let scope = if r.gen_bool(0.5) { FeatureScope::Column } else { FeatureScope::Node };
        let cfg = ExplainConfig {
            lambda: r.gen_range(1.0..20.0),
            alpha: r.gen_range(0.0..=1.0),
            mask_mode: MaskMode::Both,
            feature_scope: scope,
            runner_up: if r.gen_bool(0.5) { RunnerUpMode::Recompute } else { RunnerUpMode::Fixed },
            ..ExplainConfig::default()
        };
        let latents = latents_for(&inst, scope, &mut r);
        if !smooth_at(&model, &inst, &latents, &cfg, 1e-3) {
            continue;
        }
        accepted += 1;
        let pred = model.predict(&inst).unwrap();
        let (_, grads) = objective(&model, &inst, &pred, &latents, &cfg, true).map_err(|e| e.to_string())?;
        let grads = grads.unwrap();
        let h = 1e-6;
        for (which, grad) in [(0, grads.edges.unwrap()), (1, grads.features.unwrap())] {
            for i in 0..grad.data().len() {
                let at = |delta: f64| {
                    let mut l = latents.clone();
                    let m = if which == 0 { l.edge_latents.as_mut() } else { l.feature_latents.as_mut() };
                    m.unwrap().data_mut()[i] += delta;
                    objective(&model, &inst, &pred, &l, &cfg, false).unwrap().0.total
                };
                let numeric = (at(h) - at(-h)) / (2.0 * h);
                let analytic = grad.data()[i];
                let scale = analytic.abs().max(numeric.abs());
                if scale > 1e-6 {
                    let rel = (analytic - numeric).abs() / scale;
                    worst = worst.max(rel);
                    if rel >= 1e-4 {
                        return Err(format!(
                            "case {case}, {} latent {i}: analytic {analytic}, numeric {numeric}",
                            if which == 0 { "edge" } else { "feature" }
                        ));
                    }
                }
            }
        }
    }
    Ok(worst)
}

/// Mean explanation size with λ = 0 on `count` random instances.
pub fn lambda_zero_mean_size(count: usize, seed: u64) -> Result<f64, String> {
    let mut r = rng(seed);
    let mut total = 0;
    for case in 0..count as u64 {
        let (model, inst) = random_instance(&mut r, case);
        let cfg = ExplainConfig { lambda: 0.0, mask_mode: MaskMode::Both, ..ExplainConfig::default() };
        total += explain(&model, &inst, &cfg).map_err(|e| e.to_string())?.explanation.size;
    }
    Ok(total as f64 / count as f64)
}
