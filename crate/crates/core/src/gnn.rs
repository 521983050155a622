//! The graph-convolutional classifier being explained.
//!
//! Each layer computes `Â · (H W) + b` with `Â` the self-loop normalized
//! (possibly mask-weighted) adjacency. ReLU follows every layer but the
//! last. Graph classification mean-pools node states before the linear
//! head; node classification applies the head per node.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Dataset, Instance, Task};
use crate::tensor::{argmax, Adam, EdgeIndex, Matrix, Tape, TensorError, Var};

#[derive(Debug, Error)]
pub enum GnnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{0}")]
    Usage(String),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_classes: usize,
    pub task: Task,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Dense {
    fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(input, output),
            bias: Matrix::zeros(1, output),
        }
    }

    /// Glorot-uniform weights; biases uniform in ±1/√fan_in. Zero biases
    /// would leave every node's state a scalar multiple of one vector under
    /// constant input features, a saddle training rarely leaves.
    fn glorot(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let s = (6.0 / (input + output) as f64).sqrt();
        let data = (0..input * output).map(|_| rng.gen_range(-s..=s)).collect();
        let t = 1.0 / (input as f64).sqrt();
        let bias = (0..output).map(|_| rng.gen_range(-t..=t)).collect();
        Self {
            weight: Matrix::from_vec(input, output, data).expect("sized"),
            bias: Matrix::row_vector(bias),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainMeta {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel {
    pub arch: Architecture,
    pub layers: Vec<Dense>,
    pub head: Dense,
    pub train_meta: Option<TrainMeta>,
}

/// Tape handles for every weight and bias of a model.
#[derive(Debug, Clone)]
pub struct BoundModel {
    layers: Vec<(Var, Var)>,
    head: (Var, Var),
}

impl BoundModel {
    pub fn vars(&self) -> Vec<Var> {
        self.layers
            .iter()
            .flat_map(|&(w, b)| [w, b])
            .chain([self.head.0, self.head.1])
            .collect()
    }
}

/// Model output on one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    /// Highest-probability class other than `label`.
    pub runner_up: usize,
    pub probs: Vec<f64>,
}

impl Prediction {
    /// Ties resolve to the lowest class id for both picks.
    pub fn from_probs(probs: Vec<f64>) -> Self {
        let label = argmax(&probs);
        let runner_up = runner_up(&probs, label);
        Self {
            label,
            runner_up,
            probs,
        }
    }
}

/// Best class other than `exclude`; equals `exclude` only when r = 1.
pub fn runner_up(probs: &[f64], exclude: usize) -> usize {
    let mut best: Option<usize> = None;
    for (c, &p) in probs.iter().enumerate() {
        if c == exclude {
            continue;
        }
        if best.map_or(true, |b| p > probs[b]) {
            best = Some(c);
        }
    }
    best.unwrap_or(exclude)
}

impl GcnModel {
    /// Model with all weights and biases zero.
    pub fn zeros(arch: Architecture) -> Result<Self, GnnError> {
        check_arch(&arch)?;
        let mut layers = Vec::with_capacity(arch.num_layers);
        for l in 0..arch.num_layers {
            let input = if l == 0 { arch.feature_dim } else { arch.hidden_dim };
            layers.push(Dense::zeros(input, arch.hidden_dim));
        }
        Ok(Self {
            arch,
            layers,
            head: Dense::zeros(arch.hidden_dim, arch.num_classes),
            train_meta: None,
        })
    }

    pub fn init(arch: Architecture, seed: u64) -> Result<Self, GnnError> {
        check_arch(&arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(arch.num_layers);
        for l in 0..arch.num_layers {
            let input = if l == 0 { arch.feature_dim } else { arch.hidden_dim };
            layers.push(Dense::glorot(input, arch.hidden_dim, &mut rng));
        }
        let head = Dense::glorot(arch.hidden_dim, arch.num_classes, &mut rng);
        Ok(Self {
            arch,
            layers,
            head,
            train_meta: None,
        })
    }

    pub fn parameters(&self) -> Vec<&Matrix> {
        self.layers
            .iter()
            .chain(std::iter::once(&self.head))
            .flat_map(|d| [&d.weight, &d.bias])
            .collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .chain(std::iter::once(&mut self.head))
            .flat_map(|d| [&mut d.weight, &mut d.bias])
            .collect()
    }

    /// Puts every parameter on the tape, trainable or frozen.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundModel {
        let mut put = |m: &Matrix| {
            if trainable {
                tape.param(m.clone())
            } else {
                tape.constant(m.clone())
            }
        };
        let layers = self
            .layers
            .iter()
            .map(|d| (put(&d.weight), put(&d.bias)))
            .collect();
        let head = (put(&self.head.weight), put(&self.head.bias));
        BoundModel { layers, head }
    }

    /// Final node states (n×hidden) before any pooling or head.
    pub fn embed_on_tape(
        &self,
        tape: &mut Tape,
        bound: &BoundModel,
        graph: &Arc<EdgeIndex>,
        edge_weights: Var,
        features: Var,
    ) -> Result<Var, GnnError> {
        let mut h = features;
        for (l, &(w, b)) in bound.layers.iter().enumerate() {
            let hw = tape.matmul(h, w)?;
            let agg = tape.propagate(edge_weights, hw, graph.clone())?;
            h = tape.add_row(agg, b)?;
            if l + 1 < bound.layers.len() {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    fn head_on_tape(&self, tape: &mut Tape, bound: &BoundModel, h: Var) -> Result<Var, GnnError> {
        let z = tape.matmul(h, bound.head.0)?;
        Ok(tape.add_row(z, bound.head.1)?)
    }

    /// Class logits: n×r for node task, 1×r for graph task.
    pub fn logits_on_tape(
        &self,
        tape: &mut Tape,
        bound: &BoundModel,
        graph: &Arc<EdgeIndex>,
        edge_weights: Var,
        features: Var,
    ) -> Result<Var, GnnError> {
        let h = self.embed_on_tape(tape, bound, graph, edge_weights, features)?;
        let h = match self.arch.task {
            Task::Node => h,
            Task::Graph => tape.mean_rows(h)?,
        };
        self.head_on_tape(tape, bound, h)
    }

    /// Row-softmax of [`GcnModel::logits_on_tape`].
    pub fn probs_on_tape(
        &self,
        tape: &mut Tape,
        bound: &BoundModel,
        graph: &Arc<EdgeIndex>,
        edge_weights: Var,
        features: Var,
    ) -> Result<Var, GnnError> {
        let logits = self.logits_on_tape(tape, bound, graph, edge_weights, features)?;
        Ok(tape.row_softmax(logits)?)
    }

    fn check_inputs(&self, n: usize, features: &Matrix) -> Result<(), GnnError> {
        if features.shape() != (n, self.arch.feature_dim) {
            return Err(GnnError::Usage(format!(
                "features are {}x{}, model expects {}x{}",
                features.rows(),
                features.cols(),
                n,
                self.arch.feature_dim
            )));
        }
        if n == 0 {
            return Err(GnnError::Usage("cannot classify an empty graph".into()));
        }
        Ok(())
    }

    /// Class probabilities from per-edge weights (weights of 1 reproduce the
    /// plain graph).
    pub fn forward_weighted(
        &self,
        graph: &Arc<EdgeIndex>,
        edge_weights: &Matrix,
        features: &Matrix,
    ) -> Result<Matrix, GnnError> {
        self.check_inputs(graph.num_nodes(), features)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let w = tape.constant(edge_weights.clone());
        let x = tape.constant(features.clone());
        let p = self.probs_on_tape(&mut tape, &bound, graph, w, x)?;
        Ok(tape.value(p).clone())
    }

    /// Class probabilities from a dense, possibly fractional, symmetric
    /// adjacency: n×r rows for node task, one row for graph task.
    pub fn forward(&self, adjacency: &Matrix, features: &Matrix) -> Result<Matrix, GnnError> {
        let n = adjacency.rows();
        if adjacency.cols() != n {
            return Err(GnnError::Usage(format!(
                "adjacency must be square, got {}x{}",
                n,
                adjacency.cols()
            )));
        }
        self.check_inputs(n, features)?;
        let a_hat = adjacency.normalize_adjacency()?;
        let mut h = features.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            h = a_hat.matmul(&h.matmul(&layer.weight)?)?.add_row(&layer.bias)?;
            if l + 1 < self.layers.len() {
                h = h.relu();
            }
        }
        if self.arch.task == Task::Graph {
            h = h.mean_rows();
        }
        Ok(h
            .matmul(&self.head.weight)?
            .add_row(&self.head.bias)?
            .row_softmax())
    }

    /// Prediction for an instance on its own (sub-)graph.
    pub fn predict(&self, instance: &Instance) -> Result<Prediction, GnnError> {
        let graph = instance.edge_index();
        let ones = Matrix::filled(1, graph.num_edges(), 1.0);
        let probs = self.forward_weighted(&graph, &ones, instance.graph.features())?;
        let row = instance.target.unwrap_or(0);
        Ok(Prediction::from_probs(probs.row(row).to_vec()))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            arch: self.arch,
            weights: self.parameters().iter().map(|m| m.data().to_vec()).collect(),
            task: self.arch.task,
            train_meta: self.train_meta.clone(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self, GnnError> {
        if ck.task != ck.arch.task {
            return Err(GnnError::Usage("checkpoint task disagrees with architecture".into()));
        }
        let mut model = GcnModel::zeros(ck.arch)?;
        let count = model.parameters().len();
        if ck.weights.len() != count {
            return Err(GnnError::Usage(format!(
                "checkpoint holds {} weight arrays, architecture needs {count}",
                ck.weights.len()
            )));
        }
        for (slot, data) in model.parameters_mut().into_iter().zip(ck.weights) {
            let (r, c) = slot.shape();
            *slot = Matrix::from_vec(r, c, data)?;
            if !slot.is_finite() {
                return Err(GnnError::Usage("checkpoint holds non-finite weights".into()));
            }
        }
        model.train_meta = ck.train_meta;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GnnError> {
        let path = path.as_ref();
        let text = serde_json::to_string(&self.to_checkpoint()).expect("checkpoint serializes");
        fs::write(path, text).map_err(|e| GnnError::Checkpoint {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GnnError> {
        let path = path.as_ref();
        let err = |message: String| GnnError::Checkpoint {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        Self::from_checkpoint(ck)
    }
}

fn check_arch(arch: &Architecture) -> Result<(), GnnError> {
    if arch.num_layers == 0 || arch.hidden_dim == 0 || arch.num_classes == 0 || arch.feature_dim == 0 {
        return Err(GnnError::Usage(format!("degenerate architecture {arch:?}")));
    }
    Ok(())
}

/// Serialized model: weights are flattened row-major in the order
/// `W₀, b₀, …, W_{L-1}, b_{L-1}, W_head, b_head`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub arch: Architecture,
    pub weights: Vec<Vec<f64>>,
    pub task: Task,
    #[serde(default)]
    pub train_meta: Option<TrainMeta>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub hidden_dim: usize,
    pub num_layers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3000,
            learning_rate: 0.001,
            seed: 0,
            hidden_dim: 16,
            num_layers: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// Loss before each update.
    pub losses: Vec<f64>,
}

/// Disjoint union of several graphs plus the row offsets of each block.
struct Batch {
    graph: Arc<EdgeIndex>,
    features: Matrix,
    offsets: Arc<Vec<usize>>,
}

fn batch(ds: &Dataset, ids: &[usize]) -> Result<Batch, GnnError> {
    let mut edges = Vec::new();
    let mut offsets = vec![0];
    let mut rows = Vec::new();
    for &gi in ids {
        let g = &ds.graphs[gi];
        let base = *offsets.last().unwrap();
        edges.extend(g.edges().iter().map(|&(u, v)| (u + base, v + base)));
        rows.extend(g.features().to_rows());
        offsets.push(base + g.num_nodes());
    }
    let n = *offsets.last().unwrap();
    let features = if rows.is_empty() {
        Matrix::zeros(0, ds.feature_dim)
    } else {
        Matrix::from_rows(&rows)?
    };
    Ok(Batch {
        graph: Arc::new(EdgeIndex::new(n, edges)?),
        features,
        offsets: Arc::new(offsets),
    })
}

impl GcnModel {
    /// Logits for every graph of a batch (#graphs × r).
    fn batch_logits(&self, tape: &mut Tape, bound: &BoundModel, b: &Batch) -> Result<Var, GnnError> {
        let w = tape.constant(Matrix::filled(1, b.graph.num_edges(), 1.0));
        let x = tape.constant(b.features.clone());
        let h = self.embed_on_tape(tape, bound, &b.graph, w, x)?;
        let pooled = tape.segment_mean(h, b.offsets.clone())?;
        self.head_on_tape(tape, bound, pooled)
    }

    /// Predicted labels for the given instance ids (full-graph inference for
    /// node task).
    pub fn predict_ids(&self, ds: &Dataset, ids: &[usize]) -> Result<Vec<usize>, GnnError> {
        if ids.is_empty() {
            return Ok(vec![]);
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        match ds.task {
            Task::Node => {
                let g = &ds.graphs[0];
                let graph = g.edge_index();
                let w = tape.constant(Matrix::filled(1, graph.num_edges(), 1.0));
                let x = tape.constant(g.features().clone());
                let logits = self.logits_on_tape(&mut tape, &bound, &graph, w, x)?;
                let l = tape.value(logits);
                Ok(ids.iter().map(|&i| l.argmax_row(i)).collect())
            }
            Task::Graph => {
                let b = batch(ds, ids)?;
                let logits = self.batch_logits(&mut tape, &bound, &b)?;
                let l = tape.value(logits);
                Ok((0..ids.len()).map(|i| l.argmax_row(i)).collect())
            }
        }
    }

    pub fn accuracy(&self, ds: &Dataset, ids: &[usize]) -> Result<f64, GnnError> {
        if ids.is_empty() {
            return Ok(0.0);
        }
        let preds = self.predict_ids(ds, ids)?;
        let correct = preds
            .iter()
            .zip(ids)
            .filter(|(&p, &i)| p == ds.true_label(i))
            .count();
        Ok(correct as f64 / ids.len() as f64)
    }
}

/// Full-batch training on the train split with cross-entropy and Adam.
pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<(GcnModel, TrainReport), GnnError> {
    if cfg.epochs == 0 || !(cfg.learning_rate > 0.0) {
        return Err(GnnError::Usage("epochs must be >= 1 and learning rate > 0".into()));
    }
    ds.validate().map_err(|e| GnnError::Usage(e.to_string()))?;
    let arch = Architecture {
        feature_dim: ds.feature_dim,
        hidden_dim: cfg.hidden_dim,
        num_layers: cfg.num_layers,
        num_classes: ds.num_classes,
        task: ds.task,
    };
    let mut model = GcnModel::init(arch, cfg.seed)?;
    let shapes: Vec<_> = model.parameters().iter().map(|m| m.shape()).collect();
    let mut adam = Adam::new(cfg.learning_rate, &shapes);
    let mut losses = Vec::with_capacity(cfg.epochs);

    // Inputs that do not change across epochs.
    let (graph, features, targets, offsets) = match ds.task {
        Task::Node => {
            let g = &ds.graphs[0];
            let labels = g.node_labels().expect("validated");
            let targets: Vec<(usize, usize)> = ds.train_idx.iter().map(|&i| (i, labels[i])).collect();
            (g.edge_index(), g.features().clone(), targets, None)
        }
        Task::Graph => {
            let b = batch(ds, &ds.train_idx)?;
            let targets = ds
                .train_idx
                .iter()
                .enumerate()
                .map(|(k, &gi)| (k, ds.true_label(gi)))
                .collect();
            (b.graph, b.features, targets, Some(b.offsets))
        }
    };
    let targets = Arc::new(targets);
    if targets.is_empty() {
        return Err(GnnError::Usage("training split is empty".into()));
    }
    let ones = Matrix::filled(1, graph.num_edges(), 1.0);

    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, true);
        let w = tape.constant(ones.clone());
        let x = tape.constant(features.clone());
        let h = model.embed_on_tape(&mut tape, &bound, &graph, w, x)?;
        let h = match &offsets {
            None => h,
            Some(off) => tape.segment_mean(h, off.clone())?,
        };
        let logits = model.head_on_tape(&mut tape, &bound, h)?;
        let loss = tape.softmax_cross_entropy(logits, targets.clone())?;
        let loss_value = tape.value(loss).item();
        if !loss_value.is_finite() {
            return Err(GnnError::Diverged {
                epoch,
                loss: loss_value,
            });
        }
        losses.push(loss_value);
        let grads = tape.backward(loss)?;
        let vars = bound.vars();
        let g: Vec<Option<&Matrix>> = vars.iter().map(|&v| grads.get(v)).collect();
        let mut params: Vec<Matrix> = model.parameters().into_iter().cloned().collect();
        adam.step(&mut params, &g);
        for (slot, p) in model.parameters_mut().into_iter().zip(params) {
            *slot = p;
        }
    }

    let train_accuracy = model.accuracy(ds, &ds.train_idx)?;
    let test_accuracy = model.accuracy(ds, &ds.test_idx)?;
    model.train_meta = Some(TrainMeta {
        epochs: cfg.epochs,
        learning_rate: cfg.learning_rate,
        seed: cfg.seed,
        train_accuracy,
        test_accuracy,
        final_loss: *losses.last().unwrap(),
    });
    Ok((
        model,
        TrainReport {
            train_accuracy,
            test_accuracy,
            losses,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    fn arch(task: Task, classes: usize) -> Architecture {
        Architecture {
            feature_dim: 3,
            hidden_dim: 4,
            num_layers: 3,
            num_classes: classes,
            task,
        }
    }

    #[test]
    fn zero_model_is_uniform() {
        let model = GcnModel::zeros(arch(Task::Node, 4)).unwrap();
        let a = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let p = model.forward(&a, &Matrix::filled(2, 3, 1.0)).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn prediction_rules() {
        let p = Prediction::from_probs(vec![0.7, 0.2, 0.1]);
        assert_eq!((p.label, p.runner_up), (0, 1));
        let tie = Prediction::from_probs(vec![0.5, 0.5]);
        assert_eq!((tie.label, tie.runner_up), (0, 1));
        let binary = Prediction::from_probs(vec![0.1, 0.9]);
        assert_eq!((binary.label, binary.runner_up), (1, 0));
    }

    #[test]
    fn dense_and_edge_routes_agree() {
        let model = GcnModel::init(arch(Task::Graph, 2), 3).unwrap();
        let g = Graph::new(4, &[(0, 1), (1, 2), (2, 3), (0, 3)], Matrix::filled(4, 3, 0.5)).unwrap();
        let dense = model.forward(&g.adjacency(), g.features()).unwrap();
        let ones = Matrix::filled(1, 4, 1.0);
        let sparse = model.forward_weighted(&g.edge_index(), &ones, g.features()).unwrap();
        assert_eq!(dense, sparse);
    }

    #[test]
    fn shape_mismatch_is_usage_error() {
        let model = GcnModel::zeros(arch(Task::Node, 2)).unwrap();
        let err = model.forward(&Matrix::zeros(2, 2), &Matrix::zeros(2, 5)).unwrap_err();
        assert!(matches!(err, GnnError::Usage(_)));
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = GcnModel::init(arch(Task::Node, 3), 11).unwrap();
        let text = serde_json::to_string(&model.to_checkpoint()).unwrap();
        let back = GcnModel::from_checkpoint(serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn single_class_trains_to_perfect_accuracy() {
        let g = Graph::new(3, &[(0, 1)], Matrix::filled(3, 2, 1.0))
            .unwrap()
            .with_label(0);
        let ds = Dataset {
            task: Task::Graph,
            num_classes: 1,
            feature_dim: 2,
            graphs: vec![g],
            train_idx: vec![0],
            test_idx: vec![],
            meta: None,
        };
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        let (_, report) = train(&ds, &cfg).unwrap();
        assert_eq!(report.train_accuracy, 1.0);
    }
}
