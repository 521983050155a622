//! Factual and counterfactual explanations for graph convolutional
//! classifiers, with the metrics used to score them.

pub mod cli;
pub mod explainer;
pub mod gnn;
pub mod graph;
pub mod metrics;
pub mod tensor;
