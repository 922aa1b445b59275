//! Packed feed-forward networks: the ASCII notation, evaluation and training.

mod network;
mod notation;
mod train;

pub use network::{Activation, Layer, NetworkSpec, Neuron, ValidationReport, Violation, DEFAULT_THRESHOLD};
pub use notation::{decode_network, encode_network, format_number};
pub use train::{
    batch_loss, gradient, initial_network, mean_squared_error, train, Gradient, Sample, TrainConfig, TrainOutcome,
    WeightInit,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CodecError {
    #[error("malformed notation at byte {offset}: expected {expected}")]
    MalformedNotation { offset: usize, expected: &'static str },
    /// `layer` 0 with no neuron refers to the input vector itself.
    #[error("shape mismatch at layer {layer}: expected {expected} values, found {found}")]
    ShapeMismatch {
        layer: usize,
        neuron: Option<usize>,
        expected: usize,
        found: usize,
    },
    #[error("non-finite number at byte {offset}")]
    NonFiniteValue { offset: usize },
    #[error("invalid network: {0}")]
    InvalidNetwork(ValidationReport),
    #[error("invalid training configuration: {0}")]
    InvalidTrainConfig(String),
    #[error("training dataset is empty")]
    EmptyDataset,
}

/// Runs a decoded network on one input vector.
pub fn evaluate(net: &NetworkSpec, input: &[f64]) -> Result<Vec<f64>, CodecError> {
    net.evaluate(input)
}
