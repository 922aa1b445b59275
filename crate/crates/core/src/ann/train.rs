//! Deterministic backpropagation trainer for logistic networks.
//!
//! Weights and thresholds are drawn from `U[-0.5, 0.5)` using a
//! `Xoshiro256PlusPlus` generator seeded through SplitMix64 (`seed_from_u64`).
//! For every neuron, in layer order, the weights are drawn first and the
//! threshold last. A uniform draw is `(next_u64() >> 11) * 2^-53`.
//!
//! Each epoch walks the dataset in its given order, split into consecutive
//! batches. The batch loss is `(1/|B|) * sum_s 0.5 * sum_k (y_k - t_k)^2`
//! and every batch applies one gradient step. After the epoch the mean
//! squared error over the whole dataset is measured; training stops once it
//! is at or below `target_error`, or after `max_epochs`.

use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use super::network::{Activation, NetworkSpec, Neuron};
use super::CodecError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightInit {
    #[default]
    Uniform,
    /// Every weight and threshold starts at zero.
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Layer sizes including the input layer, e.g. `[2, 2, 1]`.
    pub topology: Vec<usize>,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub target_error: f64,
    pub seed: u64,
    /// Samples per gradient step; `None` means the whole dataset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub init: WeightInit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

impl Sample {
    pub fn new(input: Vec<f64>, target: Vec<f64>) -> Self {
        Self { input, target }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub network: NetworkSpec,
    pub epochs: usize,
    /// Mean squared error over the dataset after the last epoch.
    pub final_error: f64,
    pub converged: bool,
}

/// Partial derivatives shaped like the network: `threshold` holds
/// dL/d(threshold) and `weights` holds dL/dw for each neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub layers: Vec<Vec<Neuron>>,
}

impl TrainConfig {
    fn check(&self) -> Result<(), CodecError> {
        let bad = |m: &str| Err(CodecError::InvalidTrainConfig(m.to_string()));
        if self.topology.len() < 2 {
            return bad("topology needs at least an input and an output layer");
        }
        if self.topology.contains(&0) {
            return bad("layer sizes must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning rate must be positive and finite");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if self.target_error.is_nan() || self.target_error < 0.0 {
            return bad("target_error must be non-negative");
        }
        if self.batch_size == Some(0) {
            return bad("batch size must be positive");
        }
        Ok(())
    }
}

/// Builds the starting network for a config.
pub fn initial_network(config: &TrainConfig) -> NetworkSpec {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(config.seed);
    let mut draw = move || match config.init {
        WeightInit::Uniform => (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64) - 0.5,
        WeightInit::Zeros => 0.0,
    };
    let layers = config
        .topology
        .windows(2)
        .map(|pair| {
            (0..pair[1])
                .map(|_| {
                    let weights: Vec<f64> = (0..pair[0]).map(|_| draw()).collect();
                    Neuron::new(draw(), weights)
                })
                .collect()
        })
        .collect();
    NetworkSpec {
        version: 1,
        activation: Activation::Logistic,
        input_count: config.topology[0],
        layers,
    }
}

pub fn train(config: &TrainConfig, dataset: &[Sample]) -> Result<TrainOutcome, CodecError> {
    config.check()?;
    if dataset.is_empty() {
        return Err(CodecError::EmptyDataset);
    }
    let inputs = config.topology[0];
    let outputs = *config.topology.last().expect("checked length");
    for s in dataset {
        if s.input.len() != inputs {
            return Err(CodecError::ShapeMismatch {
                layer: 0,
                neuron: None,
                expected: inputs,
                found: s.input.len(),
            });
        }
        if s.target.len() != outputs {
            return Err(CodecError::ShapeMismatch {
                layer: config.topology.len() - 1,
                neuron: None,
                expected: outputs,
                found: s.target.len(),
            });
        }
    }

    let mut net = initial_network(config);
    let batch = config.batch_size.unwrap_or(dataset.len());
    let mut error = f64::INFINITY;
    let mut epochs = 0;
    while epochs < config.max_epochs {
        for chunk in dataset.chunks(batch) {
            let grad = gradient(&net, chunk);
            apply_step(&mut net, &grad, config.learning_rate);
        }
        epochs += 1;
        error = mean_squared_error(&net, dataset);
        if error <= config.target_error {
            break;
        }
    }
    Ok(TrainOutcome {
        network: net,
        epochs,
        final_error: error,
        converged: error <= config.target_error,
    })
}

fn apply_step(net: &mut NetworkSpec, grad: &Gradient, lr: f64) {
    for (layer, glayer) in net.layers.iter_mut().zip(&grad.layers) {
        for (neuron, g) in layer.iter_mut().zip(glayer) {
            neuron.threshold -= lr * g.threshold;
            for (w, dw) in neuron.weights.iter_mut().zip(&g.weights) {
                *w -= lr * dw;
            }
        }
    }
}

/// Per-layer outputs, starting with the input itself.
fn forward(net: &NetworkSpec, input: &[f64]) -> Vec<Vec<f64>> {
    let mut acts = Vec::with_capacity(net.layers.len() + 1);
    acts.push(input.to_vec());
    for layer in &net.layers {
        let prev = acts.last().expect("non-empty");
        let out = layer
            .iter()
            .map(|n| {
                let a: f64 = n.weights.iter().zip(prev).map(|(w, x)| w * x).sum();
                net.activation.apply(a, n.threshold)
            })
            .collect();
        acts.push(out);
    }
    acts
}

/// Batch loss `(1/|B|) * sum 0.5 * ||y - t||^2`.
pub fn batch_loss(net: &NetworkSpec, batch: &[Sample]) -> f64 {
    let total: f64 = batch
        .iter()
        .map(|s| {
            let y = forward(net, &s.input).pop().expect("output layer");
            0.5 * y.iter().zip(&s.target).map(|(y, t)| (y - t).powi(2)).sum::<f64>()
        })
        .sum();
    total / batch.len() as f64
}

/// Mean over samples and outputs of the squared error.
pub fn mean_squared_error(net: &NetworkSpec, dataset: &[Sample]) -> f64 {
    let k = net.output_count() as f64;
    let total: f64 = dataset
        .iter()
        .map(|s| {
            let y = forward(net, &s.input).pop().expect("output layer");
            y.iter().zip(&s.target).map(|(y, t)| (y - t).powi(2)).sum::<f64>() / k
        })
        .sum();
    total / dataset.len() as f64
}

/// Analytic gradient of [`batch_loss`] for a logistic network.
pub fn gradient(net: &NetworkSpec, batch: &[Sample]) -> Gradient {
    let mut acc: Vec<Vec<Neuron>> = net
        .layers
        .iter()
        .map(|l| l.iter().map(|n| Neuron::new(0.0, vec![0.0; n.weights.len()])).collect())
        .collect();
    let scale = 1.0 / batch.len() as f64;

    for sample in batch {
        let acts = forward(net, &sample.input);
        let last = net.layers.len() - 1;
        // delta_j = dL/da_j where a_j is the neuron's weighted sum
        let mut delta: Vec<f64> = acts[last + 1]
            .iter()
            .zip(&sample.target)
            .map(|(y, t)| (y - t) * y * (1.0 - y))
            .collect();
        for li in (0..=last).rev() {
            let input = &acts[li];
            for (ni, d) in delta.iter().enumerate() {
                let g = &mut acc[li][ni];
                g.threshold -= scale * d;
                for (gw, x) in g.weights.iter_mut().zip(input) {
                    *gw += scale * d * x;
                }
            }
            if li > 0 {
                delta = (0..input.len())
                    .map(|i| {
                        let back: f64 = net.layers[li].iter().zip(&delta).map(|(n, d)| n.weights[i] * d).sum();
                        back * input[i] * (1.0 - input[i])
                    })
                    .collect();
            }
        }
    }
    Gradient { layers: acc }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(topology: Vec<usize>) -> TrainConfig {
        TrainConfig {
            topology,
            learning_rate: 0.5,
            max_epochs: 100,
            target_error: 0.0,
            seed: 1,
            batch_size: None,
            init: WeightInit::Uniform,
        }
    }

    #[test]
    fn initialization_is_seeded_and_bounded() {
        let a = initial_network(&config(vec![3, 4, 2]));
        let b = initial_network(&config(vec![3, 4, 2]));
        assert_eq!(a, b);
        let mut other = config(vec![3, 4, 2]);
        other.seed = 2;
        assert_ne!(a, initial_network(&other));
        for n in a.layers.iter().flatten() {
            assert!((-0.5..0.5).contains(&n.threshold));
            assert!(n.weights.iter().all(|w| (-0.5..0.5).contains(w)));
        }
        assert!(a.validate().is_empty());
    }

    #[test]
    fn already_fitting_zero_net_stops_after_one_epoch() {
        let mut cfg = config(vec![2, 1]);
        cfg.init = WeightInit::Zeros;
        cfg.target_error = 1e-12;
        let data = [Sample::new(vec![0.3, 0.7], vec![0.5])];
        let out = train(&cfg, &data).unwrap();
        assert_eq!(out.epochs, 1);
        assert!(out.converged);
        assert!(out.final_error <= cfg.target_error);
    }

    #[test]
    fn shape_and_config_errors() {
        let cfg = config(vec![2, 1]);
        assert_eq!(train(&cfg, &[]), Err(CodecError::EmptyDataset));
        assert!(matches!(
            train(&cfg, &[Sample::new(vec![1.0], vec![1.0])]),
            Err(CodecError::ShapeMismatch {
                expected: 2,
                found: 1,
                ..
            })
        ));
        assert!(matches!(
            train(&cfg, &[Sample::new(vec![1.0, 0.0], vec![1.0, 0.0])]),
            Err(CodecError::ShapeMismatch {
                expected: 1,
                found: 2,
                ..
            })
        ));
        assert!(matches!(
            train(&config(vec![2]), &[Sample::new(vec![1.0, 0.0], vec![])]),
            Err(CodecError::InvalidTrainConfig(_))
        ));
        let mut zero_lr = cfg.clone();
        zero_lr.learning_rate = 0.0;
        assert!(matches!(
            train(&zero_lr, &[Sample::new(vec![1.0, 0.0], vec![1.0])]),
            Err(CodecError::InvalidTrainConfig(_))
        ));
    }

    #[test]
    fn training_reduces_error_and_is_reproducible() {
        let data: Vec<Sample> = (0..8)
            .map(|i| {
                let x = i as f64 / 8.0;
                Sample::new(vec![x], vec![if x > 0.5 { 0.9 } else { 0.1 }])
            })
            .collect();
        let mut cfg = config(vec![1, 3, 1]);
        cfg.max_epochs = 500;
        let start = mean_squared_error(&initial_network(&cfg), &data);
        let a = train(&cfg, &data).unwrap();
        let b = train(&cfg, &data).unwrap();
        assert!(a.final_error < start);
        assert_eq!(a.final_error.to_bits(), b.final_error.to_bits());
        assert_eq!(a.network, b.network);
        assert_eq!(a.network.activation, Activation::Logistic);
    }
}
