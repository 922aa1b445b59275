use std::fmt;

use serde::{Deserialize, Serialize};

/// Threshold a neuron gets when the notation leaves it out.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// Fires 1 when the weighted sum reaches the threshold, 0 otherwise.
    Step,
    /// `1 / (1 + e^-(a - threshold))`.
    Logistic,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Step => "step",
            Activation::Logistic => "logistic",
        }
    }

    #[inline]
    pub fn apply(self, weighted_sum: f64, threshold: f64) -> f64 {
        match self {
            Activation::Step => {
                if weighted_sum >= threshold {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Logistic => 1.0 / (1.0 + (-(weighted_sum - threshold)).exp()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neuron {
    pub threshold: f64,
    pub weights: Vec<f64>,
}

impl Neuron {
    pub fn new(threshold: f64, weights: Vec<f64>) -> Self {
        Self { threshold, weights }
    }

    /// Neuron with the default 0.5 threshold.
    pub fn with_weights(weights: Vec<f64>) -> Self {
        Self::new(DEFAULT_THRESHOLD, weights)
    }

    #[inline]
    fn weighted_sum(&self, input: &[f64]) -> f64 {
        self.weights.iter().zip(input).map(|(w, x)| w * x).sum()
    }
}

pub type Layer = Vec<Neuron>;

/// A fully connected feed-forward network as carried by the ASCII notation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub version: u32,
    pub activation: Activation,
    pub input_count: usize,
    pub layers: Vec<Layer>,
}

impl NetworkSpec {
    pub fn output_count(&self) -> usize {
        self.layers.last().map_or(0, Vec::len)
    }

    /// Runs the network forward. Layers are evaluated in order; each neuron
    /// sees the complete output of the previous layer.
    pub fn evaluate(&self, input: &[f64]) -> Result<Vec<f64>, crate::ann::CodecError> {
        if input.len() != self.input_count {
            return Err(crate::ann::CodecError::ShapeMismatch {
                layer: 0,
                neuron: None,
                expected: self.input_count,
                found: input.len(),
            });
        }
        let mut current = input.to_vec();
        for layer in &self.layers {
            current = layer
                .iter()
                .map(|n| self.activation.apply(n.weighted_sum(&current), n.threshold))
                .collect();
        }
        Ok(current)
    }

    /// Lists every invariant violation. An empty report means the network is valid.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        if self.version == 0 {
            violations.push(Violation::ZeroVersion);
        }
        if self.input_count == 0 {
            violations.push(Violation::ZeroInputs);
        }
        if self.layers.is_empty() {
            violations.push(Violation::NoLayers);
        }
        let mut expected = self.input_count;
        for (li, layer) in self.layers.iter().enumerate() {
            if layer.is_empty() {
                violations.push(Violation::EmptyLayer { layer: li });
            }
            for (ni, neuron) in layer.iter().enumerate() {
                if neuron.weights.is_empty() {
                    violations.push(Violation::EmptyWeights { layer: li, neuron: ni });
                } else if neuron.weights.len() != expected {
                    violations.push(Violation::ShapeMismatch {
                        layer: li,
                        neuron: ni,
                        expected,
                        found: neuron.weights.len(),
                    });
                }
                if !neuron.threshold.is_finite() {
                    violations.push(Violation::NonFiniteValue {
                        layer: li,
                        neuron: ni,
                        weight: None,
                    });
                }
                for (wi, w) in neuron.weights.iter().enumerate() {
                    if !w.is_finite() {
                        violations.push(Violation::NonFiniteValue {
                            layer: li,
                            neuron: ni,
                            weight: Some(wi),
                        });
                    }
                }
            }
            expected = layer.len();
        }
        ValidationReport { violations }
    }
}

/// One broken invariant. Layer and neuron indices are zero-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    ZeroVersion,
    ZeroInputs,
    NoLayers,
    EmptyLayer {
        layer: usize,
    },
    EmptyWeights {
        layer: usize,
        neuron: usize,
    },
    ShapeMismatch {
        layer: usize,
        neuron: usize,
        expected: usize,
        found: usize,
    },
    /// `weight: None` means the threshold is the offending value.
    NonFiniteValue {
        layer: usize,
        neuron: usize,
        weight: Option<usize>,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ZeroVersion => write!(f, "version must be positive"),
            Violation::ZeroInputs => write!(f, "input count must be positive"),
            Violation::NoLayers => write!(f, "network has no layers"),
            Violation::EmptyLayer { layer } => write!(f, "layer {layer} has no neurons"),
            Violation::EmptyWeights { layer, neuron } => {
                write!(f, "layer {layer} neuron {neuron} has no weights")
            }
            Violation::ShapeMismatch {
                layer,
                neuron,
                expected,
                found,
            } => write!(
                f,
                "layer {layer} neuron {neuron} has {found} weights, expected {expected}"
            ),
            Violation::NonFiniteValue {
                layer,
                neuron,
                weight: None,
            } => write!(f, "layer {layer} neuron {neuron} threshold is not finite"),
            Violation::NonFiniteValue {
                layer,
                neuron,
                weight: Some(w),
            } => write!(f, "layer {layer} neuron {neuron} weight {w} is not finite"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}
