//! ReLU multi-layer perceptrons: forward evaluation, activation patterns,
//! pattern-restricted affine preactivations and pattern Jacobians.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dot, Matrix};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("malformed network JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("shape mismatch at layer {layer}: {detail}")]
    Shape { layer: usize, detail: String },
    #[error("network needs at least one hidden layer (got {layers} affine maps)")]
    TooShallow { layers: usize },
    #[error("non-finite entry in layer {layer}")]
    NonFinite { layer: usize },
    #[error("input has length {got}, network expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("pattern shape {got:?} does not match hidden widths {expected:?}")]
    PatternShape { expected: Vec<usize>, got: Vec<usize> },
    #[error("relaxed gate {value} at layer {layer}, neuron {neuron} lies outside [0, 1]")]
    GateOutOfRange { layer: usize, neuron: usize, value: f64 },
}

/// One affine map `x -> weights * x + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// A validated ReLU MLP `T_L o relu o T_{L-1} o ... o relu o T_1`.
///
/// Layer `k` (0-based here) maps `widths[k]` inputs to `widths[k + 1]`
/// outputs; every layer but the last is followed by a ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    layers: Vec<Layer>,
    widths: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl MlpNetwork {
    /// Validates shapes and finiteness. Layer indices in errors are 1-based,
    /// matching the usual `M_1 .. M_L` numbering.
    pub fn new(layers: Vec<Layer>) -> Result<Self, NetworkError> {
        if layers.is_empty() {
            return Err(NetworkError::Shape {
                layer: 0,
                detail: "empty layer list".into(),
            });
        }
        let mut widths = vec![layers[0].weights.cols()];
        for (k, layer) in layers.iter().enumerate() {
            let idx = k + 1;
            let (rows, cols) = (layer.weights.rows(), layer.weights.cols());
            if rows == 0 || cols == 0 {
                return Err(NetworkError::Shape {
                    layer: idx,
                    detail: format!("weights are {rows}x{cols}; widths must be positive"),
                });
            }
            if cols != widths[k] {
                return Err(NetworkError::Shape {
                    layer: idx,
                    detail: format!("weights have {cols} columns, previous width is {}", widths[k]),
                });
            }
            if layer.bias.len() != rows {
                return Err(NetworkError::Shape {
                    layer: idx,
                    detail: format!("weights have {rows} rows but bias has {} entries", layer.bias.len()),
                });
            }
            if !layer.weights.is_finite() || layer.bias.iter().any(|b| !b.is_finite()) {
                return Err(NetworkError::NonFinite { layer: idx });
            }
            widths.push(rows);
        }
        if layers.len() < 2 {
            return Err(NetworkError::TooShallow { layers: layers.len() });
        }
        Ok(Self { layers, widths })
    }

    /// Convenience constructor from nested rows, `(weights, bias)` per layer.
    pub fn from_rows(layers: Vec<(Vec<Vec<f64>>, Vec<f64>)>) -> Result<Self, NetworkError> {
        let layers = layers
            .into_iter()
            .enumerate()
            .map(|(k, (w, b))| {
                let weights = Matrix::from_rows(&w).ok_or_else(|| NetworkError::Shape {
                    layer: k + 1,
                    detail: "ragged weight rows".into(),
                })?;
                Ok(Layer { weights, bias: b })
            })
            .collect::<Result<Vec<_>, NetworkError>>()?;
        Self::new(layers)
    }

    /// Parses the `{"layers":[{"weights":[[..]],"bias":[..]}, ..]}` format.
    pub fn from_json(text: &str) -> Result<Self, NetworkError> {
        let file: NetworkFile = serde_json::from_str(text)?;
        Self::from_rows(file.layers.into_iter().map(|l| (l.weights, l.bias)).collect())
    }

    pub fn to_json(&self) -> String {
        let file = NetworkFile {
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    weights: l.weights.to_rows(),
                    bias: l.bias.clone(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("network serialization is infallible")
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Number of affine maps `L`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// `n_0, .., n_L`.
    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// `n_1, .., n_{L-1}`.
    pub fn hidden_widths(&self) -> &[usize] {
        &self.widths[1..self.widths.len() - 1]
    }

    pub fn total_hidden(&self) -> usize {
        self.hidden_widths().iter().sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NetworkError> {
        if x.len() != self.input_dim() {
            return Err(NetworkError::Dimension {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Returns `f(x)` together with the hidden preactivations
    /// `theta_1(x), .., theta_{L-1}(x)`.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>), NetworkError> {
        self.check_input(x)?;
        let mut pre = Vec::with_capacity(self.depth() - 1);
        let mut act = x.to_vec();
        for layer in &self.layers[..self.depth() - 1] {
            let theta = affine(layer, &act);
            act = theta.iter().map(|v| v.max(0.0)).collect();
            pre.push(theta);
        }
        let out = affine(self.layers.last().unwrap(), &act);
        Ok((out, pre))
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, NetworkError> {
        Ok(self.forward(x)?.0)
    }

    /// Sign pattern of the hidden preactivations at `x`. A preactivation of
    /// exactly zero maps to bit 0.
    pub fn pattern_of(&self, x: &[f64]) -> Result<ActivationPattern, NetworkError> {
        let (_, pre) = self.forward(x)?;
        Ok(ActivationPattern {
            bits: pre.iter().map(|t| t.iter().map(|&v| v > 0.0).collect()).collect(),
        })
    }

    pub fn check_pattern(&self, sigma: &ActivationPattern) -> Result<(), NetworkError> {
        let got: Vec<usize> = sigma.bits.iter().map(Vec::len).collect();
        if got != self.hidden_widths() {
            return Err(NetworkError::PatternShape {
                expected: self.hidden_widths().to_vec(),
                got,
            });
        }
        Ok(())
    }

    /// Hidden preactivations as affine functions of the input, valid on the
    /// closure of the activation region of `sigma`.
    pub fn affine_preactivations(
        &self,
        sigma: &ActivationPattern,
    ) -> Result<Vec<Vec<AffineForm>>, NetworkError> {
        self.check_pattern(sigma)?;
        Ok(self.preactivation_forms(&sigma.bits, self.depth() - 1))
    }

    /// Forms for hidden layers `1..=upto`. Layer `k` only depends on the
    /// gates of layers `1..k`, so `gates` needs at least `upto - 1` entries.
    pub(crate) fn preactivation_forms(&self, gates: &[Vec<bool>], upto: usize) -> Vec<Vec<AffineForm>> {
        debug_assert!(upto < self.depth());
        debug_assert!(gates.len() + 1 >= upto);
        let n0 = self.input_dim();
        // x_{k-1} = coeffs * x_0 + offset
        let mut coeffs = Matrix::identity(n0);
        let mut offset = vec![0.0; n0];
        let mut forms = Vec::with_capacity(upto);
        for k in 0..upto {
            let layer = &self.layers[k];
            let theta_coeffs = layer.weights.matmul(&coeffs);
            let theta_offset: Vec<f64> = (0..layer.bias.len())
                .map(|i| dot(layer.weights.row(i), &offset) + layer.bias[i])
                .collect();
            forms.push(
                (0..layer.bias.len())
                    .map(|i| AffineForm {
                        coeffs: theta_coeffs.row(i).to_vec(),
                        offset: theta_offset[i],
                    })
                    .collect(),
            );
            if k + 1 < upto {
                let g: Vec<f64> = gates[k].iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
                coeffs = theta_coeffs.scale_rows(&g);
                offset = theta_offset.iter().zip(&g).map(|(o, g)| o * g).collect();
            }
        }
        forms
    }

    /// `M_L diag(sigma_{L-1}) M_{L-1} .. diag(sigma_1) M_1`.
    pub fn jacobian(&self, sigma: &ActivationPattern) -> Result<Matrix, NetworkError> {
        self.check_pattern(sigma)?;
        Ok(self.gated_product(&sigma.gates()))
    }

    /// Jacobian product with continuous gates in `[0, 1]`.
    pub fn relaxed_jacobian(&self, g: &RelaxedPattern) -> Result<Matrix, NetworkError> {
        let got: Vec<usize> = g.values.iter().map(Vec::len).collect();
        if got != self.hidden_widths() {
            return Err(NetworkError::PatternShape {
                expected: self.hidden_widths().to_vec(),
                got,
            });
        }
        g.validate()?;
        Ok(self.gated_product(&g.values))
    }

    /// `diag(g_j) M_j .. diag(g_1) M_1` for `j = upto` gated layers,
    /// accumulated left to right in layer order. `upto == 0` is not allowed.
    pub(crate) fn gated_prefix(&self, gates: &[Vec<f64>], upto: usize) -> Matrix {
        debug_assert!(upto >= 1 && upto < self.depth());
        let mut acc = self.layers[0].weights.scale_rows(&gates[0]);
        for k in 1..upto {
            acc = self.layers[k].weights.matmul(&acc).scale_rows(&gates[k]);
        }
        acc
    }

    fn gated_product(&self, gates: &[Vec<f64>]) -> Matrix {
        let prefix = self.gated_prefix(gates, self.depth() - 1);
        self.layers[self.depth() - 1].weights.matmul(&prefix)
    }
}

fn affine(layer: &Layer, x: &[f64]) -> Vec<f64> {
    (0..layer.bias.len())
        .map(|i| dot(layer.weights.row(i), x) + layer.bias[i])
        .collect()
}

/// Binary on/off assignment for every hidden neuron, layer by layer.
///
/// The derived ordering is lexicographic over the flattened bits (layer-major,
/// neuron-minor, `0 < 1`) whenever the shapes agree, which is the tie-break
/// order used by the bounds engine.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActivationPattern {
    pub bits: Vec<Vec<bool>>,
}

impl ActivationPattern {
    pub fn new(bits: Vec<Vec<bool>>) -> Self {
        Self { bits }
    }

    pub fn from_ints(bits: &[&[u8]]) -> Self {
        Self {
            bits: bits.iter().map(|l| l.iter().map(|&b| b != 0).collect()).collect(),
        }
    }

    pub fn zeros(widths: &[usize]) -> Self {
        Self {
            bits: widths.iter().map(|&n| vec![false; n]).collect(),
        }
    }

    pub fn ones(widths: &[usize]) -> Self {
        Self {
            bits: widths.iter().map(|&n| vec![true; n]).collect(),
        }
    }

    /// Rebuilds a pattern from flattened bits in layer-major order.
    pub fn from_flat(widths: &[usize], flat: &[bool]) -> Self {
        assert_eq!(widths.iter().sum::<usize>(), flat.len());
        let mut bits = Vec::with_capacity(widths.len());
        let mut at = 0;
        for &n in widths {
            bits.push(flat[at..at + n].to_vec());
            at += n;
        }
        Self { bits }
    }

    /// The `index`-th pattern in lexicographic order: the first flattened bit
    /// is the most significant.
    pub fn from_index(widths: &[usize], index: u64) -> Self {
        let total: usize = widths.iter().sum();
        let flat: Vec<bool> = (0..total).map(|b| (index >> (total - 1 - b)) & 1 == 1).collect();
        Self::from_flat(widths, &flat)
    }

    pub fn flat(&self) -> Vec<bool> {
        self.bits.iter().flatten().copied().collect()
    }

    pub fn total_bits(&self) -> usize {
        self.bits.iter().map(Vec::len).sum()
    }

    pub fn gates(&self) -> Vec<Vec<f64>> {
        self.bits
            .iter()
            .map(|l| l.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
            .collect()
    }

    pub fn to_ints(&self) -> Vec<Vec<u8>> {
        self.bits.iter().map(|l| l.iter().map(|&b| b as u8).collect()).collect()
    }
}

impl Serialize for ActivationPattern {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_ints().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ActivationPattern {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let ints = Vec::<Vec<u8>>::deserialize(d)?;
        if ints.iter().flatten().any(|&b| b > 1) {
            return Err(serde::de::Error::custom("pattern bits must be 0 or 1"));
        }
        Ok(Self {
            bits: ints.iter().map(|l| l.iter().map(|&b| b == 1).collect()).collect(),
        })
    }
}

/// Continuous gates `g_k in [0, 1]^{n_k}` (a Clarke-Jacobian selection).
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedPattern {
    pub values: Vec<Vec<f64>>,
}

impl RelaxedPattern {
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self, NetworkError> {
        let g = Self { values };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<(), NetworkError> {
        for (k, layer) in self.values.iter().enumerate() {
            for (i, &v) in layer.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(NetworkError::GateOutOfRange {
                        layer: k + 1,
                        neuron: i + 1,
                        value: v,
                    });
                }
            }
        }
        Ok(())
    }
}

impl From<&ActivationPattern> for RelaxedPattern {
    fn from(sigma: &ActivationPattern) -> Self {
        Self { values: sigma.gates() }
    }
}

/// `x -> coeffs . x + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineForm {
    pub coeffs: Vec<f64>,
    pub offset: f64,
}

impl AffineForm {
    pub fn eval(&self, x: &[f64]) -> f64 {
        dot(&self.coeffs, x) + self.offset
    }
}
