//! Parameters of a fully connected network and the forward/backward passes
//! shared by the classifier and the actor/critic networks.
//!
//! Hidden layers use rectified-linear units. The output layer applies one of
//! softmax, sigmoid or identity. Weight matrices are stored `fan_in x fan_out`
//! so a batch forward pass is `X W + b`.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Softmax,
    Sigmoid,
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    output: OutputActivation,
}

/// Activations recorded during a batch forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input to each layer; `layer_inputs[0]` is the batch itself.
    pub layer_inputs: Vec<Array2<f64>>,
    /// Post-activation network output, one row per sample.
    pub output: Array2<f64>,
    /// Pre-activation output (logits).
    pub logits: Array2<f64>,
}

fn check_architecture(architecture: &[usize]) -> Result<()> {
    if architecture.len() < 2 {
        return Err(SimError::EmptyArchitecture);
    }
    if architecture.contains(&0) {
        return Err(SimError::InvalidParameter {
            name: "architecture",
            reason: "layer widths must be positive".into(),
        });
    }
    Ok(())
}

impl ModelParams {
    /// Glorot-uniform weights in `+-sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(architecture: &[usize], output: OutputActivation, seed: u64) -> Result<Self> {
        check_architecture(architecture)?;
        let mut rng = stream(seed, &[crate::rng::tag::GLOBAL_INIT]);
        let mut weights = Vec::with_capacity(architecture.len() - 1);
        let mut biases = Vec::with_capacity(architecture.len() - 1);
        for pair in architecture.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(Array2::from_shape_fn((fan_in, fan_out), |_| {
                rng.random_range(-limit..=limit)
            }));
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Self {
            weights,
            biases,
            output,
        })
    }

    pub fn zeros(architecture: &[usize], output: OutputActivation) -> Result<Self> {
        check_architecture(architecture)?;
        Ok(Self {
            weights: architecture
                .windows(2)
                .map(|p| Array2::zeros((p[0], p[1])))
                .collect(),
            biases: architecture[1..]
                .iter()
                .map(|&w| Array1::zeros(w))
                .collect(),
            output,
        })
    }

    pub fn from_layers(
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
        output: OutputActivation,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(SimError::EmptyArchitecture);
        }
        for (i, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.ncols() != b.len() || (i > 0 && weights[i - 1].ncols() != w.nrows()) {
                return Err(SimError::ShapeMismatch {
                    expected: format!("layer {i} consistent with its neighbours"),
                    actual: format!("weights {:?}, bias {}", w.dim(), b.len()),
                });
            }
        }
        Ok(Self {
            weights,
            biases,
            output,
        })
    }

    pub fn architecture(&self) -> Vec<usize> {
        let mut arch = vec![self.weights[0].nrows()];
        arch.extend(self.weights.iter().map(|w| w.ncols()));
        arch
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn input_width(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn output_width(&self) -> usize {
        self.weights.last().map(|w| w.ncols()).unwrap_or(0)
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Array1<f64>] {
        &mut self.biases
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Layer-major flattening: W0 (row-major), b0, W1, b1, ...
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            flat.extend(w.iter().copied());
            flat.extend(b.iter().copied());
        }
        flat
    }

    pub fn from_flat(
        architecture: &[usize],
        output: OutputActivation,
        flat: &[f64],
    ) -> Result<Self> {
        let mut params = Self::zeros(architecture, output)?;
        if flat.len() != params.num_params() {
            return Err(SimError::ShapeMismatch {
                expected: format!("{} parameters", params.num_params()),
                actual: format!("{} values", flat.len()),
            });
        }
        let mut values = flat.iter().copied();
        for (w, b) in params.weights.iter_mut().zip(params.biases.iter_mut()) {
            w.iter_mut()
                .zip(values.by_ref())
                .for_each(|(dst, v)| *dst = v);
            b.iter_mut()
                .zip(values.by_ref())
                .for_each(|(dst, v)| *dst = v);
        }
        Ok(params)
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.weights.len() == other.weights.len()
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(a, b)| a.dim() == b.dim())
    }

    pub(crate) fn ensure_same_shape(&self, other: &Self) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(SimError::ShapeMismatch {
                expected: format!("{:?}", self.architecture()),
                actual: format!("{:?}", other.architecture()),
            })
        }
    }

    /// Applies `f(self, other)` elementwise in place.
    pub fn zip_apply(&mut self, other: &Self, mut f: impl FnMut(&mut f64, f64)) -> Result<()> {
        self.ensure_same_shape(other)?;
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            Zip::from(a).and(b).for_each(|x, &y| f(x, y));
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            Zip::from(a).and(b).for_each(|x, &y| f(x, y));
        }
        Ok(())
    }

    pub fn map_inplace(&mut self, mut f: impl FnMut(&mut f64)) {
        self.weights
            .iter_mut()
            .for_each(|w| w.iter_mut().for_each(&mut f));
        self.biases
            .iter_mut()
            .for_each(|b| b.iter_mut().for_each(&mut f));
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.map_inplace(|v| *v *= factor);
        out
    }

    /// `a * self + b * other`.
    pub fn lincomb(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        let mut out = self.clone();
        out.zip_apply(other, |x, y| *x = a * *x + b * y)?;
        Ok(out)
    }

    /// Batch forward pass; rows of `input` are samples.
    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<ForwardTrace> {
        if input.ncols() != self.input_width() {
            return Err(SimError::ShapeMismatch {
                expected: format!("input width {}", self.input_width()),
                actual: format!("{}", input.ncols()),
            });
        }
        let last = self.weights.len() - 1;
        let mut layer_inputs = Vec::with_capacity(self.weights.len());
        let mut current = input.to_owned();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = current.dot(w);
            z += b;
            layer_inputs.push(current);
            if i == last {
                let output = apply_output(self.output, &z);
                return Ok(ForwardTrace {
                    layer_inputs,
                    output,
                    logits: z,
                });
            }
            z.mapv_inplace(|v| v.max(0.0));
            current = z;
        }
        unreachable!("architecture has at least one layer")
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, input.len()), input).map_err(|e| {
            SimError::ShapeMismatch {
                expected: "a single feature vector".into(),
                actual: e.to_string(),
            }
        })?;
        Ok(self.forward_batch(view)?.output.row(0).to_vec())
    }

    /// Backpropagates `d_logits` (gradient of the objective with respect to
    /// the output pre-activation) and returns parameter gradients plus the
    /// gradient with respect to the network input.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        d_logits: Array2<f64>,
    ) -> (ModelParams, Array2<f64>) {
        let n_layers = self.weights.len();
        let mut grad_w = Vec::with_capacity(n_layers);
        let mut grad_b = Vec::with_capacity(n_layers);
        let mut delta = d_logits;
        for layer in (0..n_layers).rev() {
            let input = &trace.layer_inputs[layer];
            grad_w.push(input.t().dot(&delta));
            grad_b.push(delta.sum_axis(Axis(0)));
            let mut upstream = delta.dot(&self.weights[layer].t());
            if layer > 0 {
                Zip::from(&mut upstream).and(input).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            delta = upstream;
        }
        grad_w.reverse();
        grad_b.reverse();
        (
            ModelParams {
                weights: grad_w,
                biases: grad_b,
                output: self.output,
            },
            delta,
        )
    }

    /// Writes the length-prefixed JSON shape header followed by the flat
    /// parameter vector as little-endian `f64`.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let header = serde_json::to_vec(&ShapeHeader {
            architecture: self.architecture(),
            output: self.output,
            num_params: self.num_params(),
        })?;
        out.write_all(&(header.len() as u64).to_le_bytes())?;
        out.write_all(&header)?;
        for v in self.flatten() {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut len = [0u8; 8];
        input.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        if len > 1 << 20 {
            return Err(SimError::ModelFormat(format!(
                "header length {len} is implausible"
            )));
        }
        let mut header = vec![0u8; len];
        input.read_exact(&mut header)?;
        let header: ShapeHeader = serde_json::from_slice(&header)?;
        let mut data = Vec::new();
        input.read_to_end(&mut data)?;
        if data.len() != header.num_params * 8 {
            return Err(SimError::ModelFormat(format!(
                "expected {} parameter bytes, found {}",
                header.num_params * 8,
                data.len()
            )));
        }
        let flat: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Self::from_flat(&header.architecture, header.output, &flat)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)
            .expect("writing to a Vec cannot fail");
        buf
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ShapeHeader {
    architecture: Vec<usize>,
    output: OutputActivation,
    num_params: usize,
}

fn apply_output(kind: OutputActivation, logits: &Array2<f64>) -> Array2<f64> {
    match kind {
        OutputActivation::Linear => logits.clone(),
        OutputActivation::Sigmoid => logits.mapv(sigmoid),
        OutputActivation::Softmax => {
            let mut out = logits.clone();
            for mut row in out.rows_mut() {
                let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                row.mapv_inplace(|v| (v - max).exp());
                let sum = row.sum();
                row.mapv_inplace(|v| v / sum);
            }
            out
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
