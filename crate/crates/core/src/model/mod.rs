//! Dense classifier trained locally by each vehicle: cross-entropy loss, exact
//! backprop gradients, plain SGD, multi-pass local training and evaluation.

mod params;

pub use params::{sigmoid, ForwardTrace, ModelParams, OutputActivation};

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;

use crate::error::{invalid, Result, SimError};
use crate::rng::stream;

pub const NUM_CLASSES: usize = 10;

/// Probabilities are clamped below at this value before taking the log.
pub const LOG_FLOOR: f64 = 1e-12;

/// Feature matrix (one row per sample) plus class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    inputs: Array2<f64>,
    labels: Vec<usize>,
}

impl LabeledBatch {
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(SimError::ShapeMismatch {
                expected: format!("{} labels", inputs.nrows()),
                actual: format!("{}", labels.len()),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= NUM_CLASSES) {
            return Err(SimError::LabelOutOfRange {
                label,
                classes: NUM_CLASSES,
            });
        }
        if let Some(&value) = inputs.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(SimError::FeatureOutOfRange { value });
        }
        Ok(Self { inputs, labels })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<usize>) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(SimError::ShapeMismatch {
                expected: format!("rows of width {width}"),
                actual: "ragged rows".into(),
            });
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let inputs = Array2::from_shape_vec((rows.len(), width), flat).map_err(|e| {
            SimError::ShapeMismatch {
                expected: "rectangular feature matrix".into(),
                actual: e.to_string(),
            }
        })?;
        Self::new(inputs, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn inputs(&self) -> ArrayView2<'_, f64> {
        self.inputs.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Applies `f` to every label, skipping validation of the result's range
    /// (callers guarantee it).
    pub(crate) fn map_labels(&self, f: impl Fn(usize) -> usize) -> Self {
        Self {
            inputs: self.inputs.clone(),
            labels: self.labels.iter().map(|&l| f(l)).collect(),
        }
    }

    pub(crate) fn map_inputs(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            inputs: self.inputs.mapv(f),
            labels: self.labels.clone(),
        }
    }
}

/// Per-sample mean of `-log p(label)` over the batch.
pub fn cross_entropy_loss(params: &ModelParams, batch: &LabeledBatch) -> Result<f64> {
    if batch.is_empty() {
        return Err(SimError::EmptyBatch);
    }
    let trace = params.forward_batch(batch.inputs())?;
    Ok(mean_nll(&trace.output, batch.labels()))
}

fn mean_nll(probs: &Array2<f64>, labels: &[usize]) -> f64 {
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -probs[[i, y]].max(LOG_FLOOR).ln())
        .sum();
    total / labels.len() as f64
}

/// Exact gradient of [`cross_entropy_loss`] with respect to every parameter.
pub fn gradient(params: &ModelParams, batch: &LabeledBatch) -> Result<ModelParams> {
    Ok(loss_and_gradient(params, batch)?.1)
}

pub fn loss_and_gradient(params: &ModelParams, batch: &LabeledBatch) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(SimError::EmptyBatch);
    }
    if params.output_activation() != OutputActivation::Softmax
        || params.output_width() != NUM_CLASSES
    {
        return Err(SimError::ShapeMismatch {
            expected: format!("softmax output over {NUM_CLASSES} classes"),
            actual: format!(
                "{:?} output of width {}",
                params.output_activation(),
                params.output_width()
            ),
        });
    }
    let trace = params.forward_batch(batch.inputs())?;
    let loss = mean_nll(&trace.output, batch.labels());
    let n = batch.len() as f64;
    // d(mean CE)/d logits = (p - onehot) / n; the log floor only bites when a
    // probability underflows, where the exact gradient is used regardless.
    let mut d_logits = trace.output.clone();
    for (i, &y) in batch.labels().iter().enumerate() {
        d_logits[[i, y]] -= 1.0;
    }
    d_logits /= n;
    let (grad, _) = params.backward(&trace, d_logits);
    Ok((loss, grad))
}

/// `w <- w - eta * grad`.
pub fn sgd_step(params: &ModelParams, grad: &ModelParams, eta: f64) -> Result<ModelParams> {
    if !(eta >= 0.0) {
        return Err(invalid(
            "eta",
            format!("learning rate must be non-negative, got {eta}"),
        ));
    }
    params.lincomb(1.0, grad, -eta)
}

/// Settings for one vehicle's local training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTraining {
    pub rounds: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

/// Runs `rounds` shuffled mini-batch passes over `data` starting from
/// `start`, then reports the loss of the resulting model on `data`.
pub fn local_train(
    start: &ModelParams,
    data: &LabeledBatch,
    settings: &LocalTraining,
    seed: u64,
) -> Result<(ModelParams, f64)> {
    if data.is_empty() {
        return Err(SimError::EmptyBatch);
    }
    if settings.rounds == 0 {
        return Err(invalid("local_rounds", "must be at least 1"));
    }
    if settings.batch_size == 0 {
        return Err(invalid("local_batch_size", "must be at least 1"));
    }
    let mut params = start.clone();
    if settings.learning_rate > 0.0 {
        let mut rng = stream(seed, &[crate::rng::tag::LOCAL_TRAIN]);
        let mut order: Vec<usize> = (0..data.len()).collect();
        for _ in 0..settings.rounds {
            order.shuffle(&mut rng);
            for chunk in order.chunks(settings.batch_size) {
                let grad = gradient(&params, &data.select(chunk))?;
                params = sgd_step(&params, &grad, settings.learning_rate)?;
            }
        }
    }
    let loss = cross_entropy_loss(&params, data)?;
    Ok((params, loss))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub error_rate: f64,
}

/// Argmax accuracy; ties go to the lowest class index.
pub fn evaluate(params: &ModelParams, test: &LabeledBatch) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(SimError::EmptyBatch);
    }
    let trace = params.forward_batch(test.inputs())?;
    let correct = trace
        .output
        .rows()
        .into_iter()
        .zip(test.labels())
        .filter(|(row, &y)| argmax(row.iter().copied()) == y)
        .count();
    let accuracy = correct as f64 / test.len() as f64;
    Ok(Evaluation {
        accuracy,
        error_rate: 1.0 - accuracy,
    })
}

pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Model size used for upload delays. A scenario constant rather than a
/// measured size.
pub fn model_size_bits(_params: &ModelParams, configured_bits: f64) -> f64 {
    configured_bits
}
