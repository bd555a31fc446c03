//! Dataset generation and loading, partitioning across vehicles and the RSU,
//! Byzantine data attacks and bad-node model degradation.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Result, SimError};
use crate::model::{LabeledBatch, ModelParams, NUM_CLASSES};
use crate::rng::{stream, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum AttackKind {
    #[default]
    None,
    ClassFlip,
    DataFlip,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::ClassFlip => "class_flip",
            AttackKind::DataFlip => "data_flip",
        }
    }

    pub fn apply(self, batch: &LabeledBatch) -> Result<LabeledBatch> {
        match self {
            AttackKind::None => Ok(batch.clone()),
            AttackKind::ClassFlip => class_flip(batch),
            AttackKind::DataFlip => data_flip(batch),
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "none" => Ok(AttackKind::None),
            "class_flip" => Ok(AttackKind::ClassFlip),
            "data_flip" => Ok(AttackKind::DataFlip),
            other => Err(format!(
                "expected none, class_flip or data_flip, got `{other}`"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShardOwner {
    Vehicle(usize),
    Rsu,
}

/// A vehicle's or the RSU's local data.
#[derive(Debug, Clone)]
pub struct DataShard {
    owner: ShardOwner,
    clean: LabeledBatch,
    batch: LabeledBatch,
    attack: AttackKind,
    bad_node: bool,
}

impl DataShard {
    pub fn vehicle(
        id: usize,
        clean: LabeledBatch,
        attack: AttackKind,
        bad_node: bool,
    ) -> Result<Self> {
        let batch = attack.apply(&clean)?;
        Ok(Self {
            owner: ShardOwner::Vehicle(id),
            clean,
            batch,
            attack,
            bad_node,
        })
    }

    /// The trusted RSU shard is never attacked.
    pub fn rsu(batch: LabeledBatch) -> Self {
        Self {
            owner: ShardOwner::Rsu,
            clean: batch.clone(),
            batch,
            attack: AttackKind::None,
            bad_node: false,
        }
    }

    pub fn owner(&self) -> ShardOwner {
        self.owner
    }

    /// Data the owner trains on (post-attack when attacked).
    pub fn batch(&self) -> &LabeledBatch {
        &self.batch
    }

    pub fn clean(&self) -> &LabeledBatch {
        &self.clean
    }

    pub fn attack(&self) -> AttackKind {
        self.attack
    }

    pub fn bad_node(&self) -> bool {
        self.bad_node
    }

    pub fn len(&self) -> usize {
        self.batch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batch.is_empty()
    }
}

/// Gaussian clusters around random class prototypes, clipped to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticDigits {
    pub num_features: usize,
    pub noise: f64,
}

impl SyntheticDigits {
    pub fn generate(&self, samples: usize, seed: u64) -> Result<LabeledBatch> {
        if self.num_features == 0 {
            return Err(invalid("dataset_features", "must be positive"));
        }
        if !(self.noise >= 0.0) {
            return Err(invalid("data_noise", "must be non-negative"));
        }
        let mut proto_rng = stream(seed, &[tag::DATASET, 0]);
        let prototypes: Vec<Vec<f64>> = (0..NUM_CLASSES)
            .map(|_| {
                (0..self.num_features)
                    .map(|_| proto_rng.random_range(0.15..0.85))
                    .collect()
            })
            .collect();
        let mut rng = stream(seed, &[tag::DATASET, 1]);
        let normal =
            Normal::new(0.0, self.noise).map_err(|e| invalid("data_noise", e.to_string()))?;
        let mut inputs = Array2::zeros((samples, self.num_features));
        let mut labels = Vec::with_capacity(samples);
        for (i, mut row) in inputs.rows_mut().into_iter().enumerate() {
            let label = i % NUM_CLASSES;
            for (dst, &p) in row.iter_mut().zip(&prototypes[label]) {
                *dst = (p + normal.sample(&mut rng)).clamp(0.0, 1.0);
            }
            labels.push(label);
        }
        LabeledBatch::new(inputs, labels)
    }
}

/// Reads rows of `label, f1, ..., fd`. A first line whose label field is not
/// an integer is treated as a header.
pub fn load_csv(path: &Path) -> Result<LabeledBatch> {
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text)
}

pub fn parse_csv(text: &str) -> Result<LabeledBatch> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let first = fields.next().unwrap_or_default();
        let label: usize = match first.parse() {
            Ok(l) => l,
            Err(_) if idx == 0 => continue,
            Err(e) => {
                return Err(SimError::Parse {
                    line: idx + 1,
                    reason: format!("label `{first}`: {e}"),
                })
            }
        };
        let features = fields
            .map(|f| {
                f.parse::<f64>().map_err(|e| SimError::Parse {
                    line: idx + 1,
                    reason: format!("feature `{f}`: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        labels.push(label);
        rows.push(features);
    }
    LabeledBatch::from_rows(&rows, labels)
}

#[derive(Debug, Clone)]
pub struct Partition {
    pub vehicles: Vec<LabeledBatch>,
    pub rsu: LabeledBatch,
    pub unassigned: usize,
    /// The unassigned samples, in shuffled order.
    pub rest: LabeledBatch,
}

/// Shuffles the dataset and deals disjoint shards: vehicles first, then the
/// RSU, drawn the same way as a vehicle shard.
pub fn partition(
    dataset: &LabeledBatch,
    sizes: &[usize],
    rsu_size: usize,
    seed: u64,
) -> Result<Partition> {
    let needed = sizes.iter().sum::<usize>() + rsu_size;
    if needed > dataset.len() {
        return Err(SimError::InsufficientData {
            needed,
            available: dataset.len(),
        });
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut stream(seed, &[tag::PARTITION]));
    let mut cursor = 0;
    let mut take = |n: usize| {
        let shard = dataset.select(&order[cursor..cursor + n]);
        cursor += n;
        shard
    };
    let vehicles = sizes.iter().map(|&n| take(n)).collect();
    let rsu = take(rsu_size);
    Ok(Partition {
        vehicles,
        rsu,
        unassigned: dataset.len() - needed,
        rest: dataset.select(&order[needed..]),
    })
}

/// Label `y` becomes `9 - y`.
pub fn class_flip(batch: &LabeledBatch) -> Result<LabeledBatch> {
    if let Some(&label) = batch.labels().iter().find(|&&l| l >= NUM_CLASSES) {
        return Err(SimError::LabelOutOfRange {
            label,
            classes: NUM_CLASSES,
        });
    }
    Ok(batch.map_labels(|y| NUM_CLASSES - 1 - y))
}

/// Feature `a` becomes `1 - a`.
pub fn data_flip(batch: &LabeledBatch) -> Result<LabeledBatch> {
    if let Some(&value) = batch.inputs().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(SimError::FeatureOutOfRange { value });
    }
    Ok(batch.map_inputs(|a| 1.0 - a))
}

/// Adds independent zero-mean Gaussian noise of standard deviation
/// `noise_scale` to every parameter.
pub fn degrade_bad_node(params: &ModelParams, noise_scale: f64, seed: u64) -> Result<ModelParams> {
    if !(noise_scale >= 0.0) {
        return Err(invalid(
            "bad_noise_scale",
            format!("must be non-negative, got {noise_scale}"),
        ));
    }
    let mut out = params.clone();
    if noise_scale == 0.0 {
        return Ok(out);
    }
    let normal =
        Normal::new(0.0, noise_scale).map_err(|e| invalid("bad_noise_scale", e.to_string()))?;
    let mut rng = stream(seed, &[tag::BAD_NODE]);
    out.map_inplace(|v| *v += normal.sample(&mut rng));
    Ok(out)
}
