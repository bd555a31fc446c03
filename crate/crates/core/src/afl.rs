//! Asynchronous federated aggregation at the RSU.
//!
//! Each selected vehicle trains from the slot-start global snapshot, reports
//! its loss and delays, and its staleness-weighted model is folded into the
//! global model in arrival order. With the defense on, the RSU first trains a
//! trusted model on its clean shard and drops any upload whose loss exceeds
//! `beta_r` times the trusted loss.

use crate::config::{LossAverage, SimConfig};
use crate::data::{degrade_bad_node, DataShard};
use crate::error::{invalid, Result, SimError};
use crate::model::{local_train, LocalTraining, ModelParams};
use crate::rng::{derive, tag};
use crate::world::VehicleProfile;

/// `D * C0 / mu` seconds of on-board training.
pub fn local_training_delay(
    data_count: usize,
    cpu_cycles_per_sample: f64,
    compute: f64,
) -> Result<f64> {
    if !(compute > 0.0) {
        return Err(invalid(
            "compute",
            format!("must be positive, got {compute}"),
        ));
    }
    Ok(data_count as f64 * cpu_cycles_per_sample / compute)
}

/// `|w| / R` seconds of upload; a zero rate yields `f64::INFINITY`, meaning
/// the vehicle cannot upload in this slot.
pub fn upload_delay(model_bits: f64, rate: f64) -> Result<f64> {
    if rate.is_nan() || rate < 0.0 {
        return Err(invalid("rate", format!("must be non-negative, got {rate}")));
    }
    if rate == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(model_bits / rate)
}

/// `m^(delay - 0.5)`: 1 at half a second, shrinking as the delay grows.
pub fn staleness_weight(delay: f64, m: f64) -> Result<f64> {
    if !(m > 0.0 && m < 1.0) {
        return Err(invalid("m", format!("must lie in (0, 1), got {m}")));
    }
    if !(delay >= 0.0) {
        return Err(invalid(
            "delay",
            format!("must be non-negative, got {delay}"),
        ));
    }
    Ok(m.powf(delay - 0.5))
}

pub fn staleness_weight_local(t_local: f64, m1: f64) -> Result<f64> {
    staleness_weight(t_local, m1)
}

pub fn staleness_weight_tx(t_upload: f64, m2: f64) -> Result<f64> {
    staleness_weight(t_upload, m2)
}

/// `beta1 * beta2 * w_k`.
pub fn weighted_model(local: &ModelParams, w1: f64, w2: f64) -> Result<ModelParams> {
    if !(w1 > 0.0 && w2 > 0.0) {
        return Err(invalid(
            "weight",
            format!("weights must be positive, got ({w1}, {w2})"),
        ));
    }
    Ok(local.scaled(w1 * w2))
}

/// Accept iff `upload_loss <= beta_r * rsu_loss`; the boundary accepts.
pub fn threshold_filter(upload_loss: f64, rsu_loss: f64, beta_r: f64) -> Result<bool> {
    if !(upload_loss >= 0.0 && rsu_loss >= 0.0) {
        return Err(invalid(
            "loss",
            format!("losses must be non-negative, got ({upload_loss}, {rsu_loss})"),
        ));
    }
    if !(beta_r > 0.0) {
        return Err(invalid("beta_r", format!("must be positive, got {beta_r}")));
    }
    Ok(upload_loss <= beta_r * rsu_loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModel {
    pub params: ModelParams,
    pub update_count: u64,
}

impl GlobalModel {
    pub fn new(params: ModelParams) -> Self {
        Self {
            params,
            update_count: 0,
        }
    }

    /// In-place form of [`global_update`].
    pub fn absorb(&mut self, weighted: &ModelParams, beta: f64) -> Result<()> {
        check_beta(beta)?;
        self.params
            .zip_apply(weighted, |old, new| *old = beta * *old + (1.0 - beta) * new)?;
        self.update_count += 1;
        Ok(())
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta < 1.0 {
        Ok(())
    } else {
        Err(invalid(
            "aggregation_beta",
            format!("must lie in (0, 1), got {beta}"),
        ))
    }
}

/// A vehicle's contribution as the RSU receives it.
#[derive(Debug, Clone, PartialEq)]
pub struct Upload {
    pub vehicle_id: usize,
    pub weighted_model: ModelParams,
    pub local_loss: f64,
    pub t_local: f64,
    pub t_upload: f64,
    pub arrival_time: f64,
    pub beta1: f64,
    pub beta2: f64,
}

/// `beta * w_old + (1 - beta) * w_kw`.
pub fn global_update(global: &GlobalModel, upload: &Upload, beta: f64) -> Result<GlobalModel> {
    let mut next = global.clone();
    next.absorb(&upload.weighted_model, beta)?;
    Ok(next)
}

/// How uploads are combined into the global model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    /// Staleness-weighted asynchronous updates in arrival order.
    Weighted,
    /// Asynchronous updates with unit weights.
    PlainAsync,
    /// One equal-weight average once every upload has arrived.
    Synchronous,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotSettings {
    pub training: LocalTraining,
    pub cpu_cycles_per_sample: f64,
    pub model_bits: f64,
    pub m1: f64,
    pub m2: f64,
    pub beta: f64,
    pub beta_r: f64,
    pub aggregation: Aggregation,
    pub defense: bool,
    /// When false the local-training weight is pinned to 1.
    pub local_weight: bool,
    /// When false the transmission weight is pinned to 1.
    pub tx_weight: bool,
    pub loss_average: LossAverage,
    pub bad_noise_scale: f64,
    pub rsu_warm_start: bool,
}

impl SlotSettings {
    pub fn from_config(cfg: &SimConfig) -> Self {
        Self {
            training: LocalTraining {
                rounds: cfg.local_rounds,
                learning_rate: cfg.local_lr,
                batch_size: cfg.local_batch_size,
            },
            cpu_cycles_per_sample: cfg.cpu_cycles_per_sample,
            model_bits: cfg.model_bits,
            m1: cfg.m1,
            m2: cfg.m2,
            beta: cfg.aggregation_beta,
            beta_r: cfg.beta_r,
            aggregation: Aggregation::Weighted,
            defense: true,
            local_weight: true,
            tx_weight: true,
            loss_average: cfg.loss_average,
            bad_noise_scale: cfg.bad_noise_scale,
            rsu_warm_start: cfg.rsu_warm_start,
        }
    }
}

/// Per-slot view of the vehicles and their data. `shards[i]` and
/// `profiles[i]` belong to vehicle `i`.
#[derive(Debug, Clone, Copy)]
pub struct SlotInputs<'a> {
    pub profiles: &'a [VehicleProfile],
    pub shards: &'a [DataShard],
    pub rsu_shard: &'a DataShard,
    /// Seed for this slot's training streams.
    pub slot_seed: u64,
}

/// The RSU's trusted model, kept across slots only with warm starts.
#[derive(Debug, Clone, Default)]
pub struct RsuState {
    trusted: Option<ModelParams>,
}

impl RsuState {
    pub fn trusted(&self) -> Option<&ModelParams> {
        self.trusted.as_ref()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UploadRecord {
    pub vehicle_id: usize,
    pub local_loss: f64,
    pub t_local: f64,
    pub t_upload: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotOutcome {
    /// Mean of the reported local losses.
    pub avg_loss: f64,
    /// `(vehicle id, T_l + T_u)` for every vehicle that uploaded.
    pub delays: Vec<(usize, f64)>,
    /// Uploads in the order the RSU processed them.
    pub records: Vec<UploadRecord>,
    /// Selected vehicles that could not upload (zero rate).
    pub skipped: Vec<usize>,
    pub rsu_loss: Option<f64>,
    pub filter_calls: usize,
    pub accepted: usize,
    pub rejected: usize,
    /// Accepted uploads whose loss exceeded the threshold. Always zero; kept
    /// as an independent check on the aggregation path.
    pub filter_violations: usize,
}

impl SlotOutcome {
    pub fn mean_delay(&self) -> f64 {
        if self.delays.is_empty() {
            return 0.0;
        }
        self.delays.iter().map(|(_, d)| d).sum::<f64>() / self.delays.len() as f64
    }

    pub fn mean_betas(&self) -> (f64, f64) {
        if self.records.is_empty() {
            return (1.0, 1.0);
        }
        let n = self.records.len() as f64;
        (
            self.records.iter().map(|r| r.beta1).sum::<f64>() / n,
            self.records.iter().map(|r| r.beta2).sum::<f64>() / n,
        )
    }
}

fn vehicle_seed(slot_seed: u64, id: usize) -> u64 {
    derive(slot_seed, &[tag::LOCAL_TRAIN, id as u64])
}

/// Trains every selected vehicle from `snapshot` and builds its upload.
fn collect_uploads(
    snapshot: &ModelParams,
    selected: &[usize],
    inputs: &SlotInputs<'_>,
    s: &SlotSettings,
) -> Result<(Vec<Upload>, Vec<usize>)> {
    let mut uploads = Vec::with_capacity(selected.len());
    let mut skipped = Vec::new();
    for &id in selected {
        let (profile, shard) = match (inputs.profiles.get(id), inputs.shards.get(id)) {
            (Some(p), Some(d)) => (p, d),
            _ => return Err(invalid("selected", format!("vehicle {id} does not exist"))),
        };
        let t_upload = upload_delay(s.model_bits, profile.rate)?;
        if !t_upload.is_finite() {
            skipped.push(id);
            continue;
        }
        let t_local = local_training_delay(shard.len(), s.cpu_cycles_per_sample, profile.compute)?;
        let seed = vehicle_seed(inputs.slot_seed, id);
        let (mut local, mut loss) = local_train(snapshot, shard.batch(), &s.training, seed)?;
        if shard.bad_node() {
            local = degrade_bad_node(&local, s.bad_noise_scale, seed)?;
            loss = crate::model::cross_entropy_loss(&local, shard.batch())?;
        }
        let (beta1, beta2) = match s.aggregation {
            Aggregation::Weighted => (
                if s.local_weight {
                    staleness_weight_local(t_local, s.m1)?
                } else {
                    1.0
                },
                if s.tx_weight {
                    staleness_weight_tx(t_upload, s.m2)?
                } else {
                    1.0
                },
            ),
            Aggregation::PlainAsync | Aggregation::Synchronous => (1.0, 1.0),
        };
        uploads.push(Upload {
            vehicle_id: id,
            weighted_model: weighted_model(&local, beta1, beta2)?,
            local_loss: loss,
            t_local,
            t_upload,
            arrival_time: t_local + t_upload,
            beta1,
            beta2,
        });
    }
    // Total order: arrival time, then vehicle id.
    uploads.sort_by(|a, b| {
        a.arrival_time
            .total_cmp(&b.arrival_time)
            .then(a.vehicle_id.cmp(&b.vehicle_id))
    });
    Ok((uploads, skipped))
}

fn rsu_trusted_loss(
    snapshot: &ModelParams,
    inputs: &SlotInputs<'_>,
    s: &SlotSettings,
    rsu: &mut RsuState,
) -> Result<f64> {
    let start = match (&rsu.trusted, s.rsu_warm_start) {
        (Some(prev), true) => prev.clone(),
        _ => snapshot.clone(),
    };
    let seed = derive(inputs.slot_seed, &[tag::RSU_TRAIN]);
    let (trusted, loss) = local_train(&start, inputs.rsu_shard.batch(), &s.training, seed)?;
    rsu.trusted = Some(trusted);
    Ok(loss)
}

/// One slot of federated learning among `selected` vehicles.
pub fn run_afl_slot(
    global: &mut GlobalModel,
    selected: &[usize],
    inputs: &SlotInputs<'_>,
    s: &SlotSettings,
    rsu: &mut RsuState,
) -> Result<SlotOutcome> {
    if selected.is_empty() {
        return Err(SimError::EmptySelection);
    }
    if inputs.rsu_shard.attack() != crate::data::AttackKind::None || inputs.rsu_shard.bad_node() {
        return Err(invalid("rsu_shard", "the trusted shard must be clean"));
    }
    let snapshot = global.params.clone();
    let (uploads, skipped) = collect_uploads(&snapshot, selected, inputs, s)?;

    let rsu_loss = if s.defense {
        Some(rsu_trusted_loss(&snapshot, inputs, s, rsu)?)
    } else {
        None
    };

    let mut records = Vec::with_capacity(uploads.len());
    let mut filter_calls = 0;
    let mut filter_violations = 0;
    for up in &uploads {
        let accepted = match rsu_loss {
            Some(l_rsu) => {
                filter_calls += 1;
                threshold_filter(up.local_loss, l_rsu, s.beta_r)?
            }
            None => true,
        };
        records.push(UploadRecord {
            vehicle_id: up.vehicle_id,
            local_loss: up.local_loss,
            t_local: up.t_local,
            t_upload: up.t_upload,
            beta1: up.beta1,
            beta2: up.beta2,
            accepted,
        });
        if !accepted {
            continue;
        }
        if let Some(l_rsu) = rsu_loss {
            if up.local_loss > s.beta_r * l_rsu {
                filter_violations += 1;
            }
        }
        if s.aggregation != Aggregation::Synchronous {
            global.absorb(&up.weighted_model, s.beta)?;
        }
    }

    if s.aggregation == Aggregation::Synchronous {
        let accepted: Vec<&Upload> = uploads
            .iter()
            .zip(&records)
            .filter(|(_, r)| r.accepted)
            .map(|(u, _)| u)
            .collect();
        if !accepted.is_empty() {
            let models: Vec<&ModelParams> = accepted.iter().map(|u| &u.weighted_model).collect();
            global.params = average(&models)?;
            global.update_count += accepted.len() as u64;
        }
    }

    let accepted = records.iter().filter(|r| r.accepted).count();
    let reported: Vec<f64> = match s.loss_average {
        LossAverage::AcceptedOnly if accepted > 0 => records
            .iter()
            .filter(|r| r.accepted)
            .map(|r| r.local_loss)
            .collect(),
        _ => records.iter().map(|r| r.local_loss).collect(),
    };
    if reported.is_empty() {
        return Err(SimError::EmptySelection);
    }
    let avg_loss = reported.iter().sum::<f64>() / reported.len() as f64;
    Ok(SlotOutcome {
        avg_loss,
        delays: uploads
            .iter()
            .map(|u| (u.vehicle_id, u.arrival_time))
            .collect(),
        rejected: records.len() - accepted,
        accepted,
        records,
        skipped,
        rsu_loss,
        filter_calls,
        filter_violations,
    })
}

/// Equal-weight elementwise mean.
pub fn average(models: &[&ModelParams]) -> Result<ModelParams> {
    let (first, rest) = models.split_first().ok_or(SimError::EmptySelection)?;
    let mut sum = (*first).clone();
    for m in rest {
        sum.zip_apply(m, |a, b| *a += b)?;
    }
    Ok(sum.scaled(1.0 / models.len() as f64))
}

fn baseline_settings(s: &SlotSettings, aggregation: Aggregation) -> SlotSettings {
    SlotSettings {
        aggregation,
        defense: false,
        ..*s
    }
}

/// Traditional FL: every vehicle trains, the RSU averages once all arrive.
pub fn run_sync_fl_round(
    global: &mut GlobalModel,
    inputs: &SlotInputs<'_>,
    s: &SlotSettings,
) -> Result<SlotOutcome> {
    let all: Vec<usize> = (0..inputs.profiles.len()).collect();
    run_afl_slot(
        global,
        &all,
        inputs,
        &baseline_settings(s, Aggregation::Synchronous),
        &mut RsuState::default(),
    )
}

/// Plain AFL: every vehicle uploads, unit weights, no filtering.
pub fn run_plain_afl_round(
    global: &mut GlobalModel,
    inputs: &SlotInputs<'_>,
    s: &SlotSettings,
) -> Result<SlotOutcome> {
    let all: Vec<usize> = (0..inputs.profiles.len()).collect();
    run_afl_slot(
        global,
        &all,
        inputs,
        &baseline_settings(s, Aggregation::PlainAsync),
        &mut RsuState::default(),
    )
}
