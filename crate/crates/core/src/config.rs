//! Run configuration: a flat `key = value` text file.
//!
//! Missing keys take their defaults, unknown keys are rejected and every
//! range violation names the offending key. `#` starts a comment.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::channel::LinkBudget;
use crate::data::AttackKind;
use crate::error::{Result, SimError};

/// Which vehicles' local losses enter the per-slot average loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossAverage {
    /// Every selected vehicle that finished training, rejected or not.
    AllReported,
    /// Only uploads that passed the threshold filter.
    AcceptedOnly,
}

trait ConfigValue: Sized {
    fn parse(raw: &str) -> std::result::Result<Self, String>;
    fn render(&self) -> String;
}

impl ConfigValue for f64 {
    fn parse(raw: &str) -> std::result::Result<Self, String> {
        let v: f64 = raw
            .parse()
            .map_err(|e| format!("`{raw}` is not a number: {e}"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("`{raw}` is not finite"))
        }
    }
    fn render(&self) -> String {
        format!("{self:?}")
    }
}

impl ConfigValue for usize {
    fn parse(raw: &str) -> std::result::Result<Self, String> {
        raw.parse()
            .map_err(|e| format!("`{raw}` is not a non-negative integer: {e}"))
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for u64 {
    fn parse(raw: &str) -> std::result::Result<Self, String> {
        raw.parse()
            .map_err(|e| format!("`{raw}` is not a non-negative integer: {e}"))
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for bool {
    fn parse(raw: &str) -> std::result::Result<Self, String> {
        match raw {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(format!("`{raw}` is not true/false")),
        }
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for String {
    fn parse(raw: &str) -> std::result::Result<Self, String> {
        Ok(raw.to_string())
    }
    fn render(&self) -> String {
        self.clone()
    }
}

impl ConfigValue for Option<usize> {
    fn parse(raw: &str) -> std::result::Result<Self, String> {
        if raw == "none" {
            Ok(None)
        } else {
            usize::parse(raw).map(Some)
        }
    }
    fn render(&self) -> String {
        self.map_or_else(|| "none".to_string(), |v| v.to_string())
    }
}

impl ConfigValue for Vec<usize> {
    fn parse(raw: &str) -> std::result::Result<Self, String> {
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',').map(|s| usize::parse(s.trim())).collect()
    }
    fn render(&self) -> String {
        self.iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl ConfigValue for AttackKind {
    fn parse(raw: &str) -> std::result::Result<Self, String> {
        raw.parse()
    }
    fn render(&self) -> String {
        self.as_str().to_string()
    }
}

impl ConfigValue for LossAverage {
    fn parse(raw: &str) -> std::result::Result<Self, String> {
        match raw {
            "all" => Ok(LossAverage::AllReported),
            "accepted" => Ok(LossAverage::AcceptedOnly),
            _ => Err(format!("expected all or accepted, got `{raw}`")),
        }
    }
    fn render(&self) -> String {
        match self {
            LossAverage::AllReported => "all".into(),
            LossAverage::AcceptedOnly => "accepted".into(),
        }
    }
}

macro_rules! sim_config {
    ($( $(#[doc = $doc:literal])* $field:ident : $ty:ty = $default:expr ),* $(,)?) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct SimConfig {
            $( $(#[doc = $doc])* pub $field: $ty, )*
        }

        impl Default for SimConfig {
            fn default() -> Self {
                Self { $( $field: $default, )* }
            }
        }

        impl SimConfig {
            pub const KEYS: &'static [&'static str] = &[$( stringify!($field) ),*];

            /// Sets one key from its textual value without range validation.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $( stringify!($field) => {
                        self.$field = <$ty as ConfigValue>::parse(value)
                            .map_err(|reason| SimError::Config { key: key.to_string(), reason })?;
                    } )*
                    _ => {
                        return Err(SimError::Config {
                            key: key.to_string(),
                            reason: "unknown key".into(),
                        })
                    }
                }
                Ok(())
            }

            /// `(key, rendered value)` pairs in declaration order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$( (stringify!($field), ConfigValue::render(&self.$field)) ),*]
            }
        }
    };
}

sim_config! {
    /// Vehicle speed v (m/s).
    velocity: f64 = 20.0,
    /// Slot length (s).
    slot_duration: f64 = 0.5,
    /// Number of vehicles K.
    num_vehicles: usize = 5,
    /// DDPG mini-batch size I.
    minibatch_size: usize = 64,
    /// Vehicle transmit power p_0 (W).
    tx_power_w: f64 = 0.25,
    /// Training episodes E_m.
    train_episodes: usize = 1000,
    /// Noise power sigma^2 in mW, as tabulated; converted to W internally.
    noise_power_mw: f64 = 1e-9,
    /// Testing episodes E_m'.
    test_episodes: usize = 3,
    /// RSU antenna height H_R (m).
    antenna_height: f64 = 10.0,
    /// Uplink bandwidth B (Hz).
    bandwidth_hz: f64 = 1000.0,
    /// Local model size |w| (bits).
    model_bits: f64 = 5000.0,
    /// Discount factor.
    gamma: f64 = 0.99,
    /// Path-loss exponent alpha.
    path_loss_exp: f64 = 2.0,
    /// CPU cycles per training sample C_0.
    cpu_cycles_per_sample: f64 = 1e6,
    /// Local-training staleness base M_1.
    m1: f64 = 0.9,
    /// Target-network soft update rate.
    tau: f64 = 0.001,
    /// Upload staleness base M_2.
    m2: f64 = 0.9,
    /// Lateral lane offset d_y (m).
    lane_offset: f64 = 5.0,
    /// Threshold filter factor beta_R.
    beta_r: f64 = 1.25,
    /// Carrier wavelength (m). 7 m is unusually long for vehicular bands but
    /// is kept as tabulated.
    wavelength: f64 = 7.0,

    /// Master seed; every random stream is derived from it.
    seed: u64 = 1,
    /// Slots per episode N.
    slots_per_episode: usize = 20,
    /// Reward weight on the average loss.
    w1: f64 = 1.0,
    /// Reward weight on the mean delay.
    w2: f64 = 1.0,
    /// Local SGD learning rate eta.
    local_lr: f64 = 0.1,
    /// Local training passes L.
    local_rounds: usize = 5,
    /// Local mini-batch size.
    local_batch_size: usize = 32,
    /// Aggregation ratio beta.
    aggregation_beta: f64 = 0.5,
    actor_lr: f64 = 1e-4,
    critic_lr: f64 = 1e-3,
    replay_capacity: usize = 100_000,
    /// Lower clip for admission probabilities.
    lambda_floor: f64 = 0.01,
    ou_theta: f64 = 0.15,
    /// Variance of the OU innovation (sigma^2).
    ou_variance: f64 = 0.02,
    actor_hidden: Vec<usize> = vec![400, 300],
    critic_hidden: Vec<usize> = vec![400, 300],
    classifier_hidden: Vec<usize> = vec![32],
    /// Truncated-Gaussian compute capacity (cycles/s) of a normal vehicle;
    /// the support is mean +- 2 std.
    compute_mean: f64 = 2e9,
    compute_std: f64 = 5e8,
    /// Index of the low-quality vehicle, or `none`.
    bad_vehicle: Option<usize> = None,
    /// Bad vehicle shard size relative to a normal shard.
    bad_shard_fraction: f64 = 0.25,
    /// Bad vehicle compute mean and std relative to a normal vehicle.
    bad_compute_fraction: f64 = 0.25,
    /// Std of the Gaussian noise added to the bad vehicle's model.
    bad_noise_scale: f64 = 0.5,
    shard_size: usize = 200,
    rsu_shard_size: usize = 200,
    test_set_size: usize = 1000,
    /// `synthetic` or a path to a `label, f1, ..., fd` CSV file.
    dataset: String = "synthetic".to_string(),
    dataset_features: usize = 16,
    /// Per-feature noise std of the synthetic clusters.
    data_noise: f64 = 0.3,
    attack: AttackKind = AttackKind::None,
    attacked_vehicles: Vec<usize> = vec![0, 1],
    /// When false an attacked vehicle is poisoned in each slot with
    /// probability 1/2.
    attack_persistent: bool = true,
    loss_average: LossAverage = LossAverage::AcceptedOnly,
    /// Half-width of the RSU coverage along x (m); used to normalise positions.
    coverage_radius: f64 = 250.0,
    start_x_min: f64 = -150.0,
    start_x_max: f64 = -50.0,
    /// Keep training the RSU's trusted model across slots instead of starting
    /// each slot from the current global model.
    rsu_warm_start: bool = false,
}

impl SimConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| SimError::Parse {
                line: idx + 1,
                reason: format!("expected `key = value`, got `{line}`"),
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, value) in self.entries() {
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical text form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn noise_power_w(&self) -> f64 {
        self.noise_power_mw * 1e-3
    }

    pub fn link_budget(&self) -> Result<LinkBudget> {
        LinkBudget::new(
            self.bandwidth_hz,
            self.tx_power_w,
            self.noise_power_w(),
            self.path_loss_exp,
        )
    }

    pub fn ou_sigma(&self) -> f64 {
        self.ou_variance.sqrt()
    }

    pub fn bad_shard_size(&self) -> usize {
        ((self.shard_size as f64 * self.bad_shard_fraction).round() as usize).max(1)
    }

    pub fn shard_sizes(&self) -> Vec<usize> {
        (0..self.num_vehicles)
            .map(|id| {
                if self.bad_vehicle == Some(id) {
                    self.bad_shard_size()
                } else {
                    self.shard_size
                }
            })
            .collect()
    }

    /// Upper compute bound of a normal vehicle, used to normalise the state.
    pub fn compute_max(&self) -> f64 {
        self.compute_mean + 2.0 * self.compute_std
    }

    /// Attack of vehicle `id` under the current settings.
    pub fn attack_of(&self, id: usize) -> AttackKind {
        if self.attacked_vehicles.contains(&id) {
            self.attack
        } else {
            AttackKind::None
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn fail(key: &str, reason: impl Into<String>) -> Result<()> {
            Err(SimError::Config {
                key: key.to_string(),
                reason: reason.into(),
            })
        }
        let open_unit = [
            ("gamma", self.gamma),
            ("m1", self.m1),
            ("m2", self.m2),
            ("aggregation_beta", self.aggregation_beta),
        ];
        for (key, v) in open_unit {
            if !(v > 0.0 && v < 1.0) {
                return fail(key, format!("must lie in (0, 1), got {v}"));
            }
        }
        if !(self.tau > 0.0 && self.tau <= 0.1) {
            return fail("tau", format!("must lie in (0, 0.1], got {}", self.tau));
        }
        let positive = [
            ("velocity", self.velocity),
            ("slot_duration", self.slot_duration),
            ("tx_power_w", self.tx_power_w),
            ("noise_power_mw", self.noise_power_mw),
            ("antenna_height", self.antenna_height),
            ("bandwidth_hz", self.bandwidth_hz),
            ("model_bits", self.model_bits),
            ("path_loss_exp", self.path_loss_exp),
            ("cpu_cycles_per_sample", self.cpu_cycles_per_sample),
            ("beta_r", self.beta_r),
            ("wavelength", self.wavelength),
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("compute_mean", self.compute_mean),
            ("coverage_radius", self.coverage_radius),
            ("bad_shard_fraction", self.bad_shard_fraction),
            ("bad_compute_fraction", self.bad_compute_fraction),
        ];
        for (key, v) in positive {
            if !(v > 0.0) {
                return fail(key, format!("must be positive, got {v}"));
            }
        }
        let non_negative = [
            ("w1", self.w1),
            ("w2", self.w2),
            ("local_lr", self.local_lr),
            ("compute_std", self.compute_std),
            ("bad_noise_scale", self.bad_noise_scale),
            ("data_noise", self.data_noise),
        ];
        for (key, v) in non_negative {
            if !(v >= 0.0) {
                return fail(key, format!("must be non-negative, got {v}"));
            }
        }
        if self.compute_mean - 2.0 * self.compute_std <= 0.0 {
            return fail(
                "compute_std",
                "truncation window mean - 2 std must stay positive",
            );
        }
        if !(self.ou_theta > 0.0 && self.ou_theta <= 1.0) {
            return fail(
                "ou_theta",
                format!("must lie in (0, 1], got {}", self.ou_theta),
            );
        }
        if !(self.ou_variance >= 0.0) {
            return fail("ou_variance", "must be non-negative");
        }
        if !(self.lambda_floor > 0.0 && self.lambda_floor < 0.5) {
            return fail("lambda_floor", "must lie in (0, 0.5)");
        }
        let counts = [
            ("num_vehicles", self.num_vehicles),
            ("minibatch_size", self.minibatch_size),
            ("slots_per_episode", self.slots_per_episode),
            ("local_rounds", self.local_rounds),
            ("local_batch_size", self.local_batch_size),
            ("shard_size", self.shard_size),
            ("rsu_shard_size", self.rsu_shard_size),
            ("test_set_size", self.test_set_size),
            ("dataset_features", self.dataset_features),
        ];
        for (key, v) in counts {
            if v == 0 {
                return fail(key, "must be at least 1");
            }
        }
        if self.replay_capacity < self.minibatch_size {
            return fail("replay_capacity", "must be at least minibatch_size");
        }
        for (key, layers) in [
            ("actor_hidden", &self.actor_hidden),
            ("critic_hidden", &self.critic_hidden),
            ("classifier_hidden", &self.classifier_hidden),
        ] {
            if layers.contains(&0) {
                return fail(key, "hidden widths must be positive");
            }
        }
        if let Some(bad) = self.bad_vehicle {
            if bad >= self.num_vehicles {
                return fail("bad_vehicle", format!("{bad} is not a vehicle index"));
            }
        }
        if let Some(&v) = self
            .attacked_vehicles
            .iter()
            .find(|&&v| v >= self.num_vehicles)
        {
            return fail("attacked_vehicles", format!("{v} is not a vehicle index"));
        }
        if self.start_x_min > self.start_x_max {
            return fail("start_x_min", "must not exceed start_x_max");
        }
        Ok(())
    }
}
