//! Per-episode vehicular environment: positions, fading, compute draws and
//! the resulting uplink rates, advanced one slot at a time.
//!
//! All randomness comes from per-vehicle streams keyed by
//! `(seed, stage, episode, vehicle, purpose)`, so the realization of an
//! episode does not depend on which vehicles a scheme selected.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::channel::{
    advance_position, channel_correlation, complex_gaussian, cos_uplink_angle, distance_to_rsu,
    doppler_freq, evolve_channel, transmission_rate, ChannelState, LinkBudget, Position3,
};
use crate::config::SimConfig;
use crate::error::{invalid, Result};
use crate::rng::{stream, tag, SimRng};

/// Gaussian restricted to `[min, max]` by rejection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedGaussian {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl TruncatedGaussian {
    /// Support `mean +- 2 std`.
    pub fn two_sigma(mean: f64, std: f64) -> Result<Self> {
        Self::new(mean, std, mean - 2.0 * std, mean + 2.0 * std)
    }

    pub fn new(mean: f64, std: f64, min: f64, max: f64) -> Result<Self> {
        if !(std >= 0.0 && min <= mean && mean <= max && min > 0.0) {
            return Err(invalid(
                "compute",
                format!("bad truncated Gaussian {mean} +- {std} on [{min}, {max}]"),
            ));
        }
        Ok(Self {
            mean,
            std,
            min,
            max,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.std == 0.0 {
            return self.mean;
        }
        let normal = Normal::new(self.mean, self.std).expect("std checked non-negative");
        // Window is at least +-2 std wide in practice, so rejection is cheap;
        // the cap only guards against pathological hand-built windows.
        for _ in 0..1000 {
            let v = normal.sample(rng);
            if (self.min..=self.max).contains(&v) {
                return v;
            }
        }
        self.mean
    }
}

/// Static description of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleSpec {
    pub id: usize,
    pub data_count: usize,
    pub compute: TruncatedGaussian,
    pub bad_node: bool,
}

impl VehicleSpec {
    pub fn from_config(cfg: &SimConfig) -> Result<Vec<Self>> {
        let sizes = cfg.shard_sizes();
        (0..cfg.num_vehicles)
            .map(|id| {
                let bad_node = cfg.bad_vehicle == Some(id);
                let scale = if bad_node {
                    cfg.bad_compute_fraction
                } else {
                    1.0
                };
                Ok(Self {
                    id,
                    data_count: sizes[id],
                    compute: TruncatedGaussian::two_sigma(
                        cfg.compute_mean * scale,
                        cfg.compute_std * scale,
                    )?,
                    bad_node,
                })
            })
            .collect()
    }
}

/// What the RSU observes about a vehicle in the current slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleProfile {
    pub id: usize,
    pub data_count: usize,
    /// CPU cycles per second.
    pub compute: f64,
    /// Uplink rate in bits per second.
    pub rate: f64,
    pub position: Position3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldParams {
    pub link: LinkBudget,
    pub rsu: Position3,
    pub velocity: f64,
    pub slot_duration: f64,
    pub wavelength: f64,
    pub lane_offset: f64,
    pub start_x_min: f64,
    pub start_x_max: f64,
}

impl WorldParams {
    pub fn from_config(cfg: &SimConfig) -> Result<Self> {
        Ok(Self {
            link: cfg.link_budget()?,
            rsu: Position3::rsu(cfg.antenna_height)?,
            velocity: cfg.velocity,
            slot_duration: cfg.slot_duration,
            wavelength: cfg.wavelength,
            lane_offset: cfg.lane_offset,
            start_x_min: cfg.start_x_min,
            start_x_max: cfg.start_x_max,
        })
    }
}

#[derive(Debug, Clone)]
struct VehicleState {
    spec: VehicleSpec,
    start_x: f64,
    channel: ChannelState,
    compute: f64,
    rate: f64,
    channel_rng: SimRng,
    compute_rng: SimRng,
}

#[derive(Debug, Clone)]
pub struct World {
    params: WorldParams,
    vehicles: Vec<VehicleState>,
    slot: usize,
}

impl World {
    /// Slot-0 state of episode `episode` in stage `stage`.
    pub fn new(
        params: WorldParams,
        specs: &[VehicleSpec],
        seed: u64,
        stage: u64,
        episode: u64,
    ) -> Result<Self> {
        if specs.is_empty() {
            return Err(invalid("num_vehicles", "world needs at least one vehicle"));
        }
        let start = Uniform::new_inclusive(params.start_x_min, params.start_x_max)
            .map_err(|e| invalid("start_x_min", e.to_string()))?;
        let vehicles = specs
            .iter()
            .map(|spec| {
                let key = |purpose| [stage, episode, spec.id as u64, purpose];
                let start_x = start.sample(&mut stream(seed, &key(tag::POSITION)));
                let mut channel_rng = stream(seed, &key(tag::CHANNEL));
                let mut compute_rng = stream(seed, &key(tag::COMPUTE));
                let channel = ChannelState::stationary(&mut channel_rng);
                let compute = spec.compute.sample(&mut compute_rng);
                Ok(VehicleState {
                    spec: *spec,
                    start_x,
                    channel,
                    compute,
                    rate: 0.0,
                    channel_rng,
                    compute_rng,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut world = Self {
            params,
            vehicles,
            slot: 0,
        };
        world.refresh()?;
        Ok(world)
    }

    pub fn slot(&self) -> usize {
        self.slot
    }

    pub fn num_vehicles(&self) -> usize {
        self.vehicles.len()
    }

    pub fn params(&self) -> &WorldParams {
        &self.params
    }

    fn position_of(&self, v: &VehicleState) -> Position3 {
        let x = advance_position(
            v.start_x,
            self.params.velocity,
            self.slot,
            self.params.slot_duration,
        );
        Position3::vehicle(x, self.params.lane_offset)
    }

    /// Recomputes correlation and rate for the current positions.
    fn refresh(&mut self) -> Result<()> {
        let p = self.params;
        for i in 0..self.vehicles.len() {
            let pos = self.position_of(&self.vehicles[i]);
            let v = &mut self.vehicles[i];
            let cos = cos_uplink_angle(&pos, &p.rsu)?;
            v.channel
                .retune(doppler_freq(p.velocity, p.wavelength, cos), p.slot_duration);
            v.rate = transmission_rate(&p.link, v.channel.gain, distance_to_rsu(&pos, &p.rsu))?;
        }
        Ok(())
    }

    /// Moves to the next slot: fading evolves with the correlation of the
    /// position it was tuned at, every vehicle moves, compute is redrawn and
    /// rates are recomputed.
    pub fn advance(&mut self) -> Result<()> {
        for v in &mut self.vehicles {
            let innovation = complex_gaussian(&mut v.channel_rng);
            v.channel = evolve_channel(&v.channel, innovation);
            v.compute = v.spec.compute.sample(&mut v.compute_rng);
        }
        self.slot += 1;
        self.refresh()
    }

    pub fn profiles(&self) -> Vec<VehicleProfile> {
        self.vehicles
            .iter()
            .map(|v| VehicleProfile {
                id: v.spec.id,
                data_count: v.spec.data_count,
                compute: v.compute,
                rate: v.rate,
                position: self.position_of(v),
            })
            .collect()
    }

    pub fn channels(&self) -> Vec<ChannelState> {
        self.vehicles.iter().map(|v| v.channel).collect()
    }

    /// Correlation a vehicle at `x` would see; exposed for diagnostics.
    pub fn correlation_at(&self, x: f64) -> Result<f64> {
        let p = &self.params;
        let cos = cos_uplink_angle(&Position3::vehicle(x, p.lane_offset), &p.rsu)?;
        Ok(channel_correlation(
            doppler_freq(p.velocity, p.wavelength, cos),
            p.slot_duration,
        ))
    }
}
