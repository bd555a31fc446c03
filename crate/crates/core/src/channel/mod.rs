//! Vehicle kinematics, RSU geometry, Doppler-correlated fading and uplink rates.
//!
//! Vehicles drive along the x-axis at a fixed lateral offset; the RSU antenna
//! sits at `(0, 0, H_R)`. Each vehicle's small-scale fading follows a first
//! order autoregression whose correlation is `J0(2 pi f_d dt)`.

mod bessel;

pub use bessel::bessel_j0;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{invalid, Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    /// RSU antenna at height `height` above the origin.
    pub fn rsu(height: f64) -> Result<Self> {
        if !(height > 0.0 && height.is_finite()) {
            return Err(invalid("antenna_height", "must be positive and finite"));
        }
        Ok(Self::new(0.0, 0.0, height))
    }

    /// Ground-level vehicle position.
    pub const fn vehicle(x: f64, lane_offset: f64) -> Self {
        Self::new(x, lane_offset, 0.0)
    }

    fn minus(&self, other: &Self) -> [f64; 3] {
        [self.x - other.x, self.y - other.y, self.z - other.z]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelState {
    pub gain: Complex64,
    pub rho: f64,
    pub doppler_hz: f64,
}

impl ChannelState {
    pub fn new(gain: Complex64, rho: f64, doppler_hz: f64) -> Result<Self> {
        if !(rho.abs() <= 1.0) {
            return Err(invalid("rho", format!("|rho| must be <= 1, got {rho}")));
        }
        Ok(Self {
            gain,
            rho,
            doppler_hz,
        })
    }

    /// Initial state drawn from the stationary distribution.
    pub fn stationary<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            gain: complex_gaussian(rng),
            rho: 1.0,
            doppler_hz: 0.0,
        }
    }

    /// Power gain `|h|^2`.
    pub fn power(&self) -> f64 {
        self.gain.norm_sqr()
    }

    /// Re-derives the correlation from a new Doppler shift, keeping the gain.
    pub fn retune(&mut self, doppler_hz: f64, slot_duration: f64) {
        self.doppler_hz = doppler_hz;
        self.rho = channel_correlation(doppler_hz, slot_duration);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    pub bandwidth_hz: f64,
    pub tx_power_w: f64,
    pub noise_power_w: f64,
    pub path_loss_exp: f64,
}

impl LinkBudget {
    pub fn new(
        bandwidth_hz: f64,
        tx_power_w: f64,
        noise_power_w: f64,
        path_loss_exp: f64,
    ) -> Result<Self> {
        for (name, v) in [
            ("bandwidth_hz", bandwidth_hz),
            ("tx_power_w", tx_power_w),
            ("noise_power_w", noise_power_w),
            ("path_loss_exp", path_loss_exp),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be positive, got {v}")));
            }
        }
        Ok(Self {
            bandwidth_hz,
            tx_power_w,
            noise_power_w,
            path_loss_exp,
        })
    }
}

/// Unit-variance circularly-symmetric complex Gaussian.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// x-coordinate after `slot_index` slots of constant-velocity travel.
pub fn advance_position(start_x: f64, velocity: f64, slot_index: usize, slot_duration: f64) -> f64 {
    start_x + velocity * (slot_index as f64 * slot_duration)
}

pub fn distance_to_rsu(vehicle: &Position3, rsu: &Position3) -> f64 {
    let [dx, dy, dz] = vehicle.minus(rsu);
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Cosine of the angle between the direction of travel `(1, 0, 0)` and the
/// uplink direction `rsu - vehicle`.
pub fn cos_uplink_angle(vehicle: &Position3, rsu: &Position3) -> Result<f64> {
    let [dx, dy, dz] = rsu.minus(vehicle);
    let norm = (dx * dx + dy * dy + dz * dz).sqrt();
    if norm == 0.0 {
        return Err(SimError::DegenerateGeometry(
            "vehicle coincides with the RSU antenna".into(),
        ));
    }
    Ok((dx / norm).clamp(-1.0, 1.0))
}

/// Doppler shift in Hz; negative while receding.
pub fn doppler_freq(velocity: f64, wavelength: f64, cos_theta: f64) -> f64 {
    velocity / wavelength * cos_theta
}

/// Lag-one correlation of the fading process over one slot.
pub fn channel_correlation(doppler_hz: f64, slot_duration: f64) -> f64 {
    bessel_j0(2.0 * PI * doppler_hz * slot_duration)
}

/// One AR(1) step: `h' = rho h + e sqrt(1 - rho^2)`.
pub fn evolve_channel(prev: &ChannelState, innovation: Complex64) -> ChannelState {
    let scale = (1.0 - prev.rho * prev.rho).max(0.0).sqrt();
    ChannelState {
        gain: prev.gain * prev.rho + innovation * scale,
        ..*prev
    }
}

/// Shannon rate in bit/s using `|gain|^2` as the power gain.
pub fn transmission_rate(link: &LinkBudget, gain: Complex64, distance: f64) -> Result<f64> {
    if !(distance > 0.0) {
        return Err(SimError::DegenerateGeometry(format!(
            "distance must be positive, got {distance}"
        )));
    }
    let snr =
        link.tx_power_w * gain.norm_sqr() * distance.powf(-link.path_loss_exp) / link.noise_power_w;
    Ok(link.bandwidth_hz * (1.0 + snr).log2())
}
