//! Discrete Ornstein-Uhlenbeck exploration noise.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::rng::SimRng;

/// One step `n - theta * n + sigma * eps` per component, `eps ~ N(0, 1)`.
pub fn ou_step<R: Rng + ?Sized>(
    prev: &[f64],
    theta: f64,
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(invalid(
            "ou_theta",
            format!("must lie in (0, 1], got {theta}"),
        ));
    }
    if !(sigma >= 0.0) {
        return Err(invalid(
            "ou_sigma",
            format!("must be non-negative, got {sigma}"),
        ));
    }
    Ok(prev
        .iter()
        .map(|&n| {
            let eps: f64 = rng.sample(StandardNormal);
            n - theta * n + sigma * eps
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct OuNoise {
    state: Vec<f64>,
    theta: f64,
    sigma: f64,
    rng: SimRng,
}

impl OuNoise {
    pub fn new(dim: usize, theta: f64, sigma: f64, rng: SimRng) -> Result<Self> {
        // Validate eagerly so a bad config fails before training starts.
        ou_step(&[], theta, sigma, &mut rng.clone())?;
        Ok(Self {
            state: vec![0.0; dim],
            theta,
            sigma,
            rng,
        })
    }

    pub fn reset(&mut self) {
        self.state.iter_mut().for_each(|n| *n = 0.0);
    }

    pub fn sample(&mut self) -> &[f64] {
        self.state = ou_step(&self.state, self.theta, self.sigma, &mut self.rng)
            .expect("parameters validated in new");
        &self.state
    }

    pub fn rng(&self) -> &SimRng {
        &self.rng
    }

    /// Variance the process settles to: `sigma^2 / (2 theta - theta^2)`.
    pub fn stationary_variance(&self) -> f64 {
        self.sigma * self.sigma / (2.0 * self.theta - self.theta * self.theta)
    }
}
