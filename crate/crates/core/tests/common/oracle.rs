//! Arbitrary-precision re-derivations of the closed-form model equations.
//!
//! Each check draws [`CASES`] random valid inputs, evaluates the simulator in
//! `f64` and the same formula in 256-bit floating point, and reports the
//! largest relative error.

use astro_float::{BigFloat, Consts, RoundingMode};
use ddafl::afl::{
    local_training_delay, staleness_weight_local, staleness_weight_tx, upload_delay,
    weighted_model, GlobalModel,
};
use ddafl::channel::{
    advance_position, channel_correlation, cos_uplink_angle, distance_to_rsu, doppler_freq,
    transmission_rate, LinkBudget, Position3,
};
use ddafl::ddpg::{soft_update, target_value};
use ddafl::model::{cross_entropy_loss, LabeledBatch, ModelParams, OutputActivation};
use ddafl::rng::{stream, SimRng};
use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;

pub const CASES: usize = 100;
const P: usize = 256;
const RM: RoundingMode = RoundingMode::ToEven;

#[derive(Debug, Clone, Copy)]
pub struct Check {
    pub name: &'static str,
    pub max_rel_err: f64,
}

struct Big {
    cc: Consts,
}

impl Big {
    fn new() -> Self {
        Self {
            cc: Consts::new().expect("constant cache"),
        }
    }

    fn n(&self, x: f64) -> BigFloat {
        BigFloat::from_f64(x, P)
    }

    fn add(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.add(b, P, RM)
    }

    fn sub(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.sub(b, P, RM)
    }

    fn mul(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.mul(b, P, RM)
    }

    fn div(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.div(b, P, RM)
    }

    fn sqrt(&self, a: &BigFloat) -> BigFloat {
        a.sqrt(P, RM)
    }

    fn ln(&mut self, a: &BigFloat) -> BigFloat {
        a.ln(P, RM, &mut self.cc)
    }

    fn exp(&mut self, a: &BigFloat) -> BigFloat {
        a.exp(P, RM, &mut self.cc)
    }

    fn log2(&mut self, a: &BigFloat) -> BigFloat {
        a.log2(P, RM, &mut self.cc)
    }

    fn pi(&mut self) -> BigFloat {
        self.cc.pi(P, RM)
    }

    /// `base^e` as `exp(e ln base)` for positive `base`.
    fn powf(&mut self, base: &BigFloat, e: &BigFloat) -> BigFloat {
        let l = self.ln(base);
        let prod = self.mul(e, &l);
        self.exp(&prod)
    }

    fn sum(&self, terms: &[BigFloat]) -> BigFloat {
        terms.iter().fold(self.n(0.0), |acc, t| self.add(&acc, t))
    }
}

fn to_f64(x: &BigFloat) -> f64 {
    x.to_string()
        .parse()
        .expect("decimal rendering of a finite value")
}

fn rel(got: f64, exact: &BigFloat) -> f64 {
    let e = to_f64(exact);
    if e == 0.0 {
        got.abs()
    } else {
        ((got - e) / e).abs()
    }
}

fn rng_for(tag: u64) -> SimRng {
    stream(0x0AC1E, &[tag])
}

fn check(
    name: &'static str,
    tag: u64,
    mut case: impl FnMut(&mut SimRng, &mut Big) -> f64,
) -> Check {
    let mut rng = rng_for(tag);
    let mut big = Big::new();
    let max_rel_err = (0..CASES)
        .map(|_| case(&mut rng, &mut big))
        .fold(0.0, f64::max);
    Check { name, max_rel_err }
}

fn position_check() -> Check {
    check("vehicle position", 1, |rng, b| {
        let x0 = rng.random_range(-250.0..-1.0);
        let v = rng.random_range(1.0..40.0);
        let slot = rng.random_range(0..200usize);
        let dt = rng.random_range(0.1..1.0);
        let elapsed = b.mul(&b.n(slot as f64), &b.n(dt));
        let exact = b.add(&b.n(x0), &b.mul(&b.n(v), &elapsed));
        rel(advance_position(x0, v, slot, dt), &exact)
    })
}

fn random_geometry(rng: &mut SimRng) -> (Position3, Position3) {
    let x = rng.random_range(-250.0..250.0);
    let lane = rng.random_range(1.0..10.0);
    let h = rng.random_range(5.0..30.0);
    (Position3::vehicle(x, lane), Position3::new(0.0, 0.0, h))
}

fn big_norm(b: &Big, v: &Position3, r: &Position3) -> BigFloat {
    let d: Vec<BigFloat> = [(v.x, r.x), (v.y, r.y), (v.z, r.z)]
        .iter()
        .map(|&(a, c)| b.sub(&b.n(a), &b.n(c)))
        .collect();
    let sq: Vec<BigFloat> = d.iter().map(|t| b.mul(t, t)).collect();
    b.sqrt(&b.sum(&sq))
}

fn distance_check() -> Check {
    check("distance to RSU", 2, |rng, b| {
        let (v, r) = random_geometry(rng);
        rel(distance_to_rsu(&v, &r), &big_norm(b, &v, &r))
    })
}

fn angle_check() -> Check {
    check("cosine of uplink angle", 3, |rng, b| {
        let (v, r) = random_geometry(rng);
        let exact = b.div(&b.sub(&b.n(r.x), &b.n(v.x)), &big_norm(b, &v, &r));
        rel(cos_uplink_angle(&v, &r).unwrap(), &exact)
    })
}

fn doppler_check() -> Check {
    check("Doppler frequency", 4, |rng, b| {
        let v = rng.random_range(1.0..40.0);
        let lambda = rng.random_range(0.05..10.0);
        let cos = rng.random_range(-1.0..1.0);
        let exact = b.mul(&b.div(&b.n(v), &b.n(lambda)), &b.n(cos));
        rel(doppler_freq(v, lambda, cos), &exact)
    })
}

fn rate_check() -> Check {
    check("Shannon uplink rate", 5, |rng, b| {
        let link = LinkBudget::new(
            rng.random_range(500.0..2000.0),
            rng.random_range(0.05..1.0),
            rng.random_range(1e-13..1e-11),
            rng.random_range(2.0..4.0),
        )
        .unwrap();
        let gain = Complex64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let d = rng.random_range(5.0..300.0);
        let power = b.add(
            &b.mul(&b.n(gain.re), &b.n(gain.re)),
            &b.mul(&b.n(gain.im), &b.n(gain.im)),
        );
        let path = b.powf(&b.n(d), &b.n(-link.path_loss_exp));
        let snr = b.div(
            &b.mul(&b.mul(&b.n(link.tx_power_w), &power), &path),
            &b.n(link.noise_power_w),
        );
        let arg = b.add(&b.n(1.0), &snr);
        let bits = b.log2(&arg);
        let exact = b.mul(&b.n(link.bandwidth_hz), &bits);
        rel(transmission_rate(&link, gain, d).unwrap(), &exact)
    })
}

fn local_delay_check() -> Check {
    check("local training delay", 6, |rng, b| {
        let data = rng.random_range(1..5000usize);
        let cycles = rng.random_range(1e5..1e7);
        let compute = rng.random_range(1e8..4e9);
        let exact = b.div(&b.mul(&b.n(data as f64), &b.n(cycles)), &b.n(compute));
        rel(local_training_delay(data, cycles, compute).unwrap(), &exact)
    })
}

fn upload_delay_check() -> Check {
    check("upload delay", 7, |rng, b| {
        let bits = rng.random_range(1e3..1e6);
        let rate = rng.random_range(1e2..1e6);
        rel(
            upload_delay(bits, rate).unwrap(),
            &b.div(&b.n(bits), &b.n(rate)),
        )
    })
}

fn reward_check() -> Check {
    check("slot reward", 8, |rng, b| {
        let k = rng.random_range(1..8usize);
        let lambdas: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
        let mut mask: Vec<bool> = (0..k).map(|_| rng.random_bool(0.6)).collect();
        mask[rng.random_range(0..k)] = true;
        let delays: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..3.0)).collect();
        let loss = rng.random_range(0.0..3.0);
        let (w1, w2) = (rng.random_range(0.0..2.0), rng.random_range(0.0..2.0));
        let got = ddafl::ddpg::reward(&lambdas, &mask, loss, &delays, w1, w2).unwrap();
        let lambda_sum = b.sum(&lambdas.iter().map(|&l| b.n(l)).collect::<Vec<_>>());
        let admitted: Vec<BigFloat> = delays
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|(&d, _)| b.n(d))
            .collect();
        let mean_delay = b.div(&b.sum(&admitted), &b.n(admitted.len() as f64));
        let cost = b.add(&b.mul(&b.n(w1), &b.n(loss)), &b.mul(&b.n(w2), &mean_delay));
        let exact = b.mul(&b.div(&b.n(-(k as f64)), &lambda_sum), &cost);
        rel(got, &exact)
    })
}

fn target_check() -> Check {
    check("critic target value", 9, |rng, b| {
        let r = rng.random_range(-50.0..0.0);
        let gamma = rng.random_range(0.5..0.999);
        let q = rng.random_range(-500.0..0.0);
        rel(
            target_value(r, gamma, q),
            &b.add(&b.n(r), &b.mul(&b.n(gamma), &b.n(q))),
        )
    })
}

fn random_net(rng: &mut SimRng, arch: &[usize], output: OutputActivation) -> ModelParams {
    let seed = rng.random();
    let mut net = ModelParams::init(arch, output, seed).unwrap();
    for b in net.biases_mut() {
        b.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    net
}

/// Largest elementwise relative error of `got` against `exact(i, ...)`.
fn elementwise(got: &ModelParams, mut exact: impl FnMut(usize) -> BigFloat) -> f64 {
    got.flatten()
        .iter()
        .enumerate()
        .map(|(i, &g)| rel(g, &exact(i)))
        .fold(0.0, f64::max)
}

fn soft_update_check() -> Check {
    check("target network soft update", 10, |rng, b| {
        let online = random_net(rng, &[4, 5, 3], OutputActivation::Linear);
        let target = random_net(rng, &[4, 5, 3], OutputActivation::Linear);
        let tau = rng.random_range(1e-4..0.5);
        let got = soft_update(&online, &target, tau).unwrap();
        let (o, t) = (online.flatten(), target.flatten());
        let keep = b.sub(&b.n(1.0), &b.n(tau));
        elementwise(&got, |i| {
            b.add(&b.mul(&b.n(tau), &b.n(o[i])), &b.mul(&keep, &b.n(t[i])))
        })
    })
}

fn cross_entropy_check() -> Check {
    check("cross-entropy loss", 11, |rng, b| {
        let net = random_net(rng, &[6, 5, 10], OutputActivation::Softmax);
        let n = rng.random_range(1..9usize);
        let inputs = Array2::from_shape_fn((n, 6), |_| rng.random_range(0.0..1.0));
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..10)).collect();
        let batch = LabeledBatch::new(inputs.clone(), labels.clone()).unwrap();
        let got = cross_entropy_loss(&net, &batch).unwrap();

        let (w, bias) = (net.weights(), net.biases());
        let mut total = b.n(0.0);
        for (row, &label) in labels.iter().enumerate() {
            let hidden: Vec<BigFloat> = (0..5)
                .map(|j| {
                    let terms: Vec<BigFloat> = (0..6)
                        .map(|i| b.mul(&b.n(inputs[[row, i]]), &b.n(w[0][[i, j]])))
                        .collect();
                    let z = b.add(&b.sum(&terms), &b.n(bias[0][j]));
                    if z.is_negative() {
                        b.n(0.0)
                    } else {
                        z
                    }
                })
                .collect();
            let logits: Vec<BigFloat> = (0..10)
                .map(|c| {
                    let terms: Vec<BigFloat> = (0..5)
                        .map(|j| b.mul(&hidden[j], &b.n(w[1][[j, c]])))
                        .collect();
                    b.add(&b.sum(&terms), &b.n(bias[1][c]))
                })
                .collect();
            let exps: Vec<BigFloat> = logits.iter().map(|z| b.exp(z)).collect();
            let log_norm = b.ln(&b.sum(&exps));
            total = b.add(&total, &b.sub(&log_norm, &logits[label]));
        }
        rel(got, &b.div(&total, &b.n(n as f64)))
    })
}

fn staleness_check(
    name: &'static str,
    tag: u64,
    weight: fn(f64, f64) -> ddafl::Result<f64>,
) -> Check {
    check(name, tag, |rng, b| {
        let m = rng.random_range(0.05..0.999);
        let delay = rng.random_range(0.0..5.0);
        let exponent = b.sub(&b.n(delay), &b.n(0.5));
        rel(weight(delay, m).unwrap(), &b.powf(&b.n(m), &exponent))
    })
}

fn weighted_model_check() -> Check {
    check("weighted local model", 14, |rng, b| {
        let local = random_net(rng, &[4, 6, 10], OutputActivation::Softmax);
        let (b1, b2) = (rng.random_range(0.5..1.1), rng.random_range(0.5..1.1));
        let got = weighted_model(&local, b1, b2).unwrap();
        let flat = local.flatten();
        elementwise(&got, |i| b.mul(&b.mul(&b.n(b1), &b.n(flat[i])), &b.n(b2)))
    })
}

fn global_update_check() -> Check {
    check("asynchronous global update", 15, |rng, b| {
        let old = random_net(rng, &[4, 6, 10], OutputActivation::Softmax);
        let incoming = random_net(rng, &[4, 6, 10], OutputActivation::Softmax);
        let beta = rng.random_range(0.01..0.99);
        let mut global = GlobalModel::new(old.clone());
        global.absorb(&incoming, beta).unwrap();
        let (o, w) = (old.flatten(), incoming.flatten());
        let rest = b.sub(&b.n(1.0), &b.n(beta));
        elementwise(&global.params, |i| {
            b.add(&b.mul(&b.n(beta), &b.n(o[i])), &b.mul(&rest, &b.n(w[i])))
        })
    })
}

/// Every closed-form check, in model order.
pub fn all_checks() -> Vec<Check> {
    vec![
        position_check(),
        distance_check(),
        rate_check(),
        doppler_check(),
        angle_check(),
        local_delay_check(),
        upload_delay_check(),
        reward_check(),
        target_check(),
        soft_update_check(),
        cross_entropy_check(),
        staleness_check("local training delay weight", 12, staleness_weight_local),
        staleness_check("upload delay weight", 13, staleness_weight_tx),
        weighted_model_check(),
        global_update_check(),
    ]
}

/// Largest absolute error of the fading correlation `J0(2 pi f_d dt)` against
/// its power series summed in 256-bit precision. Absolute, because `J0` has
/// zeros inside the operating range.
pub fn correlation_abs_err() -> f64 {
    let mut rng = rng_for(16);
    let mut b = Big::new();
    let mut worst: f64 = 0.0;
    for _ in 0..CASES {
        let fd = rng.random_range(-6.0..6.0);
        let dt = rng.random_range(0.05..1.0);
        let pi = b.pi();
        let x = b.mul(&b.mul(&b.mul(&b.n(2.0), &pi), &b.n(fd)), &b.n(dt));
        let q = b.div(&b.mul(&x, &x), &b.n(-4.0));
        let mut term = b.n(1.0);
        let mut sum = b.n(1.0);
        for k in 1..80 {
            let kk = b.n((k * k) as f64);
            term = b.div(&b.mul(&term, &q), &kk);
            sum = b.add(&sum, &term);
        }
        worst = worst.max((channel_correlation(fd, dt) - to_f64(&sum)).abs());
    }
    worst
}
