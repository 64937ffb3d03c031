//! Empirical checks of the assumptions and conclusions of the FedNMUT
//! convergence analysis.
//!
//! The assumptions posit uniform bounds over all `x`; nothing finite can
//! certify those. `sigma_sq` and `zeta_sq` here are maxima over sampled
//! points, i.e. estimated lower envelopes of the true constants, and the
//! bound comparison is a sanity check rather than a proof.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::channel::{derive_stream, sample_noise, standard_normal_vector, Purpose, StreamKey};
use crate::data::{Dataset, Shard};
use crate::error::{Error, Result};
use crate::objective::{full_local_gradient, global_gradient, stochastic_gradient, ObjectiveConfig};
use crate::par;

/// Above this size the Gram spectrum is found by power iteration.
const DENSE_EIG_LIMIT: usize = 512;
const POWER_TOL: f64 = 1e-6;

/// Constants entering the bound. All are nonnegative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantsEstimate {
    pub l: f64,
    pub sigma_sq: f64,
    pub zeta_sq: f64,
    /// Per-client `E||δ||^2`, i.e. `d` times the per-coordinate variance.
    pub d_sq_total: f64,
    /// Average over rounds of `||B^t||_F^2 / n`.
    pub b_bar_sq: f64,
    /// `f(x̄^0) - f*`.
    pub f0_gap: f64,
}

/// How the experiment noise knob maps onto `E||δ||^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseConvention {
    /// The knob is a per-coordinate variance, so `E||δ||^2 = d * var`.
    PerCoordinate,
    /// The knob already is `E||δ||^2`.
    TotalNorm,
}

impl NoiseConvention {
    pub fn total(self, variance: f64, d: usize) -> f64 {
        match self {
            Self::PerCoordinate => variance * d as f64,
            Self::TotalNorm => variance,
        }
    }
}

/// `sum_i D^2_{t,i}` for every round.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSchedule {
    /// Every client uses `ConstantsEstimate::d_sq_total` in every round.
    Homogeneous,
    /// Explicit `D^2_{t,i}`: outer index round, inner index client.
    PerRound(Vec<Vec<f64>>),
}

fn lambda_max_sym(m: DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m)
        .eigenvalues
        .iter()
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b))
}

/// Largest eigenvalue of `A A^T` for a d×k block, by power iteration.
fn power_lambda_max(a: &DMatrix<f64>, seed: u64) -> f64 {
    let mut stream = derive_stream(StreamKey::new(seed, 0, 0, 0, Purpose::Probe));
    let mut v = standard_normal_vector(&mut stream, a.nrows());
    v.normalize_mut();
    let mut est = 0.0;
    for _ in 0..10_000 {
        let w = a * a.tr_mul(&v);
        let next = w.norm();
        if next == 0.0 {
            return 0.0;
        }
        v = w / next;
        if (next - est).abs() <= POWER_TOL * next {
            return next;
        }
        est = next;
    }
    est
}

/// `max_i lambda_max(2 F_i^T F_i / m_i) + 2 lambda`.
pub fn estimate_smoothness(dataset: &Dataset, shards: &[Shard], lambda: f64) -> f64 {
    let per_shard = par::map_slice(shards, |sh| {
        let block = dataset.features().columns_range(sh.rows.clone()).into_owned();
        let (d, k) = block.shape();
        let top = if d.min(k) <= DENSE_EIG_LIMIT {
            // F F^T and F^T F share their nonzero spectrum; use the smaller.
            if d <= k {
                lambda_max_sym(&block * block.transpose())
            } else {
                lambda_max_sym(block.tr_mul(&block))
            }
        } else {
            power_lambda_max(&block, sh.client as u64)
        };
        2.0 * top / sh.len() as f64
    });
    per_shard.into_iter().fold(0.0, f64::max) + 2.0 * lambda
}

/// `max` over points and clients of the empirical `E||g - ∇f_i(x)||^2`.
pub fn estimate_sigma_sq(
    x_samples: &[DVector<f64>],
    shards: &[Shard],
    dataset: &Dataset,
    config: &ObjectiveConfig,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    let mut worst = 0.0_f64;
    for (p, x) in x_samples.iter().enumerate() {
        let per_client: Vec<Result<f64>> = par::map_slice(shards, |sh| {
            let full = full_local_gradient(x, sh, dataset, config.lambda)?;
            if config.batch_size >= sh.len() {
                return Ok(0.0);
            }
            let mut stream =
                derive_stream(StreamKey::new(seed, p as u64, 0, sh.client as u64, Purpose::Probe));
            let mut acc = 0.0;
            for _ in 0..draws {
                let g = stochastic_gradient(x, sh, dataset, config, &mut stream)?;
                acc += (g - &full).norm_squared();
            }
            Ok(acc / draws.max(1) as f64)
        });
        for v in per_client {
            worst = worst.max(v?);
        }
    }
    Ok(worst)
}

/// `max` over points of `(1/n) sum_i ||∇f_i(x) - ∇f(x)||^2`, with `∇f`
/// the average of the client gradients.
pub fn estimate_zeta_sq(
    x_samples: &[DVector<f64>],
    shards: &[Shard],
    dataset: &Dataset,
    lambda: f64,
) -> Result<f64> {
    let n = shards.len();
    if n == 0 {
        return Ok(0.0);
    }
    let mut worst = 0.0_f64;
    for x in x_samples {
        let grads: Vec<Result<DVector<f64>>> =
            par::map_slice(shards, |sh| full_local_gradient(x, sh, dataset, lambda));
        let grads: Vec<DVector<f64>> = grads.into_iter().collect::<Result<_>>()?;
        let mean = grads.iter().fold(DVector::zeros(x.len()), |acc, g| acc + g) / n as f64;
        let spread = grads.iter().map(|g| (g - &mean).norm_squared()).sum::<f64>() / n as f64;
        worst = worst.max(spread);
    }
    Ok(worst)
}

/// Outcome of the zero-mean test on the averaged bias.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasReport {
    pub mean: Vec<f64>,
    pub standard_error: Vec<f64>,
    pub variance: Vec<f64>,
    pub passed: bool,
}

/// Monte-Carlo test of `E[b̄^T] = 0` for the averaged bias recursion
/// `b̄^t = μ b̄^{t-1} + δ̄^{t-1}`, `b̄^0 = 0`, where `δ̄` averages `n`
/// independent client noise vectors of per-coordinate variance `variance`.
/// Each trial draws from its own stream.
pub fn check_bias_zero_mean(
    mu: f64,
    variance: f64,
    n: usize,
    d: usize,
    rounds: usize,
    trials: usize,
    seed: u64,
) -> Result<BiasReport> {
    if !(0.0..1.0).contains(&mu) {
        return Err(Error::PreconditionViolated(format!("mu must lie in [0, 1), got {mu}")));
    }
    if trials < 2 || n == 0 {
        return Err(Error::InvalidConfig("need n >= 1 and at least two trials".into()));
    }
    let finals: Vec<DVector<f64>> = par::map_indices(trials, |trial| {
        let mut b = DVector::zeros(d);
        for t in 0..rounds {
            let mut mean_noise = DVector::zeros(d);
            for client in 0..n {
                let mut s = derive_stream(StreamKey::new(
                    seed,
                    trial as u64,
                    t as u64,
                    client as u64,
                    Purpose::ChannelNoise,
                ));
                mean_noise += sample_noise(&mut s, d, variance);
            }
            mean_noise /= n as f64;
            b = b * mu + mean_noise;
        }
        b
    });
    let tn = trials as f64;
    let mut mean = vec![0.0; d];
    let mut var = vec![0.0; d];
    let mut se = vec![0.0; d];
    let mut passed = true;
    for k in 0..d {
        let m = finals.iter().map(|b| b[k]).sum::<f64>() / tn;
        let v = finals.iter().map(|b| (b[k] - m).powi(2)).sum::<f64>() / (tn - 1.0);
        let e = (v / tn).sqrt();
        // Zero variance means b is identically zero; the mean must be too.
        passed &= if e == 0.0 { m == 0.0 } else { m.abs() <= 4.0 * e };
        mean[k] = m;
        var[k] = v;
        se[k] = e;
    }
    Ok(BiasReport {
        mean,
        standard_error: se,
        variance: var,
        passed,
    })
}

/// Step-size and tracking-parameter conditions of the bound. Returns the
/// first violated inequality.
pub fn check_bound_preconditions(l: f64, rho: f64, mu: f64, eta: f64) -> Result<()> {
    let eta_max = (1.0 / (4.0 * l)).min(rho / (7.0 * l));
    if eta > eta_max {
        return Err(Error::PreconditionViolated(format!(
            "eta <= min(1/(4L), rho/(7L)): eta = {eta}, bound = {eta_max}"
        )));
    }
    if !(0.0..1.0).contains(&mu) || mu / (1.0 - mu) > rho / 42.0 {
        return Err(Error::PreconditionViolated(format!(
            "mu/(1-mu) <= rho/42: mu = {mu}, rho = {rho}"
        )));
    }
    if 6.0 * mu * mu / (rho * (1.0 - mu)) > rho / 8.0 {
        return Err(Error::PreconditionViolated(format!(
            "6 mu^2/(rho (1-mu)) <= rho/8: mu = {mu}, rho = {rho}"
        )));
    }
    Ok(())
}

/// Right-hand side of the FedNMUT bound on `(1/T) sum_t E||∇f(x̄^t)||^2`:
///
/// ```text
///   2/(ηT) (f(x̄^0) - f*)
/// + L μ² η B̄²
/// + 2 L² η² σ² [16/(ρn) + (1-μ)/2 + 1/(2nLη)]
/// + 2 L² η² ζ² [48/ρ² + 1/2]
/// + 2 L² η²/T sum_t sum_i D²_{t,i} [16/(nρ²) + 1/2 + 1/(2nLη)]
/// ```
///
/// with `B̄² = (1/T) sum_t ||B^t||_F^2 / n`.
pub fn evaluate_theorem_bound(
    consts: &ConstantsEstimate,
    rho: f64,
    mu: f64,
    eta: f64,
    n: usize,
    rounds: usize,
    noise: &NoiseSchedule,
) -> Result<f64> {
    check_bound_preconditions(consts.l, rho, mu, eta)?;
    if rounds == 0 || n == 0 {
        return Err(Error::InvalidConfig("bound needs T >= 1 and n >= 1".into()));
    }
    let (l, nf, tf) = (consts.l, n as f64, rounds as f64);
    let noise_sum: f64 = match noise {
        NoiseSchedule::Homogeneous => tf * nf * consts.d_sq_total,
        NoiseSchedule::PerRound(rows) => {
            if rows.len() != rounds {
                return Err(Error::DimensionMismatch {
                    expected: rounds,
                    got: rows.len(),
                });
            }
            rows.iter().flatten().sum()
        }
    };
    let init = 2.0 / (eta * tf) * consts.f0_gap;
    let bias = l * mu * mu * eta * consts.b_bar_sq;
    let sampling = 2.0 * l * l * eta * eta * consts.sigma_sq
        * (16.0 / (rho * nf) + (1.0 - mu) / 2.0 + 1.0 / (2.0 * nf * l * eta));
    let hetero = 2.0 * l * l * eta * eta * consts.zeta_sq * (48.0 / (rho * rho) + 0.5);
    let channel = 2.0 * l * l * eta * eta / tf
        * noise_sum
        * (16.0 / (nf * rho * rho) + 0.5 + 1.0 / (2.0 * nf * l * eta));
    Ok(init + bias + sampling + hetero + channel)
}

/// Outcome of sampling the contraction inequality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionReport {
    pub trials: usize,
    /// Largest observed `||(X - X̄)W||^2 / ||X - X̄||^2`.
    pub max_ratio: f64,
    pub bound: f64,
    pub passed: bool,
}

/// Sample `trials` random 8×n matrices and test
/// `||(X - X̄)W||_F^2 <= (1 - rho + 1e-9) ||X - X̄||_F^2`.
pub fn check_contraction(w: &DMatrix<f64>, rho: f64, trials: usize, seed: u64) -> ContractionReport {
    const ROWS: usize = 8;
    let bound = 1.0 - rho + 1e-9;
    let n = w.ncols();
    let results: Vec<(f64, bool)> = par::map_indices(trials, |trial| {
        let mut s = derive_stream(StreamKey::new(seed, trial as u64, 0, 0, Purpose::Probe));
        let x = DMatrix::from_fn(ROWS, n, |_, _| s.sample::<f64, _>(StandardNormal));
        contraction_ratio(&x, w, bound)
    });
    let max_ratio = results.iter().map(|r| r.0).fold(0.0, f64::max);
    ContractionReport {
        trials,
        max_ratio,
        bound,
        passed: results.iter().all(|r| r.1),
    }
}

/// Returns the ratio and whether the inequality holds for this `X`.
pub fn contraction_ratio(x: &DMatrix<f64>, w: &DMatrix<f64>, bound: f64) -> (f64, bool) {
    let mean = x.column_mean();
    let mut dev = x.clone();
    for mut c in dev.column_iter_mut() {
        c -= &mean;
    }
    let before = dev.norm_squared();
    let after = (&dev * w).norm_squared();
    let ratio = if before > 0.0 { after / before } else { 0.0 };
    (ratio, after <= bound * before)
}

/// Random probe points around `center`, with unit-normal offsets.
pub fn probe_points(center: &DVector<f64>, count: usize, seed: u64) -> Vec<DVector<f64>> {
    (0..count)
        .map(|k| {
            let mut s = derive_stream(StreamKey::new(seed, k as u64, 1, 0, Purpose::Probe));
            center + standard_normal_vector(&mut s, center.len())
        })
        .collect()
}

/// Check `||∇f_i(x) - ∇f_i(y)|| <= L ||x - y||` on random pairs, returning
/// the largest observed ratio.
pub fn max_gradient_lipschitz_ratio(
    dataset: &Dataset,
    shards: &[Shard],
    lambda: f64,
    pairs: usize,
    seed: u64,
) -> Result<f64> {
    let mut worst = 0.0_f64;
    let mut s = derive_stream(StreamKey::new(seed, 0, 2, 0, Purpose::Probe));
    for _ in 0..pairs {
        let i = s.random_range(0..shards.len());
        let x = standard_normal_vector(&mut s, dataset.d());
        let y = standard_normal_vector(&mut s, dataset.d());
        let gx = full_local_gradient(&x, &shards[i], dataset, lambda)?;
        let gy = full_local_gradient(&y, &shards[i], dataset, lambda)?;
        worst = worst.max((gx - gy).norm() / (x - y).norm());
    }
    Ok(worst)
}

/// `||∇f(x)||^2` at `x`, used by bound comparisons.
pub fn grad_norm_sq(x: &DVector<f64>, dataset: &Dataset, lambda: f64) -> Result<f64> {
    Ok(global_gradient(x, dataset, lambda)?.norm_squared())
}
