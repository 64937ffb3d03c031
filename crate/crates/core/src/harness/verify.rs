//! The `verify` suite: executable checks of the modelling assumptions plus
//! an end-to-end comparison of a FedNMUT run against its convergence bound.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DVector;

use super::config::{LrSchedule, RunConfig};
use super::rate::{rate_fit, RateFit};
use super::run::{run_with, Problem};
use crate::algorithms::{
    init_states, round_fednmut, round_fednmut_matrix, stack_params, Algorithm, ClientState,
    NetworkState, RoundInputs,
};
use crate::channel::{derive_stream, sample_noise, Purpose, StreamKey};
use crate::error::Result;
use crate::objective::{global_loss, ridge_optimum, stochastic_gradient};
use crate::theory_checks::{
    check_bias_zero_mean, check_contraction, estimate_sigma_sq, estimate_smoothness,
    estimate_zeta_sq, evaluate_theorem_bound, max_gradient_lipschitz_ratio, ConstantsEstimate,
    NoiseConvention, NoiseSchedule,
};
use crate::topology::{build_mixing, TopologyKind, TopologySpec};

pub const REPORT_FILE: &str = "verify_report.txt";
pub const SUMMARY_FILE: &str = "verify_summary.csv";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub contraction_trials: usize,
    pub bias_trials: usize,
    pub bias_rounds: usize,
    pub bias_variance: f64,
    pub bias_dim: usize,
    pub oracle_rounds: usize,
    pub bound_rounds: usize,
    pub sigma_draws: usize,
    pub lipschitz_pairs: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            contraction_trials: 1000,
            bias_trials: 10_000,
            bias_rounds: 100,
            bias_variance: 0.005,
            bias_dim: 8,
            oracle_rounds: 100,
            bound_rounds: 2000,
            sigma_draws: 200,
            lipschitz_pairs: 50,
        }
    }
}

/// One line of the verify report.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

impl CheckResult {
    fn new(name: impl Into<String>, passed: bool, value: f64, threshold: f64, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            value,
            threshold,
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(out, "{tag} {}: {}", c.name, c.detail);
        }
        let _ = writeln!(
            out,
            "{} of {} checks passed",
            self.checks.iter().filter(|c| c.passed).count(),
            self.checks.len()
        );
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("check,passed,value,threshold\n");
        for c in &self.checks {
            let _ = writeln!(out, "{},{},{:e},{:e}", c.name, c.passed, c.value, c.threshold);
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(REPORT_FILE), self.to_text())?;
        fs::write(dir.join(SUMMARY_FILE), self.to_csv())?;
        Ok(())
    }
}

/// Per-client versus matrix-form FedNMUT on the same gradient and noise
/// streams.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleReport {
    pub rounds: usize,
    /// Largest `|x_i - X[:, i]|` over all rounds and coordinates.
    pub max_state_diff: f64,
    /// Largest `|x̂_j - x_j|` held by any neighbor of `j`, over all rounds.
    pub max_copy_gap: f64,
    /// Largest `|x_i|` coordinate seen, the scale for relative comparisons.
    pub max_state_abs: f64,
}

impl OracleReport {
    /// State difference relative to the largest state coordinate (at least 1).
    pub fn relative_state_diff(&self) -> f64 {
        self.max_state_diff / self.max_state_abs.max(1.0)
    }
}

fn copy_gap(states: &[ClientState]) -> f64 {
    let mut worst = 0.0_f64;
    for s in states {
        for (&j, xh) in &s.x_hat {
            worst = worst.max((xh - &states[j].x).amax());
        }
    }
    worst
}

/// Run both FedNMUT forms side by side for `config.rounds` rounds. Each form
/// evaluates stochastic gradients at its own iterates with the run's keyed
/// streams, so any divergence compounds instead of being reset.
pub fn fednmut_oracle(config: &RunConfig) -> Result<OracleReport> {
    let problem = Problem::build(config)?;
    let Problem { dataset, shards, mixing } = &problem;
    let (n, d, seed) = (config.clients, config.dim, config.seed);
    let objective = config.objective();
    let mut states = init_states(mixing, d, config.x0, seed, 0)?;
    let mut net = NetworkState::from_states(&states);
    let mut max_state_diff = 0.0_f64;
    let mut max_copy_gap = copy_gap(&states);
    let mut max_state_abs = net.x.amax();
    for t in 0..config.rounds {
        let key = |i: usize, p| StreamKey::new(seed, 0, t as u64, i as u64, p);
        let noises: Vec<DVector<f64>> = (0..n)
            .map(|i| sample_noise(&mut derive_stream(key(i, Purpose::ChannelNoise)), d, config.noise_var))
            .collect();
        let grads_at = |xs: Vec<DVector<f64>>| -> Result<Vec<DVector<f64>>> {
            xs.iter()
                .enumerate()
                .map(|(i, x)| {
                    let mut s = derive_stream(key(i, Purpose::DataBatch));
                    stochastic_gradient(x, &shards[i], dataset, &objective, &mut s)
                })
                .collect()
        };
        let g_client = grads_at(states.iter().map(|s| s.x.clone()).collect())?;
        let g_matrix = grads_at(net.x.column_iter().map(|c| c.into_owned()).collect())?;
        let eta = config.lr.eta_at(t);
        let client_in = RoundInputs { eta, mu: config.mu, mixing, grads: &g_client, noises: &noises };
        let matrix_in = RoundInputs { grads: &g_matrix, ..client_in };
        round_fednmut(&mut states, &client_in)?;
        round_fednmut_matrix(&mut net, &matrix_in)?;
        max_state_diff = max_state_diff.max((stack_params(&states) - &net.x).amax());
        max_copy_gap = max_copy_gap.max(copy_gap(&states));
        max_state_abs = max_state_abs.max(net.x.amax());
    }
    Ok(OracleReport {
        rounds: config.rounds,
        max_state_diff,
        max_copy_gap,
        max_state_abs,
    })
}

/// Result of comparing a noise-free constant-step FedNMUT run with the
/// evaluated bound.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundCheck {
    pub eta: f64,
    pub l: f64,
    pub rho: f64,
    pub rounds: usize,
    /// `(1/T) sum_{t<T} ||∇f(x̄^t)||^2`.
    pub empirical: f64,
    pub bound: f64,
    pub rate: RateFit,
    pub consts: ConstantsEstimate,
    pub grad_norms: Vec<f64>,
}

/// Configuration of the bound run derived from `template`: FedNMUT on the
/// fully connected graph, no channel noise, one repeat and the constant step
/// `min(1/(4L), ρ/(7L)) / 2`.
pub fn bound_run_config(template: &RunConfig, rounds: usize) -> Result<(RunConfig, Problem, f64, f64)> {
    let mut config = RunConfig {
        algorithm: Algorithm::FedNmut,
        topology: TopologyKind::FullyConnected,
        noise_var: 0.0,
        rounds,
        repeats: 1,
        ..template.clone()
    };
    let problem = Problem::build(&config)?;
    let l = estimate_smoothness(&problem.dataset, &problem.shards, config.lambda);
    let rho = problem.mixing.rho();
    let eta = (1.0 / (4.0 * l)).min(rho / (7.0 * l)) / 2.0;
    config.lr = LrSchedule::constant(eta);
    Ok((config, problem, l, eta))
}

pub fn bound_check(template: &RunConfig, rounds: usize, sigma_draws: usize) -> Result<BoundCheck> {
    let (config, problem, l, eta) = bound_run_config(template, rounds)?;
    let rho = problem.mixing.rho();
    let trace = run_with(&problem, &config, 0)?;
    let grad_norms = trace.grad_norms_entering_rounds();
    let empirical = grad_norms.iter().sum::<f64>() / rounds as f64;
    let rate = rate_fit(&grad_norms)?;

    let ds = &problem.dataset;
    let (x_star, f_star) = ridge_optimum(ds, config.lambda)?;
    let midpoint = (&trace.initial_mean + &x_star) * 0.5;
    let points = [trace.initial_mean.clone(), trace.final_mean.clone(), x_star, midpoint];
    let objective = config.objective();
    let sigma_sq = estimate_sigma_sq(&points, &problem.shards, ds, &objective, sigma_draws, config.seed)?;
    let zeta_sq = estimate_zeta_sq(&points, &problem.shards, ds, config.lambda)?;
    let consts = ConstantsEstimate {
        l,
        sigma_sq,
        zeta_sq,
        d_sq_total: NoiseConvention::PerCoordinate.total(config.noise_var, config.dim),
        b_bar_sq: trace.bias_average(config.clients),
        f0_gap: (global_loss(&trace.initial_mean, ds, config.lambda)? - f_star).max(0.0),
    };
    let bound = evaluate_theorem_bound(
        &consts,
        rho,
        config.mu,
        eta,
        config.clients,
        rounds,
        &NoiseSchedule::Homogeneous,
    )?;
    Ok(BoundCheck {
        eta,
        l,
        rho,
        rounds,
        empirical,
        bound,
        rate,
        consts,
        grad_norms,
    })
}

/// Run the whole suite on the problem described by `config`.
pub fn run_verify(config: &RunConfig, opts: &VerifyOptions) -> Result<VerifyReport> {
    config.validate()?;
    let mut checks = Vec::new();
    let n = config.clients;

    for kind in TopologyKind::ALL {
        let spec = TopologySpec::new(kind, n);
        if spec.validate().is_err() {
            continue;
        }
        let mixing = build_mixing(spec)?;
        let w = mixing.weights();
        let asym = (w - w.transpose()).amax();
        let row_err = w.row_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max);
        let col_err = w.column_iter().map(|c| (c.sum() - 1.0).abs()).fold(0.0, f64::max);
        let worst = asym.max(row_err).max(col_err);
        checks.push(CheckResult::new(
            format!("mixing_{kind}"),
            worst <= 1e-12 && mixing.rho() > 0.0,
            worst,
            1e-12,
            format!("n = {n}, rho = {:.6}, max deviation = {worst:.2e}", mixing.rho()),
        ));
        let c = check_contraction(w, mixing.rho(), opts.contraction_trials, config.seed);
        checks.push(CheckResult::new(
            format!("contraction_{kind}"),
            c.passed,
            c.max_ratio,
            c.bound,
            format!("{} trials, max ratio {:.6} <= {:.6}", c.trials, c.max_ratio, c.bound),
        ));
    }

    let problem = Problem::build(config)?;
    let l = estimate_smoothness(&problem.dataset, &problem.shards, config.lambda);
    let ratio = max_gradient_lipschitz_ratio(
        &problem.dataset,
        &problem.shards,
        config.lambda,
        opts.lipschitz_pairs,
        config.seed,
    )?;
    checks.push(CheckResult::new(
        "smoothness",
        ratio <= l * (1.0 + 1e-9),
        ratio,
        l,
        format!("L = {l:.6}, largest sampled gradient Lipschitz ratio {ratio:.6}"),
    ));

    let bias = check_bias_zero_mean(
        config.mu,
        opts.bias_variance,
        n,
        opts.bias_dim,
        opts.bias_rounds,
        opts.bias_trials,
        config.seed,
    )?;
    let worst_z = bias
        .mean
        .iter()
        .zip(&bias.standard_error)
        .map(|(m, se)| if *se > 0.0 { (m / se).abs() } else { 0.0 })
        .fold(0.0, f64::max);
    checks.push(CheckResult::new(
        "bias_zero_mean",
        bias.passed,
        worst_z,
        4.0,
        format!(
            "mu = {}, var = {}, T = {}, {} trials, max |mean|/SE = {worst_z:.3}",
            config.mu, opts.bias_variance, opts.bias_rounds, opts.bias_trials
        ),
    ));

    let oracle_config = RunConfig {
        rounds: opts.oracle_rounds,
        noise_var: if config.noise_var > 0.0 { config.noise_var } else { opts.bias_variance },
        ..config.clone()
    };
    let oracle = fednmut_oracle(&oracle_config)?;
    // Relative, because an expansive step amplifies rounding in both forms.
    let rel = oracle.relative_state_diff();
    checks.push(CheckResult::new(
        "fednmut_matrix_form",
        rel <= 1e-8,
        rel,
        1e-8,
        format!(
            "{} rounds, max |X_client - X_matrix| = {:.2e}, relative to max(1, max |X|) = {rel:.2e}",
            oracle.rounds, oracle.max_state_diff
        ),
    ));
    checks.push(CheckResult::new(
        "fednmut_copy_consistency",
        oracle.max_copy_gap <= 1e-12,
        oracle.max_copy_gap,
        1e-12,
        format!("max |x̂_j - x_j| = {:.2e}", oracle.max_copy_gap),
    ));

    let b = bound_check(config, opts.bound_rounds, opts.sigma_draws)?;
    let c = &b.consts;
    checks.push(CheckResult::new(
        "bound",
        b.empirical <= b.bound,
        b.empirical,
        b.bound,
        format!(
            "T = {}, eta = {:.4e}, L = {:.4}, rho = {:.4}, sigma^2 = {:.4e}, zeta^2 = {:.4e} \
             (estimated lower envelopes), B^2 = {:.4e}, gap = {:.4e}: empirical {:.4e} <= bound {:.4e}",
            b.rounds, b.eta, b.l, b.rho, c.sigma_sq, c.zeta_sq, c.b_bar_sq, c.f0_gap, b.empirical, b.bound
        ),
    ));
    let (slope, slope_ok) = match b.rate {
        RateFit::Slope(s) => (s, s <= -0.3),
        RateFit::ExactConvergence => (f64::NEG_INFINITY, true),
    };
    checks.push(CheckResult::new(
        "rate",
        slope_ok,
        slope,
        -0.3,
        format!("log-log slope of running average {slope:.4} <= -0.3"),
    ));

    Ok(VerifyReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        RunConfig {
            clients: 4,
            dim: 6,
            samples: 80,
            batch_size: 4,
            topology: TopologyKind::Ring,
            ..Default::default()
        }
    }

    #[test]
    fn oracle_agrees_on_tiny_problem() {
        let c = RunConfig { rounds: 40, noise_var: 0.005, ..tiny() };
        let r = fednmut_oracle(&c).unwrap();
        assert!(r.max_state_diff <= 1e-10, "{r:?}");
        assert_eq!(r.max_copy_gap, 0.0);
    }

    #[test]
    fn tiny_suite_passes_and_writes_files() {
        let opts = VerifyOptions {
            contraction_trials: 50,
            bias_trials: 500,
            oracle_rounds: 20,
            bound_rounds: 200,
            sigma_draws: 20,
            ..Default::default()
        };
        let report = run_verify(&tiny(), &opts).unwrap();
        assert!(report.passed(), "{}", report.to_text());
        let dir = tempfile::tempdir().unwrap();
        report.write(dir.path()).unwrap();
        let csv = fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
        assert!(csv.starts_with("check,passed,value,threshold\n"));
        assert_eq!(csv.lines().count(), report.checks.len() + 1);
    }
}
