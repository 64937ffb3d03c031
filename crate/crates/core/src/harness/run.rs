use std::sync::Arc;

use log::warn;
use nalgebra::DVector;

use super::config::{LrSchedule, RunConfig};
use crate::algorithms::{
    self, init_states, stack_params, tracking_condition_holds, Algorithm, RoundInputs,
};
use crate::channel::{derive_stream, sample_noise, Purpose, StreamKey};
use crate::data::{partition_iid, Dataset, Shard};
use crate::error::Result;
use crate::metrics::{mean_iterate, measure, RoundMetrics};
use crate::objective::stochastic_gradient;
use crate::par;
use crate::theory_checks::estimate_smoothness;
use crate::topology::{build_mixing, MixingMatrix};

/// Immutable inputs shared by every repeat of a cell.
#[derive(Debug, Clone)]
pub struct Problem {
    pub dataset: Arc<Dataset>,
    pub shards: Vec<Shard>,
    pub mixing: MixingMatrix,
}

impl Problem {
    pub fn build(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let dataset = Dataset::generate(config.samples, config.dim, config.label_noise, config.seed)?;
        Self::with_dataset(config, Arc::new(dataset))
    }

    /// Reuse an already generated dataset (it must match the config's
    /// size, label noise and seed).
    pub fn with_dataset(config: &RunConfig, dataset: Arc<Dataset>) -> Result<Self> {
        config.validate()?;
        let shards = partition_iid(&dataset, config.clients)?;
        let mixing = build_mixing(config.topology_spec())?;
        Ok(Self { dataset, shards, mixing })
    }
}

/// Output of one seeded run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    /// Row for the initial state (`round = -1`) followed by one per round.
    pub metrics: Vec<RoundMetrics>,
    /// `||B^t||_F^2` per round; zero for algorithms without a bias term.
    pub bias_norm_sq: Vec<f64>,
    pub initial_mean: DVector<f64>,
    pub final_mean: DVector<f64>,
}

impl RunTrace {
    /// `||∇f(x̄^t)||^2` for `t = 0..T`, i.e. the state entering each round.
    pub fn grad_norms_entering_rounds(&self) -> Vec<f64> {
        let t = self.metrics.len() - 1;
        self.metrics[..t].iter().map(|m| m.grad_norm_sq).collect()
    }

    /// `(1/T) sum_t ||B^t||_F^2 / n`.
    pub fn bias_average(&self, n: usize) -> f64 {
        if self.bias_norm_sq.is_empty() {
            return 0.0;
        }
        self.bias_norm_sq.iter().sum::<f64>() / (self.bias_norm_sq.len() * n) as f64
    }
}

/// Warn (never abort) when the step or tracking parameter falls outside the
/// conditions of the FedNMUT bound.
fn warn_preconditions(config: &RunConfig, problem: &Problem) {
    if config.algorithm != Algorithm::FedNmut {
        return;
    }
    let rho = problem.mixing.rho();
    if !tracking_condition_holds(config.mu, rho) {
        warn!(
            "mu/(1-mu) = {:.4} exceeds rho/42 = {:.4} ({} topology)",
            config.mu / (1.0 - config.mu),
            rho / 42.0,
            config.topology
        );
    }
    let l = estimate_smoothness(&problem.dataset, &problem.shards, config.lambda);
    let eta_max = (1.0 / (4.0 * l)).min(rho / (7.0 * l));
    if config.lr.eta0 > 1.0 / l {
        warn!(
            "eta0 = {} exceeds 1/L = {:.3e}; the local step is expansive and FedNMUT may diverge",
            config.lr.eta0,
            1.0 / l
        );
    } else if config.lr.eta0 > eta_max {
        warn!("eta0 = {} exceeds min(1/(4L), rho/(7L)) = {eta_max:.3e}", config.lr.eta0);
    }
}

/// `config.lr` with `eta0` capped at `1/L`, where `L` is the largest local
/// smoothness constant of the config's problem. FedNMUT and FedNDL2 apply
/// each client's own gradient after mixing, so their disagreement modes
/// grow whenever `eta * L > 1`.
pub fn smoothness_capped_lr(config: &RunConfig) -> Result<LrSchedule> {
    let problem = Problem::build(config)?;
    let l = estimate_smoothness(&problem.dataset, &problem.shards, config.lambda);
    Ok(LrSchedule {
        eta0: config.lr.eta0.min(1.0 / l),
        ..config.lr
    })
}

pub fn run_single(config: &RunConfig, repeat: usize) -> Result<RunTrace> {
    let problem = Problem::build(config)?;
    warn_preconditions(config, &problem);
    run_with(&problem, config, repeat)
}

/// Run one repeat. Every random draw comes from a stream keyed by
/// `(seed, repeat, round, client, purpose)`.
pub fn run_with(problem: &Problem, config: &RunConfig, repeat: usize) -> Result<RunTrace> {
    let Problem { dataset, shards, mixing } = problem;
    let dataset: &Dataset = dataset;
    let (n, d) = (config.clients, config.dim);
    let seed = config.seed;
    let rep = repeat as u64;
    let objective = config.objective();
    let key = |t: usize, i: usize, purpose| StreamKey::new(seed, rep, t as u64, i as u64, purpose);

    let mut states = init_states(mixing, d, config.x0, seed, rep)?;
    let x0 = stack_params(&states);
    let initial_mean = mean_iterate(&x0);
    let mut metrics = Vec::with_capacity(config.rounds + 1);
    let mut bias = Vec::with_capacity(config.rounds);
    metrics.push(measure(&x0, dataset, shards, config.lambda, -1, config.lr.eta_at(0))?);

    for t in 0..config.rounds {
        let eta = config.lr.eta_at(t);
        let noises = par::map_indices(n, |i| {
            let mut s = derive_stream(key(t, i, Purpose::ChannelNoise));
            sample_noise(&mut s, d, config.noise_var)
        });
        let mut bias_sq = 0.0;
        if config.algorithm == Algorithm::FedNdl2 {
            algorithms::round_fedndl2(&mut states, eta, mixing, &noises, |i, x| {
                let mut s = derive_stream(key(t, i, Purpose::DataBatch));
                stochastic_gradient(x, &shards[i], dataset, &objective, &mut s)
            })?;
        } else {
            let grads = par::map_indices(n, |i| {
                let mut s = derive_stream(key(t, i, Purpose::DataBatch));
                stochastic_gradient(&states[i].x, &shards[i], dataset, &objective, &mut s)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            let inputs = RoundInputs {
                eta,
                mu: config.mu,
                mixing,
                grads: &grads,
                noises: &noises,
            };
            match config.algorithm {
                Algorithm::FedNdl1 => algorithms::round_fedndl1(&mut states, &inputs)?,
                Algorithm::FedNdl3 => algorithms::round_fedndl3(&mut states, &inputs)?,
                Algorithm::FedNmut => bias_sq = algorithms::round_fednmut(&mut states, &inputs)?.bias_norm_sq,
                Algorithm::FedNdl2 => unreachable!(),
            }
        }
        bias.push(bias_sq);
        let x = stack_params(&states);
        metrics.push(measure(&x, dataset, shards, config.lambda, t as i64, eta)?);
    }

    let final_mean = mean_iterate(&stack_params(&states));
    Ok(RunTrace {
        metrics,
        bias_norm_sq: bias,
        initial_mean,
        final_mean,
    })
}

/// Per-round statistics across repeats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AveragedRow {
    pub round: i64,
    pub eta: f64,
    pub loss_mean: f64,
    pub loss_std: f64,
    pub consensus_error_mean: f64,
    pub consensus_error_std: f64,
    pub grad_norm_sq_mean: f64,
    pub grad_norm_sq_std: f64,
    pub loss_local_avg_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AveragedSeries {
    pub rows: Vec<AveragedRow>,
    pub per_repeat: Vec<RunTrace>,
}

/// Mean and sample standard deviation (zero for a single value). The mean
/// is accumulated as an offset from the first value, so identical inputs
/// give exactly that value and a zero deviation.
fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    let first = values.clone().next().unwrap_or(0.0);
    let mean = first + values.clone().map(|v| v - first).sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

pub fn average_traces(traces: Vec<RunTrace>) -> AveragedSeries {
    let len = traces.iter().map(|t| t.metrics.len()).min().unwrap_or(0);
    let rows = (0..len)
        .map(|k| {
            let col = |f: fn(&RoundMetrics) -> f64| traces.iter().map(move |t| f(&t.metrics[k]));
            let (loss_mean, loss_std) = mean_std(col(|m| m.loss));
            let (ce_mean, ce_std) = mean_std(col(|m| m.consensus_error));
            let (g_mean, g_std) = mean_std(col(|m| m.grad_norm_sq));
            let (local_mean, _) = mean_std(col(|m| m.loss_local_avg));
            let first = &traces[0].metrics[k];
            AveragedRow {
                round: first.round,
                eta: first.eta,
                loss_mean,
                loss_std,
                consensus_error_mean: ce_mean,
                consensus_error_std: ce_std,
                grad_norm_sq_mean: g_mean,
                grad_norm_sq_std: g_std,
                loss_local_avg_mean: local_mean,
            }
        })
        .collect();
    AveragedSeries { rows, per_repeat: traces }
}

pub fn run_averaged(config: &RunConfig) -> Result<AveragedSeries> {
    let problem = Problem::build(config)?;
    run_averaged_with(&problem, config)
}

/// Repeats run in parallel; each owns its keyed streams.
pub fn run_averaged_with(problem: &Problem, config: &RunConfig) -> Result<AveragedSeries> {
    warn_preconditions(config, problem);
    let traces = par::map_indices(config.repeats, |r| run_with(problem, config, r))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(average_traces(traces))
}
