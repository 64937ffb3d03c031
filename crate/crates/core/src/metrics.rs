//! Per-round measurements at the mean iterate.

use nalgebra::{DMatrix, DVector};

use crate::data::{Dataset, Shard};
use crate::error::Result;
use crate::objective::{global_gradient, global_loss, local_loss};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundMetrics {
    /// Round index; `-1` is the initial state, row `t` the state after round `t`.
    pub round: i64,
    pub eta: f64,
    /// `f(x̄)`.
    pub loss: f64,
    /// `(1/n) ||X - X̄||_F^2`.
    pub consensus_error: f64,
    /// `||∇f(x̄)||^2`.
    pub grad_norm_sq: f64,
    /// `(1/n) sum_i f_i(x_i)`.
    pub loss_local_avg: f64,
}

/// Column average of the d×n parameter matrix.
pub fn mean_iterate(x: &DMatrix<f64>) -> DVector<f64> {
    x.column_mean()
}

pub fn consensus_error(x: &DMatrix<f64>) -> f64 {
    let n = x.ncols();
    if n == 0 {
        return 0.0;
    }
    let mean = mean_iterate(x);
    x.column_iter().map(|c| (c - &mean).norm_squared()).sum::<f64>() / n as f64
}

pub fn measure(
    x: &DMatrix<f64>,
    dataset: &Dataset,
    shards: &[Shard],
    lambda: f64,
    round: i64,
    eta: f64,
) -> Result<RoundMetrics> {
    let mean = mean_iterate(x);
    let loss = global_loss(&mean, dataset, lambda)?;
    let grad_norm_sq = global_gradient(&mean, dataset, lambda)?.norm_squared();
    let mut local = 0.0;
    for (col, shard) in x.column_iter().zip(shards) {
        local += local_loss(&col.into_owned(), shard, dataset, lambda)?;
    }
    Ok(RoundMetrics {
        round,
        eta,
        loss,
        consensus_error: consensus_error(x),
        grad_norm_sq,
        loss_local_avg: local / shards.len().max(1) as f64,
    })
}
