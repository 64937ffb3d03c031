//! Ridge-regression objectives.
//!
//! Local loss on a shard is the mean squared error plus an L2 term,
//! `f_i(x) = (1/|S|) sum_s (<x, a_s> - y_s)^2 + lambda ||x||^2`, so every
//! gradient carries a factor of 2.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::data::{Dataset, Shard};
use crate::error::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 1e-4;
pub const DEFAULT_BATCH_SIZE: usize = 32;

/// Largest dimension accepted by the dense ridge solve.
pub const MAX_DENSE_DIM: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub lambda: f64,
    pub batch_size: usize,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            batch_size: DEFAULT_BATCH_SIZE,
        }
    }
}

fn check_dim(x: &DVector<f64>, dataset: &Dataset) -> Result<()> {
    if x.len() != dataset.d() {
        return Err(Error::DimensionMismatch {
            expected: dataset.d(),
            got: x.len(),
        });
    }
    Ok(())
}

fn check_shard(shard: &Shard) -> Result<()> {
    if shard.is_empty() {
        Err(Error::EmptyShard)
    } else {
        Ok(())
    }
}

pub fn local_loss(x: &DVector<f64>, shard: &Shard, dataset: &Dataset, lambda: f64) -> Result<f64> {
    check_shard(shard)?;
    check_dim(x, dataset)?;
    let feats = dataset.features().columns_range(shard.rows.clone());
    let labels = dataset.labels().rows_range(shard.rows.clone());
    let residual = feats.tr_mul(x) - labels;
    Ok(residual.norm_squared() / shard.len() as f64 + lambda * x.norm_squared())
}

pub fn global_loss(x: &DVector<f64>, dataset: &Dataset, lambda: f64) -> Result<f64> {
    local_loss(x, &dataset.full_shard(), dataset, lambda)
}

/// Exact gradient over every row of the shard.
pub fn full_local_gradient(
    x: &DVector<f64>,
    shard: &Shard,
    dataset: &Dataset,
    lambda: f64,
) -> Result<DVector<f64>> {
    check_shard(shard)?;
    check_dim(x, dataset)?;
    let feats = dataset.features().columns_range(shard.rows.clone());
    let labels = dataset.labels().rows_range(shard.rows.clone());
    let residual = feats.tr_mul(x) - labels;
    let mut g = feats * residual;
    g *= 2.0 / shard.len() as f64;
    g.axpy(2.0 * lambda, x, 1.0);
    Ok(g)
}

pub fn global_gradient(x: &DVector<f64>, dataset: &Dataset, lambda: f64) -> Result<DVector<f64>> {
    full_local_gradient(x, &dataset.full_shard(), dataset, lambda)
}

/// Minibatch gradient with the batch drawn uniformly without replacement
/// from the shard. A batch at least as large as the shard uses every row and
/// draws nothing from `rng`.
pub fn stochastic_gradient<R: Rng + ?Sized>(
    x: &DVector<f64>,
    shard: &Shard,
    dataset: &Dataset,
    config: &ObjectiveConfig,
    rng: &mut R,
) -> Result<DVector<f64>> {
    check_shard(shard)?;
    check_dim(x, dataset)?;
    let batch = config.batch_size.max(1);
    if batch >= shard.len() {
        return full_local_gradient(x, shard, dataset, config.lambda);
    }
    let picks = rand::seq::index::sample(rng, shard.len(), batch);
    let mut g = DVector::zeros(dataset.d());
    for offset in picks.iter() {
        let s = shard.rows.start + offset;
        let a = dataset.sample(s);
        let r = a.dot(x) - dataset.labels()[s];
        g.axpy(r, &a, 1.0);
    }
    g *= 2.0 / batch as f64;
    g.axpy(2.0 * config.lambda, x, 1.0);
    Ok(g)
}

/// Exact minimizer of the global loss from the normal equations
/// `(2 A^T A / m + 2 lambda I) x = 2 A^T y / m`, and the loss it attains.
pub fn ridge_optimum(dataset: &Dataset, lambda: f64) -> Result<(DVector<f64>, f64)> {
    let d = dataset.d();
    if d > MAX_DENSE_DIM {
        return Err(Error::InvalidConfig(format!(
            "dense ridge solve limited to d <= {MAX_DENSE_DIM}, got {d}"
        )));
    }
    let m = dataset.m() as f64;
    let a = dataset.features();
    let mut h: DMatrix<f64> = a * a.transpose();
    h *= 2.0 / m;
    for k in 0..d {
        h[(k, k)] += 2.0 * lambda;
    }
    let mut rhs = a * dataset.labels();
    rhs *= 2.0 / m;
    let x = match h.clone().cholesky() {
        Some(chol) => chol.solve(&rhs),
        None => h.lu().solve(&rhs).ok_or(Error::SingularSystem)?,
    };
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    let loss = global_loss(&x, dataset, lambda)?;
    Ok((x, loss))
}
