//! Synthetic linear-regression data `y = <w, x> + eps` and its IID split.

use std::ops::Range;

use nalgebra::{DMatrix, DVector, DVectorView};
use rand::SeedableRng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::channel::Stream;
use crate::error::{Error, Result};

/// Regression samples. Features are stored one sample per column (d×m), so
/// a sample is a contiguous slice.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: DMatrix<f64>,
    labels: DVector<f64>,
    true_w: DVector<f64>,
    label_noise: DVector<f64>,
    label_noise_variance: f64,
    seed: u64,
}

impl Dataset {
    /// Draw `true_w`, then every feature row, then the label noise, all from
    /// one sequential stream seeded by `seed`.
    pub fn generate(m: usize, d: usize, label_noise_variance: f64, seed: u64) -> Result<Self> {
        if m == 0 || d == 0 {
            return Err(Error::InvalidConfig(format!(
                "dataset needs m >= 1 and d >= 1, got m={m}, d={d}"
            )));
        }
        if !(label_noise_variance >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "label noise variance must be nonnegative, got {label_noise_variance}"
            )));
        }
        let mut rng = Stream::seed_from_u64(seed);
        let true_w = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        let mut features = DMatrix::<f64>::zeros(d, m);
        for s in 0..m {
            for k in 0..d {
                features[(k, s)] = StandardNormal.sample(&mut rng);
            }
        }
        let label_noise = if label_noise_variance > 0.0 {
            let eps = Normal::new(0.0, label_noise_variance.sqrt()).expect("finite variance");
            DVector::from_fn(m, |_, _| eps.sample(&mut rng))
        } else {
            DVector::zeros(m)
        };
        let labels = DVector::from_fn(m, |s, _| features.column(s).dot(&true_w) + label_noise[s]);
        Ok(Self {
            features,
            labels,
            true_w,
            label_noise,
            label_noise_variance,
            seed,
        })
    }

    /// Assemble a dataset from explicit rows; `rows` is m×d. Label noise is
    /// recorded as the residual against `true_w`.
    pub fn from_parts(rows: &DMatrix<f64>, labels: DVector<f64>, true_w: DVector<f64>) -> Result<Self> {
        if rows.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.nrows(),
                got: labels.len(),
            });
        }
        if rows.ncols() != true_w.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.ncols(),
                got: true_w.len(),
            });
        }
        let features = rows.transpose();
        let label_noise = &labels - features.tr_mul(&true_w);
        Ok(Self {
            features,
            labels,
            true_w,
            label_noise,
            label_noise_variance: 0.0,
            seed: 0,
        })
    }

    pub fn m(&self) -> usize {
        self.features.ncols()
    }

    pub fn d(&self) -> usize {
        self.features.nrows()
    }

    /// Feature matrix with one sample per column (d×m).
    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn sample(&self, s: usize) -> DVectorView<'_, f64> {
        self.features.column(s)
    }

    pub fn labels(&self) -> &DVector<f64> {
        &self.labels
    }

    pub fn true_w(&self) -> &DVector<f64> {
        &self.true_w
    }

    /// The recorded label noise draws.
    pub fn label_noise(&self) -> &DVector<f64> {
        &self.label_noise
    }

    pub fn label_noise_variance(&self) -> f64 {
        self.label_noise_variance
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A shard covering every row.
    pub fn full_shard(&self) -> Shard {
        Shard {
            client: 0,
            rows: 0..self.m(),
        }
    }
}

/// A client's contiguous slice of dataset rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shard {
    pub client: usize,
    pub rows: Range<usize>,
}

impl Shard {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Contiguous split in row order; the first `m % n` shards take one extra row.
pub fn partition_iid(dataset: &Dataset, n: usize) -> Result<Vec<Shard>> {
    partition_rows(dataset.m(), n)
}

pub fn partition_rows(m: usize, n: usize) -> Result<Vec<Shard>> {
    if n == 0 {
        return Err(Error::InvalidConfig("need at least one client".into()));
    }
    if m < n {
        return Err(Error::TooFewSamples { samples: m, clients: n });
    }
    let (base, extra) = (m / n, m % n);
    let mut start = 0;
    Ok((0..n)
        .map(|client| {
            let len = base + usize::from(client < extra);
            let shard = Shard {
                client,
                rows: start..start + len,
            };
            start += len;
            shard
        })
        .collect())
}
