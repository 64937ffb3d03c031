//! Gossip mixing matrices for ring, torus and fully connected networks.
//!
//! Every matrix built here is symmetric and doubly stochastic with uniform
//! nonzero weights: 1/3 on a ring, 1/5 on a k×k wrap-around torus and 1/n on
//! the complete graph. The contraction factor `rho = 1 - lambda2^2` is the
//! tight constant in
//!
//! ```text
//! ||(X - X̄) W||_F^2 <= (1 - rho) ||X - X̄||_F^2
//! ```
//!
//! where `lambda2` is the largest eigenvalue magnitude of `W` on the subspace
//! orthogonal to the all-ones vector.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Second eigenvalues this close to 1 mean the graph is disconnected.
const DEGENERATE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TopologyKind {
    Ring,
    Torus,
    FullyConnected,
}

impl TopologyKind {
    pub const ALL: [TopologyKind; 3] = [Self::Ring, Self::Torus, Self::FullyConnected];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ring => "ring",
            Self::Torus => "torus",
            Self::FullyConnected => "full",
        }
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TopologyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ring" => Ok(Self::Ring),
            "torus" => Ok(Self::Torus),
            "full" | "fully_connected" | "fully-connected" | "complete" => Ok(Self::FullyConnected),
            other => Err(Error::InvalidConfig(format!("unknown topology `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TopologySpec {
    pub kind: TopologyKind,
    pub n: usize,
}

impl TopologySpec {
    pub fn new(kind: TopologyKind, n: usize) -> Self {
        Self { kind, n }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            TopologyKind::Ring if self.n < 3 => Err(Error::InvalidTopology(format!(
                "ring needs at least 3 clients, got {}",
                self.n
            ))),
            TopologyKind::Torus => {
                let k = torus_side(self.n);
                if k.is_none() {
                    Err(Error::InvalidTopology(format!(
                        "torus needs n = k*k with k >= 3, got {}",
                        self.n
                    )))
                } else {
                    Ok(())
                }
            }
            TopologyKind::FullyConnected if self.n == 0 => {
                Err(Error::InvalidTopology("fully connected network needs n >= 1".into()))
            }
            _ => Ok(()),
        }
    }
}

fn torus_side(n: usize) -> Option<usize> {
    let k = (n as f64).sqrt().round() as usize;
    (k >= 3 && k * k == n).then_some(k)
}

/// Symmetric doubly stochastic gossip weights plus their contraction factor.
#[derive(Debug, Clone)]
pub struct MixingMatrix {
    spec: TopologySpec,
    weights: DMatrix<f64>,
    rho: f64,
}

impl MixingMatrix {
    pub fn spec(&self) -> TopologySpec {
        self.spec
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Neighbors of `i`, including `i` itself, in ascending order.
    pub fn neighbors(&self, i: usize) -> Result<Vec<usize>> {
        neighbors(&self.weights, i)
    }

    /// Build a mixing matrix from arbitrary weights. Only used by test
    /// fixtures (e.g. the identity) that fall outside the three topologies.
    pub fn from_weights(weights: DMatrix<f64>) -> Result<Self> {
        if !weights.is_square() {
            return Err(Error::DimensionMismatch {
                expected: weights.nrows(),
                got: weights.ncols(),
            });
        }
        let n = weights.nrows();
        let rho = match spectral_contraction(&weights) {
            Ok(rho) => rho,
            Err(Error::DegenerateMatrix { .. }) => 0.0,
            Err(e) => return Err(e),
        };
        Ok(Self {
            spec: TopologySpec::new(TopologyKind::FullyConnected, n),
            weights,
            rho,
        })
    }
}

pub fn build_mixing(spec: TopologySpec) -> Result<MixingMatrix> {
    spec.validate()?;
    let n = spec.n;
    let mut w = DMatrix::<f64>::zeros(n, n);
    match spec.kind {
        TopologyKind::Ring => {
            let v = 1.0 / 3.0;
            for i in 0..n {
                w[(i, (i + n - 1) % n)] = v;
                w[(i, i)] = v;
                w[(i, (i + 1) % n)] = v;
            }
        }
        TopologyKind::Torus => {
            let k = torus_side(n).expect("validated");
            let v = 1.0 / 5.0;
            for i in 0..n {
                for j in torus_neighbors(k, i) {
                    w[(i, j)] = v;
                }
            }
        }
        TopologyKind::FullyConnected => {
            w.fill(1.0 / n as f64);
        }
    }
    let rho = spectral_contraction(&w)?;
    Ok(MixingMatrix { spec, weights: w, rho })
}

/// Self plus right, left, down, up on a row-major k×k wrap-around grid.
fn torus_neighbors(k: usize, i: usize) -> [usize; 5] {
    let (r, c) = (i / k, i % k);
    [
        i,
        r * k + (c + 1) % k,
        r * k + (c + k - 1) % k,
        ((r + 1) % k) * k + c,
        ((r + k - 1) % k) * k + c,
    ]
}

/// Largest eigenvalue magnitude of `w` restricted to the complement of the
/// all-ones direction.
pub fn second_eigenvalue(w: &DMatrix<f64>) -> f64 {
    let n = w.nrows();
    if n <= 1 {
        return 0.0;
    }
    let j = 1.0 / n as f64;
    let deflated = DMatrix::from_fn(n, n, |a, b| 0.5 * (w[(a, b)] + w[(b, a)]) - j);
    SymmetricEigen::new(deflated)
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// `rho = 1 - lambda2^2` for a symmetric doubly stochastic matrix.
pub fn spectral_contraction(w: &DMatrix<f64>) -> Result<f64> {
    let lambda2 = second_eigenvalue(w);
    if lambda2 >= 1.0 - DEGENERATE_TOL {
        return Err(Error::DegenerateMatrix { lambda2 });
    }
    Ok(1.0 - lambda2 * lambda2)
}

pub fn neighbors(w: &DMatrix<f64>, i: usize) -> Result<Vec<usize>> {
    let n = w.nrows();
    if i >= n {
        return Err(Error::IndexOutOfRange { index: i, len: n });
    }
    let set: BTreeSet<usize> = (0..n)
        .filter(|&j| w[(i, j)] > 0.0)
        .chain(std::iter::once(i))
        .collect();
    Ok(set.into_iter().collect())
}
