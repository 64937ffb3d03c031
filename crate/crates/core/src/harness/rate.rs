use crate::error::{Error, Result};

/// Shortest series accepted by [`rate_fit`].
pub const MIN_SERIES_LEN: usize = 50;
const FIT_POINTS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateFit {
    /// Least-squares slope of `log A_T` against `log T`.
    Slope(f64),
    /// Every running average in the fit window is zero.
    ExactConvergence,
}

impl RateFit {
    pub fn slope(self) -> Option<f64> {
        match self {
            Self::Slope(s) => Some(s),
            Self::ExactConvergence => None,
        }
    }
}

/// `A_T = (1/T) sum_{t<T} series[t]` for `T = 1..=len`.
pub fn running_averages(series: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    series
        .iter()
        .enumerate()
        .map(|(k, v)| {
            acc += v;
            acc / (k + 1) as f64
        })
        .collect()
}

/// Ordinary least-squares slope of `ys` against `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Horizons `T` spaced logarithmically over `[ceil(len/10), len]`.
pub fn log_spaced_horizons(len: usize) -> Vec<usize> {
    let start = len.div_ceil(10).max(1);
    let (a, b) = ((start as f64).ln(), (len as f64).ln());
    let mut ts: Vec<usize> = (0..FIT_POINTS)
        .map(|k| (a + (b - a) * k as f64 / (FIT_POINTS - 1) as f64).exp().round() as usize)
        .map(|t| t.clamp(start, len))
        .collect();
    ts.dedup();
    ts
}

/// Empirical convergence rate of a squared-gradient-norm series: the slope
/// of `log A_T` against `log T` over log-spaced horizons, with the first
/// 10% of the series treated as burn-in. `-0.5` matches an `O(1/sqrt(T))`
/// rate; steeper slopes mean faster convergence.
pub fn rate_fit(series: &[f64]) -> Result<RateFit> {
    if series.len() < MIN_SERIES_LEN {
        return Err(Error::DegenerateSeries(format!(
            "need at least {MIN_SERIES_LEN} rounds, got {}",
            series.len()
        )));
    }
    if series.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::DegenerateSeries("series has negative or non-finite values".into()));
    }
    let avg = running_averages(series);
    let (xs, ys): (Vec<f64>, Vec<f64>) = log_spaced_horizons(series.len())
        .into_iter()
        .filter(|&t| avg[t - 1] > 0.0)
        .map(|t| ((t as f64).ln(), avg[t - 1].ln()))
        .unzip();
    match xs.len() {
        0 => Ok(RateFit::ExactConvergence),
        1 => Err(Error::DegenerateSeries("only one positive running average".into())),
        _ => Ok(RateFit::Slope(ls_slope(&xs, &ys))),
    }
}
