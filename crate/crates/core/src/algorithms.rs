//! One synchronous round of each decentralized algorithm.
//!
//! * FedNDL1: local SGD step, then gossip of noisy parameters.
//! * FedNDL2: gossip of noisy parameters, then SGD at the gossiped point.
//! * FedNDL3: gossip of noisy gradients, applied to the local parameters.
//! * FedNMUT: noisy model-update tracking. Each client keeps copies `x̂_j`
//!   of its neighbors' parameters and broadcasts a tracking variable
//!   `ỹ_i = y_i + δ_i`; everybody who hears it applies `-η ỹ_i`.
//!
//! Rounds are barriers. Phase one computes every outgoing message from the
//! round-`t` state (parallel over clients), phase two applies all updates.
//! Channel noise is one draw per sender per round, so all receivers of
//! client `j` see the same `δ_j`.
//!
//! [`round_fednmut_matrix`] is the stacked bias-correction form
//! `X^{t+1} = X^t W - η (G^t + μ B^t + δ^t)` and serves as an independent
//! oracle for the per-client implementation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::channel::{derive_stream, standard_normal_vector, Purpose, StreamKey};
use crate::error::{Error, Result};
use crate::par;
use crate::topology::MixingMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    FedNdl1,
    FedNdl2,
    FedNdl3,
    FedNmut,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Self::FedNdl1, Self::FedNdl2, Self::FedNdl3, Self::FedNmut];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::FedNdl1 => "fedndl1",
            Self::FedNdl2 => "fedndl2",
            Self::FedNdl3 => "fedndl3",
            Self::FedNmut => "fednmut",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fedndl1" => Ok(Self::FedNdl1),
            "fedndl2" => Ok(Self::FedNdl2),
            "fedndl3" => Ok(Self::FedNdl3),
            "fednmut" => Ok(Self::FedNmut),
            other => Err(Error::InvalidConfig(format!("unknown algorithm `{other}`"))),
        }
    }
}

/// How initial parameters are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitMode {
    Zeros,
    /// One standard normal draw copied to every client.
    #[default]
    SharedRandom,
    IndependentRandom,
}

impl InitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Zeros => "zeros",
            Self::SharedRandom => "shared",
            Self::IndependentRandom => "independent",
        }
    }
}

impl FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "zeros" | "zero" => Ok(Self::Zeros),
            "shared" | "shared_random" => Ok(Self::SharedRandom),
            "independent" | "independent_random" => Ok(Self::IndependentRandom),
            other => Err(Error::InvalidConfig(format!("unknown x0 mode `{other}`"))),
        }
    }
}

/// Per-client state. The tracking fields are only touched by FedNMUT.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub x: DVector<f64>,
    /// Copies of neighbor parameters, keyed by neighbor index (self excluded).
    pub x_hat: BTreeMap<usize, DVector<f64>>,
    /// `Δ_i^{t-1}`.
    pub delta_prev: DVector<f64>,
    /// Last received `ỹ_j^{t-1}` for every `j` in the closed neighborhood.
    pub y_tilde_prev: BTreeMap<usize, DVector<f64>>,
    primed: bool,
}

impl ClientState {
    pub fn new(x: DVector<f64>) -> Self {
        let d = x.len();
        Self {
            x,
            x_hat: BTreeMap::new(),
            delta_prev: DVector::zeros(d),
            y_tilde_prev: BTreeMap::new(),
            primed: false,
        }
    }

    pub fn d(&self) -> usize {
        self.x.len()
    }
}

/// Build client states from initial parameters. Neighbor copies start equal
/// to the neighbors' true parameters and the tracking history is zero.
pub fn states_from_params(params: Vec<DVector<f64>>, mixing: &MixingMatrix) -> Result<Vec<ClientState>> {
    let n = mixing.n();
    if params.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: params.len(),
        });
    }
    let d = params.first().map_or(0, |p| p.len());
    let mut states = Vec::with_capacity(n);
    for i in 0..n {
        let mut s = ClientState::new(params[i].clone());
        for j in mixing.neighbors(i)? {
            if j != i {
                s.x_hat.insert(j, params[j].clone());
            }
            s.y_tilde_prev.insert(j, DVector::zeros(d));
        }
        states.push(s);
    }
    Ok(states)
}

/// Initial parameters drawn from the `Init` streams of `(seed, repeat)`.
pub fn init_params(n: usize, d: usize, mode: InitMode, seed: u64, repeat: u64) -> Vec<DVector<f64>> {
    let draw = |client: usize| {
        let mut s = derive_stream(StreamKey::new(seed, repeat, 0, client as u64, Purpose::Init));
        standard_normal_vector(&mut s, d)
    };
    match mode {
        InitMode::Zeros => vec![DVector::zeros(d); n],
        InitMode::SharedRandom => vec![draw(0); n],
        InitMode::IndependentRandom => (0..n).map(draw).collect(),
    }
}

pub fn init_states(
    mixing: &MixingMatrix,
    d: usize,
    mode: InitMode,
    seed: u64,
    repeat: u64,
) -> Result<Vec<ClientState>> {
    states_from_params(init_params(mixing.n(), d, mode, seed, repeat), mixing)
}

/// Stack client parameters as the columns of a d×n matrix.
pub fn stack_params(states: &[ClientState]) -> DMatrix<f64> {
    let d = states.first().map_or(0, ClientState::d);
    DMatrix::from_fn(d, states.len(), |r, c| states[c].x[r])
}

/// Inputs shared by every client in one round.
#[derive(Debug, Clone, Copy)]
pub struct RoundInputs<'a> {
    pub eta: f64,
    /// FedNMUT scaling factor; ignored by the other algorithms.
    pub mu: f64,
    pub mixing: &'a MixingMatrix,
    pub grads: &'a [DVector<f64>],
    pub noises: &'a [DVector<f64>],
}

/// Side outputs of a FedNMUT round.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RoundReport {
    /// `||B^t||_F^2`, the squared norm of the bias-correction term.
    pub bias_norm_sq: f64,
}

/// `μ/(1-μ) <= ρ/42`, the tracking condition of the convergence bound.
pub fn tracking_condition_holds(mu: f64, rho: f64) -> bool {
    mu / (1.0 - mu) <= rho / 42.0
}

fn check_vectors(vs: &[DVector<f64>], n: usize, d: usize) -> Result<()> {
    if vs.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: vs.len() });
    }
    match vs.iter().find(|v| v.len() != d) {
        Some(v) => Err(Error::DimensionMismatch { expected: d, got: v.len() }),
        None => Ok(()),
    }
}

fn check_round(states: &[ClientState], inputs: &RoundInputs<'_>) -> Result<usize> {
    let n = inputs.mixing.n();
    if states.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: states.len(),
        });
    }
    let d = states.first().map_or(0, ClientState::d);
    check_vectors(&states.iter().map(|s| s.x.clone()).collect::<Vec<_>>(), n, d)?;
    check_vectors(inputs.grads, n, d)?;
    check_vectors(inputs.noises, n, d)?;
    if !(inputs.eta > 0.0) {
        return Err(Error::ZeroStepSize(inputs.eta));
    }
    Ok(d)
}

/// `sum_j w_ij m_j` over the closed neighborhood of `i`.
fn mix_row(mixing: &MixingMatrix, i: usize, messages: &[DVector<f64>]) -> DVector<f64> {
    let mut out = DVector::zeros(messages[0].len());
    for (j, m) in messages.iter().enumerate() {
        let w = mixing.weight(i, j);
        if w != 0.0 {
            out.axpy(w, m, 1.0);
        }
    }
    out
}

/// FedNDL1: `x_i <- sum_j w_ij (x_j - η g_j + δ_j)`.
pub fn round_fedndl1(states: &mut [ClientState], inputs: &RoundInputs<'_>) -> Result<()> {
    check_round(states, inputs)?;
    let outgoing: Vec<DVector<f64>> = par::map_indices(states.len(), |j| {
        let mut half = states[j].x.clone();
        half.axpy(-inputs.eta, &inputs.grads[j], 1.0);
        half + &inputs.noises[j]
    });
    let mixed = par::map_indices(states.len(), |i| mix_row(inputs.mixing, i, &outgoing));
    for (s, x) in states.iter_mut().zip(mixed) {
        s.x = x;
    }
    Ok(())
}

/// FedNDL2: gossip noisy parameters, then take an SGD step at the gossiped
/// point. `grad(i, x)` returns client `i`'s stochastic gradient at `x`.
pub fn round_fedndl2<F>(
    states: &mut [ClientState],
    eta: f64,
    mixing: &MixingMatrix,
    noises: &[DVector<f64>],
    grad: F,
) -> Result<()>
where
    F: Fn(usize, &DVector<f64>) -> Result<DVector<f64>> + Sync + Send,
{
    let n = mixing.n();
    if states.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: states.len(),
        });
    }
    let d = states.first().map_or(0, ClientState::d);
    check_vectors(noises, n, d)?;
    if !(eta > 0.0) {
        return Err(Error::ZeroStepSize(eta));
    }
    let outgoing: Vec<DVector<f64>> = par::map_indices(n, |j| &states[j].x + &noises[j]);
    let updated: Vec<Result<DVector<f64>>> = par::map_indices(n, |i| {
        let mut half = mix_row(mixing, i, &outgoing);
        let g = grad(i, &half)?;
        if g.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: g.len() });
        }
        half.axpy(-eta, &g, 1.0);
        Ok(half)
    });
    for (s, x) in states.iter_mut().zip(updated) {
        s.x = x?;
    }
    Ok(())
}

/// FedNDL3: `x_i <- x_i - η sum_j w_ij (g_j + δ_j)`.
pub fn round_fedndl3(states: &mut [ClientState], inputs: &RoundInputs<'_>) -> Result<()> {
    check_round(states, inputs)?;
    let outgoing: Vec<DVector<f64>> =
        par::map_indices(states.len(), |j| &inputs.grads[j] + &inputs.noises[j]);
    let eta = inputs.eta;
    par::for_each_mut(states, |i, s| {
        let step = mix_row(inputs.mixing, i, &outgoing);
        s.x.axpy(-eta, &step, 1.0);
    });
    Ok(())
}

struct TrackingMessage {
    delta: DVector<f64>,
    y_tilde: DVector<f64>,
    bias: DVector<f64>,
}

/// FedNMUT, per client:
///
/// ```text
/// Δ_i = g_i - (1/η) sum_j w_ij (x̂_j - x_i)
/// y_i = Δ_i + μ [ sum_j w_ij (ỹ_j^{t-1} - (1/η)(x̂_j - x_i)) - Δ_i^{t-1} ]
/// ỹ_i = y_i + δ_i;  x_i <- x_i - η ỹ_i;  x̂_j <- x̂_j - η ỹ_j
/// ```
///
/// On a client's first round `Δ_i^{t-1}` is seeded with the gossip term
/// `-(1/η) sum_j w_ij (x̂_j - x_i)` so the bias term starts at exactly zero.
pub fn round_fednmut(states: &mut [ClientState], inputs: &RoundInputs<'_>) -> Result<RoundReport> {
    let d = check_round(states, inputs)?;
    let eta = inputs.eta;
    let inv_eta = 1.0 / eta;
    let mixing = inputs.mixing;
    let snapshot: &[ClientState] = states;

    let messages: Vec<TrackingMessage> = par::map_indices(snapshot.len(), |i| {
        let s = &snapshot[i];
        let mut gossip = DVector::zeros(d);
        for (&j, xh) in &s.x_hat {
            let diff = xh - &s.x;
            gossip.axpy(mixing.weight(i, j), &diff, 1.0);
        }
        let correction = gossip * inv_eta;
        let delta_prev = if s.primed {
            s.delta_prev.clone()
        } else {
            -&correction
        };
        let delta = &inputs.grads[i] - &correction;
        let mut bias = -correction - delta_prev;
        for (&j, y) in &s.y_tilde_prev {
            bias.axpy(mixing.weight(i, j), y, 1.0);
        }
        let mut y_tilde = delta.clone();
        y_tilde.axpy(inputs.mu, &bias, 1.0);
        y_tilde += &inputs.noises[i];
        TrackingMessage { delta, y_tilde, bias }
    });

    let bias_norm_sq = messages.iter().map(|m| m.bias.norm_squared()).sum();
    par::for_each_mut(states, |i, s| {
        s.x.axpy(-eta, &messages[i].y_tilde, 1.0);
        for (&j, xh) in s.x_hat.iter_mut() {
            xh.axpy(-eta, &messages[j].y_tilde, 1.0);
        }
        for (&j, y) in s.y_tilde_prev.iter_mut() {
            y.copy_from(&messages[j].y_tilde);
        }
        s.delta_prev.copy_from(&messages[i].delta);
        s.primed = true;
    });
    Ok(RoundReport { bias_norm_sq })
}

/// Stacked state for the matrix form of FedNMUT.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    /// d×n parameters, column `i` is client `i`.
    pub x: DMatrix<f64>,
    pub x_prev: DMatrix<f64>,
    pub g_prev: DMatrix<f64>,
    /// The bias matrix `B^t` used by the most recent round.
    pub b: DMatrix<f64>,
    /// Step size of the most recent round, `None` before the first.
    pub eta_prev: Option<f64>,
}

impl NetworkState {
    /// Cold start: `X^{-1} = X^0`, `G^{-1} = 0`, hence `B^0 = 0`.
    pub fn new(x: DMatrix<f64>) -> Self {
        let zeros = DMatrix::zeros(x.nrows(), x.ncols());
        Self {
            x_prev: x.clone(),
            g_prev: zeros.clone(),
            b: zeros,
            x,
            eta_prev: None,
        }
    }

    pub fn from_states(states: &[ClientState]) -> Self {
        Self::new(stack_params(states))
    }
}

fn columns(vs: &[DVector<f64>], d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, vs.len(), |r, c| vs[c][r])
}

/// FedNMUT in bias-correction form:
///
/// ```text
/// B^t     = -(1/η)[(X^t - X^{t-1})(2W - I) + η G^{t-1}]
/// X^{t+1} = X^t W - η (G^t + μ B^t + δ^t)
/// ```
///
/// With a step size that changes between rounds, the difference term is
/// scaled by the previous step and `-(1/η_t - 1/η_{t-1})(X^t W - X^t)` is
/// added; that term vanishes for a constant step and has zero column mean.
pub fn round_fednmut_matrix(net: &mut NetworkState, inputs: &RoundInputs<'_>) -> Result<()> {
    let (d, n) = net.x.shape();
    if n != inputs.mixing.n() {
        return Err(Error::DimensionMismatch {
            expected: inputs.mixing.n(),
            got: n,
        });
    }
    check_vectors(inputs.grads, n, d)?;
    check_vectors(inputs.noises, n, d)?;
    let eta = inputs.eta;
    if !(eta > 0.0) {
        return Err(Error::ZeroStepSize(eta));
    }
    let w = inputs.mixing.weights();
    let xw = &net.x * w;
    let g = columns(inputs.grads, d);
    let noise = columns(inputs.noises, d);

    let b = match net.eta_prev {
        None => DMatrix::zeros(d, n),
        Some(eta_prev) => {
            let two_w_minus_i = w * 2.0 - DMatrix::<f64>::identity(n, n);
            let mut b = (&net.x - &net.x_prev) * two_w_minus_i / eta_prev + &net.g_prev;
            b.neg_mut();
            let drift = 1.0 / eta - 1.0 / eta_prev;
            if drift != 0.0 {
                b -= (&xw - &net.x) * drift;
            }
            b
        }
    };

    let mut step = &g + &b * inputs.mu + noise;
    step *= eta;
    let next = xw - step;
    net.x_prev = std::mem::replace(&mut net.x, next);
    net.g_prev = g;
    net.b = b;
    net.eta_prev = Some(eta);
    Ok(())
}
