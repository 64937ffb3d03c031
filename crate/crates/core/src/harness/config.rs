use std::path::PathBuf;

use crate::algorithms::{Algorithm, InitMode};
use crate::error::{Error, Result};
use crate::objective::{ObjectiveConfig, DEFAULT_BATCH_SIZE, DEFAULT_LAMBDA};
use crate::topology::{TopologyKind, TopologySpec};

/// Step-decay schedule `eta_t = eta0 * gamma^floor(t / K)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub eta0: f64,
    pub gamma: f64,
    pub decay_interval: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            eta0: 0.2,
            gamma: 0.9,
            decay_interval: 10,
        }
    }
}

impl LrSchedule {
    pub fn constant(eta: f64) -> Self {
        Self {
            eta0: eta,
            gamma: 1.0,
            decay_interval: 1,
        }
    }

    pub fn eta_at(&self, t: usize) -> f64 {
        let k = self.decay_interval.max(1);
        self.eta0 * self.gamma.powi((t / k) as i32)
    }
}

/// Everything needed to reproduce one experiment cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub topology: TopologyKind,
    pub clients: usize,
    pub dim: usize,
    pub samples: usize,
    pub rounds: usize,
    pub lr: LrSchedule,
    pub mu: f64,
    /// Per-coordinate channel noise variance.
    pub noise_var: f64,
    /// Variance of the label noise in the synthetic data.
    pub label_noise: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub repeats: usize,
    pub seed: u64,
    pub x0: InitMode,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::FedNmut,
            topology: TopologyKind::Ring,
            clients: 16,
            dim: 200,
            samples: 2000,
            rounds: 500,
            lr: LrSchedule::default(),
            mu: 0.02,
            noise_var: 0.0,
            label_noise: 0.05,
            lambda: DEFAULT_LAMBDA,
            batch_size: DEFAULT_BATCH_SIZE,
            repeats: 3,
            seed: 1,
            x0: InitMode::SharedRandom,
            out_dir: PathBuf::from("out"),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad value `{value}` for `{key}`")))
}

impl RunConfig {
    pub fn topology_spec(&self) -> TopologySpec {
        TopologySpec::new(self.topology, self.clients)
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            lambda: self.lambda,
            batch_size: self.batch_size,
        }
    }

    /// Full-size problem: d = 2000, m = 10000.
    pub fn paper_scale(mut self) -> Self {
        self.dim = 2000;
        self.samples = 10_000;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.rounds < 1 {
            return bad("rounds must be at least 1".into());
        }
        if self.repeats < 1 {
            return bad("repeats must be at least 1".into());
        }
        if !(self.lr.eta0 > 0.0) {
            return bad(format!("lr0 must be positive, got {}", self.lr.eta0));
        }
        if !(self.lr.gamma > 0.0 && self.lr.gamma <= 1.0) {
            return bad(format!("lr-gamma must lie in (0, 1], got {}", self.lr.gamma));
        }
        if self.lr.decay_interval < 1 {
            return bad("lr-interval must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.mu) {
            return bad(format!("mu must lie in [0, 1), got {}", self.mu));
        }
        if !(self.noise_var >= 0.0) || !(self.label_noise >= 0.0) || !(self.lambda >= 0.0) {
            return bad("variances and lambda must be nonnegative".into());
        }
        if self.batch_size < 1 || self.dim < 1 {
            return bad("batch-size and dim must be at least 1".into());
        }
        if self.samples < self.clients {
            return Err(Error::TooFewSamples {
                samples: self.samples,
                clients: self.clients,
            });
        }
        self.topology_spec().validate()
    }

    /// Set one field by its key. Keys match the CLI flag names; dashes and
    /// underscores are ignored, so `noise-var`, `noise_var` and `noisevar`
    /// are the same key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let norm: String = key
            .trim()
            .chars()
            .filter(|c| *c != '-' && *c != '_')
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "algorithm" => self.algorithm = value.parse()?,
            "topology" => self.topology = value.parse()?,
            "clients" => self.clients = parse(key, value)?,
            "dim" => self.dim = parse(key, value)?,
            "samples" => self.samples = parse(key, value)?,
            "rounds" => self.rounds = parse(key, value)?,
            "noisevar" => self.noise_var = parse(key, value)?,
            "labelnoise" => self.label_noise = parse(key, value)?,
            "mu" => self.mu = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "batchsize" => self.batch_size = parse(key, value)?,
            "lr0" => self.lr.eta0 = parse(key, value)?,
            "lrgamma" => self.lr.gamma = parse(key, value)?,
            "lrinterval" => self.lr.decay_interval = parse(key, value)?,
            "repeats" => self.repeats = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "x0" => self.x0 = value.parse()?,
            "out" => self.out_dir = PathBuf::from(value.trim()),
            "paperscale" => {
                if parse::<bool>(key, value)? {
                    *self = std::mem::take(self).paper_scale();
                }
            }
            _ => return Err(Error::InvalidConfig(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Every field as `key = value` lines, readable by [`Self::apply_file_text`].
    pub fn to_file_text(&self) -> String {
        let pairs: [(&str, String); 18] = [
            ("algorithm", self.algorithm.to_string()),
            ("topology", self.topology.to_string()),
            ("clients", self.clients.to_string()),
            ("dim", self.dim.to_string()),
            ("samples", self.samples.to_string()),
            ("rounds", self.rounds.to_string()),
            ("noise-var", self.noise_var.to_string()),
            ("label-noise", self.label_noise.to_string()),
            ("mu", self.mu.to_string()),
            ("lambda", self.lambda.to_string()),
            ("batch-size", self.batch_size.to_string()),
            ("lr0", self.lr.eta0.to_string()),
            ("lr-gamma", self.lr.gamma.to_string()),
            ("lr-interval", self.lr.decay_interval.to_string()),
            ("repeats", self.repeats.to_string()),
            ("seed", self.seed.to_string()),
            ("x0", self.x0.as_str().to_string()),
            ("out", self.out_dir.display().to_string()),
        ];
        pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Apply a flat `key = value` file. `#` starts a comment.
    pub fn apply_file_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }
}
