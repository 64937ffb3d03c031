//! Simulation engine for decentralized federated learning over noisy
//! communication channels.
//!
//! Clients hold IID shards of a synthetic ridge-regression problem and
//! exchange parameters, gradients or tracking variables through a gossip
//! mixing matrix. Every transmitted message is corrupted by zero-mean
//! Gaussian noise. Four algorithms are implemented (FedNDL1/2/3 and FedNMUT),
//! together with executable checks of the assumptions behind the FedNMUT
//! convergence bound and a seeded, reproducible experiment harness.

pub mod algorithms;
pub mod channel;
pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod objective;
pub mod par;
pub mod theory_checks;
pub mod topology;

pub use algorithms::{Algorithm, ClientState, InitMode, NetworkState, RoundInputs, RoundReport};
pub use channel::{derive_stream, sample_noise, NoiseSpec, Purpose, Stream, StreamKey};
pub use data::{partition_iid, Dataset, Shard};
pub use error::{Error, Result};
pub use harness::{LrSchedule, RunConfig};
pub use metrics::RoundMetrics;
pub use objective::ObjectiveConfig;
pub use topology::{build_mixing, MixingMatrix, TopologyKind, TopologySpec};
