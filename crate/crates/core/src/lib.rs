//! Downlink precoding for cell-free massive MIMO networks under per-AP power
//! constraints and distributed CSI, solved through a virtual uplink.

pub mod channel;
pub mod duality;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod metrics;
pub mod precoders;
pub mod scenario;

pub use channel::{build_simlike_statistics, sample_ensemble, ChannelStatistics, CsiEnsemble, CsiMode, CsiSample};
pub use duality::{
    subgradient_ascent, AscentOptions, FeasibilityProblem, FeasibilityStatus, FeasibilityVerdict, InnerOptions,
};
pub use error::{Error, Result};
pub use experiment::{emit_results, rate_to_gamma, run_experiment, ExperimentResult, ExperimentSpec, PowerMode};
pub use metrics::{ConstraintTag, StochasticPrecoder};
pub use precoders::{MmseParams, PrecoderKind};
pub use scenario::{generate_scenario, GeometryConfig, NetworkScenario};
