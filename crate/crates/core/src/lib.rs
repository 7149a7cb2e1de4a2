//! Exact and Monte Carlo tools for condensing particle systems with
//! size-dependent product weights, Poisson-Dirichlet partitions and
//! split-merge dynamics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod ensembles;
pub mod error;
pub mod numeric;
pub mod partition;
pub mod rng;
pub mod sampler;
pub mod split_merge;
pub mod weights;

pub use diagnostics::{DiagnosticsReport, ReportRow};
pub use ensembles::{GrandCanonical, LogZTable, PhiL};
pub use error::{Error, Result};
pub use partition::{OrderedPartition, SizeBiasedSample, StickBreaking};
pub use rng::SeededRng;
pub use sampler::Configuration;
pub use split_merge::{CylinderFunction, SplitMergeState, Trajectory};
pub use weights::{Scale, WeightFamily};

/// Library version embedded in every output file.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
