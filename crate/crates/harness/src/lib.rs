//! Verification and measurement tooling around `cosformer-core`: the
//! randomized equivalence suite, the scaling benchmark, attention coverage
//! heatmaps and matrix file I/O.

pub mod bench;
pub mod equivalence;
pub mod error;
pub mod io;
pub mod viz;

pub use error::{HarnessError, Result};

/// Process exit status when a check or suite fails.
pub const EXIT_SUITE_FAILURE: i32 = 1;
