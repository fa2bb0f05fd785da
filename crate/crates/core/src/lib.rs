//! Tiled half-precision GEMM with correctness protocols, a timing harness
//! and a heuristic autotuner.
//!
//! The numeric base is [`half16`], a software binary16 with correctly
//! rounded arithmetic. [`kernel`] holds the parameterized tiled engine,
//! [`oracle`] the reference products it is checked against, and [`verify`]
//! the exact-match and baseline-bounded correctness checks. [`bench`] times
//! kernel pairs, [`tuner`] searches configurations, and [`analysis`]
//! summarizes which configurations won.

pub mod analysis;
pub mod bench;
pub mod error;
pub mod half16;
pub mod kernel;
pub mod oracle;
pub mod store;
pub mod tensor;
pub mod tuner;
pub mod verify;

pub use error::{Error, Result};
pub use half16::Half;
pub use kernel::{Accumulator, GemmKernel, KernelParams};
pub use tensor::{Layout, MatHalf, Order, Problem};
