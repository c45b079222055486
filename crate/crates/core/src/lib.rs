//! Analytical performance model for LLM training and inference on parametric
//! accelerator systems.
//!
//! A [`workload::TaskGraph`] of typed kernels is sharded by [`mapping`] and
//! timed by the hierarchical roofline in [`engine`]. The timing math is
//! generic over [`Scalar`]; the aliases below name the common instantiations.

pub mod engine;
pub mod hwspec;
pub mod mapping;
pub mod overrides;
pub mod scalar;
pub mod workload;

pub use scalar::{Exact, Scalar};

/// Seconds, bytes/s and flops/s in double precision.
pub type Real = f64;

pub type System = hwspec::SystemSpec<f64>;
pub type System32 = hwspec::SystemSpec<f32>;
pub type ExactSystem = hwspec::SystemSpec<Exact>;

pub type Report = engine::PerfReport<f64>;
pub type Report32 = engine::PerfReport<f32>;
pub type ExactReport = engine::PerfReport<Exact>;

pub type Timing = engine::KernelTiming<f64>;
