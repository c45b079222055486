//! Timing of mapped graphs on a system.
//!
//! Compute kernels go through the hierarchical roofline in [`roofline`],
//! communication through the ring formulas in [`collective`]. Kernels within
//! a stage run back to back; stages compose through a fill-drain pipeline
//! for training and run sequentially for inference.

mod collective;
mod pipeline;
mod roofline;

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

pub use collective::{p2p, ring_allgather, ring_allreduce, simulate_ring_allreduce, time_collective};
pub use pipeline::{time_pipeline, PipelineTiming};
pub use roofline::{
    level_share, place_operands, time_kernel, BoundClass, KernelTiming, KvResidency, LevelBytes,
    MemoryAccessModel, PlacementContext, PlacementPolicy,
};

use crate::hwspec::{HwError, Precision, SystemSpec};
use crate::mapping::{
    apply_parallelism, check_fit, memory_footprint, FitReport, Footprint, MappedGraph, MappingError,
    MappingSpec,
};
use crate::scalar::Scalar;
use crate::workload::{build_graph, Kernel, ModelSpec, Phase, Role, WorkloadError, WorkloadSpec};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("kernel {kernel}: {reason}")]
    Placement { kernel: String, reason: String },
    #[error("device has no peak rate for {0}")]
    NoPeak(Precision),
    #[error("pipeline has no stages")]
    EmptyPipeline,
    #[error("pipeline needs at least one microbatch")]
    NoMicrobatches,
    #[error("memory_access: request_granularity and max_outstanding must be > 0")]
    InvalidAccessModel,
    #[error(transparent)]
    Hw(#[from] HwError),
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
}

/// Builds, maps and times a scenario in one call.
pub fn estimate<T: Scalar>(
    model: &ModelSpec,
    wl: &WorkloadSpec,
    mapping: &MappingSpec,
    sys: &SystemSpec<T>,
    mam: &MemoryAccessModel,
    policy: PlacementPolicy,
) -> Result<PerfReport<T>, EngineError> {
    mapping.check_devices(u64::from(sys.device_count))?;
    let g = build_graph(model, wl)?;
    let mg = apply_parallelism(&g, mapping, model)?;
    evaluate_with(&mg, sys, mam, policy)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerfReport<T> {
    pub total_time: T,
    /// Compute kernels inside the pipeline.
    pub compute_time: T,
    /// Collectives and stage transfers.
    pub communication_time: T,
    /// Pipeline bubble plus the optimizer step.
    pub other_time: T,
    pub bubble_time: T,
    pub weight_update_time: T,
    pub achieved_flops_per_device: T,
    pub useful_flops: u128,
    pub devices: u64,
    /// Names of the hierarchy levels that `bound` and `bytes` index.
    pub levels: Vec<String>,
    /// Fraction of per-device kernel time spent in each bound class.
    pub bound_fractions: BTreeMap<String, T>,
    pub footprint: Footprint,
    pub fit: FitReport,
    pub kernels: Vec<KernelTiming<T>>,
}

/// Times every kernel of `mg` on `sys` and aggregates the breakdown.
pub fn evaluate<T: Scalar>(
    mg: &MappedGraph,
    sys: &SystemSpec<T>,
    mam: &MemoryAccessModel,
) -> Result<PerfReport<T>, EngineError> {
    evaluate_with(mg, sys, mam, PlacementPolicy::default())
}

pub fn evaluate_with<T: Scalar>(
    mg: &MappedGraph,
    sys: &SystemSpec<T>,
    mam: &MemoryAccessModel,
    policy: PlacementPolicy,
) -> Result<PerfReport<T>, EngineError> {
    mam.validate()?;
    mg.mapping.check_devices(u64::from(sys.device_count))?;
    let devices = mg.devices();
    let levels = sys.hierarchy(devices as u32)?;
    let ctx = PlacementContext {
        precision: mg.metadata.precision,
        kv_cache_per_device: mg.kv_cache_per_device,
        active_devices: devices,
        policy,
    };
    let time_one = |k: &Kernel, stage: Option<u32>, count: u64| -> Result<KernelTiming<T>, EngineError> {
        let mut t = match time_collective(&k.kind, &sys.interconnect) {
            Some(time) => KernelTiming {
                tag: k.tag,
                stage,
                count,
                time,
                bound: BoundClass::Network,
                flops: 0,
                useful_flops: 0,
                bytes: Vec::new(),
            },
            None => {
                let residency = place_operands(k, &ctx, &levels)?;
                time_kernel(k, &sys.device, &levels, &residency, mam, ctx.precision)?
            }
        };
        t.stage = stage;
        t.count = count;
        Ok(t)
    };

    let mut kernels = Vec::with_capacity(mg.kernel_count());
    let mut stage_compute = Vec::with_capacity(mg.stages.len());
    let mut stage_comm = Vec::with_capacity(mg.stages.len());
    for s in &mg.stages {
        let (mut c, mut n) = (T::zero(), T::zero());
        for k in &s.kernels {
            let t = time_one(k, Some(s.index as u32), mg.repeats)?;
            if k.kind.is_communication() {
                n = n + t.time;
            } else {
                c = c + t.time;
            }
            kernels.push(t);
        }
        stage_compute.push(c);
        stage_comm.push(n);
    }
    let (mut update, mut sync) = (T::zero(), T::zero());
    for k in &mg.epilogue {
        let t = time_one(k, None, 1)?;
        if k.kind.is_communication() {
            sync = sync + t.time;
        } else {
            update = update + t.time;
        }
        kernels.push(t);
    }

    let sum = |v: &[T]| v.iter().fold(T::zero(), |a, &b| a + b);
    let (compute_time, communication_time, bubble) = match mg.phase() {
        Phase::Inference => (sum(&stage_compute), sum(&stage_comm) + sync, T::zero()),
        Phase::Training => {
            let stage_times: Vec<T> = stage_compute
                .iter()
                .zip(&stage_comm)
                .map(|(&c, &n)| c + n)
                .collect();
            let pipe = time_pipeline(&stage_times, mg.repeats)?;
            let share = T::from_count(mg.repeats) / T::from_count(stage_times.len() as u64);
            (
                share * sum(&stage_compute),
                share * sum(&stage_comm) + sync,
                pipe.bubble,
            )
        }
    };
    let other_time = bubble + update;
    let total_time = compute_time + communication_time + other_time;
    let useful_flops = mg.metadata.totals.useful_flops;
    let achieved = if total_time > T::zero() {
        T::from_wide(useful_flops) / (total_time * T::from_count(devices))
    } else {
        T::zero()
    };
    let level_names: Vec<String> = levels.iter().map(|l| l.name.clone()).collect();
    let bound_fractions = fractions(kernels.iter(), &level_names);
    Ok(PerfReport {
        total_time,
        compute_time,
        communication_time,
        other_time,
        bubble_time: bubble,
        weight_update_time: update,
        achieved_flops_per_device: achieved,
        useful_flops,
        devices,
        levels: level_names,
        bound_fractions,
        footprint: memory_footprint(mg),
        fit: check_fit(mg, sys),
        kernels,
    })
}

fn fractions<'a, T: Scalar>(
    timings: impl Iterator<Item = &'a KernelTiming<T>>,
    levels: &[String],
) -> BTreeMap<String, T> {
    let mut by_class: BTreeMap<BoundClass, T> = BTreeMap::new();
    let mut total = T::zero();
    for t in timings {
        let w = t.time * T::from_count(t.count);
        *by_class.entry(t.bound).or_insert_with(T::zero) =
            by_class.get(&t.bound).copied().unwrap_or_else(T::zero) + w;
        total = total + w;
    }
    let mut out = BTreeMap::new();
    if total > T::zero() {
        for (class, t) in by_class {
            out.insert(class.label(levels), t / total);
        }
    }
    out
}

/// Time fractions by bound class over the kernels selected by `filter`,
/// weighted by how often each runs. Empty when nothing matches or the
/// selection takes no time.
pub fn boundedness_profile<T: Scalar>(
    report: &PerfReport<T>,
    filter: impl Fn(&KernelTiming<T>) -> bool,
) -> BTreeMap<String, T> {
    fractions(report.kernels.iter().filter(|t| filter(t)), &report.levels)
}

/// Share of the selection's time that is memory-bound, by bandwidth or by
/// latency at any level.
pub fn memory_bound_fraction<T: Scalar>(
    report: &PerfReport<T>,
    filter: impl Fn(&KernelTiming<T>) -> bool,
) -> T {
    let mut mem = T::zero();
    let mut total = T::zero();
    for t in report.kernels.iter().filter(|t| filter(t)) {
        let w = t.time * T::from_count(t.count);
        if t.bound.is_memory() {
            mem = mem + w;
        }
        total = total + w;
    }
    if total > T::zero() {
        mem / total
    } else {
        T::zero()
    }
}

/// Forward-pass gemms, the selection behind the compute-versus-memory split
/// of a training step.
pub fn is_forward_gemm<T>(t: &KernelTiming<T>) -> bool {
    t.tag.pass == crate::workload::Pass::Forward && t.flops > 0 && t.tag.role.is_gemm()
}

/// Per-step time of the score and context products.
pub fn attention_time<T: Scalar>(report: &PerfReport<T>) -> T {
    report
        .kernels
        .iter()
        .filter(|t| t.tag.role.is_attention())
        .fold(T::zero(), |a, t| a + t.time * T::from_count(t.count))
}

/// Per-step time spent in kernels of `role`.
pub fn role_time<T: Scalar>(report: &PerfReport<T>, role: Role) -> T {
    report
        .kernels
        .iter()
        .filter(|t| t.tag.role == role)
        .fold(T::zero(), |a, t| a + t.time * T::from_count(t.count))
}
