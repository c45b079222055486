//! Tensor, pipeline and data parallel sharding of a task graph.
//!
//! Tensor parallelism follows the usual two-allreduce block: QKV and the
//! first FFN gemm are split column-wise, the output projection and second
//! FFN gemm row-wise, attention is split by heads. Each split leaves a
//! partial sum that is allreduced after the output projection and after the
//! second FFN gemm (and, in backward, after the input gradients of QKV and
//! the first FFN gemm).
//!
//! A [`MappedGraph`] keeps one kernel template per pipeline stage for a
//! single microbatch plus an epilogue (gradient allreduce and optimizer step)
//! run once per step.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hwspec::{Precision, SystemSpec};
use crate::scalar::Scalar;
use crate::workload::{
    kernel_bytes, kv_cache_bytes, param_count, Axis, CollectiveOp, ElementSplit, Elementwise, Gemm, Grad,
    GraphMeta, Kernel, KernelKind, KernelTag, ModelSpec, Pass, Phase, Role, TaskGraph, WorkloadError,
};

/// fp32 master weights plus two fp32 moments.
pub const OPTIMIZER_STATE_BYTES_PER_PARAM: u64 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingSpec {
    pub tp: u64,
    pub pp: u64,
    pub dp: u64,
    #[serde(default = "one")]
    pub microbatches: u64,
}

fn one() -> u64 {
    1
}

impl Default for MappingSpec {
    fn default() -> Self {
        MappingSpec {
            tp: 1,
            pp: 1,
            dp: 1,
            microbatches: 1,
        }
    }
}

impl MappingSpec {
    pub fn new(tp: u64, pp: u64, dp: u64, microbatches: u64) -> Self {
        MappingSpec {
            tp,
            pp,
            dp,
            microbatches,
        }
    }

    pub fn devices(&self) -> u64 {
        self.tp * self.pp * self.dp
    }

    pub fn check_devices(&self, device_count: u64) -> Result<(), MappingError> {
        if self.devices() != device_count {
            return Err(MappingError::DeviceMismatch {
                tp: self.tp,
                pp: self.pp,
                dp: self.dp,
                device_count,
            });
        }
        Ok(())
    }

    /// Checks the mapping against a model and the scenario's batch.
    pub fn validate(&self, model: &ModelSpec, phase: Phase, batch: u64) -> Result<(), MappingError> {
        for (field, v) in [
            ("tp", self.tp),
            ("pp", self.pp),
            ("dp", self.dp),
            ("microbatches", self.microbatches),
        ] {
            if v < 1 {
                return Err(invalid(field, "must be ≥ 1"));
            }
        }
        if !model.num_heads.is_multiple_of(self.tp) {
            return Err(invalid("tp", "must divide num_heads"));
        }
        if !model.ffn_dim.is_multiple_of(self.tp) {
            return Err(invalid("tp", "must divide ffn_dim"));
        }
        if !model.num_layers.is_multiple_of(self.pp) {
            return Err(invalid("pp", "must divide num_layers"));
        }
        match phase {
            Phase::Training => {
                if !batch.is_multiple_of(self.dp * self.microbatches) {
                    return Err(invalid("dp", "dp × microbatches must divide batch"));
                }
            }
            Phase::Inference => {
                if self.microbatches != 1 {
                    return Err(invalid("microbatches", "must be 1 for inference"));
                }
                if !batch.is_multiple_of(self.dp) {
                    return Err(invalid("dp", "must divide batch"));
                }
            }
        }
        Ok(())
    }

    /// Ways the token dimension is split: across replicas and, in training,
    /// across microbatches.
    fn data_split(&self, phase: Phase) -> u64 {
        match phase {
            Phase::Training => self.dp * self.microbatches,
            Phase::Inference => self.dp,
        }
    }
}

fn invalid(field: &str, rule: &str) -> MappingError {
    MappingError::Invalid {
        field: format!("mapping.{field}"),
        rule: rule.to_string(),
    }
}

#[derive(Debug, Error)]
pub enum MappingError {
    #[error("invalid mapping: {field} {rule}")]
    Invalid { field: String, rule: String },
    #[error("mapping tp·pp·dp = {tp}·{pp}·{dp} must equal device_count {device_count}")]
    DeviceMismatch {
        tp: u64,
        pp: u64,
        dp: u64,
        device_count: u64,
    },
    #[error("kernel {kernel}: {what} is not divisible by {by}")]
    Indivisible {
        kernel: String,
        what: &'static str,
        by: u64,
    },
    #[error(transparent)]
    Workload(#[from] WorkloadError),
}

/// Per-device bytes of each resident category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Footprint {
    pub weights: u64,
    pub activations: u64,
    pub optimizer_state: u64,
    pub kv_cache: u64,
}

impl Footprint {
    pub fn total(&self) -> u64 {
        self.weights + self.activations + self.optimizer_state + self.kv_cache
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub index: u64,
    pub first_layer: u64,
    pub num_layers: u64,
    /// One microbatch worth of work on one device of this stage.
    pub kernels: Vec<Kernel>,
    pub footprint: Footprint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappedGraph {
    pub mapping: MappingSpec,
    /// Source graph metadata; totals are the unsharded ones.
    pub metadata: GraphMeta,
    pub stages: Vec<Stage>,
    /// Per-device work run once per step after the pipeline drains.
    pub epilogue: Vec<Kernel>,
    /// Times each stage template runs per step.
    pub repeats: u64,
    /// Per-device KV cache, used by the placement policy.
    pub kv_cache_per_device: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FootprintConfig {
    pub optimizer_state_bytes_per_param: u64,
}

impl Default for FootprintConfig {
    fn default() -> Self {
        FootprintConfig {
            optimizer_state_bytes_per_param: OPTIMIZER_STATE_BYTES_PER_PARAM,
        }
    }
}

fn exact_div(v: u64, by: u64, kernel: &Kernel, what: &'static str) -> Result<u64, MappingError> {
    if by == 0 || !v.is_multiple_of(by) {
        return Err(MappingError::Indivisible {
            kernel: kernel.id(),
            what,
            by,
        });
    }
    Ok(v / by)
}

fn shard_gemm(k: &Kernel, g: &Gemm, data: u64, tp: u64) -> Result<Gemm, MappingError> {
    let mut s = *g;
    for (axis, by, what) in [
        (g.data_axis, data, "data axis"),
        (g.tensor_axis, tp, "tensor axis"),
    ] {
        let dim = match axis {
            Axis::None => continue,
            Axis::M => &mut s.m,
            Axis::N => &mut s.n,
            Axis::K => &mut s.k,
            Axis::Batch => &mut s.batch_count,
        };
        *dim = exact_div(*dim, by, k, what)?;
    }
    Ok(s)
}

fn shard_elementwise(k: &Kernel, e: &Elementwise, by: u64) -> Result<Elementwise, MappingError> {
    Ok(Elementwise {
        elements: exact_div(e.elements, by, k, "elements")?,
        bytes_read: exact_div(e.bytes_read, by, k, "bytes read")?,
        bytes_written: exact_div(e.bytes_written, by, k, "bytes written")?,
        ..*e
    })
}

/// Shards one compute kernel for a device holding `1/data` of the tokens and
/// `1/tp` of the tensor split.
fn shard_kernel(k: &Kernel, data: u64, tp: u64) -> Result<Kernel, MappingError> {
    let mut out = k.clone();
    out.deps.clear();
    match &k.kind {
        KernelKind::Gemm(g) => {
            out.kind = KernelKind::Gemm(shard_gemm(k, g, data, tp)?);
            out.useful_flops = if k.useful_flops == 0 { 0 } else { out.flops() };
        }
        KernelKind::Elementwise(e) => {
            let by = match e.split {
                ElementSplit::Sharded => data * tp,
                ElementSplit::Replicated => data,
            };
            out.kind = KernelKind::Elementwise(shard_elementwise(k, e, by)?);
            // A replicated kernel is repeated on every rank; only a 1/tp
            // share of it counts as useful.
            let by = u128::from(data * tp);
            if !k.useful_flops.is_multiple_of(by) {
                return Err(MappingError::Indivisible {
                    kernel: k.id(),
                    what: "useful flops",
                    by: data * tp,
                });
            }
            out.useful_flops = k.useful_flops / by;
        }
        KernelKind::Collective { .. } | KernelKind::P2p { .. } => {}
    }
    Ok(out)
}

fn comm_kernel(tag: KernelTag, kind: KernelKind) -> Kernel {
    Kernel::new(tag, kind)
}

/// Tensor-parallel allreduce that follows a sharded kernel, if any.
fn tp_allreduce(k: &Kernel, sharded: &Kernel, tp: u64, bpe: u64) -> Option<Kernel> {
    if tp < 2 {
        return None;
    }
    let t = k.tag;
    let role = match (t.pass, t.role, t.grad) {
        (Pass::Forward | Pass::Prefill | Pass::Decode, Role::OutProj, Grad::None)
        | (Pass::Backward, Role::Qkv, Grad::Input) => Role::TpAllReduceAttn,
        (Pass::Forward | Pass::Prefill | Pass::Decode, Role::FfnDown, Grad::None)
        | (Pass::Backward, Role::FfnUp, Grad::Input) => Role::TpAllReduceFfn,
        _ => return None,
    };
    let KernelKind::Gemm(g) = sharded.kind else {
        return None;
    };
    // Experts are combined before the reduction: one hidden-sized tensor.
    let payload = g.m * g.n * bpe;
    Some(comm_kernel(
        KernelTag {
            role,
            grad: Grad::None,
            ..t
        },
        KernelKind::Collective {
            op: CollectiveOp::AllReduce,
            payload,
            group_size: tp as u32,
        },
    ))
}

/// Activation hand-off after the last kernel a stage runs in a pass.
fn stage_send(last: &Kernel) -> Option<Kernel> {
    let KernelKind::Elementwise(e) = last.kind else {
        return None;
    };
    Some(comm_kernel(
        KernelTag {
            role: Role::StageSend,
            grad: Grad::None,
            ..last.tag
        },
        KernelKind::P2p {
            payload: e.bytes_written,
        },
    ))
}

fn chain(kernels: &mut [Kernel]) {
    for (i, k) in kernels.iter_mut().enumerate() {
        k.deps = if i == 0 { Vec::new() } else { vec![i as u32 - 1] };
    }
}

pub fn apply_parallelism(
    g: &TaskGraph,
    m: &MappingSpec,
    model: &ModelSpec,
) -> Result<MappedGraph, MappingError> {
    apply_parallelism_with(g, m, model, FootprintConfig::default())
}

/// Shards `g` under `m`. Compute kernels keep their tags; inserted collective
/// and point-to-point kernels take the tag of the kernel they follow with
/// their own role.
pub fn apply_parallelism_with(
    g: &TaskGraph,
    m: &MappingSpec,
    model: &ModelSpec,
    cfg: FootprintConfig,
) -> Result<MappedGraph, MappingError> {
    let meta = &g.metadata;
    if meta.model != model.name {
        return Err(invalid(
            "model",
            &format!("graph was built for `{}`, not `{}`", meta.model, model.name),
        ));
    }
    m.validate(model, meta.phase, meta.batch)?;
    let bpe = meta.precision.bytes();
    let data = m.data_split(meta.phase);
    let layers_per_stage = model.num_layers / m.pp;
    let mut stages: Vec<Vec<Kernel>> = vec![Vec::new(); m.pp as usize];
    let mut epilogue = Vec::new();
    let mut prev: Option<(usize, Kernel)> = None;

    for k in &g.kernels {
        let Some(layer) = k.tag.layer else {
            if k.tag.role == Role::WeightUpdate {
                epilogue.push(shard_update(k, m.tp * m.pp));
            } else {
                epilogue.push(shard_kernel(k, 1, 1)?);
            }
            continue;
        };
        let stage = (u64::from(layer) / layers_per_stage) as usize;
        if let Some((ps, pk)) = &prev {
            if *ps != stage && pk.tag.pass == k.tag.pass && pk.tag.step == k.tag.step {
                if let Some(send) = stage_send(pk) {
                    stages[*ps].push(send);
                }
            }
        }
        let sharded = shard_kernel(k, data, m.tp)?;
        let ar = tp_allreduce(k, &sharded, m.tp, bpe);
        stages[stage].push(sharded.clone());
        stages[stage].extend(ar);
        prev = Some((stage, sharded));
    }

    if meta.phase == Phase::Training && m.dp > 1 {
        let per_device = param_count(model).div_ceil(m.tp * m.pp);
        epilogue.insert(
            0,
            comm_kernel(
                KernelTag {
                    pass: Pass::Sync,
                    step: 0,
                    layer: None,
                    role: Role::DpAllReduce,
                    grad: Grad::None,
                },
                KernelKind::Collective {
                    op: CollectiveOp::AllReduce,
                    payload: per_device * bpe,
                    group_size: m.dp as u32,
                },
            ),
        );
    }
    chain(&mut epilogue);

    let empty = g.kernels.is_empty();
    let shards = m.tp * m.pp;
    let params = param_count(model);
    let kv_per_device = match meta.phase {
        Phase::Inference if !empty => {
            let tokens = meta.seq_len + meta.gen_tokens;
            kv_cache_bytes(model, meta.batch / m.dp, tokens, meta.precision).div_ceil(shards)
        }
        _ => 0,
    };
    let stages = stages
        .into_iter()
        .enumerate()
        .map(|(i, mut kernels)| {
            chain(&mut kernels);
            let i = i as u64;
            let mut fp = Footprint::default();
            if !empty {
                fp.weights = (params * bpe).div_ceil(shards);
                fp.activations = activation_bytes(&kernels, meta.phase, meta.precision, m, i);
                fp.kv_cache = kv_per_device;
                if meta.phase == Phase::Training {
                    fp.optimizer_state = params.div_ceil(shards) * cfg.optimizer_state_bytes_per_param;
                }
            }
            Stage {
                index: i,
                first_layer: i * layers_per_stage,
                num_layers: layers_per_stage,
                kernels,
                footprint: fp,
            }
        })
        .collect();

    Ok(MappedGraph {
        mapping: *m,
        metadata: meta.clone(),
        stages,
        epilogue,
        repeats: match meta.phase {
            Phase::Training => m.microbatches,
            Phase::Inference => 1,
        },
        kv_cache_per_device: kv_per_device,
    })
}

fn shard_update(k: &Kernel, by: u64) -> Kernel {
    let mut out = k.clone();
    out.deps.clear();
    if let KernelKind::Elementwise(e) = k.kind {
        out.kind = KernelKind::Elementwise(Elementwise {
            elements: e.elements.div_ceil(by),
            bytes_read: e.bytes_read.div_ceil(by),
            bytes_written: e.bytes_written.div_ceil(by),
            ..e
        });
    }
    out.useful_flops = k.useful_flops / u128::from(by);
    out
}

/// Training keeps the forward outputs of every microbatch in flight: a stage
/// `s` of `pp` holds at most `min(microbatches, pp − s)` of them. Inference
/// only needs the largest single layer's outputs.
fn activation_bytes(
    kernels: &[Kernel],
    phase: Phase,
    precision: Precision,
    m: &MappingSpec,
    stage: u64,
) -> u64 {
    let written = |k: &Kernel| match k.kind {
        KernelKind::Gemm(_) | KernelKind::Elementwise(_) => kernel_bytes(k, precision).written,
        _ => 0,
    };
    match phase {
        Phase::Training => {
            let per_mb: u64 = kernels
                .iter()
                .filter(|k| k.tag.pass == Pass::Forward)
                .map(written)
                .sum();
            per_mb * m.microbatches.min(m.pp - stage)
        }
        Phase::Inference => {
            let mut best = 0;
            let mut cur = 0;
            let mut layer = None;
            for k in kernels.iter().filter(|k| k.tag.pass == Pass::Prefill) {
                if k.tag.layer != layer {
                    layer = k.tag.layer;
                    cur = 0;
                }
                cur += written(k);
                best = best.max(cur);
            }
            best
        }
    }
}

impl MappedGraph {
    pub fn phase(&self) -> Phase {
        self.metadata.phase
    }

    pub fn devices(&self) -> u64 {
        self.mapping.devices()
    }

    pub fn is_empty(&self) -> bool {
        self.epilogue.is_empty() && self.stages.iter().all(|s| s.kernels.is_empty())
    }

    /// Useful flops summed over every device and microbatch. Equals the
    /// source graph's total for any valid mapping.
    pub fn useful_flops(&self) -> u128 {
        let m = &self.mapping;
        let per_stage: u128 = self
            .stages
            .iter()
            .flat_map(|s| &s.kernels)
            .map(|k| k.useful_flops)
            .sum();
        let epilogue: u128 = self.epilogue.iter().map(|k| k.useful_flops).sum();
        per_stage * u128::from(self.repeats) * u128::from(m.tp * m.dp) + epilogue * u128::from(m.tp * m.pp)
    }

    pub fn kernel_count(&self) -> usize {
        self.stages.iter().map(|s| s.kernels.len()).sum::<usize>() + self.epilogue.len()
    }

    /// Collectives of one role on one stage per step.
    pub fn count_role(&self, stage: usize, role: Role, pass: Pass) -> u64 {
        let n = self.stages[stage]
            .kernels
            .iter()
            .filter(|k| k.tag.role == role && k.tag.pass == pass)
            .count() as u64;
        n * self.repeats
    }

    /// Flattened copy of every stage template followed by the epilogue, as
    /// a dependency-chained [`TaskGraph`] for one device of each stage.
    pub fn flatten(&self) -> TaskGraph {
        let mut kernels: Vec<Kernel> = self
            .stages
            .iter()
            .flat_map(|s| s.kernels.iter().cloned())
            .chain(self.epilogue.iter().cloned())
            .collect();
        chain(&mut kernels);
        TaskGraph::new(kernels, self.metadata.clone())
    }
}

/// Peak per-device footprint: the stage whose devices hold the most.
pub fn memory_footprint(mg: &MappedGraph) -> Footprint {
    mg.stages
        .iter()
        .map(|s| s.footprint)
        .max_by_key(Footprint::total)
        .unwrap_or_default()
}

/// Sum over every device of the mapping.
pub fn total_footprint(mg: &MappedGraph) -> u128 {
    let per_stage_devices = u128::from(mg.mapping.tp * mg.mapping.dp);
    mg.stages
        .iter()
        .map(|s| u128::from(s.footprint.total()) * per_stage_devices)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitReport {
    pub feasible: bool,
    /// Bytes required against `capacity`: per device for partitioned
    /// memories, summed over devices for a shared pool.
    pub required: u128,
    pub capacity: u128,
    pub headroom: i128,
    pub per_device: bool,
}

pub fn check_fit<T: Scalar>(mg: &MappedGraph, sys: &SystemSpec<T>) -> FitReport {
    let per_device = sys.main_memory.partitioned;
    let (required, capacity) = if per_device {
        (
            u128::from(memory_footprint(mg).total()),
            u128::from(sys.dram_capacity_per_device()),
        )
    } else {
        (total_footprint(mg), u128::from(sys.main_memory.capacity))
    };
    FitReport {
        feasible: required <= capacity,
        required,
        capacity,
        headroom: capacity as i128 - required as i128,
        per_device,
    }
}
