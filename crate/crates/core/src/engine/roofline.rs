//! Per-kernel hierarchical roofline with a request-pipelining latency term.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::hwspec::{DeviceSpec, MemoryLevel, MemoryScope, Precision};
use crate::scalar::Scalar;
use crate::workload::{kernel_flops, Access, Kernel, KernelTag, ResidencyHint, TensorClass};

/// How many bytes one memory request moves and how many may be in flight.
/// A level with latency `λ` then sustains at most
/// `granularity · max_outstanding / λ` bytes/s.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryAccessModel {
    pub request_granularity: u64,
    pub max_outstanding: u64,
}

impl Default for MemoryAccessModel {
    fn default() -> Self {
        MemoryAccessModel {
            request_granularity: 4096,
            max_outstanding: 64,
        }
    }
}

impl MemoryAccessModel {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.request_granularity == 0 || self.max_outstanding == 0 {
            return Err(EngineError::InvalidAccessModel);
        }
        Ok(())
    }
}

/// Which term of the timing formula won. Levels index the hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BoundClass {
    Compute,
    Memory(u8),
    Latency(u8),
    Network,
}

impl BoundClass {
    pub fn label(self, levels: &[String]) -> String {
        let name = |i: u8| levels.get(usize::from(i)).map_or("?", String::as_str);
        match self {
            BoundClass::Compute => "compute".into(),
            BoundClass::Memory(l) => format!("memory@{}", name(l)),
            BoundClass::Latency(l) => format!("latency@{}", name(l)),
            BoundClass::Network => "network".into(),
        }
    }

    /// Memory-system bound, by bandwidth or by latency.
    pub fn is_memory(self) -> bool {
        matches!(self, BoundClass::Memory(_) | BoundClass::Latency(_))
    }
}

impl fmt::Display for BoundClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundClass::Compute => f.write_str("compute"),
            BoundClass::Memory(l) => write!(f, "memory@{l}"),
            BoundClass::Latency(l) => write!(f, "latency@{l}"),
            BoundClass::Network => f.write_str("network"),
        }
    }
}

impl Serialize for BoundClass {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct LevelBytes {
    pub level: u8,
    pub read: u64,
    pub written: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelTiming<T> {
    pub tag: KernelTag,
    /// Pipeline stage, or `None` for once-per-step work.
    pub stage: Option<u32>,
    /// Executions per step on one device of the stage.
    pub count: u64,
    pub time: T,
    pub bound: BoundClass,
    pub flops: u128,
    pub useful_flops: u128,
    /// Non-zero traffic per hierarchy level.
    pub bytes: Vec<LevelBytes>,
}

impl<T> KernelTiming<T> {
    pub fn id(&self) -> String {
        self.tag.id()
    }
}

/// Where KV-cache tensors live.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KvResidency {
    /// Main memory.
    #[default]
    Main,
    /// Outermost device level when the per-device cache fits, else main.
    L2IfFits,
    /// Outermost device level; an error when it does not fit.
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementPolicy {
    #[serde(default)]
    pub kv: KvResidency,
}

/// Facts about the mapped workload the placement policy needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlacementContext {
    pub precision: Precision,
    pub kv_cache_per_device: u64,
    /// Devices sharing a `SharedPool` level.
    pub active_devices: u64,
    pub policy: PlacementPolicy,
}

/// Bytes of a level one device may fill.
pub fn level_share<T>(level: &MemoryLevel<T>, active_devices: u64) -> u64 {
    match level.scope {
        MemoryScope::SharedPool => level.capacity / active_devices.max(1),
        MemoryScope::PerDevice | MemoryScope::PerCore => level.capacity,
    }
}

/// Assigns each operand of a compute kernel to a level of `levels` (the last
/// entry being main memory). Weights, optimizer state and KV stream from
/// main memory; an activation tensor sits in the outermost device level when
/// it fits this device's share of it; explicit hints override.
pub fn place_operands<T>(
    k: &Kernel,
    ctx: &PlacementContext,
    levels: &[MemoryLevel<T>],
) -> Result<Vec<usize>, EngineError> {
    let ops = k.operands(ctx.precision);
    let Some(main) = levels.len().checked_sub(1) else {
        return Err(EngineError::Placement {
            kernel: k.id(),
            reason: "hierarchy has no levels".into(),
        });
    };
    let Some(chip) = main.checked_sub(1) else {
        return Ok(vec![main; ops.len()]);
    };
    let share = level_share(&levels[chip], ctx.active_devices);
    let explicit = k.hints.is_some();
    let mut out = Vec::with_capacity(ops.len());
    for o in &ops {
        let fits = o.tensor_bytes <= share;
        let level = if explicit {
            match o.residency_hint {
                ResidencyHint::Cacheable if fits => chip,
                _ => main,
            }
        } else {
            match o.class {
                TensorClass::Activation if fits => chip,
                TensorClass::KvCache => match ctx.policy.kv {
                    KvResidency::L2IfFits | KvResidency::L2 if ctx.kv_cache_per_device <= share => chip,
                    KvResidency::L2 => {
                        return Err(EngineError::Placement {
                            kernel: k.id(),
                            reason: format!(
                                "KV cache of {} B per device exceeds the {} share of {} B",
                                ctx.kv_cache_per_device, levels[chip].name, share
                            ),
                        })
                    }
                    _ => main,
                },
                _ => main,
            }
        };
        out.push(level);
    }
    Ok(out)
}

/// Times one compute kernel:
/// `t = max(flops / sustained, max_l max(read_l/bw_r + write_l/bw_w,
/// ceil(bytes_l / granularity) / max_outstanding · latency_l))`.
/// Ties go to compute, then to bandwidth over latency.
pub fn time_kernel<T: Scalar>(
    k: &Kernel,
    dev: &DeviceSpec<T>,
    levels: &[MemoryLevel<T>],
    residency: &[usize],
    mam: &MemoryAccessModel,
    precision: Precision,
) -> Result<KernelTiming<T>, EngineError> {
    let ops = k.operands(precision);
    if residency.len() != ops.len() {
        return Err(EngineError::Placement {
            kernel: k.id(),
            reason: format!("{} operands but {} residencies", ops.len(), residency.len()),
        });
    }
    let flops = kernel_flops(k);
    let mut bytes: Vec<LevelBytes> = Vec::new();
    for (o, &l) in ops.iter().zip(residency) {
        if l >= levels.len() {
            return Err(EngineError::Placement {
                kernel: k.id(),
                reason: format!("unknown residency level {l}"),
            });
        }
        if o.tensor_bytes == 0 {
            continue;
        }
        let entry = match bytes.iter_mut().find(|b| usize::from(b.level) == l) {
            Some(e) => e,
            None => {
                bytes.push(LevelBytes {
                    level: l as u8,
                    ..Default::default()
                });
                bytes.last_mut().expect("just pushed")
            }
        };
        match o.access {
            Access::Read => entry.read += o.tensor_bytes,
            Access::Write => entry.written += o.tensor_bytes,
        }
    }
    bytes.sort_by_key(|b| b.level);

    let mut time = T::zero();
    let mut bound = BoundClass::Compute;
    if flops > 0 {
        let rate = dev
            .sustained_flops(precision)
            .ok_or(EngineError::NoPeak(precision))?;
        time = T::from_wide(flops) / rate;
    }
    for b in &bytes {
        let level = &levels[usize::from(b.level)];
        let t_bw =
            T::from_count(b.read) / level.read_bandwidth + T::from_count(b.written) / level.write_bandwidth;
        let requests = (b.read + b.written).div_ceil(mam.request_granularity);
        let t_lat = T::from_count(requests) / T::from_count(mam.max_outstanding) * level.access_latency;
        if t_bw > time {
            time = t_bw;
            bound = BoundClass::Memory(b.level);
        }
        if t_lat > time {
            time = t_lat;
            bound = BoundClass::Latency(b.level);
        }
    }
    Ok(KernelTiming {
        tag: k.tag,
        stage: None,
        count: 1,
        time,
        bound,
        flops,
        useful_flops: k.useful_flops,
        bytes,
    })
}
