//! Parametric hardware descriptions and the two reference presets.
//!
//! All quantities are base SI units: bytes, bytes/s, seconds, Hz, flops/s.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::overrides::merge_strict;
use crate::scalar::Scalar;

pub const SCHEMA_VERSION: u32 = 1;

pub const SCD_BLADE: &str = "scd-blade";
pub const H100_NODE: &str = "h100-node";
pub const SYSTEM_PRESETS: [&str; 2] = [SCD_BLADE, H100_NODE];

#[derive(Debug, Error)]
pub enum HwError {
    #[error("invalid override: {0}")]
    InvalidOverride(String),
    #[error("invalid system: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("active device count {active} outside 1..={device_count}")]
    ActiveDevicesOutOfRange { active: u32, device_count: u32 },
    #[error("unknown system preset `{name}` (available: {})", SYSTEM_PRESETS.join(", "))]
    UnknownPreset { name: String },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

/// Numeric precision of a workload, with its storage width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Fp8,
    Bf16,
    Fp16,
    Fp32,
}

impl Precision {
    pub fn bytes(self) -> u64 {
        match self {
            Precision::Fp8 => 1,
            Precision::Bf16 | Precision::Fp16 => 2,
            Precision::Fp32 => 4,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Precision::Fp8 => "fp8",
            Precision::Bf16 => "bf16",
            Precision::Fp16 => "fp16",
            Precision::Fp32 => "fp32",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MemoryScope {
    PerCore,
    PerDevice,
    SharedPool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Read,
    Write,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryLevel<T> {
    pub name: String,
    pub capacity: u64,
    pub read_bandwidth: T,
    pub write_bandwidth: T,
    pub access_latency: T,
    pub scope: MemoryScope,
}

impl<T: Scalar> MemoryLevel<T> {
    pub fn bandwidth(&self, dir: Direction) -> T {
        match dir {
            Direction::Read => self.read_bandwidth,
            Direction::Write => self.write_bandwidth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec<T> {
    pub name: String,
    pub clock: T,
    pub peak_flops: BTreeMap<Precision, T>,
    pub utilization_ceiling: T,
    /// Device-local levels, fastest first. Main memory lives in the system's
    /// [`MainMemoryPool`].
    pub memory_levels: Vec<MemoryLevel<T>>,
}

impl<T: Scalar> DeviceSpec<T> {
    /// Peak rate scaled by the utilization ceiling.
    pub fn sustained_flops(&self, precision: Precision) -> Option<T> {
        self.peak_flops
            .get(&precision)
            .map(|&p| p * self.utilization_ceiling)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Topology {
    Torus2d { dims: [u32; 2] },
    Switch,
    FullyConnectedAbstract,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterconnectSpec<T> {
    pub topology: Topology,
    /// Per link, per direction.
    pub link_bandwidth: T,
    pub link_latency: T,
    pub per_device_injection_bandwidth: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MainMemoryPool<T> {
    pub capacity: u64,
    pub total_read_bandwidth: T,
    pub total_write_bandwidth: T,
    /// Symmetric per-device port bandwidth, applied to both directions.
    pub per_device_bandwidth: T,
    pub access_latency: T,
    /// True when every device owns an equal private slice of the capacity
    /// (GPU HBM); false for a pool any device can fill.
    #[serde(default)]
    pub partitioned: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec<T> {
    pub schema_version: u32,
    pub name: String,
    pub device: DeviceSpec<T>,
    pub device_count: u32,
    pub interconnect: InterconnectSpec<T>,
    pub main_memory: MainMemoryPool<T>,
}

/// A broken invariant: the offending field and the rule it breaks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.field, self.rule)
    }
}

struct Checker {
    out: Vec<Violation>,
}

impl Checker {
    fn fail(&mut self, field: impl Into<String>, rule: &str) {
        self.out.push(Violation {
            field: field.into(),
            rule: rule.to_string(),
        });
    }

    fn positive<T: Scalar>(&mut self, field: impl Into<String>, v: T) -> bool {
        let ok = v.is_finite_value() && v > T::zero();
        if !ok {
            self.fail(field, "must be > 0");
        }
        ok
    }

    fn non_negative<T: Scalar>(&mut self, field: impl Into<String>, v: T) -> bool {
        let ok = v.is_finite_value() && v >= T::zero();
        if !ok {
            self.fail(field, "must be ≥ 0");
        }
        ok
    }
}

/// Every invariant violation in `spec`; empty iff the spec is valid.
pub fn validate_system<T: Scalar>(spec: &SystemSpec<T>) -> Vec<Violation> {
    let mut c = Checker { out: Vec::new() };
    if spec.schema_version != SCHEMA_VERSION {
        c.fail("schema_version", "must be 1");
    }
    if spec.device_count < 1 {
        c.fail("device_count", "must be ≥ 1");
    }

    let dev = &spec.device;
    c.positive("device.clock", dev.clock);
    if dev.peak_flops.is_empty() {
        c.fail("device.peak_flops", "must list at least one precision");
    }
    for (p, &v) in &dev.peak_flops {
        c.positive(format!("device.peak_flops.{p}"), v);
    }
    let u = dev.utilization_ceiling;
    if !(u.is_finite_value() && u > T::zero() && u <= T::one()) {
        c.fail("device.utilization_ceiling", "must be in (0, 1]");
    }

    // Ordering is only checked between levels whose own fields are sane, so a
    // single bad value yields a single violation.
    let mut prev: Option<(u64, T)> = None;
    for (i, level) in dev.memory_levels.iter().enumerate() {
        let f = format!("device.memory_levels[{i}]");
        let ok = [
            check_capacity(&mut c, format!("{f}.capacity"), level.capacity),
            c.positive(format!("{f}.read_bandwidth"), level.read_bandwidth),
            c.positive(format!("{f}.write_bandwidth"), level.write_bandwidth),
            c.non_negative(format!("{f}.access_latency"), level.access_latency),
        ]
        .iter()
        .all(|&b| b);
        if ok {
            if let Some((cap, bw)) = prev {
                if level.capacity < cap {
                    c.fail(format!("{f}.capacity"), "must be ≥ the previous level's capacity");
                }
                if level.read_bandwidth > bw {
                    c.fail(
                        format!("{f}.read_bandwidth"),
                        "must be ≤ the previous level's bandwidth",
                    );
                }
            }
            prev = Some((level.capacity, level.read_bandwidth));
        } else {
            prev = None;
        }
    }

    let mm = &spec.main_memory;
    let ok = [
        check_capacity(&mut c, "main_memory.capacity".into(), mm.capacity),
        c.positive("main_memory.total_read_bandwidth", mm.total_read_bandwidth),
        c.positive("main_memory.total_write_bandwidth", mm.total_write_bandwidth),
        c.positive("main_memory.per_device_bandwidth", mm.per_device_bandwidth),
        c.non_negative("main_memory.access_latency", mm.access_latency),
    ]
    .iter()
    .all(|&b| b);
    if ok {
        if let Some((cap, bw)) = prev {
            if mm.capacity < cap {
                c.fail(
                    "main_memory.capacity",
                    "must be ≥ the last device level's capacity",
                );
            }
            if mm.per_device_bandwidth > bw {
                c.fail(
                    "main_memory.per_device_bandwidth",
                    "must be ≤ the last device level's bandwidth",
                );
            }
        }
    }

    let net = &spec.interconnect;
    c.positive("interconnect.link_bandwidth", net.link_bandwidth);
    c.non_negative("interconnect.link_latency", net.link_latency);
    c.positive(
        "interconnect.per_device_injection_bandwidth",
        net.per_device_injection_bandwidth,
    );
    if let Topology::Torus2d { dims } = net.topology {
        if dims[0] == 0 || dims[1] == 0 {
            c.fail("interconnect.topology.dims", "must be positive");
        } else if spec.device_count >= 1
            && u64::from(dims[0]) * u64::from(dims[1]) != u64::from(spec.device_count)
        {
            c.fail("interconnect.topology.dims", "product must equal device_count");
        }
    }
    c.out
}

fn check_capacity(c: &mut Checker, field: String, cap: u64) -> bool {
    if cap == 0 {
        c.fail(field, "must be > 0");
        false
    } else {
        true
    }
}

impl<T: Scalar> SystemSpec<T> {
    /// Per-device main-memory bandwidth when `active` devices stream at once:
    /// the port rate, capped by an equal share of the pool's directional total.
    pub fn effective_dram_bandwidth(&self, active: u32, dir: Direction) -> Result<T, HwError> {
        if active < 1 || active > self.device_count {
            return Err(HwError::ActiveDevicesOutOfRange {
                active,
                device_count: self.device_count,
            });
        }
        let mm = &self.main_memory;
        let total = match dir {
            Direction::Read => mm.total_read_bandwidth,
            Direction::Write => mm.total_write_bandwidth,
        };
        let share = total / T::from_count(u64::from(active));
        Ok(if share < mm.per_device_bandwidth {
            share
        } else {
            mm.per_device_bandwidth
        })
    }

    /// Full hierarchy seen by one device: the device-local levels followed by
    /// main memory at its effective bandwidth (named `dram`).
    pub fn hierarchy(&self, active: u32) -> Result<Vec<MemoryLevel<T>>, HwError> {
        let mut levels = self.device.memory_levels.clone();
        let mm = &self.main_memory;
        levels.push(MemoryLevel {
            name: "dram".to_string(),
            capacity: if mm.partitioned {
                self.dram_capacity_per_device()
            } else {
                mm.capacity
            },
            read_bandwidth: self.effective_dram_bandwidth(active, Direction::Read)?,
            write_bandwidth: self.effective_dram_bandwidth(active, Direction::Write)?,
            access_latency: mm.access_latency,
            scope: if mm.partitioned {
                MemoryScope::PerDevice
            } else {
                MemoryScope::SharedPool
            },
        });
        Ok(levels)
    }

    pub fn dram_capacity_per_device(&self) -> u64 {
        self.main_memory.capacity / u64::from(self.device_count.max(1))
    }

    /// Sets the per-device port bandwidth and lifts the pool totals so the
    /// value is the effective bandwidth for every device.
    pub fn set_uncapped_dram_bandwidth(&mut self, per_device: T) {
        let n = T::from_count(u64::from(self.device_count));
        self.main_memory.per_device_bandwidth = per_device;
        self.main_memory.total_read_bandwidth = per_device * n;
        self.main_memory.total_write_bandwidth = per_device * n;
    }

    /// Index of the outermost device-local level, if any.
    pub fn last_device_level(&self) -> Option<usize> {
        self.device.memory_levels.len().checked_sub(1)
    }
}

fn level<T: Scalar>(
    name: &str,
    capacity: u64,
    bandwidth: f64,
    latency: f64,
    scope: MemoryScope,
) -> MemoryLevel<T> {
    MemoryLevel {
        name: name.to_string(),
        capacity,
        read_bandwidth: T::from_real(bandwidth),
        write_bandwidth: T::from_real(bandwidth),
        access_latency: T::from_real(latency),
        scope,
    }
}

/// The 8×8 superconducting blade. Compute, pool and latency figures are the
/// published baseline; on-chip bandwidths and link parameters are calibration
/// defaults.
pub fn scd_blade<T: Scalar>() -> SystemSpec<T> {
    let device_count = 64;
    SystemSpec {
        schema_version: SCHEMA_VERSION,
        name: SCD_BLADE.to_string(),
        device: DeviceSpec {
            name: "scd-spu".to_string(),
            clock: T::from_real(30e9),
            peak_flops: BTreeMap::from([(Precision::Bf16, T::from_real(2.45e15))]),
            utilization_ceiling: T::from_real(0.8),
            memory_levels: vec![
                level("l1", 256_000_000, 256e12, 1e-9, MemoryScope::PerCore),
                // SNU JSRAM slices: one L2 shared by the whole blade.
                level("l2", 4_190_000_000, 64e12, 2e-9, MemoryScope::SharedPool),
            ],
        },
        device_count,
        interconnect: InterconnectSpec {
            topology: Topology::Torus2d { dims: [8, 8] },
            link_bandwidth: T::from_real(1e12),
            link_latency: T::from_real(5e-9),
            per_device_injection_bandwidth: T::from_real(4e12),
        },
        main_memory: MainMemoryPool {
            capacity: 2_000_000_000_000,
            total_read_bandwidth: T::from_real(20e12),
            total_write_bandwidth: T::from_real(10e12),
            per_device_bandwidth: T::from_real(0.47e12),
            access_latency: T::from_real(30e-9),
            partitioned: false,
        },
    }
}

/// Sixty-four H100-class GPUs, each with private HBM.
pub fn h100_node<T: Scalar>() -> SystemSpec<T> {
    let device_count: u32 = 64;
    let n = f64::from(device_count);
    SystemSpec {
        schema_version: SCHEMA_VERSION,
        name: H100_NODE.to_string(),
        device: DeviceSpec {
            name: "h100-sxm".to_string(),
            clock: T::from_real(1.83e9),
            peak_flops: BTreeMap::from([(Precision::Bf16, T::from_real(0.9895e15))]),
            utilization_ceiling: T::from_real(0.8),
            memory_levels: vec![
                level("l1", 33_000_000, 33e12, 30e-9, MemoryScope::PerCore),
                level("l2", 50_000_000, 5.5e12, 100e-9, MemoryScope::PerDevice),
            ],
        },
        device_count,
        interconnect: InterconnectSpec {
            topology: Topology::Switch,
            link_bandwidth: T::from_real(0.45e12),
            link_latency: T::from_real(0.1e-6),
            per_device_injection_bandwidth: T::from_real(0.45e12),
        },
        main_memory: MainMemoryPool {
            capacity: 80_000_000_000 * u64::from(device_count),
            total_read_bandwidth: T::from_real(3.35e12 * n),
            total_write_bandwidth: T::from_real(3.35e12 * n),
            per_device_bandwidth: T::from_real(3.35e12),
            access_latency: T::from_real(300e-9),
            partitioned: true,
        },
    }
}

pub fn system_preset<T: Scalar>(name: &str) -> Result<SystemSpec<T>, HwError> {
    match name {
        SCD_BLADE => Ok(scd_blade()),
        H100_NODE => Ok(h100_node()),
        _ => Err(HwError::UnknownPreset {
            name: name.to_string(),
        }),
    }
}

/// Applies a strict JSON patch to a spec and re-validates the result.
pub fn apply_overrides<T>(
    spec: &SystemSpec<T>,
    overrides: &serde_json::Value,
) -> Result<SystemSpec<T>, HwError>
where
    T: Scalar + Serialize + DeserializeOwned,
{
    let mut doc = serde_json::to_value(spec).map_err(|e| HwError::InvalidOverride(e.to_string()))?;
    merge_strict(&mut doc, overrides).map_err(HwError::InvalidOverride)?;
    let out: SystemSpec<T> =
        serde_json::from_value(doc).map_err(|e| HwError::InvalidOverride(e.to_string()))?;
    let violations = validate_system(&out);
    if violations.is_empty() {
        Ok(out)
    } else {
        Err(HwError::Invalid(violations))
    }
}

pub fn build_scd_blade_preset<T>(overrides: &serde_json::Value) -> Result<SystemSpec<T>, HwError>
where
    T: Scalar + Serialize + DeserializeOwned,
{
    apply_overrides(&scd_blade(), overrides)
}

pub fn build_gpu_baseline_preset<T>(overrides: &serde_json::Value) -> Result<SystemSpec<T>, HwError>
where
    T: Scalar + Serialize + DeserializeOwned,
{
    apply_overrides(&h100_node(), overrides)
}
