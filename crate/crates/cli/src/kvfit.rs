//! Whether a model's KV cache fits the outermost on-chip level, and what
//! keeping it there buys the attention kernels.

use bladeperf_core::engine::{attention_time, level_share, KvResidency};
use bladeperf_core::mapping::apply_parallelism;
use bladeperf_core::workload::{build_graph, kv_cache_bytes, Phase};
use serde::Serialize;

use crate::output::{Cell, Table};
use crate::scenario::{EstimateError, Scenario};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KvFit {
    pub model: String,
    pub kv_cache_bytes: u64,
    pub kv_cache_per_device: u64,
    pub level: String,
    pub level_capacity: u64,
    pub level_share: u64,
    pub fits: bool,
    pub attention_time_main: f64,
    pub attention_time_l2: f64,
    /// Main-memory attention time over on-chip attention time; 1 when the
    /// cache does not fit.
    pub attention_speedup: f64,
    pub total_time_main: f64,
    pub total_time_l2: f64,
}

pub const KV_FIT_COLUMNS: [&str; 14] = [
    "model",
    "tp",
    "pp",
    "kv_cache_bytes",
    "kv_cache_per_device",
    "level",
    "level_capacity",
    "level_share",
    "fits",
    "attention_time_main",
    "attention_time_l2",
    "attention_speedup",
    "total_time_main",
    "total_time_l2",
];

/// Times `s` with the KV cache in main memory and, where it fits, in the
/// outermost device level.
pub fn kv_fit_report(s: &Scenario) -> Result<KvFit, EstimateError> {
    if s.workload.phase != Phase::Inference {
        return Err(EstimateError("kv-fit needs an inference workload".into()));
    }
    let err = |e: &dyn std::fmt::Display| EstimateError(e.to_string());
    let g = build_graph(&s.model, &s.workload).map_err(|e| err(&e))?;
    let mg = apply_parallelism(&g, &s.mapping, &s.model).map_err(|e| err(&e))?;
    let devices = s.mapping.devices();
    let levels = s.system.hierarchy(devices as u32).map_err(|e| err(&e))?;
    let chip = levels
        .len()
        .checked_sub(2)
        .ok_or_else(|| EstimateError("system has no on-chip level".into()))?;
    let share = level_share(&levels[chip], devices);
    let wl = &s.workload;

    let run = |kv: KvResidency| {
        let mut v = s.clone();
        v.placement.kv = kv;
        v.estimate()
    };
    let main = run(KvResidency::Main)?;
    let l2 = run(KvResidency::L2IfFits)?;
    let (a_main, a_l2) = (attention_time(&main), attention_time(&l2));
    Ok(KvFit {
        model: s.model.name.clone(),
        kv_cache_bytes: kv_cache_bytes(&s.model, wl.batch, wl.final_tokens(), wl.precision),
        kv_cache_per_device: mg.kv_cache_per_device,
        level: levels[chip].name.clone(),
        level_capacity: levels[chip].capacity,
        level_share: share,
        fits: mg.kv_cache_per_device <= share,
        attention_time_main: a_main,
        attention_time_l2: a_l2,
        attention_speedup: if a_l2 > 0.0 { a_main / a_l2 } else { 1.0 },
        total_time_main: main.total_time,
        total_time_l2: l2.total_time,
    })
}

pub fn kv_fit_table(cases: &[(Scenario, KvFit)]) -> Table {
    let mut t = Table::new(KV_FIT_COLUMNS.iter().map(|c| c.to_string()).collect());
    for (s, k) in cases {
        t.rows.push(vec![
            Cell::Text(k.model.clone()),
            Cell::Int(s.mapping.tp),
            Cell::Int(s.mapping.pp),
            Cell::Real(k.kv_cache_bytes as f64),
            Cell::Real(k.kv_cache_per_device as f64),
            Cell::Text(k.level.clone()),
            Cell::Real(k.level_capacity as f64),
            Cell::Real(k.level_share as f64),
            Cell::Bool(k.fits),
            Cell::Real(k.attention_time_main),
            Cell::Real(k.attention_time_l2),
            Cell::Real(k.attention_speedup),
            Cell::Real(k.total_time_main),
            Cell::Real(k.total_time_l2),
        ]);
    }
    t
}
