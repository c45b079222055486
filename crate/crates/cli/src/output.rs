//! Flat rows for CSV and JSON emission.
//!
//! Every run row has the same columns: [`PARAM_COLUMNS`] followed by
//! [`METRIC_COLUMNS`]. Reals print in scientific notation with six
//! significant digits; counts print as integers.

use bladeperf_core::engine::{boundedness_profile, is_forward_gemm, memory_bound_fraction};
use bladeperf_core::hwspec::Direction;
use bladeperf_core::workload::{kv_cache_bytes, Phase};
use bladeperf_core::Report;
use serde_json::Value;

use crate::scenario::Scenario;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Int(u64),
    Real(f64),
    Bool(bool),
}

impl Cell {
    pub fn render(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(v) => v.to_string(),
            Cell::Real(v) => format!("{v:.5e}"),
            Cell::Bool(b) => b.to_string(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(v) => Some(*v as f64),
            Cell::Real(v) => Some(*v),
            _ => None,
        }
    }

    fn to_json(&self) -> Value {
        match self {
            Cell::Text(s) => Value::String(s.clone()),
            Cell::Int(v) => Value::from(*v),
            // Round-trips the CSV text, so both formats carry the same value.
            Cell::Real(v) => format!("{v:.5e}")
                .parse::<f64>()
                .ok()
                .and_then(serde_json::Number::from_f64)
                .map_or(Value::Null, Value::Number),
            Cell::Bool(b) => Value::Bool(*b),
        }
    }
}

fn real(v: f64) -> Cell {
    Cell::Real(v)
}

fn bytes(v: impl Into<u128>) -> Cell {
    Cell::Real(v.into() as f64)
}

/// A header and rows of equal width.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Table {
            header,
            rows: Vec::new(),
        }
    }

    /// Cells of the named column, top to bottom.
    pub fn column(&self, name: &str) -> Option<Vec<&Cell>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| &r[i]).collect())
    }

    /// A numeric column; `None` if absent or not numeric.
    pub fn reals(&self, name: &str) -> Option<Vec<f64>> {
        self.column(name)?.into_iter().map(Cell::as_f64).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                Value::Object(
                    self.header
                        .iter()
                        .cloned()
                        .zip(row.iter().map(Cell::to_json))
                        .collect(),
                )
            })
            .collect();
        let mut out = serde_json::to_string_pretty(&rows).expect("json values serialize");
        out.push('\n');
        out
    }
}

pub const PARAM_COLUMNS: [&str; 19] = [
    "system",
    "model",
    "phase",
    "precision",
    "batch",
    "seq_len",
    "gen_tokens",
    "tp",
    "pp",
    "dp",
    "microbatches",
    "devices",
    "dram_bandwidth_per_device",
    "dram_latency",
    "link_bandwidth",
    "link_latency",
    "request_granularity",
    "max_outstanding",
    "kv_residency",
];

pub const METRIC_COLUMNS: [&str; 24] = [
    "total_time",
    "compute_time",
    "communication_time",
    "other_time",
    "bubble_time",
    "weight_update_time",
    "achieved_flops_per_device",
    "useful_flops",
    "tokens_per_second",
    "fwd_gemm_memory_fraction",
    "fwd_gemm_compute_fraction",
    "memory_bound_fraction",
    "network_fraction",
    "footprint_weights",
    "footprint_activations",
    "footprint_optimizer_state",
    "footprint_kv_cache",
    "footprint_total",
    "fit_required",
    "fit_capacity",
    "fit_feasible",
    "kv_cache_bytes",
    "kv_bytes_per_token",
    "kv_capacity_tokens",
];

pub fn is_metric(name: &str) -> bool {
    METRIC_COLUMNS.contains(&name)
}

fn text<T: serde::Serialize>(v: &T) -> Cell {
    match serde_json::to_value(v) {
        Ok(Value::String(s)) => Cell::Text(s),
        Ok(other) => Cell::Text(other.to_string()),
        Err(_) => Cell::Text(String::new()),
    }
}

pub fn param(s: &Scenario, name: &str) -> Cell {
    let sys = &s.system;
    let wl = &s.workload;
    let m = &s.mapping;
    match name {
        "system" => Cell::Text(sys.name.clone()),
        "model" => Cell::Text(s.model.name.clone()),
        "phase" => text(&wl.phase),
        "precision" => Cell::Text(wl.precision.to_string()),
        "batch" => Cell::Int(wl.batch),
        "seq_len" => Cell::Int(wl.seq_len),
        "gen_tokens" => Cell::Int(wl.gen_tokens),
        "tp" => Cell::Int(m.tp),
        "pp" => Cell::Int(m.pp),
        "dp" => Cell::Int(m.dp),
        "microbatches" => Cell::Int(m.microbatches),
        "devices" => Cell::Int(m.devices()),
        "dram_bandwidth_per_device" => real(
            sys.effective_dram_bandwidth(m.devices() as u32, Direction::Read)
                .unwrap_or(sys.main_memory.per_device_bandwidth),
        ),
        "dram_latency" => real(sys.main_memory.access_latency),
        "link_bandwidth" => real(sys.interconnect.link_bandwidth),
        "link_latency" => real(sys.interconnect.link_latency),
        "request_granularity" => Cell::Int(s.memory_access.request_granularity),
        "max_outstanding" => Cell::Int(s.memory_access.max_outstanding),
        "kv_residency" => text(&s.placement.kv),
        _ => unreachable!("unknown parameter column {name}"),
    }
}

pub fn metric(s: &Scenario, r: &Report, name: &str) -> Cell {
    let wl = &s.workload;
    let kv_per_token = kv_cache_bytes(&s.model, 1, 1, wl.precision);
    match name {
        "total_time" => real(r.total_time),
        "compute_time" => real(r.compute_time),
        "communication_time" => real(r.communication_time),
        "other_time" => real(r.other_time),
        "bubble_time" => real(r.bubble_time),
        "weight_update_time" => real(r.weight_update_time),
        "achieved_flops_per_device" => real(r.achieved_flops_per_device),
        "useful_flops" => bytes(r.useful_flops),
        "tokens_per_second" => {
            let tokens = match wl.phase {
                Phase::Training => wl.batch * wl.seq_len,
                Phase::Inference if wl.gen_tokens > 0 => wl.batch * wl.gen_tokens,
                Phase::Inference => wl.batch * wl.seq_len,
            };
            real(if r.total_time > 0.0 {
                tokens as f64 / r.total_time
            } else {
                0.0
            })
        }
        "fwd_gemm_memory_fraction" => real(memory_bound_fraction(r, is_forward_gemm)),
        "fwd_gemm_compute_fraction" => real(
            boundedness_profile(r, is_forward_gemm)
                .get("compute")
                .copied()
                .unwrap_or(0.0),
        ),
        "memory_bound_fraction" => real(memory_bound_fraction(r, |_| true)),
        "network_fraction" => real(r.bound_fractions.get("network").copied().unwrap_or(0.0)),
        "footprint_weights" => bytes(r.footprint.weights),
        "footprint_activations" => bytes(r.footprint.activations),
        "footprint_optimizer_state" => bytes(r.footprint.optimizer_state),
        "footprint_kv_cache" => bytes(r.footprint.kv_cache),
        "footprint_total" => bytes(r.footprint.total()),
        "fit_required" => bytes(r.fit.required),
        "fit_capacity" => bytes(r.fit.capacity),
        "fit_feasible" => Cell::Bool(r.fit.feasible),
        "kv_cache_bytes" => bytes(match wl.phase {
            Phase::Inference => kv_cache_bytes(&s.model, wl.batch, wl.final_tokens(), wl.precision),
            Phase::Training => 0,
        }),
        "kv_bytes_per_token" => bytes(kv_per_token),
        "kv_capacity_tokens" => real(match s.system.main_memory.capacity.checked_div(kv_per_token) {
            Some(n) => n as f64,
            None => 0.0,
        }),
        _ => unreachable!("unknown metric column {name}"),
    }
}

/// Header for a run row restricted to `metrics` (all when `None`).
pub fn run_header(metrics: Option<&[String]>) -> Vec<String> {
    let mut h: Vec<String> = PARAM_COLUMNS.iter().map(|c| c.to_string()).collect();
    match metrics {
        Some(ms) => h.extend(ms.iter().cloned()),
        None => h.extend(METRIC_COLUMNS.iter().map(|c| c.to_string())),
    }
    h
}

pub fn run_row(s: &Scenario, r: &Report, metrics: Option<&[String]>) -> Vec<Cell> {
    let mut row: Vec<Cell> = PARAM_COLUMNS.iter().map(|c| param(s, c)).collect();
    match metrics {
        Some(ms) => row.extend(ms.iter().map(|m| metric(s, r, m))),
        None => row.extend(METRIC_COLUMNS.iter().map(|m| metric(s, r, m))),
    }
    row
}
