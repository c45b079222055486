//! Scenario runner, sweeps, A/B comparisons and figure data for
//! `bladeperf-core`.

pub mod error;
pub mod figures;
pub mod kvfit;
pub mod output;
pub mod plan;
pub mod scenario;

use bladeperf_core::hwspec::{system_preset, SYSTEM_PRESETS};
use bladeperf_core::workload::{model_preset, MODEL_PRESETS};
use bladeperf_core::Report;
use serde::Serialize;

use crate::error::CliError;
use crate::output::{run_header, run_row, Table};
use crate::scenario::Scenario;

#[derive(Serialize)]
struct RunDoc<'a> {
    scenario: &'a Scenario,
    report: &'a Report,
}

/// The scenario and its report; `summary` drops the per-kernel detail.
pub fn run_json(s: &Scenario, r: &Report, summary: bool) -> String {
    let stripped;
    let report = if summary {
        stripped = Report {
            kernels: Vec::new(),
            ..r.clone()
        };
        &stripped
    } else {
        r
    };
    let mut out = serde_json::to_string_pretty(&RunDoc { scenario: s, report }).expect("reports serialize");
    out.push('\n');
    out
}

pub fn run_table(s: &Scenario, r: &Report) -> Table {
    let mut t = Table::new(run_header(None));
    t.rows.push(run_row(s, r, None));
    t
}

/// A system or model preset as JSON.
pub fn dump_preset(name: &str) -> Result<String, CliError> {
    let mut out = if let Ok(s) = system_preset::<f64>(name) {
        serde_json::to_string_pretty(&s)
    } else if let Ok(m) = model_preset(name) {
        serde_json::to_string_pretty(&m)
    } else {
        return Err(CliError::invalid(
            "dump-preset",
            "name",
            format!(
                "unknown preset `{name}` (systems: {}; models: {})",
                SYSTEM_PRESETS.join(", "),
                MODEL_PRESETS.join(", ")
            ),
        ));
    }
    .expect("presets serialize");
    out.push('\n');
    Ok(out)
}
