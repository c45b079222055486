//! Bundled plans that emit the plot data of each figure.

use std::path::Path;

use rayon::prelude::*;
use serde_json::Value;

use crate::error::CliError;
use crate::output::Table;
use crate::plan::LoadedPlan;

/// Figure name and plan source; the output file is `<name>.csv`.
pub const FIGURES: [(&str, &str); 8] = [
    ("fig4", include_str!("../plans/fig4.json")),
    ("fig5", include_str!("../plans/fig5.json")),
    ("fig6", include_str!("../plans/fig6.json")),
    ("fig6a", include_str!("../plans/fig6a.json")),
    ("fig6b", include_str!("../plans/fig6b.json")),
    ("fig7", include_str!("../plans/fig7.json")),
    ("fig7b", include_str!("../plans/fig7b.json")),
    ("kv_fit", include_str!("../plans/kv_fit.json")),
];

pub fn bundled_plan(name: &str) -> Result<LoadedPlan, CliError> {
    let (name, text) = FIGURES.iter().find(|(n, _)| *n == name).ok_or_else(|| {
        let names: Vec<&str> = FIGURES.iter().map(|(n, _)| *n).collect();
        CliError::Usage(format!(
            "unknown figure `{name}` (available: {})",
            names.join(", ")
        ))
    })?;
    LoadedPlan::from_str(text, &format!("{name}.json"), Path::new(""))
}

/// Runs the selected figures (all when `only` is empty), in `FIGURES` order.
pub fn run_figures(only: &[String], sets: &[(String, Value)]) -> Result<Vec<(String, Table)>, CliError> {
    let names: Vec<&str> = if only.is_empty() {
        FIGURES.iter().map(|(n, _)| *n).collect()
    } else {
        only.iter().map(String::as_str).collect()
    };
    let plans = names
        .iter()
        .map(|n| bundled_plan(n))
        .collect::<Result<Vec<_>, _>>()?;
    let tables: Vec<_> = plans.par_iter().map(|p| p.run(sets)).collect();
    names
        .iter()
        .zip(tables)
        .map(|(n, t)| Ok((n.to_string(), t?)))
        .collect()
}
