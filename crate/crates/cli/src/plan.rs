//! Plan files: one-axis sweeps, A/B comparisons and KV-fit studies.
//!
//! Points are evaluated in parallel and assembled in plan order, so output
//! does not depend on scheduling.

use std::path::{Path, PathBuf};

use bladeperf_core::Report;
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::Value;

use crate::error::CliError;
use crate::kvfit::{kv_fit_report, kv_fit_table};
use crate::output::{is_metric, metric, run_header, run_row, Cell, Table};
use crate::scenario::{read_json, Scenario, ScenarioSource};

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Plan {
    Sweep(SweepPlan),
    Compare(ComparePlan),
    KvFit(KvFitPlan),
}

/// `axis` is a dotted scenario path; each value yields one row.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPlan {
    pub base: Value,
    pub axis: String,
    pub values: Vec<Value>,
    /// Metric columns to keep; all of them when absent.
    #[serde(default)]
    pub outputs: Option<Vec<String>>,
}

/// Runs the same workload on scenarios `a` and `b`, optionally for several
/// models and along one axis. Speedup is `t_b / t_a`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparePlan {
    pub a: Value,
    pub b: Value,
    #[serde(default)]
    pub models: Vec<Value>,
    #[serde(default)]
    pub axis: Option<String>,
    #[serde(default)]
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KvFitPlan {
    pub base: Value,
    pub cases: Vec<KvFitCase>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KvFitCase {
    pub model: Value,
    #[serde(default)]
    pub mapping: Option<Value>,
}

/// A plan with the file it came from.
#[derive(Debug, Clone)]
pub struct LoadedPlan {
    pub plan: Plan,
    pub origin: String,
    pub base_dir: PathBuf,
}

impl LoadedPlan {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let doc = read_json(path)?;
        Self::from_value(
            doc,
            &path.display().to_string(),
            path.parent().unwrap_or(Path::new("")),
        )
    }

    pub fn from_str(text: &str, origin: &str, base_dir: &Path) -> Result<Self, CliError> {
        let doc = serde_json::from_str(text).map_err(|e| CliError::parse(origin, &e))?;
        Self::from_value(doc, origin, base_dir)
    }

    pub fn from_value(doc: Value, origin: &str, base_dir: &Path) -> Result<Self, CliError> {
        let plan = serde_path_to_error::deserialize(&doc)
            .map_err(|e| CliError::invalid(origin, e.path().to_string(), e.inner().to_string()))?;
        Ok(LoadedPlan {
            plan,
            origin: origin.to_string(),
            base_dir: base_dir.to_path_buf(),
        })
    }

    fn source(&self, doc: &Value) -> Result<ScenarioSource, CliError> {
        ScenarioSource::from_value(doc, &self.origin, &self.base_dir)
    }

    /// Resolves every scenario the plan would run without timing any.
    pub fn check(&self, sets: &[(String, Value)]) -> Result<usize, CliError> {
        Ok(self.points(sets)?.len())
    }

    pub fn run(&self, sets: &[(String, Value)]) -> Result<Table, CliError> {
        match &self.plan {
            Plan::Sweep(p) => {
                let points = self.points(sets)?;
                let reports = evaluate_all(&points, &self.origin)?;
                let mut t = Table::new(run_header(p.outputs.as_deref()));
                for (s, r) in points.iter().zip(&reports) {
                    t.rows.push(run_row(&s[0], &r[0], p.outputs.as_deref()));
                }
                Ok(t)
            }
            Plan::Compare(p) => {
                let points = self.points(sets)?;
                let reports = evaluate_all(&points, &self.origin)?;
                let mut t = Table::new(compare_header());
                let values = axis_labels(p);
                let per_model = values.len();
                for (i, (s, r)) in points.iter().zip(&reports).enumerate() {
                    t.rows.push(compare_row(
                        [&s[0], &s[1]],
                        [&r[0], &r[1]],
                        p.axis.as_deref().unwrap_or(""),
                        &values[i % per_model],
                    ));
                }
                Ok(t)
            }
            Plan::KvFit(_) => {
                let points = self.points(sets)?;
                let fits: Vec<_> = points.par_iter().map(|s| kv_fit_report(&s[0])).collect();
                let mut cases = Vec::with_capacity(points.len());
                for (s, f) in points.into_iter().zip(fits) {
                    let f = f.map_err(|e| CliError::Engine {
                        file: self.origin.clone(),
                        message: e.0,
                    })?;
                    cases.push((s.into_iter().next().expect("one scenario per case"), f));
                }
                Ok(kv_fit_table(&cases))
            }
        }
    }

    /// The scenarios behind each output row, in order.
    fn points(&self, sets: &[(String, Value)]) -> Result<Vec<Vec<Scenario>>, CliError> {
        match &self.plan {
            Plan::Sweep(p) => {
                if p.values.is_empty() {
                    return Err(CliError::invalid(&self.origin, "values", "must not be empty"));
                }
                if let Some(outputs) = &p.outputs {
                    for (i, m) in outputs.iter().enumerate() {
                        if !is_metric(m) {
                            return Err(CliError::invalid(
                                &self.origin,
                                format!("outputs[{i}]"),
                                format!("unknown metric `{m}`"),
                            ));
                        }
                    }
                }
                let base = self.source(&p.base)?;
                p.values
                    .iter()
                    .map(|v| {
                        let mut all = sets.to_vec();
                        all.push((p.axis.clone(), v.clone()));
                        Ok(vec![base.resolve(&all)?])
                    })
                    .collect()
            }
            Plan::Compare(p) => {
                if p.axis.is_some() && p.values.is_empty() {
                    return Err(CliError::invalid(&self.origin, "values", "must not be empty"));
                }
                let a = self.source(&p.a)?;
                let b = self.source(&p.b)?;
                let models: Vec<Option<&Value>> = if p.models.is_empty() {
                    vec![None]
                } else {
                    p.models.iter().map(Some).collect()
                };
                let values: Vec<Option<&Value>> = if p.axis.is_some() {
                    p.values.iter().map(Some).collect()
                } else {
                    vec![None]
                };
                let mut out = Vec::new();
                for m in &models {
                    let (a, b) = match m {
                        Some(m) => (a.with("model", (*m).clone())?, b.with("model", (*m).clone())?),
                        None => (a.clone(), b.clone()),
                    };
                    for v in &values {
                        let mut all = sets.to_vec();
                        if let (Some(axis), Some(v)) = (&p.axis, v) {
                            all.push((axis.clone(), (*v).clone()));
                        }
                        let sa = a.resolve(&all)?;
                        let sb = b.resolve(&all)?;
                        check_same_workload(&sa, &sb, &self.origin)?;
                        out.push(vec![sa, sb]);
                    }
                }
                Ok(out)
            }
            Plan::KvFit(p) => {
                let base = self.source(&p.base)?;
                p.cases
                    .iter()
                    .map(|c| {
                        let mut src = base.with("model", c.model.clone())?;
                        if let Some(m) = &c.mapping {
                            src = src.with("mapping", m.clone())?;
                        }
                        Ok(vec![src.resolve(sets)?])
                    })
                    .collect()
            }
        }
    }
}

pub fn check_same_workload(a: &Scenario, b: &Scenario, origin: &str) -> Result<(), CliError> {
    if a.workload != b.workload || a.model != b.model {
        return Err(CliError::invalid(
            origin,
            "workload",
            "scenarios A and B must run the same model and workload",
        ));
    }
    Ok(())
}

/// Times every scenario in parallel; the first failure in plan order wins.
pub fn evaluate_all(points: &[Vec<Scenario>], origin: &str) -> Result<Vec<Vec<Report>>, CliError> {
    let flat: Vec<&Scenario> = points.iter().flatten().collect();
    let results: Vec<_> = flat.par_iter().map(|s| s.estimate()).collect();
    let mut it = results.into_iter();
    points
        .iter()
        .map(|group| {
            group
                .iter()
                .map(|_| {
                    it.next()
                        .expect("one result per scenario")
                        .map_err(|e| CliError::Engine {
                            file: origin.to_string(),
                            message: e.0,
                        })
                })
                .collect()
        })
        .collect()
}

fn axis_labels(p: &ComparePlan) -> Vec<String> {
    if p.axis.is_some() {
        p.values
            .iter()
            .map(|v| match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .collect()
    } else {
        vec![String::new()]
    }
}

const COMPARED: [&str; 8] = [
    "total_time",
    "compute_time",
    "communication_time",
    "other_time",
    "achieved_flops_per_device",
    "tokens_per_second",
    "fit_feasible",
    "fit_capacity",
];

pub fn compare_header() -> Vec<String> {
    let mut h: Vec<String> = ["model", "axis", "axis_value", "a_system", "b_system"]
        .iter()
        .map(|c| c.to_string())
        .collect();
    for m in COMPARED {
        h.push(format!("a_{m}"));
        h.push(format!("b_{m}"));
    }
    h.push("kv_cache_bytes".into());
    h.push("speedup".into());
    h
}

pub fn compare_row(s: [&Scenario; 2], r: [&Report; 2], axis: &str, value: &str) -> Vec<Cell> {
    let mut row = vec![
        Cell::Text(s[0].model.name.clone()),
        Cell::Text(axis.to_string()),
        Cell::Text(value.to_string()),
        Cell::Text(s[0].system.name.clone()),
        Cell::Text(s[1].system.name.clone()),
    ];
    for m in COMPARED {
        row.push(metric(s[0], r[0], m));
        row.push(metric(s[1], r[1], m));
    }
    row.push(metric(s[0], r[0], "kv_cache_bytes"));
    row.push(Cell::Real(speedup(r[0], r[1])));
    row
}

/// How many times faster `a` finishes than `b`.
pub fn speedup(a: &Report, b: &Report) -> f64 {
    if a.total_time > 0.0 {
        b.total_time / a.total_time
    } else {
        1.0
    }
}
