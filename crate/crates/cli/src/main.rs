use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bladeperf::error::CliError;
use bladeperf::figures::run_figures;
use bladeperf::kvfit::{kv_fit_report, kv_fit_table};
use bladeperf::output::Table;
use bladeperf::plan::{ComparePlan, LoadedPlan, Plan};
use bladeperf::scenario::{parse_set, read_json, ScenarioSource};
use bladeperf::{dump_preset, run_json, run_table};
use bladeperf_core::hwspec::validate_system;
use bladeperf_core::System;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

/// Analytical LLM performance model: scenarios, sweeps and comparisons.
#[derive(Parser)]
#[command(name = "bladeperf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time one scenario; writes the full report (JSON) and a CSV row.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        out: OutArgs,
        /// Leave per-kernel timings out of the JSON report.
        #[arg(long)]
        summary: bool,
    },
    /// Run a sweep plan: one CSV row per axis value.
    Sweep {
        plan: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Compare two scenarios, or run a compare plan.
    Compare {
        #[arg(num_args = 1..=2, required = true)]
        inputs: Vec<PathBuf>,
        /// Model presets to run both scenarios with (comma separated).
        #[arg(long, value_delimiter = ',')]
        models: Vec<String>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// KV cache on-chip fit and attention speedup, for a scenario or a plan.
    KvFit {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Print a system or model preset as JSON.
    DumpPreset { name: String },
    /// Check a scenario, plan or system file without timing anything.
    Validate {
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Write the CSV behind every bundled figure plan.
    Figures {
        #[arg(long)]
        out: PathBuf,
        /// Only these figures (fig4, fig5, fig6, fig6a, fig6b, fig7, fig7b, kv_fit).
        #[arg(long)]
        only: Vec<String>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file.
    file: Option<PathBuf>,
    /// System preset name or JSON file.
    #[arg(long)]
    system: Option<String>,
    /// Model preset name or JSON file.
    #[arg(long)]
    model: Option<String>,
    /// Workload JSON file or inline object.
    #[arg(long)]
    workload: Option<String>,
    /// Mapping JSON file or inline object.
    #[arg(long)]
    mapping: Option<String>,
    /// Dotted override, e.g. `system.main_memory.access_latency=5e-8`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct OutArgs {
    /// Directory for output files; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn sets(raw: &[String]) -> Result<Vec<(String, Value)>, CliError> {
    raw.iter().map(|s| parse_set(s)).collect()
}

fn absolute(p: &str) -> Value {
    let path = std::path::absolute(p).unwrap_or_else(|_| PathBuf::from(p));
    json!({ "path": path.display().to_string() })
}

fn looks_like_file(v: &str) -> bool {
    v.ends_with(".json") || v.contains(std::path::MAIN_SEPARATOR) || v.contains('/')
}

impl ScenarioArgs {
    fn stem(&self) -> String {
        self.file
            .as_deref()
            .and_then(Path::file_stem)
            .map_or_else(|| "scenario".to_string(), |s| s.to_string_lossy().into_owned())
    }

    fn source(&self) -> Result<ScenarioSource, CliError> {
        let mut src = match &self.file {
            Some(f) => ScenarioSource::from_file(f)?,
            None => ScenarioSource {
                doc: json!({}),
                origin: "<command line>".into(),
                base_dir: PathBuf::new(),
            },
        };
        for (field, value) in [("system", &self.system), ("model", &self.model)] {
            if let Some(v) = value {
                let v = if looks_like_file(v) {
                    absolute(v)
                } else {
                    Value::String(v.clone())
                };
                src = src.with(field, v)?;
            }
        }
        for (field, value) in [("workload", &self.workload), ("mapping", &self.mapping)] {
            if let Some(v) = value {
                let v = if v.trim_start().starts_with('{') {
                    serde_json::from_str(v).map_err(|e| CliError::parse(&format!("--{field}"), &e))?
                } else {
                    absolute(v)
                };
                src = src.with(field, v)?;
            }
        }
        Ok(src)
    }
}

fn write_out(dir: &Path, name: &str, content: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let path = dir.join(name);
    fs::write(&path, content).map_err(|source| CliError::Io { path, source })
}

/// Tables print as CSV unless JSON is asked for.
fn emit_table(out: &OutArgs, stem: &str, t: &Table) -> Result<(), CliError> {
    let (ext, body) = match out.format {
        Some(Format::Json) => ("json", t.to_json()),
        _ => ("csv", t.to_csv()),
    };
    match &out.out {
        Some(dir) => write_out(dir, &format!("{stem}.{ext}"), &body),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn file_stem(p: &Path) -> String {
    p.file_stem()
        .map_or_else(|| "out".to_string(), |s| s.to_string_lossy().into_owned())
}

fn is_plan(doc: &Value) -> bool {
    doc.get("kind").is_some()
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run {
            scenario,
            out,
            summary,
        } => {
            let s = scenario.source()?.resolve(&sets(&scenario.set)?)?;
            let origin = scenario
                .file
                .as_ref()
                .map_or("<command line>".into(), |f| f.display().to_string());
            let r = s.estimate().map_err(|e| CliError::Engine {
                file: origin,
                message: e.0,
            })?;
            let stem = scenario.stem();
            let json = run_json(&s, &r, summary);
            let csv = run_table(&s, &r).to_csv();
            match (&out.out, out.format) {
                (Some(dir), None) => {
                    write_out(dir, &format!("{stem}.json"), &json)?;
                    write_out(dir, &format!("{stem}.csv"), &csv)
                }
                (Some(dir), Some(Format::Json)) => write_out(dir, &format!("{stem}.json"), &json),
                (Some(dir), Some(Format::Csv)) => write_out(dir, &format!("{stem}.csv"), &csv),
                (None, Some(Format::Csv)) => {
                    print!("{csv}");
                    Ok(())
                }
                (None, _) => {
                    print!("{json}");
                    Ok(())
                }
            }
        }
        Command::Sweep { plan, set, out } => {
            let p = LoadedPlan::from_file(&plan)?;
            if !matches!(p.plan, Plan::Sweep(_)) {
                return Err(CliError::invalid(&p.origin, "kind", "expected \"sweep\""));
            }
            emit_table(&out, &file_stem(&plan), &p.run(&sets(&set)?)?)
        }
        Command::Compare {
            inputs,
            models,
            set,
            out,
        } => {
            let models: Vec<Value> = models.into_iter().map(Value::String).collect();
            let (p, stem) = match inputs.as_slice() {
                [plan] => {
                    let mut p = LoadedPlan::from_file(plan)?;
                    match &mut p.plan {
                        Plan::Compare(c) => {
                            if !models.is_empty() {
                                c.models = models;
                            }
                        }
                        _ => return Err(CliError::invalid(&p.origin, "kind", "expected \"compare\"")),
                    }
                    (p, file_stem(plan))
                }
                [a, b] => {
                    // Path references keep each file's relative paths its own.
                    let plan = ComparePlan {
                        a: absolute(&a.display().to_string()),
                        b: absolute(&b.display().to_string()),
                        models,
                        axis: None,
                        values: Vec::new(),
                    };
                    let lp = LoadedPlan {
                        plan: Plan::Compare(plan),
                        origin: format!("{} vs {}", a.display(), b.display()),
                        base_dir: PathBuf::new(),
                    };
                    (lp, "compare".to_string())
                }
                _ => unreachable!("clap limits compare to one or two inputs"),
            };
            emit_table(&out, &stem, &p.run(&sets(&set)?)?)
        }
        Command::KvFit { scenario, out } => {
            let set = sets(&scenario.set)?;
            if let Some(f) = &scenario.file {
                if is_plan(&read_json(f)?) {
                    let p = LoadedPlan::from_file(f)?;
                    if !matches!(p.plan, Plan::KvFit(_)) {
                        return Err(CliError::invalid(&p.origin, "kind", "expected \"kv-fit\""));
                    }
                    return emit_table(&out, &scenario.stem(), &p.run(&set)?);
                }
            }
            let src = scenario.source()?;
            let s = src.resolve(&set)?;
            let k = kv_fit_report(&s).map_err(|e| CliError::Engine {
                file: src.origin.clone(),
                message: e.0,
            })?;
            emit_table(&out, &scenario.stem(), &kv_fit_table(&[(s, k)]))
        }
        Command::DumpPreset { name } => {
            print!("{}", dump_preset(&name)?);
            Ok(())
        }
        Command::Validate { scenario } => {
            let set = sets(&scenario.set)?;
            if let Some(f) = &scenario.file {
                let doc = read_json(f)?;
                let origin = f.display().to_string();
                if is_plan(&doc) {
                    let n = LoadedPlan::from_file(f)?.check(&set)?;
                    println!("valid: {origin} ({n} points)");
                    return Ok(());
                }
                if doc.get("schema_version").is_some() {
                    let sys: System = serde_path_to_error::deserialize(&doc).map_err(|e| {
                        CliError::invalid(&origin, e.path().to_string(), e.inner().to_string())
                    })?;
                    if let Some(v) = validate_system(&sys).first() {
                        return Err(CliError::invalid(&origin, &v.field, &v.rule));
                    }
                    println!("valid: {origin}");
                    return Ok(());
                }
            }
            let src = scenario.source()?;
            src.resolve(&set)?;
            println!("valid: {}", src.origin);
            Ok(())
        }
        Command::Figures { out, only, set } => {
            for (name, table) in run_figures(&only, &sets(&set)?)? {
                write_out(&out, &format!("{name}.csv"), &table.to_csv())?;
            }
            Ok(())
        }
    }
}
