//! Scenario documents: references to presets or files, inline specs and
//! dotted overrides, resolved into validated typed inputs.

use std::fs;
use std::path::{Path, PathBuf};

use bladeperf_core::engine::{estimate, MemoryAccessModel, PlacementPolicy};
use bladeperf_core::hwspec::{system_preset, validate_system};
use bladeperf_core::mapping::{MappingError, MappingSpec};
use bladeperf_core::overrides::set_path;
use bladeperf_core::workload::{model_preset, ModelSpec, WorkloadError, WorkloadSpec};
use bladeperf_core::{Report, System};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::CliError;

/// Pseudo-field: sets the per-device DRAM bandwidth and lifts the pool caps
/// so that every device sees exactly this value.
pub const DRAM_BANDWIDTH_PATH: &str = "system.dram_bandwidth_per_device";

const FIELDS: [&str; 7] = [
    "system",
    "model",
    "workload",
    "mapping",
    "memory_access",
    "placement",
    "overrides",
];

/// A fully resolved and validated scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub system: System,
    pub model: ModelSpec,
    pub workload: WorkloadSpec,
    pub mapping: MappingSpec,
    pub memory_access: MemoryAccessModel,
    pub placement: PlacementPolicy,
}

impl Scenario {
    pub fn estimate(&self) -> Result<Report, EstimateError> {
        estimate(
            &self.model,
            &self.workload,
            &self.mapping,
            &self.system,
            &self.memory_access,
            self.placement,
        )
        .map_err(|e| EstimateError(e.to_string()))
    }
}

#[derive(Debug)]
pub struct EstimateError(pub String);

type PresetFn = dyn Fn(&str) -> Result<Value, String>;

/// An unresolved scenario document and the place its relative paths start.
#[derive(Debug, Clone)]
pub struct ScenarioSource {
    pub doc: Value,
    /// File name used in messages.
    pub origin: String,
    pub base_dir: PathBuf,
}

/// Reads and parses a JSON file; syntax errors carry line and column.
pub fn read_json(path: &Path) -> Result<Value, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::parse(&path.display().to_string(), &e))
}

/// `key=value`; the value is JSON when it parses as JSON, a string otherwise.
pub fn parse_set(arg: &str) -> Result<(String, Value), CliError> {
    let (key, raw) = arg
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got `{arg}`")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(CliError::Usage(format!("--set expects key=value, got `{arg}`")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

fn typed<T: DeserializeOwned>(v: &Value, file: &str, prefix: &str) -> Result<T, CliError> {
    serde_path_to_error::deserialize(v).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." {
            prefix.to_string()
        } else {
            format!("{prefix}.{path}")
        };
        CliError::invalid(file, field, e.inner().to_string())
    })
}

fn normalize<T: DeserializeOwned + Serialize>(
    v: &Value,
    file: &str,
    prefix: &str,
) -> Result<Value, CliError> {
    let t: T = typed(v, file, prefix)?;
    Ok(serde_json::to_value(t).expect("specs serialize"))
}

impl ScenarioSource {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let doc = read_json(path)?;
        Ok(ScenarioSource {
            doc,
            origin: path.display().to_string(),
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }

    /// An inline document, or `{"path": ...}` pointing at one.
    pub fn from_value(doc: &Value, origin: &str, base_dir: &Path) -> Result<Self, CliError> {
        match path_ref(doc) {
            Some(p) => Self::from_file(&base_dir.join(p)),
            None => Ok(ScenarioSource {
                doc: doc.clone(),
                origin: origin.to_string(),
                base_dir: base_dir.to_path_buf(),
            }),
        }
    }

    fn object(&self) -> Result<&Map<String, Value>, CliError> {
        self.doc
            .as_object()
            .ok_or_else(|| CliError::invalid(&self.origin, "scenario", "expected a JSON object"))
    }

    /// Replaces a top-level entry (`system`, `model`, ...).
    pub fn with(&self, field: &str, value: Value) -> Result<Self, CliError> {
        let mut out = self.clone();
        match out.doc.as_object_mut() {
            Some(map) => {
                map.insert(field.to_string(), value);
                Ok(out)
            }
            None => Err(CliError::invalid(
                &self.origin,
                "scenario",
                "expected a JSON object",
            )),
        }
    }

    /// Loads a `system`/`model`/... entry that may be a preset name, a path
    /// reference or an inline object. Returns the object and the file it
    /// came from.
    fn part(&self, field: &str, preset: Option<&PresetFn>) -> Result<Option<(Value, String)>, CliError> {
        let Some(v) = self.object()?.get(field) else {
            return Ok(None);
        };
        if let Some(p) = path_ref(v) {
            let path = self.base_dir.join(p);
            return Ok(Some((read_json(&path)?, path.display().to_string())));
        }
        match (v, preset) {
            (Value::String(name), Some(lookup)) => lookup(name)
                .map(|doc| Some((doc, self.origin.clone())))
                .map_err(|e| CliError::invalid(&self.origin, field, e)),
            (Value::Object(_), _) => Ok(Some((v.clone(), self.origin.clone()))),
            _ => Err(CliError::invalid(
                &self.origin,
                field,
                if preset.is_some() {
                    "expected a preset name, {\"path\": ...} or an object"
                } else {
                    "expected {\"path\": ...} or an object"
                },
            )),
        }
    }

    fn required(&self, field: &str, preset: Option<&PresetFn>) -> Result<(Value, String), CliError> {
        self.part(field, preset)?
            .ok_or_else(|| CliError::invalid(&self.origin, field, "missing"))
    }

    /// Resolves references, applies the document's own overrides and then
    /// `extra` in order, and validates the result.
    pub fn resolve(&self, extra: &[(String, Value)]) -> Result<Scenario, CliError> {
        let origin = self.origin.as_str();
        for key in self.object()?.keys() {
            if !FIELDS.contains(&key.as_str()) {
                return Err(CliError::invalid(
                    origin,
                    key,
                    format!("unknown field (expected one of {})", FIELDS.join(", ")),
                ));
            }
        }
        let system_lookup = |name: &str| -> Result<Value, String> {
            system_preset::<f64>(name)
                .map(|s| serde_json::to_value(s).expect("specs serialize"))
                .map_err(|e| e.to_string())
        };
        let model_lookup = |name: &str| -> Result<Value, String> {
            model_preset(name)
                .map(|m| serde_json::to_value(m).expect("specs serialize"))
                .map_err(|e| e.to_string())
        };
        let (system, system_file) = self.required("system", Some(&system_lookup))?;
        let (model, model_file) = self.required("model", Some(&model_lookup))?;
        let (workload, workload_file) = self.required("workload", None)?;
        let (mut mapping, mapping_file) = self.required("mapping", None)?;
        let memory_access = self.part("memory_access", None)?;
        let placement = self.part("placement", None)?;

        let system = normalize::<System>(&system, &system_file, "system")?;
        let model = normalize::<ModelSpec>(&model, &model_file, "model")?;
        let workload = normalize::<WorkloadSpec>(&workload, &workload_file, "workload")?;
        // Microbatches belong to both the workload and the mapping; an
        // omitted mapping value follows the workload.
        let implicit_mb = mapping.get("microbatches").is_none();
        if let (true, Some(map)) = (implicit_mb, mapping.as_object_mut()) {
            map.insert("microbatches".into(), workload["microbatches"].clone());
        }
        let mapping = normalize::<MappingSpec>(&mapping, &mapping_file, "mapping")?;
        let memory_access = match &memory_access {
            Some((v, f)) => normalize::<MemoryAccessModel>(v, f, "memory_access")?,
            None => serde_json::to_value(MemoryAccessModel::default()).expect("specs serialize"),
        };
        let placement = match &placement {
            Some((v, f)) => normalize::<PlacementPolicy>(v, f, "placement")?,
            None => serde_json::to_value(PlacementPolicy::default()).expect("specs serialize"),
        };

        let mut doc = serde_json::json!({
            "system": system,
            "model": model,
            "workload": workload,
            "mapping": mapping,
            "memory_access": memory_access,
            "placement": placement,
        });
        let mut sets: Vec<(String, Value)> = Vec::new();
        match self.object()?.get("overrides") {
            None => {}
            Some(Value::Object(map)) => {
                sets.extend(map.iter().map(|(k, v)| (k.clone(), v.clone())));
            }
            Some(_) => {
                return Err(CliError::invalid(
                    origin,
                    "overrides",
                    "expected an object of dotted paths",
                ))
            }
        }
        sets.extend(extra.iter().cloned());
        let mut dram_bandwidth = None;
        for (path, value) in sets {
            if path == DRAM_BANDWIDTH_PATH {
                let bw = value
                    .as_f64()
                    .filter(|v| v.is_finite() && *v > 0.0)
                    .ok_or_else(|| CliError::invalid(origin, &path, "must be a number > 0"))?;
                dram_bandwidth = Some(bw);
                continue;
            }
            if path == "workload.microbatches" && implicit_mb {
                set_path(&mut doc, "mapping.microbatches", value.clone())
                    .map_err(|e| CliError::invalid(origin, &path, e))?;
            }
            set_path(&mut doc, &path, value).map_err(|e| CliError::invalid(origin, &path, e))?;
        }

        let mut system: System = typed(&doc["system"], &system_file, "system")?;
        if let Some(bw) = dram_bandwidth {
            system.set_uncapped_dram_bandwidth(bw);
        }
        let scenario = Scenario {
            system,
            model: typed(&doc["model"], &model_file, "model")?,
            workload: typed(&doc["workload"], &workload_file, "workload")?,
            mapping: typed(&doc["mapping"], &mapping_file, "mapping")?,
            memory_access: typed(&doc["memory_access"], origin, "memory_access")?,
            placement: typed(&doc["placement"], origin, "placement")?,
        };
        validate(&scenario, origin, &system_file)?;
        Ok(scenario)
    }
}

fn path_ref(v: &Value) -> Option<&str> {
    match v.as_object() {
        Some(map) if map.len() == 1 => map.get("path").and_then(Value::as_str),
        _ => None,
    }
}

fn validate(s: &Scenario, origin: &str, system_file: &str) -> Result<(), CliError> {
    let violations = validate_system(&s.system);
    if let Some(first) = violations.first() {
        let mut message = first.rule.clone();
        let rest: Vec<String> = violations[1..].iter().map(|v| format!("system.{v}")).collect();
        if !rest.is_empty() {
            message = format!("{message} (also: {})", rest.join("; "));
        }
        return Err(CliError::invalid(
            system_file,
            format!("system.{}", first.field),
            message,
        ));
    }
    let workload_err = |e: WorkloadError, prefix: &str| match e {
        WorkloadError::InvalidModel { field, rule } | WorkloadError::InvalidWorkload { field, rule } => {
            CliError::invalid(origin, format!("{prefix}.{field}"), rule)
        }
        other => CliError::invalid(origin, prefix, other.to_string()),
    };
    s.model.validate().map_err(|e| workload_err(e, "model"))?;
    s.workload.validate().map_err(|e| workload_err(e, "workload"))?;
    if s.workload.phase == bladeperf_core::workload::Phase::Training
        && s.mapping.microbatches != s.workload.microbatches
    {
        return Err(CliError::invalid(
            origin,
            "mapping.microbatches",
            format!("must equal workload.microbatches ({})", s.workload.microbatches),
        ));
    }
    s.mapping
        .validate(&s.model, s.workload.phase, s.workload.batch)
        .map_err(|e| match e {
            MappingError::Invalid { field, rule } => CliError::invalid(origin, field, rule),
            other => CliError::invalid(origin, "mapping", other.to_string()),
        })?;
    s.mapping
        .check_devices(u64::from(s.system.device_count))
        .map_err(|e| CliError::invalid(origin, "mapping", e.to_string()))?;
    s.memory_access
        .validate()
        .map_err(|e| CliError::invalid(origin, "memory_access", e.to_string()))?;
    Ok(())
}
