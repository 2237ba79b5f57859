//! Batch experiments: a JSON config names a mapping, a base point, a scale
//! schedule and a list of tasks; the runner writes `report.json` and a
//! `traces.csv` of per-scale values.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::exec;
use crate::mappings::{FieldSpec, GraphPoint, MappingModel, MappingSpec, VectorField};
use crate::moduli::{num, rg_estimate, rg_plus_estimate, ModulusEstimate, ScaleSchedule};
use crate::perturbation::DEFAULT_K;
use crate::radius::{
    radius_bounds, strong_regularity_localization_check, verify_destabilization, verify_interpolation,
    verify_lyusternik_graves, RadiusReport,
};
use crate::spaces::NormKind;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_VERDICT: i32 = 2;
pub const EXIT_CONSTRUCTION: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Clone)]
pub enum Task {
    Rg,
    RgPlus,
    Bounds,
    Destabilize,
    Interpolate { r: f64 },
    LyusternikGraves { f: FieldSpec },
    StrongCheck,
}

impl Task {
    pub fn label(&self) -> String {
        match self {
            Task::Rg => "rg".into(),
            Task::RgPlus => "rg_plus".into(),
            Task::Bounds => "bounds".into(),
            Task::Destabilize => "destabilize".into(),
            Task::Interpolate { r } => format!("interpolate[r={r}]"),
            Task::LyusternikGraves { .. } => "lyusternik_graves".into(),
            Task::StrongCheck => "strong_check".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub mapping_spec: MappingSpec,
    pub mapping: MappingModel,
    pub base: GraphPoint,
    pub domain_norm: NormKind,
    pub range_norm: NormKind,
    pub schedule: ScaleSchedule,
    pub tasks: Vec<Task>,
    pub k: usize,
    pub seed: u64,
    pub output: PathBuf,
}

impl ExperimentConfig {
    /// Replaces the seed everywhere it is used.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.schedule.seed = seed;
    }
}

fn num_vec(v: &Value, field: &str, errs: &mut Vec<String>) -> Option<Vec<f64>> {
    match v.as_array() {
        Some(a) => {
            let out: Vec<f64> = a.iter().filter_map(Value::as_f64).collect();
            if out.len() != a.len() {
                errs.push(format!("{field}: expected an array of numbers"));
                None
            } else {
                Some(out)
            }
        }
        None => {
            errs.push(format!("{field}: expected an array of numbers"));
            None
        }
    }
}

fn parse_task(i: usize, v: &Value, errs: &mut Vec<String>) -> Option<Task> {
    let simple = |name: &str| match name {
        "rg" => Some(Task::Rg),
        "rg_plus" => Some(Task::RgPlus),
        "bounds" => Some(Task::Bounds),
        "destabilize" => Some(Task::Destabilize),
        "strong_check" => Some(Task::StrongCheck),
        _ => None,
    };
    match v {
        Value::String(s) => match simple(s) {
            Some(t) => Some(t),
            None if s == "interpolate" => {
                errs.push(format!("tasks[{i}].interpolate.r: missing"));
                None
            }
            None if s == "lyusternik_graves" => {
                errs.push(format!("tasks[{i}].lyusternik_graves.f: missing"));
                None
            }
            None => {
                errs.push(format!("tasks[{i}]: unknown task {s:?}"));
                None
            }
        },
        Value::Object(m) if m.len() == 1 => {
            let (name, body) = m.iter().next().unwrap();
            match name.as_str() {
                "interpolate" => match body.get("r") {
                    None => {
                        errs.push(format!("tasks[{i}].interpolate.r: missing"));
                        None
                    }
                    Some(r) => match r.as_f64() {
                        Some(r) if r >= 0.0 && r.is_finite() => Some(Task::Interpolate { r }),
                        _ => {
                            errs.push(format!("tasks[{i}].interpolate.r: must be a finite number ≥ 0"));
                            None
                        }
                    },
                },
                "lyusternik_graves" => match body.get("f") {
                    None => {
                        errs.push(format!("tasks[{i}].lyusternik_graves.f: missing"));
                        None
                    }
                    Some(f) => match serde_json::from_value::<FieldSpec>(f.clone()) {
                        Ok(f) => Some(Task::LyusternikGraves { f }),
                        Err(e) => {
                            errs.push(format!("tasks[{i}].lyusternik_graves.f: {e}"));
                            None
                        }
                    },
                },
                other => match simple(other) {
                    Some(t) => Some(t),
                    None => {
                        errs.push(format!("tasks[{i}]: unknown task {other:?}"));
                        None
                    }
                },
            }
        }
        _ => {
            errs.push(format!("tasks[{i}]: expected a task name or a single-key object"));
            None
        }
    }
}

fn parse_norm(v: Option<&Value>, field: &str, errs: &mut Vec<String>) -> NormKind {
    match v {
        None => NormKind::Two,
        Some(v) => serde_json::from_value(v.clone()).unwrap_or_else(|e| {
            errs.push(format!("{field}: {e}"));
            NormKind::Two
        }),
    }
}

/// Validates a config document. Errors come back as one message per field.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let doc: Value = serde_json::from_str(text).map_err(|e| Error::Config(vec![format!("invalid JSON: {e}")]))?;
    let Some(obj) = doc.as_object() else {
        return Err(Error::Config(vec!["config must be a JSON object".into()]));
    };
    let mut errs = Vec::new();
    let known = ["mapping", "base_point", "norms", "schedule", "tasks", "K", "seed", "output"];
    for key in obj.keys() {
        if !known.contains(&key.as_str()) {
            errs.push(format!("{key}: unknown field"));
        }
    }

    let seed = match obj.get("seed") {
        None => 0,
        Some(v) => v.as_u64().unwrap_or_else(|| {
            errs.push("seed: expected a nonnegative integer".into());
            0
        }),
    };
    let k = match obj.get("K") {
        None => DEFAULT_K,
        Some(v) => match v.as_u64() {
            Some(k) if k >= 3 => k as usize,
            _ => {
                errs.push("K: expected an integer ≥ 3".into());
                DEFAULT_K
            }
        },
    };
    let output = match obj.get("output") {
        None => PathBuf::from("out"),
        Some(Value::String(s)) => PathBuf::from(s),
        Some(_) => {
            errs.push("output: expected a path string".into());
            PathBuf::from("out")
        }
    };

    let norms = obj.get("norms");
    let domain_norm = parse_norm(norms.and_then(|n| n.get("domain")), "norms.domain", &mut errs);
    let range_norm = parse_norm(norms.and_then(|n| n.get("range")), "norms.range", &mut errs);

    let base = match obj.get("base_point") {
        None => {
            errs.push("base_point: missing".into());
            None
        }
        Some(b) => {
            let mut coord = |key: &str| match b.get(key) {
                None => {
                    errs.push(format!("base_point.{key}: missing"));
                    None
                }
                Some(v) => num_vec(v, &format!("base_point.{key}"), &mut errs),
            };
            let x = coord("x");
            let y = coord("y");
            x.zip(y).map(|(x, y)| GraphPoint::new(x, y))
        }
    };

    let schedule = {
        let s = obj.get("schedule").cloned().unwrap_or(json!({}));
        let d = ScaleSchedule::default();
        let radii = match s.get("radii") {
            Some(v) => num_vec(v, "schedule.radii", &mut errs).unwrap_or(d.radii.clone()),
            None => d.radii.clone(),
        };
        let epsilons = match s.get("epsilons") {
            Some(v) => num_vec(v, "schedule.epsilons", &mut errs).unwrap_or(radii.clone()),
            None => radii.clone(),
        };
        let samples = match s.get("samples_per_scale") {
            None => d.samples_per_scale,
            Some(v) => v.as_u64().map(|n| n as usize).unwrap_or_else(|| {
                errs.push("schedule.samples_per_scale: expected a positive integer".into());
                d.samples_per_scale
            }),
        };
        let sseed = match s.get("seed") {
            None => seed,
            Some(v) => v.as_u64().unwrap_or_else(|| {
                errs.push("schedule.seed: expected a nonnegative integer".into());
                seed
            }),
        };
        let sch = ScaleSchedule {
            radii,
            epsilons,
            samples_per_scale: samples,
            seed: sseed,
        };
        if let Err(Error::InvalidSchedule(m)) = sch.validate() {
            for part in m.split("; ") {
                errs.push(format!("schedule: {part}"));
            }
        }
        sch
    };

    let tasks: Vec<Task> = match obj.get("tasks") {
        None => {
            errs.push("tasks: missing".into());
            Vec::new()
        }
        Some(Value::Array(a)) if a.is_empty() => {
            errs.push("tasks: must be nonempty".into());
            Vec::new()
        }
        Some(Value::Array(a)) => a.iter().enumerate().filter_map(|(i, t)| parse_task(i, t, &mut errs)).collect(),
        Some(_) => {
            errs.push("tasks: expected an array".into());
            Vec::new()
        }
    };

    let spec = match obj.get("mapping") {
        None => {
            errs.push("mapping: missing".into());
            None
        }
        Some(m) => match serde_json::from_value::<MappingSpec>(m.clone()) {
            Ok(s) => Some(s),
            Err(e) => {
                errs.push(format!("mapping: {e}"));
                None
            }
        },
    };

    let mut mapping = None;
    if let (Some(spec), Some(base)) = (&spec, &base) {
        match spec.build(domain_norm, range_norm, &base.x) {
            Err(e) => errs.push(format!("mapping: {e}")),
            Ok(m) => {
                let (n, dm) = (m.domain.dimension, m.range.dimension);
                if base.x.len() != n {
                    errs.push(format!("base_point.x: dimension mismatch (expected {n}, got {})", base.x.len()));
                } else if base.y.len() != dm {
                    errs.push(format!("base_point.y: dimension mismatch (expected {dm}, got {})", base.y.len()));
                } else if !m.on_graph(base) {
                    errs.push(format!(
                        "base_point: not on the graph (distance {:e})",
                        m.distance_to_image(&base.x, &base.y)
                    ));
                }
                for (i, t) in tasks.iter().enumerate() {
                    if let Task::LyusternikGraves { f } = t {
                        let fb = f.build();
                        if fb.domain_dim() != n || fb.range_dim() != dm {
                            errs.push(format!(
                                "tasks[{i}].lyusternik_graves.f: dimension mismatch (expected {n}→{dm}, got {}→{})",
                                fb.domain_dim(),
                                fb.range_dim()
                            ));
                        }
                    }
                }
                mapping = Some(m);
            }
        }
    }

    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    Ok(ExperimentConfig {
        mapping_spec: spec.unwrap(),
        mapping: mapping.unwrap(),
        base: base.unwrap(),
        domain_norm,
        range_norm,
        schedule,
        tasks,
        k,
        seed,
        output,
    })
}

/// One task's contribution to the report.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TaskOutcome {
    Ok {
        task: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        estimate: Option<ModulusEstimate>,
        #[serde(skip_serializing_if = "Option::is_none")]
        bounds: Option<BoundsOut>,
        #[serde(skip_serializing_if = "Option::is_none")]
        report: Option<RadiusReport>,
        #[serde(skip_serializing_if = "Option::is_none")]
        single_valued_localization: Option<bool>,
    },
    Error {
        task: String,
        error: String,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundsOut {
    #[serde(with = "num")]
    pub lower: f64,
    #[serde(with = "num")]
    pub upper: f64,
    pub near_equal: Option<bool>,
    pub lemma1: bool,
}

impl TaskOutcome {
    fn ok(task: String) -> Self {
        TaskOutcome::Ok {
            task,
            estimate: None,
            bounds: None,
            report: None,
            single_valued_localization: None,
        }
    }

    pub fn passed(&self) -> bool {
        match self {
            TaskOutcome::Ok { report, bounds, .. } => {
                report.as_ref().map_or(true, RadiusReport::passed) && bounds.as_ref().map_or(true, |b| b.lemma1)
            }
            TaskOutcome::Error { .. } => false,
        }
    }

    fn traces(&self, out: &mut Vec<(String, f64, f64)>) {
        let TaskOutcome::Ok {
            task, estimate, report, ..
        } = self
        else {
            return;
        };
        let mut push = |name: String, e: &ModulusEstimate| {
            for &(d, v) in &e.per_scale {
                out.push((name.clone(), d, v));
            }
        };
        if let Some(e) = estimate {
            push(task.clone(), e);
        }
        if let Some(r) = report {
            for (suffix, e) in [("rg", &r.rg), ("rg_plus", &r.rg_plus), ("rg_perturbed", &r.rg_perturbed)] {
                if let Some(e) = e {
                    push(format!("{task}:{suffix}"), e);
                }
            }
        }
    }
}

/// Everything `run_experiment` produced.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub exit_code: i32,
    pub outcomes: Vec<TaskOutcome>,
    pub report_json: String,
    pub traces_csv: String,
}

fn run_task(cfg: &ExperimentConfig, task: &Task) -> Result<TaskOutcome> {
    let (f, base, sch) = (&cfg.mapping, &cfg.base, &cfg.schedule);
    let mut out = TaskOutcome::ok(task.label());
    let TaskOutcome::Ok {
        estimate,
        bounds,
        report,
        single_valued_localization,
        ..
    } = &mut out
    else {
        unreachable!()
    };
    match task {
        Task::Rg => *estimate = Some(rg_estimate(f, base, sch)?),
        Task::RgPlus => *estimate = Some(rg_plus_estimate(f, base, sch)?),
        Task::Bounds => {
            let b = radius_bounds(f, base, sch)?;
            *bounds = Some(BoundsOut {
                lower: b.lower,
                upper: b.upper,
                near_equal: b.near_equal,
                lemma1: crate::radius::lemma1_residual(b.lower, b.upper) <= 0.0,
            });
        }
        Task::Destabilize => *report = Some(verify_destabilization(f, base, sch, cfg.k)?),
        Task::Interpolate { r } => *report = Some(verify_interpolation(f, base, *r, sch, cfg.k)?),
        Task::LyusternikGraves { f: fs } => {
            let field: Arc<dyn VectorField> = fs.build();
            *report = Some(verify_lyusternik_graves(f, base, field, sch)?);
        }
        Task::StrongCheck => {
            *single_valued_localization = Some(strong_regularity_localization_check(f, base, sch.radii[0], 32)?);
        }
    }
    Ok(out)
}

/// Runs every task and assembles the report. Nothing is written to disk.
pub fn execute(cfg: &ExperimentConfig) -> ExperimentResult {
    let outcomes: Vec<TaskOutcome> = exec::map(&cfg.tasks, |t| {
        log::info!("task {}", t.label());
        run_task(cfg, t).unwrap_or_else(|e| {
            log::error!("task {} failed: {e}", t.label());
            TaskOutcome::Error {
                task: t.label(),
                error: e.to_string(),
            }
        })
    });
    let any_error = outcomes.iter().any(|o| matches!(o, TaskOutcome::Error { .. }));
    let all_pass = outcomes.iter().all(TaskOutcome::passed);
    let exit_code = if any_error {
        EXIT_CONSTRUCTION
    } else if all_pass {
        EXIT_OK
    } else {
        EXIT_VERDICT
    };
    let report = json!({
        "timestamp_unix": std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        "seed": cfg.seed,
        "K": cfg.k,
        "mapping": cfg.mapping_spec,
        "base_point": cfg.base,
        "schedule": cfg.schedule,
        "tasks": outcomes,
        "all_verdicts_pass": all_pass && !any_error,
        "exit_code": exit_code,
    });
    let report_json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    let mut rows = Vec::new();
    for o in &outcomes {
        o.traces(&mut rows);
    }
    let mut traces_csv = String::from("task,delta,value\n");
    for (t, d, v) in rows {
        let _ = writeln!(traces_csv, "{t},{d},{v}");
    }
    ExperimentResult {
        exit_code,
        outcomes,
        report_json,
        traces_csv,
    }
}

/// Runs the experiment and writes `report.json` and `traces.csv` into `out`
/// (or the configured output directory). Returns the process exit code.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> i32 {
    let res = execute(cfg);
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output.clone());
    let write = || -> std::io::Result<()> {
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("report.json"), &res.report_json)?;
        std::fs::write(dir.join("traces.csv"), &res.traces_csv)?;
        Ok(())
    };
    match write() {
        Ok(()) => res.exit_code,
        Err(e) => {
            log::error!("writing results to {}: {e}", dir.display());
            eprintln!("error: writing results to {}: {e}", dir.display());
            EXIT_IO
        }
    }
}

/// `report.json` with the timestamp removed, for reproducibility checks.
pub fn strip_timestamp(report: &str) -> Result<Value> {
    let mut v: Value = serde_json::from_str(report)?;
    if let Some(o) = v.as_object_mut() {
        o.remove("timestamp_unix");
    }
    Ok(v)
}
