//! Experiment manifests, study orchestration and file outputs.
//!
//! A manifest names a study kind, a base [`RunConfig`], the sweep values the
//! study varies and a seed list. Every (variant, seed) pair becomes one run.
//! Runs execute on a worker pool but outputs are written in a fixed order, so
//! files are byte-identical for a given manifest whatever the worker count.
//!
//! Output layout under the output directory:
//!
//! ```text
//! resolved_manifest.json
//! summary.csv
//! curves.csv
//! <study>/<variant>/<seed>/trace.csv
//! <study>/<variant>/<seed>/run.json
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::federate::{mean_stderr, run, Algorithm, RunConfig, RunTrace};
use crate::perturb::{Perturbation, PerturbationKind};
use crate::policy::Policy;
use crate::preference::separation_histogram;
use crate::rng::{RngStream, Role};
use crate::trace::write_trace_csv;
use crate::verify::{verify_all, CheckReport};

pub const SUMMARY_COLUMNS: [&str; 8] = [
    "study",
    "variant",
    "seed",
    "final_value_mean",
    "final_value_stderr",
    "iterations",
    "traj_total",
    "bits_total",
];

pub const CURVE_COLUMNS: [&str; 4] = ["variant", "t", "value_mean", "value_stderr"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyKind {
    #[default]
    SingleRun,
    /// Sweep over agent counts `K`.
    KStudy,
    /// Sweep over the batch size `D`.
    DStudy,
    PerturbationCompare,
    BaselineCompare,
    VerifyAll,
}

impl StudyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StudyKind::SingleRun => "single-run",
            StudyKind::KStudy => "k-study",
            StudyKind::DStudy => "d-study",
            StudyKind::PerturbationCompare => "perturbation-compare",
            StudyKind::BaselineCompare => "baseline-compare",
            StudyKind::VerifyAll => "verify-all",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    List(Vec<u64>),
    Range { start: u64, count: u64 },
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds::List(vec![0])
    }
}

impl Seeds {
    pub fn to_vec(&self) -> Vec<u64> {
        match self {
            Seeds::List(v) => v.clone(),
            Seeds::Range { start, count } => (0..*count).map(|i| start + i).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    #[serde(default)]
    pub study: StudyKind,
    pub base: RunConfig,
    /// Values of the swept quantity; their type depends on the study kind.
    #[serde(default)]
    pub sweep: Vec<Value>,
    #[serde(default)]
    pub seeds: Seeds,
    /// Optimizer trajectory budget `M`; when set each variant runs `M / (2NDK)` iterations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

/// One configuration of a study.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub config: RunConfig,
}

fn from_value<T: serde::de::DeserializeOwned>(value: Value, prefix: &str) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let inner = e.path().to_string();
        let path = match (prefix.is_empty(), inner.as_str()) {
            (true, _) => inner.clone(),
            (false, ".") => prefix.to_string(),
            (false, _) => format!("{prefix}.{inner}"),
        };
        Error::config(path, e.into_inner().to_string())
    })
}

fn prefixed(prefix: &str, e: Error) -> Error {
    match e {
        Error::Config { path, message } => Error::config(format!("{prefix}.{path}"), message),
        Error::InvalidArgument(m) | Error::NonFinite(m) => Error::config(prefix, m),
        other => other,
    }
}

/// Parses a manifest. A document without `base` or `study` is read as a bare
/// run configuration and wrapped into a single-run manifest.
pub fn parse_manifest(text: &str) -> Result<ExperimentManifest> {
    let mut doc: Value = serde_json::from_str(text)?;
    let obj = doc
        .as_object_mut()
        .ok_or_else(|| Error::config(".", "manifest must be a JSON object"))?;
    let is_manifest = obj.contains_key("base") || obj.contains_key("study");
    if !is_manifest {
        let base: RunConfig = from_value(doc, "")?;
        let manifest = ExperimentManifest {
            study: StudyKind::SingleRun,
            base,
            sweep: Vec::new(),
            seeds: Seeds::default(),
            budget: None,
            out: None,
        };
        manifest.validate().map_err(|e| match e {
            Error::Config { path, message } => {
                let path = path.strip_prefix("base.").unwrap_or(&path).to_string();
                Error::config(path, message)
            }
            other => other,
        })?;
        return Ok(manifest);
    }
    // A budget fixes the iteration count per variant, so `base.iterations` may be omitted.
    if obj.get("budget").is_some_and(|b| !b.is_null()) {
        if let Some(base) = obj.get_mut("base").and_then(Value::as_object_mut) {
            base.entry("iterations").or_insert(Value::from(0));
        }
    }
    let manifest: ExperimentManifest = from_value(doc, "")?;
    manifest.validate()?;
    Ok(manifest)
}

pub fn load_config(path: &Path) -> Result<ExperimentManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text)
}

impl ExperimentManifest {
    pub fn single(base: RunConfig, seeds: Vec<u64>) -> Self {
        ExperimentManifest {
            study: StudyKind::SingleRun,
            base,
            sweep: Vec::new(),
            seeds: Seeds::List(seeds),
            budget: None,
            out: None,
        }
    }

    pub fn seed_list(&self) -> Vec<u64> {
        self.seeds.to_vec()
    }

    pub fn validate(&self) -> Result<()> {
        let seeds = self.seed_list();
        if seeds.is_empty() {
            return Err(Error::config("seeds", "seed list must not be empty"));
        }
        let mut seen = BTreeSet::new();
        for (i, s) in seeds.iter().enumerate() {
            if !seen.insert(*s) {
                return Err(Error::config(
                    format!("seeds[{i}]"),
                    format!("duplicate seed {s}"),
                ));
            }
        }
        if self.study == StudyKind::VerifyAll && seeds.len() != 1 {
            return Err(Error::config("seeds", "verify-all takes exactly one seed"));
        }
        if self.budget == Some(0) {
            return Err(Error::config("budget", "must be positive"));
        }
        self.variants().map(|_| ())
    }

    /// The configurations this manifest expands to, in output order.
    pub fn variants(&self) -> Result<Vec<Variant>> {
        let base = &self.base;
        let mut out = Vec::new();
        match self.study {
            StudyKind::SingleRun | StudyKind::VerifyAll => {
                if !self.sweep.is_empty() {
                    return Err(Error::config(
                        "sweep",
                        format!("{} takes no sweep values", self.study.as_str()),
                    ));
                }
                out.push(Variant {
                    name: "default".into(),
                    config: base.clone(),
                });
            }
            StudyKind::KStudy | StudyKind::DStudy => {
                if self.sweep.is_empty() {
                    return Err(Error::config("sweep", "sweep values are required"));
                }
                let d = base.dim().map_err(|e| prefixed("base", e))?;
                for (i, v) in self.sweep.iter().enumerate() {
                    let at = format!("sweep[{i}]");
                    let n: usize = from_value(v.clone(), &at)?;
                    if n == 0 {
                        return Err(Error::config(at, "must be at least 1"));
                    }
                    let mut c = base.clone();
                    let name = if self.study == StudyKind::KStudy {
                        if n > d {
                            return Err(Error::config(
                                at,
                                format!("K = {n} exceeds the parameter dimension d = {d}"),
                            ));
                        }
                        c.agents = n;
                        format!("k{n}")
                    } else {
                        c.panel.batch = n;
                        format!("d{n}")
                    };
                    out.push(Variant { name, config: c });
                }
            }
            StudyKind::PerturbationCompare => {
                let values = self.sweep_or(&["binary", "gaussian"]);
                for (i, v) in values.into_iter().enumerate() {
                    let kind: PerturbationKind = from_value(v, &format!("sweep[{i}]"))?;
                    let mut c = base.clone();
                    c.perturbation = kind;
                    out.push(Variant {
                        name: kebab(&kind)?,
                        config: c,
                    });
                }
            }
            StudyKind::BaselineCompare => {
                let values = self.sweep_or(&["par", "fedavg"]);
                for (i, v) in values.into_iter().enumerate() {
                    let algorithm: Algorithm = from_value(v, &format!("sweep[{i}]"))?;
                    let mut c = base.clone();
                    c.algorithm = algorithm;
                    out.push(Variant {
                        name: kebab(&algorithm)?,
                        config: c,
                    });
                }
            }
        }
        let mut names = BTreeSet::new();
        for (i, v) in out.iter_mut().enumerate() {
            if !names.insert(v.name.clone()) {
                return Err(Error::config(
                    format!("sweep[{i}]"),
                    "duplicate sweep value",
                ));
            }
            if let Some(m) = self.budget {
                let per = v.config.panel.trajectories_per_query() * v.config.agents as u64;
                if !m.is_multiple_of(per) {
                    return Err(Error::config(
                        "budget",
                        format!("M = {m} is not a multiple of 2NDK = {per} for {}", v.name),
                    ));
                }
                v.config.iterations = (m / per) as usize;
            }
            v.config.validate().map_err(|e| prefixed("base", e))?;
        }
        Ok(out)
    }

    fn sweep_or(&self, defaults: &[&str]) -> Vec<Value> {
        if self.sweep.is_empty() {
            defaults.iter().map(|s| Value::from(*s)).collect()
        } else {
            self.sweep.clone()
        }
    }

    /// The manifest with every default spelled out.
    pub fn resolved_json(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Some(obj) = v.as_object_mut() {
            obj.insert("seeds".into(), serde_json::to_value(self.seed_list())?);
            if self.budget.is_some() {
                if let Some(base) = obj.get_mut("base").and_then(Value::as_object_mut) {
                    base.remove("iterations");
                }
            }
            if self.sweep.is_empty() {
                let names: Vec<Value> = self
                    .variants()?
                    .into_iter()
                    .filter(|_| {
                        matches!(
                            self.study,
                            StudyKind::PerturbationCompare | StudyKind::BaselineCompare
                        )
                    })
                    .map(|x| Value::from(x.name))
                    .collect();
                obj.insert("sweep".into(), Value::from(names));
            }
        }
        Ok(serde_json::to_string_pretty(&v)? + "\n")
    }
}

fn kebab<T: Serialize>(x: &T) -> Result<String> {
    match serde_json::to_value(x)? {
        Value::String(s) => Ok(s),
        other => Ok(other.to_string()),
    }
}

/// One finished or failed run.
#[derive(Debug)]
pub struct RunOutcome {
    pub variant: String,
    pub seed: u64,
    pub result: Result<RunTrace>,
}

#[derive(Debug, Default)]
pub struct StudyOutcome {
    pub runs: usize,
    pub failures: Vec<String>,
    pub warnings: Vec<String>,
    pub checks: Vec<CheckReport>,
}

impl StudyOutcome {
    pub fn success(&self) -> bool {
        self.failures.is_empty() && self.checks.iter().all(CheckReport::passed)
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            return Err(Error::config("jobs", "must be at least 1"));
        }
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::invalid(e.to_string()))
}

/// Runs every (variant, seed) pair of the manifest on `jobs` workers.
pub fn execute(manifest: &ExperimentManifest, jobs: Option<usize>) -> Result<Vec<RunOutcome>> {
    let variants = manifest.variants()?;
    let seeds = manifest.seed_list();
    let tasks: Vec<(&Variant, u64)> = variants
        .iter()
        .flat_map(|v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let workers = pool(jobs)?;
    Ok(workers.install(|| {
        tasks
            .par_iter()
            .map(|(v, seed)| {
                let mut c = v.config.clone();
                c.seed = *seed;
                RunOutcome {
                    variant: v.name.clone(),
                    seed: *seed,
                    result: run(&c),
                }
            })
            .collect()
    }))
}

/// The `run.json` document: everything in a trace except the per-iteration rows.
pub fn run_json(trace: &RunTrace) -> Result<String> {
    let doc = serde_json::json!({
        "header": trace.header,
        "summary": trace.summary,
        "checkpoints": trace.checkpoints,
    });
    Ok(serde_json::to_string_pretty(&doc)? + "\n")
}

fn sample_std(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / n as f64;
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// `summary.csv` bytes: one row per successful run, then one `all` row per
/// variant whose value columns hold the mean and standard deviation across
/// seeds and whose count columns hold totals.
pub fn summary_csv(study: StudyKind, outcomes: &[RunOutcome]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_COLUMNS)?;
    let mut order: Vec<&str> = Vec::new();
    for o in outcomes {
        if !order.contains(&o.variant.as_str()) {
            order.push(&o.variant);
        }
    }
    let mut aggregates = Vec::new();
    for name in &order {
        let runs: Vec<(u64, &RunTrace)> = outcomes
            .iter()
            .filter(|o| o.variant == *name)
            .filter_map(|o| o.result.as_ref().ok().map(|t| (o.seed, t)))
            .collect();
        for (seed, t) in &runs {
            let s = &t.summary;
            w.write_record([
                study.as_str().to_string(),
                name.to_string(),
                seed.to_string(),
                s.value_mean.to_string(),
                s.value_stderr.to_string(),
                s.iterations.to_string(),
                s.ledger.traj_total().to_string(),
                s.ledger.bits.to_string(),
            ])?;
        }
        if runs.is_empty() {
            continue;
        }
        let finals: Vec<f64> = runs.iter().map(|(_, t)| t.summary.value_mean).collect();
        let iters: BTreeSet<usize> = runs.iter().map(|(_, t)| t.summary.iterations).collect();
        aggregates.push([
            study.as_str().to_string(),
            name.to_string(),
            "all".to_string(),
            (finals.iter().sum::<f64>() / finals.len() as f64).to_string(),
            sample_std(&finals).to_string(),
            iters
                .iter()
                .map(|i| i.to_string())
                .collect::<Vec<_>>()
                .join("|"),
            runs.iter()
                .map(|(_, t)| t.summary.ledger.traj_total())
                .sum::<u64>()
                .to_string(),
            runs.iter()
                .map(|(_, t)| t.summary.ledger.bits)
                .sum::<u64>()
                .to_string(),
        ]);
    }
    for row in aggregates {
        w.write_record(row)?;
    }
    w.into_inner().map_err(|e| Error::invalid(e.to_string()))
}

/// Long-format learning curves: mean and standard error across seeds at each
/// iteration. Variants whose traces differ in length are cut to the common
/// prefix and reported in the returned warnings.
pub fn emit_plotdata(traces: &[(String, &RunTrace)]) -> Result<(Vec<u8>, Vec<String>)> {
    if traces.is_empty() {
        return Err(Error::invalid("no traces to aggregate"));
    }
    let mut order: Vec<&str> = Vec::new();
    for (v, _) in traces {
        if !order.contains(&v.as_str()) {
            order.push(v);
        }
    }
    let mut warnings = Vec::new();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CURVE_COLUMNS)?;
    for name in order {
        let group: Vec<&RunTrace> = traces
            .iter()
            .filter(|(v, _)| v == name)
            .map(|(_, t)| *t)
            .collect();
        let lens: BTreeSet<usize> = group.iter().map(|t| t.records.len()).collect();
        let common = *lens.iter().next().unwrap_or(&0);
        if lens.len() > 1 {
            let msg = format!(
                "variant {name}: trace lengths {lens:?} differ; curves truncated to {common} iterations"
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
        for i in 0..common {
            let xs: Vec<f64> = group.iter().map(|t| t.records[i].value_mean).collect();
            let (m, se) = mean_stderr(&xs);
            w.write_record([
                name.to_string(),
                group[0].records[i].t.to_string(),
                m.to_string(),
                se.to_string(),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    Ok((bytes, warnings))
}

/// Verification reports as written to `verify_report.json`.
pub fn verify_report_json(reports: &[CheckReport]) -> Result<String> {
    let doc = serde_json::json!({
        "version": crate::federate::VERSION,
        "passed": reports.iter().all(CheckReport::passed),
        "checks": reports,
    });
    Ok(serde_json::to_string_pretty(&doc)? + "\n")
}

/// Runs a whole manifest and writes every output file under `out`.
pub fn run_study(
    manifest: &ExperimentManifest,
    out: &Path,
    jobs: Option<usize>,
) -> Result<StudyOutcome> {
    manifest.validate()?;
    write_file(
        &out.join("resolved_manifest.json"),
        manifest.resolved_json()?.as_bytes(),
    )?;
    let mut outcome = StudyOutcome::default();
    if manifest.study == StudyKind::VerifyAll {
        let seed = manifest.seed_list()[0];
        let reports = pool(jobs)?.install(|| verify_all(seed))?;
        write_file(
            &out.join("verify_report.json"),
            verify_report_json(&reports)?.as_bytes(),
        )?;
        outcome.checks = reports;
        return Ok(outcome);
    }

    let study = manifest.study.as_str();
    let results = execute(manifest, jobs)?;
    outcome.runs = results.len();
    let mut ok = Vec::new();
    for r in &results {
        let dir = out.join(study).join(&r.variant).join(r.seed.to_string());
        match &r.result {
            Ok(trace) => {
                let mut csv = Vec::new();
                write_trace_csv(&trace.records, &mut csv)?;
                write_file(&dir.join("trace.csv"), &csv)?;
                write_file(&dir.join("run.json"), run_json(trace)?.as_bytes())?;
                ok.push((r.variant.clone(), trace));
            }
            Err(e) => {
                let msg = format!("{study}/{}/{}: {e}", r.variant, r.seed);
                log::error!("{msg}");
                write_file(&dir.join("error.txt"), format!("{e}\n").as_bytes())?;
                outcome.failures.push(msg);
            }
        }
    }
    write_file(
        &out.join("summary.csv"),
        &summary_csv(manifest.study, &results)?,
    )?;
    if !ok.is_empty() {
        let (curves, warnings) = emit_plotdata(&ok)?;
        write_file(&out.join("curves.csv"), &curves)?;
        outcome.warnings = warnings;
    }
    if !outcome.warnings.is_empty() {
        let mut text = outcome.warnings.join("\n");
        text.push('\n');
        write_file(&out.join("warnings.txt"), text.as_bytes())?;
    }
    Ok(outcome)
}

/// Histogram tool settings: the run configuration supplies the environment,
/// policy, initialization, perturbation distance and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramConfig {
    pub base: RunConfig,
    #[serde(default = "default_batch_sizes")]
    pub batch_sizes: Vec<usize>,
    #[serde(default = "default_batches")]
    pub batches: usize,
}

fn default_batch_sizes() -> Vec<usize> {
    vec![1, 2, 4, 8]
}

fn default_batches() -> usize {
    100
}

/// Reads a histogram config; a bare run configuration is accepted too.
pub fn parse_histogram_config(text: &str) -> Result<HistogramConfig> {
    let mut doc: Value = serde_json::from_str(text)?;
    let wrapped = doc.as_object().is_some_and(|o| o.contains_key("base"));
    if !wrapped {
        doc = serde_json::json!({ "base": doc });
    }
    if let Some(base) = doc.get_mut("base").and_then(Value::as_object_mut) {
        base.entry("iterations").or_insert(Value::from(0));
    }
    let cfg: HistogramConfig = from_value(doc, "")?;
    cfg.base.validate().map_err(|e| prefixed("base", e))?;
    if cfg.batches == 0 {
        return Err(Error::config("batches", "must be at least 1"));
    }
    if cfg.batch_sizes.is_empty() || cfg.batch_sizes.contains(&0) {
        return Err(Error::config(
            "batch_sizes",
            "sizes must be positive and non-empty",
        ));
    }
    Ok(cfg)
}

/// Batch-mean reward histograms of the initial policy and its first full
/// perturbation `θ + μv`, one per batch size. Writes `histogram/d<D>.csv`
/// and `histogram/summary.json` and returns the summary.
pub fn run_histogram(cfg: &HistogramConfig, out: &Path, jobs: Option<usize>) -> Result<Value> {
    let runner = crate::federate::Runner::new(cfg.base.clone())?;
    let theta = runner.initial_state()?.theta;
    let seed = cfg.base.seed;
    let v = Perturbation::sample(
        cfg.base.perturbation,
        theta.len(),
        &mut RngStream::at(seed, 1, Role::Perturbation, 0),
    )?;
    let spec = cfg.base.policy_spec();
    let base = Policy::new(spec.clone(), theta.clone())?;
    let pert = Policy::new(spec, theta.add_scaled(cfg.base.mu, &v.to_f64())?)?;
    let seps = pool(jobs)?.install(|| {
        cfg.batch_sizes
            .par_iter()
            .map(|&d| {
                let mut rng = RngStream::at(seed, d as u64, Role::Histogram, 0);
                separation_histogram(&cfg.base.env, &base, &pert, d, cfg.batches, &mut rng)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut rows = Vec::new();
    for s in &seps {
        let mut bytes = Vec::new();
        s.write_csv(&mut bytes)?;
        write_file(
            &out.join("histogram").join(format!("d{}.csv", s.batch_size)),
            &bytes,
        )?;
        rows.push(s.summary_json());
    }
    let summary = serde_json::json!({
        "version": crate::federate::VERSION,
        "seed": seed,
        "mu": cfg.base.mu,
        "histograms": rows,
    });
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    write_file(&out.join("histogram").join("summary.json"), text.as_bytes())?;
    Ok(summary)
}

/// Human-readable table of check results.
pub fn check_table(reports: &[CheckReport]) -> String {
    let mut s = String::new();
    for r in reports {
        s.push_str(&r.summary_line());
        s.push('\n');
    }
    s
}

/// Flushes a line to standard output, ignoring closed pipes.
pub fn print_line(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}");
}
