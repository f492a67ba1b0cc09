use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use parfed::harness::{
    check_table, load_config, parse_histogram_config, print_line, run_histogram, run_study,
    verify_report_json, ExperimentManifest, Seeds, StudyKind,
};
use parfed::verify::verify_all;
use parfed::{Error, Result};

#[derive(Parser)]
#[command(
    name = "parfed",
    version,
    about = "Partitioned sign-based federated preference optimization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration for a single seed.
    Run(Common),
    /// Run every variant and seed of an experiment manifest.
    Study(Common),
    /// Run the built-in verification checks.
    Verify(Common),
    /// Batch-mean reward histograms of a policy and its perturbation.
    Histogram(Common),
}

#[derive(Args)]
struct Common {
    /// Manifest or run configuration (JSON).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Seed override.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
}

fn require_config(c: &Common) -> Result<&Path> {
    c.config.as_deref().ok_or_else(|| Error::Config {
        path: "--config".into(),
        message: "this subcommand needs a configuration file".into(),
    })
}

fn out_dir(c: &Common, manifest: Option<&ExperimentManifest>) -> PathBuf {
    c.out
        .clone()
        .or_else(|| manifest.and_then(|m| m.out.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn study(c: &Common, single: bool) -> Result<bool> {
    let mut m = load_config(require_config(c)?)?;
    if single {
        let seed = c.seed.unwrap_or(m.seed_list()[0]);
        let mut s = ExperimentManifest::single(m.base.clone(), vec![seed]);
        s.out = m.out.clone();
        m = s;
    } else if let Some(seed) = c.seed {
        m.seeds = Seeds::List(vec![seed]);
    }
    let out = out_dir(c, Some(&m));
    let outcome = run_study(&m, &out, c.jobs)?;
    if m.study == StudyKind::VerifyAll {
        print!("{}", check_table(&outcome.checks));
    } else {
        print_line(&format!(
            "{}: {} runs, {} failed, outputs in {}",
            m.study.as_str(),
            outcome.runs,
            outcome.failures.len(),
            out.display()
        ));
        for f in &outcome.failures {
            print_line(&format!("failed: {f}"));
        }
    }
    Ok(outcome.success())
}

fn verify(c: &Common) -> Result<bool> {
    let manifest = match &c.config {
        Some(p) => Some(load_config(p)?),
        None => None,
    };
    let seed = c
        .seed
        .or_else(|| manifest.as_ref().map(|m| m.seed_list()[0]))
        .unwrap_or(0);
    let out = out_dir(c, manifest.as_ref());
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = c.jobs {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let reports = pool.install(|| verify_all(seed))?;
    for r in &reports {
        print_line(&serde_json::to_string(r)?);
    }
    print!("{}", check_table(&reports));
    let path = out.join("verify_report.json");
    std::fs::create_dir_all(&out).map_err(|e| Error::Io {
        path: out.clone(),
        source: e,
    })?;
    std::fs::write(&path, verify_report_json(&reports)?)
        .map_err(|e| Error::Io { path, source: e })?;
    Ok(reports.iter().all(|r| r.passed()))
}

fn histogram(c: &Common) -> Result<bool> {
    let path = require_config(c)?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut cfg = parse_histogram_config(&text)?;
    if let Some(s) = c.seed {
        cfg.base.seed = s;
    }
    let out = out_dir(c, None);
    let summary = run_histogram(&cfg, &out, c.jobs)?;
    print_line(&serde_json::to_string_pretty(&summary)?);
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::new()
        .filter_level(log::LevelFilter::Warn)
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(c) => study(c, true),
        Command::Study(c) => study(c, false),
        Command::Verify(c) => verify(c),
        Command::Histogram(c) => histogram(c),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
