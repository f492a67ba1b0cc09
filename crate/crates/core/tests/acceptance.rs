//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//! Runs without the libtest harness so every line is printed.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use parfed::federate::{run, Algorithm, RunConfig};
use parfed::harness::{parse_manifest, run_study};
use parfed::trace::write_trace_csv;
use parfed::verify::{self, CheckReport};

struct Outcome {
    pass: bool,
    note: String,
}

fn from_report(r: &CheckReport) -> Outcome {
    Outcome {
        pass: r.passed(),
        note: format!("statistic={:.6} bound={:.6}", r.statistic, r.bound),
    }
}

fn criterion(id: u32, name: &str, limit: Option<Duration>, body: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = body();
    let elapsed = start.elapsed();
    let in_time = limit.is_none_or(|l| elapsed < l);
    let pass = out.pass && in_time;
    println!(
        "criterion {id:>2} {name:<24} {}  {} time={:.1}s{}",
        if pass { "PASS" } else { "FAIL" },
        out.note,
        elapsed.as_secs_f64(),
        if in_time { "" } else { " (over time limit)" }
    );
    pass
}

fn minutes(m: u64) -> Option<Duration> {
    Some(Duration::from_secs(60 * m))
}

/// Criteria 3 to 5 recomputed from raw traces with independent arithmetic.
fn ledger_criteria() -> (Outcome, Outcome, Outcome) {
    let configs = verify::ledger_suite(20);
    let mut identity = (0usize, 0usize);
    let mut comm = (0usize, 0usize);
    let mut samples = (0usize, 0usize);
    for (i, c) in configs.iter().enumerate() {
        let mut c = c.clone();
        c.seed = 1000 + i as u64;
        let trace = run(&c).expect("ledger run");
        let d = trace.header.dim as u64;
        let k = c.agents as u64;
        let t = trace.records.len() as u64;
        let per_query = 2 * c.panel.pairs as u64 * c.panel.batch as u64;
        if c.algorithm == Algorithm::Par {
            for r in &trace.records {
                identity.1 += 1;
                let active: f64 = r
                    .feedback
                    .iter()
                    .enumerate()
                    .filter(|(_, &o)| o != 0)
                    .map(|(j, _)| {
                        let (q, rem) = (d / k, d % k);
                        (q + u64::from((j as u64) < rem)) as f64
                    })
                    .sum();
                let all_on = r.feedback.iter().all(|&o| o != 0);
                if r.direction_sq_norm == active && (!all_on || active == d as f64) {
                    identity.0 += 1;
                }
            }
        }
        let bits = match c.algorithm {
            Algorithm::Par => d + k,
            Algorithm::Fedavg => k * d + k,
        };
        comm.1 += 1;
        if trace.summary.bits_per_iteration == bits
            && trace.summary.ledger.bits == bits * t
            && trace.records.iter().all(|r| r.bits == bits)
        {
            comm.0 += 1;
        }
        samples.1 += 1;
        if trace.summary.ledger.traj_optimizer == per_query * k * t {
            samples.0 += 1;
        }
    }
    let mut ratios = Vec::new();
    for (_, mut c) in verify::env_suite() {
        c.agents = 5;
        c.algorithm = Algorithm::Par;
        let par = c.bits_per_iteration().unwrap() - 5;
        c.algorithm = Algorithm::Fedavg;
        let fed = c.bits_per_iteration().unwrap() - 5;
        ratios.push(fed as f64 / par as f64);
    }
    let ratio_ok = ratios.iter().all(|&r| r == 5.0);
    (
        Outcome {
            pass: identity.0 == identity.1 && identity.1 > 0,
            note: format!(
                "{}/{} iterations satisfy the identity",
                identity.0, identity.1
            ),
        },
        Outcome {
            pass: comm.0 == comm.1 && ratio_ok,
            note: format!("{}/{} runs exact, K=5 ratios {:?}", comm.0, comm.1, ratios),
        },
        Outcome {
            pass: samples.0 == samples.1,
            note: format!("{}/{} runs with M = 2NDKT", samples.0, samples.1),
        },
    )
}

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                files.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    files
}

fn determinism() -> Outcome {
    let manifest = parse_manifest(
        r#"{
            "study": "k-study",
            "base": {
                "env": {"kind": "linear-control", "horizon": 20, "noise": 0.5},
                "checkpoint_every": 2
            },
            "sweep": [1, 2, 5],
            "budget": 40,
            "seeds": {"start": 0, "count": 4}
        }"#,
    )
    .unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_study(&manifest, a.path(), Some(1)).unwrap();
    run_study(&manifest, b.path(), Some(4)).unwrap();
    let (ta, tb) = (read_tree(a.path()), read_tree(b.path()));
    let study_same = ta == tb && ta.len() > 20;

    let mut traces_same = true;
    for (_, c) in verify::env_suite() {
        let mut c: RunConfig = c;
        c.iterations = 10;
        c.seed = 7;
        let (x, y) = (run(&c).unwrap(), run(&c).unwrap());
        let csv = |t: &parfed::RunTrace| {
            let mut v = Vec::new();
            write_trace_csv(&t.records, &mut v).unwrap();
            v
        };
        traces_same &= x == y && csv(&x) == csv(&y);
    }
    Outcome {
        pass: study_same && traces_same,
        note: format!("{} study files identical across worker counts", ta.len()),
    }
}

fn main() {
    let seed = 0;
    let mut ok = true;
    ok &= criterion(1, "khintchine", minutes(1), || {
        from_report(&verify::check_khintchine(&Default::default(), seed).unwrap())
    });
    ok &= criterion(2, "norm-axioms", minutes(1), || {
        from_report(&verify::check_norm_axioms(10_000, seed).unwrap())
    });
    let (identity, comm, samples) = ledger_criteria();
    ok &= criterion(3, "aggregation-identity", None, || identity);
    ok &= criterion(4, "communication-ledger", None, || comm);
    ok &= criterion(5, "sample-ledger", None, || samples);
    ok &= criterion(6, "alignment-bound", minutes(5), || {
        from_report(&verify::check_alignment_bound(&Default::default(), seed).unwrap())
    });
    ok &= criterion(7, "panel-sharpening", minutes(2), || {
        from_report(&verify::check_panel(&Default::default(), seed).unwrap())
    });
    ok &= criterion(8, "convergence-trend", minutes(10), || {
        from_report(&verify::check_convergence_trend(&Default::default(), seed).unwrap())
    });
    ok &= criterion(9, "k-independence", minutes(15), || {
        from_report(&verify::check_k_independence(&Default::default(), seed).unwrap())
    });
    ok &= criterion(10, "par-vs-fedavg", minutes(20), || {
        from_report(
            &verify::check_par_vs_fedavg(&verify::ComparisonSettings::par_vs_fedavg(), seed)
                .unwrap(),
        )
    });
    ok &= criterion(11, "binary-vs-gaussian", minutes(10), || {
        from_report(
            &verify::check_binary_vs_gaussian(
                &verify::ComparisonSettings::binary_vs_gaussian(),
                seed,
            )
            .unwrap(),
        )
    });
    ok &= criterion(12, "d-tradeoff", minutes(15), || {
        from_report(&verify::check_d_tradeoff(&Default::default(), seed).unwrap())
    });
    ok &= criterion(13, "determinism", None, determinism);
    if !ok {
        std::process::exit(1);
    }
}
