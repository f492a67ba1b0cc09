//! Empirical checks of the algorithm's mathematical claims.
//!
//! Each check is deterministic given its seed and returns a [`CheckReport`].
//! Tolerances follow one global policy: Monte-Carlo bounds get 4 standard
//! errors of slack, equality claims must agree within twice the pooled
//! standard error, and dominance claims use a one-sided test at 95%.
//! Experiment-style checks compare configurations on identical seed lists,
//! so dominance is tested with a paired Student t statistic.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::env::{true_gradient, true_value, EnvSpec, Target};
use crate::error::{Error, Result};
use crate::federate::{
    mean_stderr, run, weighted_blocksum, Algorithm, LrSchedule, RunConfig, RunTrace, UpdateMode,
};
use crate::params::{block_sum_norm, dot, l2_norm, sign, ParamVector, Partition, PartitionMode};
use crate::perturb::{mask_perturbation, sample_rademacher, PerturbationKind};
use crate::policy::{ActionMode, Policy, PolicySpec};
use crate::preference::{panel_vote, separation_histogram, LinkFunction, PanelSpec};
use crate::rng::{RngStream, Role, StreamId};

/// One-sided 95% level used by every dominance check.
pub const DOMINANCE_LEVEL: f64 = 0.95;
/// Standard errors of slack granted to Monte-Carlo bounds.
pub const MC_SIGMAS: f64 = 4.0;
/// Multiple of the pooled standard error allowed between "equal" means.
pub const EQUALITY_SES: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub status: Status,
    /// Headline measured quantity; its meaning is described in `details`.
    pub statistic: f64,
    pub bound: f64,
    pub tolerance: f64,
    pub samples: u64,
    pub seed: u64,
    pub details: serde_json::Value,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }

    /// One line for terminal summaries.
    pub fn summary_line(&self) -> String {
        format!(
            "{:<20} {}  statistic={:.6} bound={:.6} tol={:.3e} n={}",
            self.name,
            match self.status {
                Status::Pass => "PASS",
                Status::Fail => "FAIL",
            },
            self.statistic,
            self.bound,
            self.tolerance,
            self.samples
        )
    }
}

fn status(ok: bool) -> Status {
    if ok {
        Status::Pass
    } else {
        Status::Fail
    }
}

fn stream(seed: u64, check: u64, sub: u64) -> RngStream {
    RngStream::new(seed, StreamId::new(check, Role::Verify, sub))
}

fn gaussian_vec(d: usize, rng: &mut RngStream) -> Vec<f64> {
    (0..d)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Mean and standard error of equal-length samples, in a JSON-friendly shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

pub fn summarize(xs: &[f64]) -> Summary {
    let (mean, se) = mean_stderr(xs);
    Summary {
        mean,
        se,
        n: xs.len(),
    }
}

pub fn pooled_se(a: &Summary, b: &Summary) -> f64 {
    (a.se * a.se + b.se * b.se).sqrt()
}

/// Paired one-sided test of `mean(a - b) > 0`: returns `(t, p)`.
pub fn paired_t(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::invalid(
            "paired test needs two equal samples of size >= 2",
        ));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (m, se) = mean_stderr(&diffs);
    if se == 0.0 {
        let p = if m > 0.0 { 0.0 } else { 1.0 };
        return Ok((if m > 0.0 { f64::INFINITY } else { 0.0 }, p));
    }
    let t = m / se;
    let dist = StudentsT::new(0.0, 1.0, (a.len() - 1) as f64)
        .map_err(|e| Error::invalid(e.to_string()))?;
    Ok((t, 1.0 - dist.cdf(t)))
}

/// `E|<v, a>|` over all `2^d` sign patterns; `v_1` is fixed to `+1` by symmetry.
pub fn exact_abs_rademacher(a: &[f64]) -> f64 {
    let d = a.len();
    assert!((1..=24).contains(&d), "enumeration limited to d <= 24");
    let rest = &a[1..];
    let patterns = 1u64 << rest.len();
    let mut total = 0.0;
    for bits in 0..patterns {
        let mut s = a[0];
        for (i, x) in rest.iter().enumerate() {
            if bits >> i & 1 == 1 {
                s += x;
            } else {
                s -= x;
            }
        }
        total += s.abs();
    }
    total / patterns as f64
}

/// `P(Binomial(n, p) > n / 2)` by direct summation of the probability mass.
pub fn majority_probability(n: usize, p: f64) -> f64 {
    let q = 1.0 - p;
    let mut total = 0.0;
    for k in n / 2 + 1..=n {
        total += (ln_choose(n, k) + k as f64 * p.ln() + (n - k) as f64 * q.ln()).exp();
    }
    total
}

fn ln_choose(n: usize, k: usize) -> f64 {
    (1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()).sum()
}

fn run_seeds(config: &RunConfig, seeds: &[u64]) -> Result<Vec<RunTrace>> {
    seeds
        .par_iter()
        .map(|&s| {
            let mut c = config.clone();
            c.seed = s;
            run(&c)
        })
        .collect()
}

fn final_values(traces: &[RunTrace]) -> Vec<f64> {
    traces.iter().map(|t| t.summary.value_mean).collect()
}

fn seed_list(base: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| base + i).collect()
}

/// Iterations that spend a budget of `m` optimizer trajectories.
pub fn iterations_for_budget(config: &RunConfig, m: u64) -> Result<usize> {
    let per = config.panel.trajectories_per_query() * config.agents as u64;
    if !m.is_multiple_of(per) {
        return Err(Error::invalid(format!(
            "budget {m} is not a multiple of 2NDK = {per}"
        )));
    }
    Ok((m / per) as usize)
}

// --- Khintchine -----------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KhintchineSettings {
    pub exact_dim: usize,
    pub exact_vectors: usize,
    pub mc_dims: Vec<usize>,
    pub mc_vectors: usize,
    pub mc_draws: usize,
}

impl Default for KhintchineSettings {
    fn default() -> Self {
        KhintchineSettings {
            exact_dim: 12,
            exact_vectors: 1000,
            mc_dims: vec![64, 512],
            mc_vectors: 5,
            mc_draws: 100_000,
        }
    }
}

pub fn check_khintchine(s: &KhintchineSettings, seed: u64) -> Result<CheckReport> {
    let lower = 1.0 / 3f64.sqrt();
    let exact: Vec<f64> = (0..s.exact_vectors)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, 1, i as u64);
            let a = gaussian_vec(s.exact_dim, &mut rng);
            exact_abs_rademacher(&a) / l2_norm(&a)
        })
        .collect();
    let exact_violations = exact
        .iter()
        .filter(|&&r| r < lower - 1e-12 || r > 1.0 + 1e-12)
        .count();
    let exact_min = exact.iter().copied().fold(f64::INFINITY, f64::min);
    let exact_max = exact.iter().copied().fold(0.0, f64::max);

    let mut mc = Vec::new();
    let mut mc_violations = 0;
    let mut worst_margin = f64::INFINITY;
    for (j, &d) in s.mc_dims.iter().enumerate() {
        for i in 0..s.mc_vectors {
            let mut rng = stream(seed, 1, 1_000_000 + (j * 1000 + i) as u64);
            let a = gaussian_vec(d, &mut rng);
            let norm = l2_norm(&a);
            let xs: Vec<f64> = (0..s.mc_draws)
                .map(|_| {
                    let v = sample_rademacher(d, &mut rng).expect("d >= 1").to_f64();
                    dot(&v, &a).abs() / norm
                })
                .collect();
            let m = summarize(&xs);
            let slack = MC_SIGMAS * m.se;
            let ok = m.mean + slack >= lower && m.mean - slack <= 1.0;
            if !ok {
                mc_violations += 1;
            }
            worst_margin = worst_margin
                .min(m.mean + slack - lower)
                .min(1.0 - (m.mean - slack));
            mc.push(json!({"d": d, "ratio": m.mean, "se": m.se}));
        }
    }
    Ok(CheckReport {
        name: "khintchine".into(),
        status: status(exact_violations == 0 && mc_violations == 0),
        statistic: exact_min,
        bound: lower,
        tolerance: 1e-12,
        samples: (s.exact_vectors + s.mc_dims.len() * s.mc_vectors * s.mc_draws) as u64,
        seed,
        details: json!({
            "statistic": "smallest exact E|<v,a>|/|a| over the enumerated vectors",
            "exact_dim": s.exact_dim,
            "exact_violations": exact_violations,
            "exact_max_ratio": exact_max,
            "mc_violations": mc_violations,
            "mc_worst_margin": worst_margin,
            "monte_carlo": mc,
        }),
    })
}

// --- Norm axioms ----------------------------------------------------------

pub fn check_norm_axioms(trials: usize, seed: u64) -> Result<CheckReport> {
    const REL: f64 = 1e-9;
    let counts: Vec<[usize; 6]> = (0..trials)
        .into_par_iter()
        .map(|i| -> Result<[usize; 6]> {
            let mut rng = stream(seed, 2, i as u64);
            let d = rng.gen_range(1..=64usize);
            let k = rng.gen_range(1..=d);
            let p = Partition::shuffled(d, k, &mut rng)?;
            let x = gaussian_vec(d, &mut rng);
            let y = gaussian_vec(d, &mut rng);
            let a: f64 = rng.sample(StandardNormal);
            let n = |v: &[f64]| block_sum_norm(v, &p);
            let (nx, ny) = (n(&x)?, n(&y)?);
            let xy: Vec<f64> = x.iter().zip(&y).map(|(u, v)| u + v).collect();
            let ax: Vec<f64> = x.iter().map(|u| a * u).collect();
            let l2 = l2_norm(&x);
            let mut bad = [0usize; 6];
            if n(&xy)? > (nx + ny) * (1.0 + REL) {
                bad[0] += 1;
            }
            if (n(&ax)? - a.abs() * nx).abs() > REL * a.abs() * nx {
                bad[1] += 1;
            }
            if n(&vec![0.0; d])? != 0.0 || nx <= 0.0 {
                bad[2] += 1;
            }
            if l2 > nx * (1.0 + REL) || nx > (k as f64).sqrt() * l2 * (1.0 + REL) {
                bad[3] += 1;
            }
            let whole = Partition::contiguous(d, 1)?;
            if (block_sum_norm(&x, &whole)? - l2).abs() > REL * l2 {
                bad[4] += 1;
            }
            let singletons = Partition::contiguous(d, d)?;
            let l1: f64 = x.iter().map(|u| u.abs()).sum();
            if (block_sum_norm(&x, &singletons)? - l1).abs() > REL * l1 {
                bad[5] += 1;
            }
            Ok(bad)
        })
        .collect::<Result<_>>()?;
    let mut total = [0usize; 6];
    for c in &counts {
        for (t, x) in total.iter_mut().zip(c) {
            *t += x;
        }
    }
    let violations: usize = total.iter().sum();
    Ok(CheckReport {
        name: "norm-axioms".into(),
        status: status(violations == 0),
        statistic: violations as f64,
        bound: 0.0,
        tolerance: REL,
        samples: trials as u64,
        seed,
        details: json!({
            "statistic": "violations summed over all properties",
            "triangle": total[0],
            "homogeneity": total[1],
            "definiteness": total[2],
            "sandwich": total[3],
            "k1_equals_l2": total[4],
            "singletons_equal_l1": total[5],
        }),
    })
}

// --- Alignment lower bound ------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignmentSettings {
    pub dim: usize,
    pub agents: usize,
    pub block: usize,
    pub horizon: usize,
    pub width: f64,
    /// Distances `|θ - θ*|` of the grid points.
    pub radii: Vec<f64>,
    pub mus: Vec<f64>,
    pub draws: usize,
}

impl Default for AlignmentSettings {
    fn default() -> Self {
        AlignmentSettings {
            dim: 16,
            agents: 4,
            block: 0,
            horizon: 10,
            width: 4.0,
            radii: vec![0.0, 0.25, 1.0, 2.0, 4.0],
            mus: vec![1e-3, 1e-2, 0.05, 0.2, 1.0],
            draws: 100_000,
        }
    }
}

/// Alignment of one agent's signed masked direction with the true gradient:
/// `E<∇V, sign[V(θ + μv_k) - V(θ)] v_k>` is at least `|∇V on block k| / √3 - μL|I_k|`.
/// Checked with exact sign feedback over a grid of distances from the optimum
/// and perturbation sizes; grid points with a non-positive bound pass vacuously.
pub fn check_alignment_bound(s: &AlignmentSettings, seed: u64) -> Result<CheckReport> {
    let env = EnvSpec::AnalyticQuadratic {
        horizon: s.horizon,
        noise: 0.0,
        dim: s.dim,
        width: s.width,
        target: Target::Fill(0.0),
    };
    let lip = env.smoothness()?;
    let p = Partition::contiguous(s.dim, s.agents)?;
    let size = p.block_size(s.block) as f64;
    let mut dir_rng = stream(seed, 3, 0);
    let dir = gaussian_vec(s.dim, &mut dir_rng);
    let unit: Vec<f64> = dir.iter().map(|x| x / l2_norm(&dir)).collect();

    let grid: Vec<(usize, usize)> = (0..s.radii.len())
        .flat_map(|i| (0..s.mus.len()).map(move |j| (i, j)))
        .collect();
    let points: Vec<serde_json::Value> = grid
        .par_iter()
        .map(|&(i, j)| -> Result<serde_json::Value> {
            let (r, mu) = (s.radii[i], s.mus[j]);
            let theta = ParamVector::new(unit.iter().map(|u| r * u).collect())?;
            let grad = true_gradient(&env, &theta)?;
            let v0 = true_value(&env, &theta)?;
            let block_grad: f64 = p
                .block(s.block)
                .iter()
                .map(|&c| grad[c] * grad[c])
                .sum::<f64>()
                .sqrt();
            let mut rng = stream(seed, 3, 1 + (i * s.mus.len() + j) as u64);
            let mut xs = Vec::with_capacity(s.draws);
            let mut small_mu = Vec::with_capacity(s.draws);
            for _ in 0..s.draws {
                let v = sample_rademacher(s.dim, &mut rng)?;
                let vk = mask_perturbation(&v, &p, s.block)?;
                let inner = dot(grad.as_slice(), vk.as_slice());
                let o = sign(true_value(&env, &theta.add_scaled(mu, vk.as_slice())?)? - v0);
                xs.push(f64::from(o) * inner);
                small_mu.push(inner.abs());
            }
            let m = summarize(&xs);
            let bound = block_grad / 3f64.sqrt() - mu * lip * size;
            let floor = bound - MC_SIGMAS * m.se;
            Ok(json!({
                "radius": r,
                "mu": mu,
                "estimate": m.mean,
                "se": m.se,
                "bound": bound,
                "vacuous": bound <= 0.0,
                "margin": m.mean - floor,
                "limit_estimate": summarize(&small_mu).mean,
                "khintchine_floor": block_grad / 3f64.sqrt(),
            }))
        })
        .collect::<Result<_>>()?;
    let margin_of = |vacuous: bool| {
        points
            .iter()
            .filter(|p| p["vacuous"].as_bool() == Some(vacuous))
            .map(|p| p["margin"].as_f64().unwrap_or(f64::NEG_INFINITY))
            .fold(f64::INFINITY, f64::min)
    };
    let (margin, vacuous_margin) = (margin_of(false), margin_of(true));
    Ok(CheckReport {
        name: "alignment-bound".into(),
        status: status(margin >= 0.0 && vacuous_margin >= 0.0),
        statistic: margin,
        bound: 0.0,
        tolerance: MC_SIGMAS,
        samples: (grid.len() * s.draws) as u64,
        seed,
        details: json!({
            "statistic": "smallest estimate minus (bound - 4 se) over grid points with a positive bound",
            "vacuous_margin": vacuous_margin,
            "smoothness": lip,
            "block_size": size,
            "grid": points,
        }),
    })
}

// --- Panel sharpening -----------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PanelSettings {
    pub link: LinkFunction,
    /// Reward gap shown to every panelist.
    pub gap: f64,
    pub sizes: Vec<usize>,
    pub odd_sizes: Vec<usize>,
    pub trials: usize,
}

impl Default for PanelSettings {
    fn default() -> Self {
        PanelSettings {
            link: LinkFunction::default(),
            gap: 10.0,
            sizes: vec![1, 9, 25, 100],
            odd_sizes: vec![1, 9, 25, 99],
            trials: 10_000,
        }
    }
}

pub fn check_panel(s: &PanelSettings, seed: u64) -> Result<CheckReport> {
    s.link.validate()?;
    let p1 = s.link.eval(s.gap);
    let delta = p1 - 0.5;
    if delta <= 0.0 {
        return Err(Error::invalid(
            "panel check needs a gap with link value above 1/2",
        ));
    }
    let freq = |panelists: usize, salt: u64| -> Summary {
        let panel = PanelSpec {
            panelists,
            pairs: 1,
            batch: 1,
            link: s.link,
        };
        let mut rng = stream(seed, 4, salt * 1000 + panelists as u64);
        let xs: Vec<f64> = (0..s.trials)
            .map(|_| f64::from(u8::from(panel_vote(&panel, s.gap, 0.0, &mut rng))))
            .collect();
        summarize(&xs)
    };
    let sharp: Vec<Summary> = s.sizes.iter().map(|&p| freq(p, 1)).collect();
    let mut ok = true;
    let mut worst = f64::INFINITY;
    for w in sharp.windows(2) {
        let slack = MC_SIGMAS * pooled_se(&w[0], &w[1]);
        let margin = w[1].mean - w[0].mean + slack;
        worst = worst.min(margin);
        ok &= margin >= 0.0;
    }
    let mut exact_ok = true;
    let mut decay = Vec::new();
    for &p in &s.odd_sizes {
        let m = freq(p, 2);
        let error = 1.0 - m.mean;
        let envelope = (-2.0 * delta * delta * p as f64).exp();
        let exact = majority_probability(p, p1);
        let within = error <= envelope + MC_SIGMAS * m.se;
        let matches = (m.mean - exact).abs() <= MC_SIGMAS * m.se.max(1.0 / s.trials as f64);
        ok &= within;
        exact_ok &= matches;
        decay.push(json!({
            "panelists": p,
            "error": error,
            "se": m.se,
            "hoeffding": envelope,
            "exact_error": 1.0 - exact,
        }));
    }
    Ok(CheckReport {
        name: "panel".into(),
        status: status(ok && exact_ok),
        statistic: worst,
        bound: 0.0,
        tolerance: MC_SIGMAS,
        samples: ((s.sizes.len() + s.odd_sizes.len()) * s.trials) as u64,
        seed,
        details: json!({
            "statistic": "smallest increase in P(correct) between consecutive panel sizes, plus 4 pooled se",
            "link_value": p1,
            "sharpening": s.sizes.iter().zip(&sharp).map(|(p, m)| json!({"panelists": p, "correct": m.mean, "se": m.se})).collect::<Vec<_>>(),
            "decay": decay,
            "matches_exact_binomial": exact_ok,
            "fair_tie_probability_100": majority_probability(100, 0.5),
        }),
    })
}

// --- Convergence trend ----------------------------------------------------

/// Noiseless analytic problem with an exact sign oracle under the theory schedule.
pub fn theory_config(dim: usize, agents: usize, iterations: usize) -> RunConfig {
    let env = EnvSpec::AnalyticQuadratic {
        horizon: 10,
        noise: 0.0,
        dim,
        width: 4.0,
        target: Target::Fill(0.0),
    };
    let mut c = RunConfig::new(env, iterations);
    c.agents = agents;
    c.update = UpdateMode::PlainSgd;
    c.lr = LrSchedule::Theory { c: 0.1 };
    c.mu = 1e-3;
    c.panel = PanelSpec {
        panelists: 1,
        pairs: 1,
        batch: 1,
        link: LinkFunction::Step,
    };
    c
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceSettings {
    pub config: RunConfig,
    pub checkpoints: Vec<usize>,
    pub seeds: usize,
    /// Required ratio between the last and first checkpoint.
    pub ratio: f64,
}

impl Default for ConvergenceSettings {
    fn default() -> Self {
        ConvergenceSettings {
            config: theory_config(64, 4, 2000),
            checkpoints: vec![125, 250, 500, 1000, 2000],
            seeds: 20,
            ratio: 0.5,
        }
    }
}

pub fn check_convergence_trend(s: &ConvergenceSettings, seed: u64) -> Result<CheckReport> {
    let last = *s
        .checkpoints
        .last()
        .ok_or_else(|| Error::invalid("no checkpoints"))?;
    if last > s.config.iterations {
        return Err(Error::invalid("checkpoint beyond the run length"));
    }
    let traces = run_seeds(&s.config, &seed_list(seed, s.seeds))?;
    let mut curve = Vec::new();
    for &t in &s.checkpoints {
        let xs: Vec<f64> = traces
            .iter()
            .map(|tr| {
                weighted_blocksum(&tr.records, t)
                    .ok_or_else(|| Error::invalid("trace lacks gradient norms"))
            })
            .collect::<Result<_>>()?;
        curve.push((t, summarize(&xs)));
    }
    let first = curve[0].1;
    let end = curve[curve.len() - 1].1;
    let ratio = end.mean / first.mean;
    let monotone = curve
        .windows(2)
        .all(|w| w[1].1.mean <= w[0].1.mean + EQUALITY_SES * pooled_se(&w[0].1, &w[1].1));
    Ok(CheckReport {
        name: "convergence-trend".into(),
        status: status(ratio < s.ratio && monotone),
        statistic: ratio,
        bound: s.ratio,
        tolerance: 0.0,
        samples: s.seeds as u64,
        seed,
        details: json!({
            "statistic": "alpha-weighted mean block-sum gradient norm, last checkpoint over first",
            "monotone_within_2se": monotone,
            "curve": curve.iter().map(|(t, m)| json!({"t": t, "mean": m.mean, "se": m.se})).collect::<Vec<_>>(),
        }),
    })
}

// --- K independence -------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KIndependenceSettings {
    pub config: RunConfig,
    pub agents: Vec<usize>,
    pub budget: u64,
    pub seeds: usize,
}

impl Default for KIndependenceSettings {
    fn default() -> Self {
        KIndependenceSettings {
            config: theory_config(64, 1, 0),
            agents: vec![1, 2, 4, 8],
            budget: 400,
            seeds: 20,
        }
    }
}

pub fn check_k_independence(s: &KIndependenceSettings, seed: u64) -> Result<CheckReport> {
    let seeds = seed_list(seed, s.seeds);
    let mut rows = Vec::new();
    for &k in &s.agents {
        let mut c = s.config.clone();
        c.agents = k;
        c.iterations = iterations_for_budget(&c, s.budget)?;
        let traces = run_seeds(&c, &seeds)?;
        let traj: Vec<u64> = traces
            .iter()
            .map(|t| t.summary.ledger.traj_optimizer)
            .collect();
        rows.push((k, c.iterations, summarize(&final_values(&traces)), traj));
    }
    let mut worst = f64::NEG_INFINITY;
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let gap = (rows[i].2.mean - rows[j].2.mean).abs();
            worst = worst.max(gap / (EQUALITY_SES * pooled_se(&rows[i].2, &rows[j].2)));
        }
    }
    let budget_ok = rows
        .iter()
        .all(|r| r.3.iter().all(|&m| m == s.budget) && r.1 * r.0 == rows[0].1 * rows[0].0);
    Ok(CheckReport {
        name: "k-independence".into(),
        status: status(worst <= 1.0 && budget_ok),
        statistic: worst,
        bound: 1.0,
        tolerance: EQUALITY_SES,
        samples: (s.seeds * s.agents.len()) as u64,
        seed,
        details: json!({
            "statistic": "largest pairwise |mean gap| / (2 pooled se)",
            "budget": s.budget,
            "budget_ledgers_match": budget_ok,
            "variants": rows.iter().map(|(k, t, m, _)| json!({"agents": k, "iterations": t, "mean": m.mean, "se": m.se})).collect::<Vec<_>>(),
        }),
    })
}

// --- Ledgers and aggregation identity -------------------------------------

/// Short binary-perturbation runs across algorithms, agent counts, panel
/// shapes, partitions and update modes on every built-in environment.
pub fn ledger_suite(iterations: usize) -> Vec<RunConfig> {
    let mut out = Vec::new();
    for (_, base) in env_suite() {
        for algorithm in [Algorithm::Par, Algorithm::Fedavg] {
            for agents in [1, 5] {
                for (pairs, batch) in [(1, 1), (3, 2)] {
                    for (i, update) in [UpdateMode::PlainSgd, UpdateMode::AcceptRejectAdam]
                        .into_iter()
                        .enumerate()
                    {
                        let mut c = base.clone();
                        c.iterations = iterations;
                        c.algorithm = algorithm;
                        c.agents = agents;
                        c.panel.pairs = pairs;
                        c.panel.batch = batch;
                        c.update = update;
                        c.perturbation = PerturbationKind::Binary;
                        c.partition = if i == 0 {
                            PartitionMode::Contiguous
                        } else {
                            PartitionMode::Shuffled
                        };
                        c.reshuffle = i == 1;
                        out.push(c);
                    }
                }
            }
        }
    }
    out
}

pub fn check_ledgers(iterations: usize, seed: u64) -> Result<CheckReport> {
    let configs = ledger_suite(iterations);
    let rows: Vec<serde_json::Value> = configs
        .par_iter()
        .enumerate()
        .map(|(i, c)| -> Result<serde_json::Value> {
            let mut c = c.clone();
            c.seed = seed + i as u64;
            let trace = run(&c)?;
            let d = c.dim()? as u64;
            let k = c.agents as u64;
            let (n, dd) = (c.panel.pairs as u64, c.panel.batch as u64);
            let t = trace.records.len() as u64;
            let expected_bits = match c.algorithm {
                Algorithm::Par => d + k,
                Algorithm::Fedavg => k * d + k,
            };
            // FedAvg sums K independent full-length directions, so the identity is Par's alone.
            let identity = c.algorithm == Algorithm::Fedavg
                || trace.records.iter().all(|r| {
                    r.direction_sq_norm == r.active_coordinates as f64
                        && (r.feedback.contains(&0) || r.active_coordinates as u64 == d)
                });
            let per_record =
                trace.records.iter().zip(1u64..).all(|(r, i)| {
                    r.bits == expected_bits && r.traj_optimizer == 2 * n * dd * k * i
                });
            let ledger = &trace.summary.ledger;
            let totals = ledger.bits == expected_bits * t
                && ledger.traj_optimizer == 2 * n * dd * k * t
                && trace.summary.bits_per_iteration == expected_bits;
            Ok(json!({
                "algorithm": c.algorithm,
                "dim": d,
                "agents": k,
                "pairs": n,
                "batch": dd,
                "update": c.update,
                "iterations": t,
                "bits_per_iteration": trace.summary.bits_per_iteration,
                "expected_bits": expected_bits,
                "traj_optimizer": ledger.traj_optimizer,
                "identity": identity,
                "per_iteration": per_record,
                "totals": totals,
            }))
        })
        .collect::<Result<_>>()?;
    let bad = rows
        .iter()
        .filter(|r| {
            !(r["identity"].as_bool() == Some(true)
                && r["per_iteration"].as_bool() == Some(true)
                && r["totals"].as_bool() == Some(true))
        })
        .count();
    let ratios: Vec<f64> = env_suite()
        .into_iter()
        .map(|(_, mut c)| -> Result<f64> {
            c.agents = 5;
            c.algorithm = Algorithm::Par;
            let par = c.bits_per_iteration()? - 5;
            c.algorithm = Algorithm::Fedavg;
            Ok((c.bits_per_iteration()? - 5) as f64 / par as f64)
        })
        .collect::<Result<_>>()?;
    let ratio_ok = ratios.iter().all(|&r| r == 5.0);
    Ok(CheckReport {
        name: "ledgers".into(),
        status: status(bad == 0 && ratio_ok),
        statistic: bad as f64,
        bound: 0.0,
        tolerance: 0.0,
        samples: (configs.len() * iterations) as u64,
        seed,
        details: json!({
            "statistic": "runs with any ledger or aggregation mismatch",
            "perturbation_ratio_k5": ratios,
            "runs": rows,
        }),
    })
}

// --- Built-in environment suite -------------------------------------------

/// One configuration per built-in environment, used by the comparison studies.
pub fn env_suite() -> Vec<(&'static str, RunConfig)> {
    let mut analytic = RunConfig::new(
        EnvSpec::AnalyticQuadratic {
            horizon: 1000,
            noise: 10.0,
            dim: 20,
            width: 4.0,
            target: Target::Fill(0.0),
        },
        50,
    );
    analytic.update = UpdateMode::PlainSgd;

    let steep = PanelSpec {
        link: LinkFunction::Linear { a: 0.05 },
        ..PanelSpec::default()
    };
    let mut control = RunConfig::new(
        EnvSpec::LinearControl {
            horizon: 50,
            noise: 1.0,
            axes: 2,
            dt: 0.1,
            state_cost: 1.0,
            action_cost: 0.1,
            init_std: 1.0,
            cost_scale: 50.0,
            action_limit: 5.0,
        },
        50,
    );
    control.update = UpdateMode::PlainSgd;
    control.mu = 1.0;
    control.lr = LrSchedule::Constant { alpha: 0.05 };
    control.panel = steep.clone();

    let mut grid = RunConfig::new(
        EnvSpec::Gridworld {
            horizon: 20,
            noise: 0.5,
            rows: 5,
            cols: 5,
            start: [1, 1],
            goal: [5, 5],
        },
        50,
    );
    grid.policy =
        Some(PolicySpec::linear(2, 4).with_action(ActionMode::GaussianExploration { sigma: 1.0 }));
    grid.update = UpdateMode::PlainSgd;
    grid.mu = 1.0;
    grid.lr = LrSchedule::Constant { alpha: 0.05 };
    grid.panel = steep;

    vec![
        ("analytic-quadratic", analytic),
        ("linear-control", control),
        ("gridworld", grid),
    ]
}

// --- Par versus FedAvg ----------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonSettings {
    pub suite: Vec<(String, RunConfig)>,
    pub agents: usize,
    pub seeds: usize,
}

impl ComparisonSettings {
    fn from_suite(agents: usize) -> Self {
        ComparisonSettings {
            suite: env_suite()
                .into_iter()
                .map(|(n, c)| (n.to_string(), c))
                .collect(),
            agents,
            seeds: 20,
        }
    }

    pub fn par_vs_fedavg() -> Self {
        Self::from_suite(5)
    }

    pub fn binary_vs_gaussian() -> Self {
        let mut s = Self::from_suite(1);
        for (_, c) in &mut s.suite {
            c.update = UpdateMode::AcceptRejectAdam;
            c.iterations = 100;
        }
        s
    }
}

pub fn check_par_vs_fedavg(s: &ComparisonSettings, seed: u64) -> Result<CheckReport> {
    let seeds = seed_list(seed, s.seeds);
    let mut envs = Vec::new();
    let mut ok = true;
    let mut worst_p: f64 = 0.0;
    for (name, base) in &s.suite {
        let mut par = base.clone();
        par.agents = s.agents;
        par.algorithm = Algorithm::Par;
        let mut fed = par.clone();
        fed.algorithm = Algorithm::Fedavg;
        let a = run_seeds(&par, &seeds)?;
        let b = run_seeds(&fed, &seeds)?;
        let (va, vb) = (final_values(&a), final_values(&b));
        let (t, p) = paired_t(&va, &vb)?;
        let d = par.dim()? as f64;
        let k = s.agents as f64;
        let bits_ratio =
            (fed.bits_per_iteration()? as f64 - k) / (par.bits_per_iteration()? as f64 - k);
        let traj_match = a
            .iter()
            .zip(&b)
            .all(|(x, y)| x.summary.ledger.traj_optimizer == y.summary.ledger.traj_optimizer);
        let pass = p < 1.0 - DOMINANCE_LEVEL && traj_match && bits_ratio == k;
        ok &= pass;
        worst_p = worst_p.max(p);
        let (sa, sb) = (summarize(&va), summarize(&vb));
        envs.push(json!({
            "env": name,
            "dim": d,
            "par": {"mean": sa.mean, "se": sa.se},
            "fedavg": {"mean": sb.mean, "se": sb.se},
            "paired_t": t,
            "p_value": p,
            "perturbation_bits_ratio": bits_ratio,
            "budgets_match": traj_match,
            "pass": pass,
        }));
    }
    Ok(CheckReport {
        name: "par-vs-fedavg".into(),
        status: status(ok),
        statistic: worst_p,
        bound: 1.0 - DOMINANCE_LEVEL,
        tolerance: 0.0,
        samples: (2 * s.seeds * s.suite.len()) as u64,
        seed,
        details: json!({
            "statistic": "largest one-sided paired p-value for Par > FedAvg across environments",
            "agents": s.agents,
            "environments": envs,
        }),
    })
}

// --- Binary versus Gaussian -----------------------------------------------

pub fn check_binary_vs_gaussian(s: &ComparisonSettings, seed: u64) -> Result<CheckReport> {
    let seeds = seed_list(seed, s.seeds);
    let mut envs = Vec::new();
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for (name, base) in &s.suite {
        let mut bin = base.clone();
        bin.agents = s.agents;
        bin.perturbation = PerturbationKind::Binary;
        let mut gau = bin.clone();
        gau.perturbation = PerturbationKind::Gaussian;
        let a = run_seeds(&bin, &seeds)?;
        let b = run_seeds(&gau, &seeds)?;
        let (sa, sb) = (summarize(&final_values(&a)), summarize(&final_values(&b)));
        let ratio = (sa.mean - sb.mean).abs() / (EQUALITY_SES * pooled_se(&sa, &sb));
        let d = bin.dim()? as f64;
        let mean_sq = |ts: &[RunTrace]| {
            let (sum, n) = ts
                .iter()
                .flat_map(|t| &t.records)
                .fold((0.0, 0usize), |(s, n), r| (s + r.direction_sq_norm, n + 1));
            sum / n.max(1) as f64
        };
        let binary_exact = a.iter().flat_map(|t| &t.records).all(|r| {
            r.direction_sq_norm == r.active_coordinates as f64
                && (r.feedback.contains(&0) || r.active_coordinates as f64 == d)
        });
        let pass = ratio <= 1.0 && binary_exact;
        ok &= pass;
        worst = worst.max(ratio);
        envs.push(json!({
            "env": name,
            "binary": {"mean": sa.mean, "se": sa.se},
            "gaussian": {"mean": sb.mean, "se": sb.se},
            "gap_over_2se": ratio,
            "binary_direction_sq_norm": mean_sq(&a) / d,
            "gaussian_direction_sq_norm": mean_sq(&b) / d,
            "binary_bits": bin.bits_per_iteration()?,
            "gaussian_bits": gau.bits_per_iteration()?,
            "pass": pass,
        }));
    }
    Ok(CheckReport {
        name: "binary-vs-gaussian".into(),
        status: status(ok),
        statistic: worst,
        bound: 1.0,
        tolerance: EQUALITY_SES,
        samples: (2 * s.seeds * s.suite.len()) as u64,
        seed,
        details: json!({
            "statistic": "largest |mean gap| / (2 pooled se) across environments",
            "direction_norms": "squared direction norms are reported divided by d",
            "environments": envs,
        }),
    })
}

// --- Batch-size tradeoff --------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DTradeoffSettings {
    pub config: RunConfig,
    pub high_noise: f64,
    pub low_noise: f64,
    pub batch_sizes: Vec<usize>,
    pub budget: u64,
    pub seeds: usize,
    pub overlap_seeds: usize,
    pub overlap_batches: usize,
}

/// Analytic problem for the batch-size study under the default panel.
pub fn d_study_config() -> RunConfig {
    let mut c = RunConfig::new(
        EnvSpec::AnalyticQuadratic {
            horizon: 1000,
            noise: 0.0,
            dim: 20,
            width: 4.0,
            target: Target::Fill(0.0),
        },
        0,
    );
    c.lr = LrSchedule::Constant { alpha: 0.05 };
    c
}

impl Default for DTradeoffSettings {
    fn default() -> Self {
        DTradeoffSettings {
            config: d_study_config(),
            high_noise: 10.0,
            low_noise: 1.0,
            batch_sizes: vec![1, 2, 4, 8],
            budget: 800,
            seeds: 20,
            overlap_seeds: 50,
            overlap_batches: 100,
        }
    }
}

/// Mean overlap between the initial policy and a step along its gradient
/// worth one noise standard deviation, for each batch size.
pub fn overlap_by_batch(
    config: &RunConfig,
    batch_sizes: &[usize],
    seeds: usize,
    batches: usize,
    seed: u64,
) -> Result<Vec<Summary>> {
    let noise = config.env.noise();
    let spec = config.policy_spec();
    batch_sizes
        .iter()
        .map(|&d| {
            let xs: Vec<f64> = (0..seeds as u64)
                .into_par_iter()
                .map(|i| -> Result<f64> {
                    let mut c = config.clone();
                    c.seed = seed + i;
                    let runner = crate::federate::Runner::new(c)?;
                    let theta = runner.initial_state()?.theta;
                    let grad = true_gradient(&config.env, &theta)?;
                    let g = grad.l2_norm();
                    let step = if g > 0.0 { noise / (g * g) } else { 0.0 };
                    let other = theta.add_scaled(step, grad.as_slice())?;
                    let base = Policy::new(spec.clone(), theta)?;
                    let pert = Policy::new(spec.clone(), other)?;
                    let mut rng = RngStream::at(seed + i, d as u64, Role::Histogram, 0);
                    Ok(
                        separation_histogram(&config.env, &base, &pert, d, batches, &mut rng)?
                            .overlap,
                    )
                })
                .collect::<Result<_>>()?;
            Ok(summarize(&xs))
        })
        .collect()
}

pub fn check_d_tradeoff(s: &DTradeoffSettings, seed: u64) -> Result<CheckReport> {
    let seeds = seed_list(seed, s.seeds);
    let study = |noise: f64| -> Result<Vec<(usize, usize, Vec<f64>)>> {
        let mut out = Vec::new();
        for &d in &s.batch_sizes {
            let mut c = s.config.clone();
            c.env = c.env.with_noise(noise);
            c.panel.batch = d;
            c.iterations = iterations_for_budget(&c, s.budget)?;
            out.push((d, c.iterations, final_values(&run_seeds(&c, &seeds)?)));
        }
        Ok(out)
    };
    let find = |rows: &[(usize, usize, Vec<f64>)], d: usize| -> Result<Vec<f64>> {
        rows.iter()
            .find(|r| r.0 == d)
            .map(|r| r.2.clone())
            .ok_or_else(|| Error::invalid(format!("batch size {d} missing from the sweep")))
    };

    let high_cfg = {
        let mut c = s.config.clone();
        c.env = c.env.with_noise(s.high_noise);
        c
    };
    let overlaps = overlap_by_batch(
        &high_cfg,
        &s.batch_sizes,
        s.overlap_seeds,
        s.overlap_batches,
        seed,
    )?;
    let z = StudentsT::new(0.0, 1.0, (s.overlap_seeds.max(2) - 1) as f64)
        .map_err(|e| Error::invalid(e.to_string()))?
        .inverse_cdf(DOMINANCE_LEVEL);
    let overlap_ok = overlaps
        .windows(2)
        .all(|w| w[1].mean <= w[0].mean + z * pooled_se(&w[0], &w[1]));

    let high = study(s.high_noise)?;
    let (h1, h4) = (find(&high, 1)?, find(&high, 4)?);
    let (t, p) = paired_t(&h4, &h1)?;
    let high_ok = p < 1.0 - DOMINANCE_LEVEL;
    let best_high = high
        .iter()
        .max_by(|a, b| summarize(&a.2).mean.total_cmp(&summarize(&b.2).mean))
        .map(|r| r.0)
        .unwrap_or(0);

    let low = study(s.low_noise)?;
    let (l1, l4) = (summarize(&find(&low, 1)?), summarize(&find(&low, 4)?));
    let low_ratio = (l1.mean - l4.mean).abs() / (EQUALITY_SES * pooled_se(&l1, &l4));
    let low_ok = low_ratio <= 1.0;

    let budget_ok = high
        .iter()
        .chain(&low)
        .all(|r| r.1 * r.0 == high[0].1 * high[0].0);
    let rows = |rs: &[(usize, usize, Vec<f64>)]| {
        rs.iter()
            .map(|(d, t, v)| {
                let m = summarize(v);
                json!({"batch": d, "iterations": t, "mean": m.mean, "se": m.se})
            })
            .collect::<Vec<_>>()
    };
    Ok(CheckReport {
        name: "d-tradeoff".into(),
        status: status(overlap_ok && high_ok && low_ok && budget_ok && best_high > 1),
        statistic: p,
        bound: 1.0 - DOMINANCE_LEVEL,
        tolerance: EQUALITY_SES,
        samples: (2 * s.seeds * s.batch_sizes.len() + s.overlap_seeds * s.batch_sizes.len()) as u64,
        seed,
        details: json!({
            "statistic": "one-sided paired p-value for D=4 > D=1 on the high-noise environment",
            "budget": s.budget,
            "overlap_non_increasing": overlap_ok,
            "overlap": s.batch_sizes.iter().zip(&overlaps).map(|(d, m)| json!({"batch": d, "mean": m.mean, "se": m.se})).collect::<Vec<_>>(),
            "high_noise": {"noise": s.high_noise, "paired_t": t, "p_value": p, "best_batch": best_high, "variants": rows(&high)},
            "low_noise": {"noise": s.low_noise, "gap_over_2se": low_ratio, "variants": rows(&low)},
            "budget_arithmetic": budget_ok,
        }),
    })
}

/// Every check at its default settings, in a fixed order.
pub fn verify_all(seed: u64) -> Result<Vec<CheckReport>> {
    Ok(vec![
        check_khintchine(&KhintchineSettings::default(), seed)?,
        check_norm_axioms(10_000, seed)?,
        check_ledgers(20, seed)?,
        check_alignment_bound(&AlignmentSettings::default(), seed)?,
        check_panel(&PanelSettings::default(), seed)?,
        check_convergence_trend(&ConvergenceSettings::default(), seed)?,
        check_k_independence(&KIndependenceSettings::default(), seed)?,
        check_par_vs_fedavg(&ComparisonSettings::par_vs_fedavg(), seed)?,
        check_binary_vs_gaussian(&ComparisonSettings::binary_vs_gaussian(), seed)?,
        check_d_tradeoff(&DTradeoffSettings::default(), seed)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_enumeration_examples() {
        assert_eq!(exact_abs_rademacher(&[1.0]), 1.0);
        assert_eq!(exact_abs_rademacher(&[1.0, 1.0]), 1.0);
        // (1,1,1): |±1±1±1| is 3 w.p. 1/4 and 1 w.p. 3/4
        assert_eq!(exact_abs_rademacher(&[1.0, 1.0, 1.0]), 1.5);
        assert_eq!(exact_abs_rademacher(&[2.0, 0.0, 0.0]), 2.0);
    }

    #[test]
    fn majority_tail_values() {
        assert!((majority_probability(3, 0.5) - 0.5).abs() < 1e-15);
        assert!((majority_probability(1, 0.7) - 0.7).abs() < 1e-15);
        // two of two needed when P = 2
        assert!((majority_probability(2, 0.6) - 0.36).abs() < 1e-15);
    }

    #[test]
    fn paired_statistics() {
        let (t, p) = paired_t(&[2.0, 3.0, 4.0], &[1.0, 1.0, 1.0]).unwrap();
        assert!((t - 2.0 / (1.0 / 3f64.sqrt())).abs() < 1e-12);
        assert!(p < 0.05);
        let (_, p) = paired_t(&[1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(p, 1.0);
        assert!(paired_t(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn budget_arithmetic() {
        let mut c = d_study_config();
        c.panel.batch = 8;
        assert_eq!(iterations_for_budget(&c, 800).unwrap(), 50);
        c.panel.batch = 1;
        assert_eq!(iterations_for_budget(&c, 800).unwrap(), 400);
        c.agents = 3;
        assert!(iterations_for_budget(&c, 800).is_err());
    }

    #[test]
    fn small_khintchine_and_norms() {
        let s = KhintchineSettings {
            exact_dim: 6,
            exact_vectors: 50,
            mc_dims: vec![16],
            mc_vectors: 1,
            mc_draws: 2000,
        };
        assert!(check_khintchine(&s, 1).unwrap().passed());
        assert!(check_norm_axioms(200, 1).unwrap().passed());
    }

    #[test]
    fn reports_are_reproducible() {
        let s = AlignmentSettings {
            radii: vec![0.0, 1.0],
            mus: vec![0.01, 1.0],
            draws: 500,
            ..AlignmentSettings::default()
        };
        let a = check_alignment_bound(&s, 9).unwrap();
        let b = check_alignment_bound(&s, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.passed());
        let zero = &a.details["grid"][0];
        assert_eq!(zero["estimate"].as_f64().unwrap(), 0.0);
    }

    #[test]
    fn small_panel_check() {
        let s = PanelSettings {
            trials: 2000,
            ..PanelSettings::default()
        };
        let r = check_panel(&s, 2).unwrap();
        assert!(r.passed(), "{}", r.details);
    }

    #[test]
    fn short_ledger_check() {
        let r = check_ledgers(3, 4).unwrap();
        assert!(r.passed(), "{}", r.details);
    }

    #[test]
    fn suite_configs_validate() {
        for (_, c) in env_suite() {
            c.validate().unwrap();
        }
        theory_config(64, 4, 10).validate().unwrap();
    }
}
