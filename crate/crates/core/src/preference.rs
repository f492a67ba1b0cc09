//! Simulated preference feedback: link functions, panelists, panels and the
//! batch-pair majority-vote oracle.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::EnvSpec;
use crate::error::{Error, Result};
use crate::params::sign;
use crate::policy::Policy;
use crate::rng::RngStream;

/// Probability that a panelist prefers batch 1 given the batch-mean reward gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LinkFunction {
    /// `clip(a x + 1/2, 0, 1)`
    Linear { a: f64 },
    /// `1 / (1 + exp(-β x))`
    Logistic { beta: f64 },
    /// 1 above zero, 0 below, 1/2 at zero.
    Step,
}

impl Default for LinkFunction {
    fn default() -> Self {
        LinkFunction::Linear { a: 0.01 }
    }
}

impl LinkFunction {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            LinkFunction::Linear { a } => (a * x + 0.5).clamp(0.0, 1.0),
            LinkFunction::Logistic { beta } => 1.0 / (1.0 + (-beta * x).exp()),
            LinkFunction::Step => match sign(x) {
                1 => 1.0,
                -1 => 0.0,
                _ => 0.5,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LinkFunction::Linear { a } => a.is_finite() && a > 0.0,
            LinkFunction::Logistic { beta } => beta.is_finite() && beta > 0.0,
            LinkFunction::Step => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("link slope must be positive and finite"))
        }
    }
}

pub fn link_eval(link: &LinkFunction, x: f64) -> f64 {
    link.eval(x)
}

fn default_panelists() -> usize {
    100
}

fn one() -> usize {
    1
}

/// `P` panelists sharing one link, `N` batch pairs per query, `D` trajectories per batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelSpec {
    #[serde(default = "default_panelists")]
    pub panelists: usize,
    #[serde(default = "one")]
    pub pairs: usize,
    #[serde(default = "one")]
    pub batch: usize,
    #[serde(default)]
    pub link: LinkFunction,
}

impl Default for PanelSpec {
    fn default() -> Self {
        PanelSpec {
            panelists: default_panelists(),
            pairs: 1,
            batch: 1,
            link: LinkFunction::default(),
        }
    }
}

impl PanelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.panelists == 0 || self.pairs == 0 || self.batch == 0 {
            return Err(Error::invalid("P, N and D must all be at least 1"));
        }
        self.link.validate()
    }

    /// Trajectories consumed by one oracle query: `2 N D`.
    pub fn trajectories_per_query(&self) -> u64 {
        2 * self.pairs as u64 * self.batch as u64
    }
}

/// One panelist's bit: 1 means batch 1 (the perturbed policy) is preferred.
pub fn panelist_vote(link: &LinkFunction, mean1: f64, mean0: f64, rng: &mut RngStream) -> bool {
    let p = link.eval(mean1 - mean0);
    // gen::<f64>() lies in [0, 1), so p = 0 never fires and p = 1 always does.
    rng.gen::<f64>() < p
}

/// Strict majority `1{Σ o^p > P/2}`; ties with even `P` give 0.
pub fn majority(votes: impl IntoIterator<Item = bool>) -> bool {
    let (mut yes, mut total) = (0usize, 0usize);
    for v in votes {
        yes += usize::from(v);
        total += 1;
    }
    2 * yes > total
}

pub fn panel_vote(panel: &PanelSpec, mean1: f64, mean0: f64, rng: &mut RngStream) -> bool {
    let p = panel.link.eval(mean1 - mean0);
    majority((0..panel.panelists).map(|_| rng.gen::<f64>() < p))
}

/// `sign(Σ_n (o_n - 1/2))` over the `N` panel bits.
pub fn aggregate_votes(bits: &[bool]) -> i8 {
    let yes = bits.iter().filter(|&&b| b).count() as i64;
    let no = bits.len() as i64 - yes;
    // 2 Σ (o_n - 1/2) = yes - no
    (yes - no).signum() as i8
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleOutcome {
    /// `Ô ∈ {-1, 0, +1}`; +1 means the perturbed policy won.
    pub verdict: i8,
    pub panel_bits: Vec<bool>,
    pub trajectories: u64,
}

fn batch_mean(env: &EnvSpec, policy: &Policy, d: usize, rng: &mut RngStream) -> Result<f64> {
    let mut sum = 0.0;
    for _ in 0..d {
        sum += env.sample_reward(policy, rng)?;
    }
    Ok(sum / d as f64)
}

/// Compares `base` against `perturbed` with `N` fresh batch pairs.
pub fn preference_oracle(
    panel: &PanelSpec,
    base: &Policy,
    perturbed: &Policy,
    env: &EnvSpec,
    rng: &mut RngStream,
) -> Result<OracleOutcome> {
    panel.validate()?;
    if base.spec() != perturbed.spec() {
        return Err(Error::invalid("compared policies must share a spec"));
    }
    env.check_policy(base)?;
    let mut bits = Vec::with_capacity(panel.pairs);
    for _ in 0..panel.pairs {
        let mean0 = batch_mean(env, base, panel.batch, rng)?;
        let mean1 = batch_mean(env, perturbed, panel.batch, rng)?;
        bits.push(panel_vote(panel, mean1, mean0, rng));
    }
    Ok(OracleOutcome {
        verdict: aggregate_votes(&bits),
        panel_bits: bits,
        trajectories: panel.trajectories_per_query(),
    })
}

pub const OVERLAP_BINS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Separation {
    pub batch_size: usize,
    pub base: Vec<f64>,
    pub perturbed: Vec<f64>,
    pub overlap: f64,
}

/// Shared-bin histogram intersection of two samples, 30 bins over the pooled range.
pub fn overlap_coefficient(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return 1.0;
    }
    let width = (hi - lo) / OVERLAP_BINS as f64;
    let hist = |xs: &[f64]| {
        let mut h = [0.0; OVERLAP_BINS];
        for &x in xs {
            let i = (((x - lo) / width) as usize).min(OVERLAP_BINS - 1);
            h[i] += 1.0 / xs.len() as f64;
        }
        h
    };
    let (ha, hb) = (hist(a), hist(b));
    ha.iter()
        .zip(&hb)
        .map(|(x, y)| x.min(*y))
        .sum::<f64>()
        .min(1.0)
}

/// `B` batch means of size `D` for each policy, plus their overlap.
pub fn separation_histogram(
    env: &EnvSpec,
    base: &Policy,
    perturbed: &Policy,
    batch_size: usize,
    batches: usize,
    rng: &mut RngStream,
) -> Result<Separation> {
    if batches == 0 || batch_size == 0 {
        return Err(Error::invalid(
            "batch size and batch count must be at least 1",
        ));
    }
    let mut sample = |p: &Policy| -> Result<Vec<f64>> {
        (0..batches)
            .map(|_| batch_mean(env, p, batch_size, rng))
            .collect()
    };
    let base_means = sample(base)?;
    let pert_means = sample(perturbed)?;
    let overlap = overlap_coefficient(&base_means, &pert_means);
    Ok(Separation {
        batch_size,
        base: base_means,
        perturbed: pert_means,
        overlap,
    })
}

impl Separation {
    /// CSV with columns `policy,batch_index,batch_mean`; batch indices are 1-based.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["policy", "batch_index", "batch_mean"])?;
        for (label, xs) in [("base", &self.base), ("perturbed", &self.perturbed)] {
            for (i, x) in xs.iter().enumerate() {
                w.write_record([label.to_string(), (i + 1).to_string(), x.to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io("csv output", e))?;
        Ok(())
    }

    pub fn summary_json(&self) -> serde_json::Value {
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        serde_json::json!({
            "batch_size": self.batch_size,
            "batches": self.base.len(),
            "bins": OVERLAP_BINS,
            "overlap": self.overlap,
            "base_mean": mean(&self.base),
            "perturbed_mean": mean(&self.perturbed),
        })
    }
}
