//! Server plus `K` simulated agents running the partitioned sign-based
//! zeroth-order loop, and the FedAvg-style baseline.
//!
//! Each iteration `t`:
//!
//! 1. the server draws `v_t` (stream `(t, perturbation, 0)`);
//! 2. agent `k` masks it to its block, perturbs `θ_t` by `μ_t v_{t,k}` and
//!    asks its local panel for `Ô_{t,k}` (stream `(t, agent-oracle, k)`);
//! 3. the server aggregates `ĝ_t = Σ_k Ô_{t,k} v_{t,k}` in ascending `k`;
//! 4. `θ_{t+1}` follows the configured update mode.
//!
//! In the FedAvg baseline agent `k` draws its own full-dimension `w_{t,k}`
//! from stream `(t, perturbation, k)` and the server averages
//! `Ô_{t,k} w_{t,k}`. With `K = 1` both algorithms read the same streams and
//! produce identical iterates.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{true_gradient, EnvSpec};
use crate::error::{Error, Result};
use crate::params::{block_sum_norm, make_partition, ParamVector, Partition, PartitionMode};
use crate::perturb::{mask_perturbation, Perturbation, PerturbationKind};
use crate::policy::{param_count, Policy, PolicySpec};
use crate::preference::{preference_oracle, PanelSpec};
use crate::rng::{RngStream, Role, GENERATOR_ID};
use crate::trace::{encode_params, Checkpoint, IterationRecord};

pub const VERSION: &str = concat!("parfed ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    #[default]
    Par,
    Fedavg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateMode {
    /// `θ_{t+1} = θ_t + α_t ĝ_t` with constant `μ`.
    PlainSgd,
    /// Adam step on `ĝ_t`, clipped, kept only if a server panel prefers it;
    /// `α` and `μ` halve after a run of rejections.
    #[default]
    AcceptRejectAdam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schedule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LrSchedule {
    /// `α_t = c sqrt(H / (d t))`
    Theory {
        c: f64,
    },
    Constant {
        alpha: f64,
    },
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::Constant { alpha: 0.01 }
    }
}

impl LrSchedule {
    pub fn at(&self, t: usize, horizon: usize, d: usize) -> Result<f64> {
        match *self {
            LrSchedule::Theory { c } => lr_theory(t, horizon, d, c),
            LrSchedule::Constant { alpha } => Ok(alpha),
        }
    }
}

pub fn lr_theory(t: usize, horizon: usize, d: usize, c: f64) -> Result<f64> {
    if t == 0 {
        return Err(Error::invalid("iterations are numbered from 1"));
    }
    if d == 0 {
        return Err(Error::invalid("d must be positive"));
    }
    Ok(c * (horizon as f64 / (d as f64 * t as f64)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Maximum L2 norm of one Adam step.
    pub clip_norm: f64,
    /// Consecutive rejections that halve `α` and `μ`.
    pub patience: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
            patience: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitSpec {
    /// Gaussian weights with std `scale / sqrt(fan_in)`, zero biases.
    ScaledGaussian {
        #[serde(default = "unit")]
        scale: f64,
    },
    Fill {
        value: f64,
    },
    Explicit {
        values: Vec<f64>,
    },
}

fn unit() -> f64 {
    1.0
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec::ScaledGaussian { scale: 1.0 }
    }
}

fn default_mu() -> f64 {
    0.05
}

fn default_agents() -> usize {
    1
}

fn default_eval_episodes() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvSpec,
    #[serde(default)]
    pub policy: Option<PolicySpec>,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default)]
    pub algorithm: Algorithm,
    #[serde(default = "default_agents")]
    pub agents: usize,
    #[serde(default)]
    pub partition: PartitionMode,
    /// Draw a fresh shuffled partition every iteration.
    #[serde(default)]
    pub reshuffle: bool,
    #[serde(default)]
    pub perturbation: PerturbationKind,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default)]
    pub lr: LrSchedule,
    #[serde(default)]
    pub panel: PanelSpec,
    pub iterations: usize,
    #[serde(default)]
    pub update: UpdateMode,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn new(env: EnvSpec, iterations: usize) -> Self {
        RunConfig {
            env,
            policy: None,
            init: InitSpec::default(),
            algorithm: Algorithm::Par,
            agents: 1,
            partition: PartitionMode::Contiguous,
            reshuffle: false,
            perturbation: PerturbationKind::Binary,
            mu: default_mu(),
            lr: LrSchedule::default(),
            panel: PanelSpec::default(),
            iterations,
            update: UpdateMode::AcceptRejectAdam,
            adam: AdamConfig::default(),
            eval_episodes: default_eval_episodes(),
            checkpoint_every: None,
            seed: 0,
        }
    }

    pub fn policy_spec(&self) -> PolicySpec {
        self.policy
            .clone()
            .unwrap_or_else(|| self.env.default_policy())
    }

    pub fn dim(&self) -> Result<usize> {
        param_count(&self.policy_spec())
    }

    /// Checks every invariant; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        let at = |key: &str, e: Error| match e {
            Error::InvalidArgument(m) | Error::NonFinite(m) => Error::config(key, m),
            other => other,
        };
        self.env.validate().map_err(|e| at("env", e))?;
        let spec = self.policy_spec();
        let d = param_count(&spec).map_err(|e| at("policy", e))?;
        let probe = Policy::zeros(spec).map_err(|e| at("policy", e))?;
        self.env.check_policy(&probe).map_err(|e| at("policy", e))?;
        if self.agents == 0 {
            return Err(Error::config("agents", "K must be at least 1"));
        }
        if self.agents > d {
            return Err(Error::config(
                "agents",
                format!(
                    "K = {} exceeds the parameter dimension d = {d}",
                    self.agents
                ),
            ));
        }
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(Error::config(
                "mu",
                "perturbation distance must be positive",
            ));
        }
        match self.lr {
            LrSchedule::Theory { c } if !(c.is_finite() && c > 0.0) => {
                return Err(Error::config("lr.c", "must be positive"))
            }
            LrSchedule::Constant { alpha } if !(alpha.is_finite() && alpha > 0.0) => {
                return Err(Error::config("lr.alpha", "must be positive"))
            }
            _ => {}
        }
        self.panel.validate().map_err(|e| at("panel", e))?;
        if self.eval_episodes == 0 {
            return Err(Error::config("eval_episodes", "must be at least 1"));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::config("checkpoint_every", "must be at least 1"));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1)
            || !(0.0..1.0).contains(&a.beta2)
            || !(a.eps.is_finite() && a.eps > 0.0)
            || !(a.clip_norm.is_finite() && a.clip_norm > 0.0)
            || a.patience == 0
        {
            return Err(Error::config("adam", "hyperparameters out of range"));
        }
        match &self.init {
            InitSpec::ScaledGaussian { scale } if !(scale.is_finite() && *scale >= 0.0) => {
                return Err(Error::config("init.scale", "must be finite and >= 0"))
            }
            InitSpec::Fill { value } if !value.is_finite() => {
                return Err(Error::config("init.value", "must be finite"))
            }
            InitSpec::Explicit { values } => {
                if values.len() != d {
                    return Err(Error::config(
                        "init.values",
                        format!("expected {d} values, got {}", values.len()),
                    ));
                }
                ParamVector::new(values.clone()).map_err(|e| at("init.values", e))?;
            }
            _ => {}
        }
        Ok(())
    }

    /// Validation warnings that do not stop a run.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.panel.pairs.is_multiple_of(2) {
            w.push(format!(
                "N = {} is even: agents may return Ô = 0 and contribute nothing",
                self.panel.pairs
            ));
        }
        w
    }

    /// Bits per Ô message: one when `N` is odd, two when a 0 verdict is possible.
    pub fn feedback_bits(&self) -> u64 {
        if self.panel.pairs % 2 == 1 {
            1
        } else {
            2
        }
    }

    /// Bits communicated per iteration: the perturbation broadcast(s) plus K feedback messages.
    pub fn bits_per_iteration(&self) -> Result<u64> {
        let d = self.dim()?;
        let k = self.agents as u64;
        let per_vector = self.perturbation.wire_bits(d);
        let broadcast = match self.algorithm {
            Algorithm::Par => per_vector,
            Algorithm::Fedavg => k * per_vector,
        };
        Ok(broadcast + k * self.feedback_bits())
    }

    /// Scalars each agent holds: the current policy plus its perturbed copy of what it changes.
    pub fn memory_per_agent(&self) -> Result<usize> {
        let d = self.dim()?;
        Ok(match self.algorithm {
            Algorithm::Par => d + d.div_ceil(self.agents),
            Algorithm::Fedavg => 2 * d,
        })
    }

    fn initial_params(&self) -> Result<ParamVector> {
        let spec = self.policy_spec();
        let d = param_count(&spec)?;
        match &self.init {
            InitSpec::ScaledGaussian { scale } => {
                let mut rng = RngStream::at(self.seed, 0, Role::Init, 0);
                let p = Policy::init_scaled(spec, &mut rng)?;
                ParamVector::new(p.get_params().iter().map(|x| x * scale).collect())
            }
            InitSpec::Fill { value } => ParamVector::new(vec![*value; d]),
            InitSpec::Explicit { values } => ParamVector::new(values.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    steps: i32,
}

impl AdamState {
    pub fn new(d: usize) -> Self {
        AdamState {
            m: vec![0.0; d],
            v: vec![0.0; d],
            steps: 0,
        }
    }

    /// Ascent step for `grad` at learning rate `lr`, clipped to `cfg.clip_norm`.
    pub fn step(&mut self, grad: &[f64], lr: f64, cfg: &AdamConfig) -> Vec<f64> {
        self.steps += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.steps);
        let c2 = 1.0 - cfg.beta2.powi(self.steps);
        let mut out = Vec::with_capacity(grad.len());
        for ((m, v), g) in self.m.iter_mut().zip(self.v.iter_mut()).zip(grad) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            out.push(lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps));
        }
        let norm = crate::params::l2_norm(&out);
        if norm > cfg.clip_norm {
            let s = cfg.clip_norm / norm;
            out.iter_mut().for_each(|x| *x *= s);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Ledger {
    pub bits: u64,
    pub traj_optimizer: u64,
    pub traj_eval: u64,
    pub traj_server: u64,
}

impl Ledger {
    pub fn traj_total(&self) -> u64 {
        self.traj_optimizer + self.traj_eval + self.traj_server
    }
}

#[derive(Debug, Clone)]
pub struct RunState {
    /// Index of the next iteration (1-based).
    pub t: usize,
    pub theta: ParamVector,
    pub partition: Partition,
    pub mu: f64,
    /// Multiplier on the scheduled learning rate (halved on rejection runs).
    pub alpha_scale: f64,
    pub rejections: usize,
    pub adam: AdamState,
    pub ledger: Ledger,
}

/// `ĝ = Σ_k Ô_k (v ∘ e_{I_k})`, summed in ascending `k`.
pub fn aggregate_direction(v: &Perturbation, p: &Partition, verdicts: &[i8]) -> Result<Vec<f64>> {
    if verdicts.len() != p.num_blocks() {
        return Err(Error::invalid("one verdict per block required"));
    }
    let mut g = vec![0.0; p.dim()];
    for (k, &o) in verdicts.iter().enumerate() {
        if o != 0 {
            let vk = mask_perturbation(v, p, k)?;
            for &i in p.block(k) {
                g[i] += f64::from(o) * vk[i];
            }
        }
    }
    Ok(g)
}

/// `(1/K) Σ_k Ô_k w_k`, summed in ascending `k`.
pub fn average_direction(ws: &[Perturbation], verdicts: &[i8]) -> Result<Vec<f64>> {
    if ws.is_empty() || ws.len() != verdicts.len() {
        return Err(Error::invalid(
            "one verdict per agent perturbation required",
        ));
    }
    let d = ws[0].len();
    let mut g = vec![0.0; d];
    for (w, &o) in ws.iter().zip(verdicts) {
        if w.len() != d {
            return Err(Error::invalid("agent perturbations differ in dimension"));
        }
        if o != 0 {
            for (gi, i) in g.iter_mut().zip(0..d) {
                *gi += f64::from(o) * w.get(i);
            }
        }
    }
    let k = ws.len() as f64;
    g.iter_mut().for_each(|x| *x /= k);
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub version: String,
    pub generator: String,
    pub seed: u64,
    pub dim: usize,
    pub config: RunConfig,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalSummary {
    pub iterations: usize,
    pub value_mean: f64,
    pub value_stderr: f64,
    pub true_value: Option<f64>,
    pub grad_l2: Option<f64>,
    pub bits_per_iteration: u64,
    pub memory_per_agent: usize,
    pub ledger: Ledger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub header: TraceHeader,
    pub records: Vec<IterationRecord>,
    pub summary: FinalSummary,
    pub checkpoints: Vec<Checkpoint>,
}

/// Prepared run: validated config, policy template and initial partition.
#[derive(Debug, Clone)]
pub struct Runner {
    config: RunConfig,
    template: Policy,
    d: usize,
}

impl Runner {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let template = Policy::zeros(config.policy_spec())?;
        let d = template.dim();
        Ok(Runner {
            config,
            template,
            d,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    fn stream(&self, t: usize, role: Role, agent: usize) -> RngStream {
        RngStream::at(self.config.seed, t as u64, role, agent as u64)
    }

    fn policy(&self, theta: ParamVector) -> Result<Policy> {
        self.template.set_params(theta)
    }

    fn partition_for(&self, t: usize) -> Result<Partition> {
        let mode = if self.config.reshuffle {
            PartitionMode::Shuffled
        } else {
            self.config.partition
        };
        let slot = if self.config.reshuffle { t } else { 0 };
        let mut rng = self.stream(slot, Role::Partition, 0);
        make_partition(self.d, self.config.agents, mode, &mut rng)
    }

    pub fn initial_state(&self) -> Result<RunState> {
        Ok(RunState {
            t: 1,
            theta: self.config.initial_params()?,
            partition: self.partition_for(0)?,
            mu: self.config.mu,
            alpha_scale: 1.0,
            rejections: 0,
            adam: AdamState::new(self.d),
            ledger: Ledger::default(),
        })
    }

    /// Mean and standard error over `eval_episodes` fresh rollouts.
    pub fn evaluate(&self, theta: &ParamVector, t: usize) -> Result<(f64, f64)> {
        let policy = self.policy(theta.clone())?;
        let mut rng = self.stream(t, Role::Evaluation, 0);
        let n = self.config.eval_episodes;
        let xs: Vec<f64> = (0..n)
            .map(|_| self.config.env.sample_reward(&policy, &mut rng))
            .collect::<Result<_>>()?;
        Ok(mean_stderr(&xs))
    }

    fn oracle(
        &self,
        theta: &ParamVector,
        candidate: ParamVector,
        rng: &mut RngStream,
    ) -> Result<i8> {
        let base = self.policy(theta.clone())?;
        let other = self.policy(candidate)?;
        Ok(preference_oracle(&self.config.panel, &base, &other, &self.config.env, rng)?.verdict)
    }

    /// One iteration of the configured algorithm; advances `state`.
    pub fn iteration(&self, state: &mut RunState) -> Result<IterationRecord> {
        match self.config.algorithm {
            Algorithm::Par => self.par_iteration(state),
            Algorithm::Fedavg => self.fedavg_iteration(state),
        }
    }

    pub fn par_iteration(&self, state: &mut RunState) -> Result<IterationRecord> {
        let t = state.t;
        if self.config.reshuffle {
            state.partition = self.partition_for(t)?;
        }
        let v = Perturbation::sample(
            self.config.perturbation,
            self.d,
            &mut self.stream(t, Role::Perturbation, 0),
        )?;
        let mut verdicts = Vec::with_capacity(self.config.agents);
        for k in 0..self.config.agents {
            let vk = mask_perturbation(&v, &state.partition, k)?;
            let candidate = state.theta.add_scaled(state.mu, vk.as_slice())?;
            let mut rng = self.stream(t, Role::AgentOracle, k);
            verdicts.push(self.oracle(&state.theta, candidate, &mut rng)?);
        }
        let g = aggregate_direction(&v, &state.partition, &verdicts)?;
        let active = verdicts
            .iter()
            .enumerate()
            .filter(|(_, &o)| o != 0)
            .map(|(k, _)| state.partition.block_size(k))
            .sum();
        if v.kind() == PerturbationKind::Binary {
            let sq = crate::params::dot(&g, &g);
            if sq != active as f64 {
                return Err(Error::invalid(format!(
                    "aggregated direction has squared norm {sq}, expected {active}"
                )));
            }
        }
        self.finish(state, g, verdicts, active)
    }

    pub fn fedavg_iteration(&self, state: &mut RunState) -> Result<IterationRecord> {
        let t = state.t;
        let mut ws = Vec::with_capacity(self.config.agents);
        let mut verdicts = Vec::with_capacity(self.config.agents);
        for k in 0..self.config.agents {
            let w = Perturbation::sample(
                self.config.perturbation,
                self.d,
                &mut self.stream(t, Role::Perturbation, k),
            )?;
            let candidate = state.theta.add_scaled(state.mu, &w.to_f64())?;
            let mut rng = self.stream(t, Role::AgentOracle, k);
            verdicts.push(self.oracle(&state.theta, candidate, &mut rng)?);
            ws.push(w);
        }
        let g = average_direction(&ws, &verdicts)?;
        let active = verdicts.iter().filter(|&&o| o != 0).count() * self.d;
        self.finish(state, g, verdicts, active)
    }

    fn finish(
        &self,
        state: &mut RunState,
        g: Vec<f64>,
        verdicts: Vec<i8>,
        active: usize,
    ) -> Result<IterationRecord> {
        let t = state.t;
        let cfg = &self.config;
        let (value_mean, value_stderr) = self.evaluate(&state.theta, t)?;
        let (grad_l2, grad_blocksum) = match &cfg.env {
            EnvSpec::AnalyticQuadratic { .. } => {
                let grad = true_gradient(&cfg.env, &state.theta)?;
                (
                    Some(grad.l2_norm()),
                    Some(block_sum_norm(grad.as_slice(), &state.partition)?),
                )
            }
            _ => (None, None),
        };
        let alpha = cfg.lr.at(t, cfg.env.horizon(), self.d)? * state.alpha_scale;
        let mu = state.mu;
        let per_query = cfg.panel.trajectories_per_query();

        let accepted = match cfg.update {
            UpdateMode::PlainSgd => {
                state.theta = state
                    .theta
                    .add_scaled(alpha, &g)
                    .map_err(|e| at_iteration(t, e))?;
                None
            }
            UpdateMode::AcceptRejectAdam => {
                let step = state.adam.step(&g, alpha, &cfg.adam);
                let candidate = state
                    .theta
                    .add_scaled(1.0, &step)
                    .map_err(|e| at_iteration(t, e))?;
                let mut rng = self.stream(t, Role::ServerPanel, 0);
                let verdict = self.oracle(&state.theta, candidate.clone(), &mut rng)?;
                state.ledger.traj_server += per_query;
                let ok = verdict == 1;
                if ok {
                    state.theta = candidate;
                    state.rejections = 0;
                } else {
                    state.rejections += 1;
                    if state.rejections == cfg.adam.patience {
                        state.alpha_scale *= 0.5;
                        state.mu *= 0.5;
                        state.rejections = 0;
                    }
                }
                Some(ok)
            }
        };

        let bits = cfg.bits_per_iteration()?;
        state.ledger.bits += bits;
        state.ledger.traj_optimizer += cfg.agents as u64 * per_query;
        state.ledger.traj_eval += cfg.eval_episodes as u64;
        state.t += 1;

        Ok(IterationRecord {
            t,
            value_mean,
            value_stderr,
            accepted,
            alpha,
            mu,
            bits,
            traj_optimizer: state.ledger.traj_optimizer,
            traj_eval: state.ledger.traj_eval + state.ledger.traj_server,
            grad_l2,
            grad_blocksum,
            direction_sq_norm: crate::params::dot(&g, &g),
            active_coordinates: active,
            feedback: verdicts,
        })
    }

    pub fn run(&self) -> Result<RunTrace> {
        let cfg = &self.config;
        let mut state = self.initial_state()?;
        let mut records = Vec::with_capacity(cfg.iterations);
        let mut checkpoints = Vec::new();
        for _ in 0..cfg.iterations {
            let record = self.iteration(&mut state)?;
            if let Some(every) = cfg.checkpoint_every {
                if record.t % every == 0 {
                    checkpoints.push(Checkpoint {
                        t: record.t,
                        params: encode_params(&state.theta),
                    });
                }
            }
            records.push(record);
        }
        let (value_mean, value_stderr) = self.evaluate(&state.theta, state.t)?;
        state.ledger.traj_eval += cfg.eval_episodes as u64;
        let (true_value, grad_l2) = match &cfg.env {
            EnvSpec::AnalyticQuadratic { .. } => (
                Some(crate::env::true_value(&cfg.env, &state.theta)?),
                Some(true_gradient(&cfg.env, &state.theta)?.l2_norm()),
            ),
            _ => (None, None),
        };
        Ok(RunTrace {
            header: TraceHeader {
                version: VERSION.to_string(),
                generator: GENERATOR_ID.to_string(),
                seed: cfg.seed,
                dim: self.d,
                config: cfg.clone(),
                warnings: cfg.warnings(),
            },
            records,
            summary: FinalSummary {
                iterations: cfg.iterations,
                value_mean,
                value_stderr,
                true_value,
                grad_l2,
                bits_per_iteration: cfg.bits_per_iteration()?,
                memory_per_agent: cfg.memory_per_agent()?,
                ledger: state.ledger,
            },
            checkpoints,
        })
    }
}

fn at_iteration(t: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(m) => Error::NonFinite(format!("iteration {t}: {m}")),
        other => other,
    }
}

pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn run(config: &RunConfig) -> Result<RunTrace> {
    Runner::new(config.clone())?.run()
}

/// Draws `R ∈ {1..T}` with probability `α_R / Σ α_t`.
pub fn sample_theta_r(records: &[IterationRecord], rng: &mut RngStream) -> Result<usize> {
    if records.is_empty() {
        return Err(Error::invalid("cannot sample from an empty trace"));
    }
    let total: f64 = records.iter().map(|r| r.alpha).sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::invalid("learning rates must be positive"));
    }
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for r in records {
        acc += r.alpha;
        if u < acc {
            return Ok(r.t);
        }
    }
    Ok(records.last().expect("non-empty").t)
}

/// α-weighted mean of `|∇V(θ_t)|_{P_K}` over the first `upto` records, i.e.
/// `E |∇V(θ_R)|_{P_K}` for `R` drawn as in [`sample_theta_r`].
pub fn weighted_blocksum(records: &[IterationRecord], upto: usize) -> Option<f64> {
    let slice = &records[..upto.min(records.len())];
    let mut num = 0.0;
    let mut den = 0.0;
    for r in slice {
        num += r.alpha * r.grad_blocksum?;
        den += r.alpha;
    }
    (den > 0.0).then(|| num / den)
}
