//! Episodic environments with trajectory-level rewards in `[0, H]`.
//!
//! Three kinds are built in:
//!
//! * `analytic-quadratic`: the reward is `H / (1 + |θ - θ*|² / w)` plus
//!   Gaussian noise, read straight from the policy parameters. The recorded
//!   trajectory is a dummy `H`-step record so batch machinery is unchanged.
//!   Exact value and gradient are available, and the value is `L`-smooth with
//!   `L = 2H / w`.
//! * `linear-control`: `s' = A s + B clip(a)`, Gaussian initial state, reward
//!   `clip(H - cost / cost_scale, 0, H)` for the total quadratic cost.
//! * `gridworld`: four-way moves picked by argmax over the policy's logits,
//!   reward `H - (first arrival step)` or 0 if the goal is never reached.
//!
//! Reward noise is additive Gaussian with standard deviation `noise`, applied
//! to the whole-trajectory reward before clipping.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{check_dims, ParamVector};
use crate::policy::{Policy, PolicySpec};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Target {
    Fill(f64),
    Explicit(Vec<f64>),
}

fn default_width() -> f64 {
    4.0
}

fn default_target() -> Target {
    Target::Fill(0.0)
}

fn default_dt() -> f64 {
    0.1
}

fn one() -> f64 {
    1.0
}

fn default_action_limit() -> f64 {
    5.0
}

fn default_cost_scale() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnvSpec {
    AnalyticQuadratic {
        horizon: usize,
        #[serde(default)]
        noise: f64,
        dim: usize,
        #[serde(default = "default_width")]
        width: f64,
        #[serde(default = "default_target")]
        target: Target,
    },
    LinearControl {
        horizon: usize,
        #[serde(default)]
        noise: f64,
        /// Number of decoupled double integrators; state dim `2n`, action dim `n`.
        #[serde(default = "two")]
        axes: usize,
        #[serde(default = "default_dt")]
        dt: f64,
        #[serde(default = "one")]
        state_cost: f64,
        #[serde(default = "tenth")]
        action_cost: f64,
        #[serde(default = "one")]
        init_std: f64,
        #[serde(default = "default_cost_scale")]
        cost_scale: f64,
        #[serde(default = "default_action_limit")]
        action_limit: f64,
    },
    Gridworld {
        horizon: usize,
        #[serde(default)]
        noise: f64,
        rows: usize,
        cols: usize,
        start: [usize; 2],
        goal: [usize; 2],
    },
}

fn two() -> usize {
    2
}

fn tenth() -> f64 {
    0.1
}

/// Grid moves in logit order.
const MOVES: [(i64, i64); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<(Vec<f64>, Vec<f64>)>,
    pub reward: f64,
}

impl EnvSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            EnvSpec::AnalyticQuadratic { .. } => "analytic-quadratic",
            EnvSpec::LinearControl { .. } => "linear-control",
            EnvSpec::Gridworld { .. } => "gridworld",
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            EnvSpec::AnalyticQuadratic { horizon, .. }
            | EnvSpec::LinearControl { horizon, .. }
            | EnvSpec::Gridworld { horizon, .. } => *horizon,
        }
    }

    pub fn noise(&self) -> f64 {
        match self {
            EnvSpec::AnalyticQuadratic { noise, .. }
            | EnvSpec::LinearControl { noise, .. }
            | EnvSpec::Gridworld { noise, .. } => *noise,
        }
    }

    pub fn with_noise(mut self, value: f64) -> Self {
        match &mut self {
            EnvSpec::AnalyticQuadratic { noise, .. }
            | EnvSpec::LinearControl { noise, .. }
            | EnvSpec::Gridworld { noise, .. } => *noise = value,
        }
        self
    }

    pub fn state_dim(&self) -> usize {
        match self {
            EnvSpec::AnalyticQuadratic { dim, .. } => dim.saturating_sub(1),
            EnvSpec::LinearControl { axes, .. } => 2 * axes,
            EnvSpec::Gridworld { .. } => 2,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self {
            EnvSpec::AnalyticQuadratic { .. } => 1,
            EnvSpec::LinearControl { axes, .. } => *axes,
            EnvSpec::Gridworld { .. } => 4,
        }
    }

    /// Policy used when a config names none: for the analytic environment a
    /// linear map with exactly `dim` parameters, otherwise linear state -> action.
    pub fn default_policy(&self) -> PolicySpec {
        PolicySpec::linear(self.state_dim(), self.action_dim())
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.horizon();
        if h == 0 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        let noise = self.noise();
        if !(noise.is_finite() && noise >= 0.0) {
            return Err(Error::invalid("noise must be finite and >= 0"));
        }
        match self {
            EnvSpec::AnalyticQuadratic {
                dim, width, target, ..
            } => {
                if *dim < 2 {
                    return Err(Error::invalid("analytic dim must be at least 2"));
                }
                if !(width.is_finite() && *width > 0.0) {
                    return Err(Error::invalid("width must be positive"));
                }
                match target {
                    Target::Fill(x) if !x.is_finite() => {
                        return Err(Error::invalid("target must be finite"))
                    }
                    Target::Explicit(v) => {
                        check_dims(*dim, v.len())?;
                        ParamVector::new(v.clone())?;
                    }
                    _ => {}
                }
            }
            EnvSpec::LinearControl {
                axes,
                dt,
                state_cost,
                action_cost,
                init_std,
                cost_scale,
                action_limit,
                ..
            } => {
                if *axes == 0 {
                    return Err(Error::invalid("axes must be at least 1"));
                }
                let positive = [*dt, *cost_scale, *action_limit];
                let nonneg = [*state_cost, *action_cost, *init_std];
                if positive.iter().any(|x| !(x.is_finite() && *x > 0.0))
                    || nonneg.iter().any(|x| !(x.is_finite() && *x >= 0.0))
                {
                    return Err(Error::invalid("linear-control constants out of range"));
                }
            }
            EnvSpec::Gridworld {
                rows,
                cols,
                start,
                goal,
                ..
            } => {
                let inside =
                    |c: &[usize; 2]| (1..=*rows).contains(&c[0]) && (1..=*cols).contains(&c[1]);
                if *rows == 0 || *cols == 0 || !inside(start) || !inside(goal) {
                    return Err(Error::invalid(
                        "gridworld cells are 1-based and must lie on the grid",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn check_policy(&self, policy: &Policy) -> Result<()> {
        let spec = policy.spec();
        match self {
            EnvSpec::AnalyticQuadratic { dim, .. } => {
                if policy.dim() != *dim {
                    return Err(Error::invalid(format!(
                        "analytic environment needs {dim} policy parameters, policy has {}",
                        policy.dim()
                    )));
                }
            }
            _ => {
                if spec.input_dim != self.state_dim() || spec.output_dim != self.action_dim() {
                    return Err(Error::invalid(format!(
                        "policy maps {} -> {}, environment needs {} -> {}",
                        spec.input_dim,
                        spec.output_dim,
                        self.state_dim(),
                        self.action_dim()
                    )));
                }
            }
        }
        Ok(())
    }

    fn target_vec(&self) -> Result<Vec<f64>> {
        match self {
            EnvSpec::AnalyticQuadratic { dim, target, .. } => Ok(match target {
                Target::Fill(x) => vec![*x; *dim],
                Target::Explicit(v) => v.clone(),
            }),
            _ => Err(Error::Unsupported(format!(
                "closed-form value is only available for analytic-quadratic, not {}",
                self.kind_name()
            ))),
        }
    }

    /// Smoothness constant of the analytic value: `2H / w`.
    pub fn smoothness(&self) -> Result<f64> {
        match self {
            EnvSpec::AnalyticQuadratic { horizon, width, .. } => Ok(2.0 * *horizon as f64 / width),
            _ => Err(Error::Unsupported(format!(
                "no smoothness constant for {}",
                self.kind_name()
            ))),
        }
    }

    /// Runs one episode and returns only the clipped reward.
    pub fn sample_reward(&self, policy: &Policy, rng: &mut RngStream) -> Result<f64> {
        self.run_episode(policy, rng, None)
    }

    fn run_episode(
        &self,
        policy: &Policy,
        rng: &mut RngStream,
        mut record: Option<&mut Vec<(Vec<f64>, Vec<f64>)>>,
    ) -> Result<f64> {
        self.check_policy(policy)?;
        let h_max = self.horizon();
        let base = match self {
            EnvSpec::AnalyticQuadratic { .. } => {
                if let Some(steps) = record.as_deref_mut() {
                    let s = vec![0.0; policy.spec().input_dim];
                    let a = policy.mean_action(&s)?;
                    steps.extend(std::iter::repeat_n((s, a), h_max));
                }
                true_value(self, policy.get_params())?
            }
            EnvSpec::LinearControl {
                axes,
                dt,
                state_cost,
                action_cost,
                init_std,
                cost_scale,
                action_limit,
                ..
            } => {
                let mut s: Vec<f64> = (0..2 * axes)
                    .map(|_| {
                        init_std * {
                            let z: f64 = StandardNormal.sample(rng);
                            z
                        }
                    })
                    .collect();
                let mut cost = 0.0;
                for h in 1..=h_max {
                    let a = policy.act(h, &s, rng)?;
                    let u: Vec<f64> = a
                        .iter()
                        .map(|x| x.clamp(-action_limit, *action_limit))
                        .collect();
                    cost += state_cost * s.iter().map(|x| x * x).sum::<f64>()
                        + action_cost * u.iter().map(|x| x * x).sum::<f64>();
                    let mut next = s.clone();
                    for (j, uj) in u.iter().enumerate() {
                        let (pos, vel) = (s[2 * j], s[2 * j + 1]);
                        next[2 * j] = pos + dt * vel;
                        next[2 * j + 1] = vel + dt * uj;
                    }
                    if let Some(steps) = record.as_deref_mut() {
                        steps.push((s, a));
                    }
                    s = next;
                }
                h_max as f64 - cost / cost_scale
            }
            EnvSpec::Gridworld {
                rows,
                cols,
                start,
                goal,
                ..
            } => {
                let (mut r, mut c) = (start[0] as i64, start[1] as i64);
                let mut arrival = None;
                for h in 1..=h_max {
                    let s = vec![r as f64 / *rows as f64, c as f64 / *cols as f64];
                    let logits = policy.act(h, &s, rng)?;
                    let best = argmax(&logits);
                    let (dr, dc) = MOVES[best];
                    r = (r + dr).clamp(1, *rows as i64);
                    c = (c + dc).clamp(1, *cols as i64);
                    if arrival.is_none() && [r as usize, c as usize] == *goal {
                        arrival = Some(h);
                    }
                    if let Some(steps) = record.as_deref_mut() {
                        steps.push((s, logits));
                    }
                }
                arrival.map_or(0.0, |h| (h_max - h) as f64)
            }
        };
        let noise = self.noise();
        let noisy = if noise > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            base + noise * z
        } else {
            base
        };
        if !noisy.is_finite() {
            return Err(Error::NonFinite(format!("{} reward", self.kind_name())));
        }
        Ok(noisy.clamp(0.0, h_max as f64))
    }
}

/// First index of the largest logit.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn rollout(env: &EnvSpec, policy: &Policy, rng: &mut RngStream) -> Result<Trajectory> {
    let mut steps = Vec::with_capacity(env.horizon());
    let reward = env.run_episode(policy, rng, Some(&mut steps))?;
    Ok(Trajectory { steps, reward })
}

/// Exact value `H / (1 + |θ - θ*|² / w)` of the analytic environment.
pub fn true_value(env: &EnvSpec, theta: &ParamVector) -> Result<f64> {
    let target = env.target_vec()?;
    check_dims(target.len(), theta.len())?;
    let EnvSpec::AnalyticQuadratic { horizon, width, .. } = env else {
        unreachable!("target_vec succeeded")
    };
    let sq: f64 = theta
        .iter()
        .zip(&target)
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok(*horizon as f64 / (1.0 + sq / width))
}

/// Closed-form gradient `-2H (θ - θ*) / (w (1 + |θ - θ*|² / w)²)`.
pub fn true_gradient(env: &EnvSpec, theta: &ParamVector) -> Result<ParamVector> {
    let target = env.target_vec()?;
    check_dims(target.len(), theta.len())?;
    let EnvSpec::AnalyticQuadratic { horizon, width, .. } = env else {
        unreachable!("target_vec succeeded")
    };
    let diff: Vec<f64> = theta.iter().zip(&target).map(|(a, b)| a - b).collect();
    let sq: f64 = diff.iter().map(|x| x * x).sum();
    let denom = width * (1.0 + sq / width).powi(2);
    let scale = -2.0 * *horizon as f64 / denom;
    ParamVector::new(diff.into_iter().map(|x| scale * x).collect())
}

pub fn batch_mean_reward(batch: &[Trajectory]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("empty trajectory batch"));
    }
    Ok(batch.iter().map(|t| t.reward).sum::<f64>() / batch.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::dot;
    use crate::policy::Policy;
    use crate::rng::Role;
    use rand::Rng;

    fn rng(i: u64) -> RngStream {
        RngStream::at(21, i, Role::Test, 0)
    }

    pub(crate) fn analytic(dim: usize, noise: f64) -> EnvSpec {
        EnvSpec::AnalyticQuadratic {
            horizon: 10,
            noise,
            dim,
            width: 4.0,
            target: Target::Fill(0.5),
        }
    }

    fn grid() -> EnvSpec {
        EnvSpec::Gridworld {
            horizon: 4,
            noise: 0.0,
            rows: 3,
            cols: 3,
            start: [1, 1],
            goal: [1, 3],
        }
    }

    #[test]
    fn gridworld_walk_right_reaches_goal_at_step_two() {
        // Bias on the "right" logit only; zero weights.
        let mut theta = vec![0.0; 12];
        theta[8 + 3] = 1.0;
        let p = Policy::new(PolicySpec::linear(2, 4), ParamVector::new(theta).unwrap()).unwrap();
        let t = rollout(&grid(), &p, &mut rng(0)).unwrap();
        assert_eq!(t.steps.len(), 4);
        assert_eq!(t.reward, 2.0);
    }

    #[test]
    fn gridworld_never_arriving_scores_zero() {
        let mut theta = vec![0.0; 12];
        theta[8 + 1] = 1.0; // always down
        let p = Policy::new(PolicySpec::linear(2, 4), ParamVector::new(theta).unwrap()).unwrap();
        assert_eq!(rollout(&grid(), &p, &mut rng(0)).unwrap().reward, 0.0);
    }

    #[test]
    fn analytic_values() {
        let env = analytic(4, 0.0);
        let star = ParamVector::new(vec![0.5; 4]).unwrap();
        assert_eq!(true_value(&env, &star).unwrap(), 10.0);
        // |θ - θ*|² = w = 4
        let off = ParamVector::new(vec![1.5, 1.5, 1.5, 1.5]).unwrap();
        assert_eq!(true_value(&env, &off).unwrap(), 5.0);
        assert!(true_gradient(&env, &star)
            .unwrap()
            .iter()
            .all(|&g| g == 0.0));
        assert!(matches!(
            true_value(&grid(), &star),
            Err(Error::Unsupported(_))
        ));
        assert!(matches!(
            true_gradient(&grid(), &star),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let env = analytic(6, 0.0);
        let mut r = rng(1);
        for _ in 0..100 {
            let theta: Vec<f64> = (0..6).map(|_| r.gen_range(-2.0..2.0)).collect();
            let theta = ParamVector::new(theta).unwrap();
            let g = true_gradient(&env, &theta).unwrap();
            let step = 1e-6;
            let fd: Vec<f64> = (0..6)
                .map(|i| {
                    let mut e = vec![0.0; 6];
                    e[i] = step;
                    let up = true_value(&env, &theta.add_scaled(1.0, &e).unwrap()).unwrap();
                    let down = true_value(&env, &theta.add_scaled(-1.0, &e).unwrap()).unwrap();
                    (up - down) / (2.0 * step)
                })
                .collect();
            let diff: Vec<f64> = fd.iter().zip(g.iter()).map(|(a, b)| a - b).collect();
            let rel = crate::params::l2_norm(&diff) / g.l2_norm().max(1e-12);
            assert!(rel < 1e-5, "relative error {rel}");
            let toward: Vec<f64> = (0..6).map(|i| 0.5 - theta[i]).collect();
            assert!(dot(g.as_slice(), &toward) >= 0.0);
        }
    }

    #[test]
    fn smoothness_constant_bounds_gradient_change() {
        // Empirical Lipschitz ratio of the gradient stays below 2H/w.
        let env = analytic(5, 0.0);
        let l = env.smoothness().unwrap();
        let mut r = rng(2);
        let mut worst: f64 = 0.0;
        for _ in 0..20_000 {
            let a: Vec<f64> = (0..5).map(|_| r.gen_range(-3.0..3.0)).collect();
            let b: Vec<f64> = a.iter().map(|x| x + r.gen_range(-0.05..0.05)).collect();
            let (a, b) = (ParamVector::new(a).unwrap(), ParamVector::new(b).unwrap());
            let ga = true_gradient(&env, &a).unwrap();
            let gb = true_gradient(&env, &b).unwrap();
            let dg: Vec<f64> = ga.iter().zip(gb.iter()).map(|(x, y)| x - y).collect();
            let dt: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x - y).collect();
            worst = worst.max(crate::params::l2_norm(&dg) / crate::params::l2_norm(&dt));
            let dv = (true_value(&env, &a).unwrap() - true_value(&env, &b).unwrap()).abs();
            // |ΔV| <= max|∇V| |Δθ|, and max|∇V| = (3√3/8) H / √w at |θ-θ*|² = w/3
            let lip_v = 3.0 * 3f64.sqrt() / 8.0 * 10.0 / 2.0;
            assert!(dv <= lip_v * crate::params::l2_norm(&dt) * (1.0 + 1e-9));
        }
        assert!(worst <= l * (1.0 + 1e-6), "worst {worst} vs L {l}");
        assert!(worst > 0.8 * l, "bound should be nearly tight, got {worst}");
    }

    #[test]
    fn noiseless_analytic_is_repeatable() {
        let env = analytic(3, 0.0);
        let p = Policy::init_scaled(env.default_policy(), &mut rng(3)).unwrap();
        let a = rollout(&env, &p, &mut rng(4)).unwrap();
        let b = rollout(&env, &p, &mut rng(5)).unwrap();
        assert_eq!(a.reward, b.reward);
        assert_eq!(a.reward, true_value(&env, p.get_params()).unwrap());
    }

    #[test]
    fn rewards_stay_in_range() {
        let envs = [
            analytic(4, 5.0),
            EnvSpec::LinearControl {
                horizon: 20,
                noise: 3.0,
                axes: 2,
                dt: 0.1,
                state_cost: 1.0,
                action_cost: 0.1,
                init_std: 1.0,
                cost_scale: 10.0,
                action_limit: 5.0,
            },
            grid().with_noise(2.0),
        ];
        for (e, env) in envs.iter().enumerate() {
            let mut r = rng(10 + e as u64);
            let h = env.horizon() as f64;
            for i in 0..10_000 {
                let spec = env
                    .default_policy()
                    .with_action(crate::policy::ActionMode::GaussianExploration { sigma: 0.5 });
                let p = if i % 100 == 0 {
                    Policy::init_scaled(spec, &mut r).unwrap()
                } else {
                    Policy::zeros(spec).unwrap()
                };
                let reward = env.sample_reward(&p, &mut r).unwrap();
                assert!((0.0..=h).contains(&reward), "{reward}");
            }
        }
    }

    #[test]
    fn analytic_monte_carlo_matches_true_value() {
        // Noise small enough that clipping never binds near V = 5.
        let env = EnvSpec::AnalyticQuadratic {
            horizon: 10,
            noise: 1.0,
            dim: 4,
            width: 4.0,
            target: Target::Fill(0.5),
        };
        let theta = ParamVector::new(vec![1.5; 4]).unwrap();
        let p = Policy::new(env.default_policy(), theta.clone()).unwrap();
        let mut r = rng(6);
        let n = 10_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| env.sample_reward(&p, &mut r).unwrap())
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
        let v = true_value(&env, &theta).unwrap();
        assert!(
            (mean - v).abs() <= 4.0 * sd / (n as f64).sqrt(),
            "{mean} vs {v}"
        );
    }

    #[test]
    fn rollouts_are_deterministic_per_stream() {
        let env = EnvSpec::LinearControl {
            horizon: 10,
            noise: 1.0,
            axes: 1,
            dt: 0.1,
            state_cost: 1.0,
            action_cost: 0.1,
            init_std: 1.0,
            cost_scale: 10.0,
            action_limit: 5.0,
        };
        let p = Policy::init_scaled(env.default_policy(), &mut rng(7)).unwrap();
        assert_eq!(
            rollout(&env, &p, &mut rng(8)).unwrap(),
            rollout(&env, &p, &mut rng(8)).unwrap()
        );
        let wrong = Policy::zeros(PolicySpec::linear(3, 1)).unwrap();
        assert!(rollout(&env, &wrong, &mut rng(8)).is_err());
    }

    #[test]
    fn batch_means() {
        let t = |r| Trajectory {
            steps: vec![],
            reward: r,
        };
        assert_eq!(batch_mean_reward(&[t(1.0), t(2.0), t(3.0)]).unwrap(), 2.0);
        assert_eq!(batch_mean_reward(&[t(4.5)]).unwrap(), 4.5);
        assert!(batch_mean_reward(&[]).is_err());
    }
}
