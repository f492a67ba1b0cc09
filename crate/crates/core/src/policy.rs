//! Forward-only policies over a flat parameter vector.
//!
//! Parameter layout is layer-major; within a layer the weight matrix comes
//! first (row-major, one row per output unit) followed by the bias vector.
//! Hidden layers use `tanh`, the output layer is the identity.

use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{check_dims, ParamVector};
use crate::rng::RngStream;

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyKind {
    Linear,
    Mlp { hidden: Vec<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum KindTag {
    Linear,
    Mlp,
}

/// Flat wire form of [`PolicySpec`]; `hidden` is only meaningful for `mlp`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicySpec {
    kind: KindTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hidden: Option<Vec<usize>>,
    input_dim: usize,
    output_dim: usize,
    #[serde(default)]
    action: ActionMode,
}

impl TryFrom<RawPolicySpec> for PolicySpec {
    type Error = String;

    fn try_from(raw: RawPolicySpec) -> std::result::Result<Self, String> {
        let kind = match (raw.kind, raw.hidden) {
            (KindTag::Linear, None) => PolicyKind::Linear,
            (KindTag::Linear, Some(_)) => {
                return Err("`hidden` is only valid for mlp policies".into())
            }
            (KindTag::Mlp, hidden) => PolicyKind::Mlp {
                hidden: hidden.unwrap_or_else(default_hidden),
            },
        };
        Ok(PolicySpec {
            kind,
            input_dim: raw.input_dim,
            output_dim: raw.output_dim,
            action: raw.action,
        })
    }
}

impl From<PolicySpec> for RawPolicySpec {
    fn from(spec: PolicySpec) -> Self {
        let (kind, hidden) = match spec.kind {
            PolicyKind::Linear => (KindTag::Linear, None),
            PolicyKind::Mlp { hidden } => (KindTag::Mlp, Some(hidden)),
        };
        RawPolicySpec {
            kind,
            hidden,
            input_dim: spec.input_dim,
            output_dim: spec.output_dim,
            action: spec.action,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ActionMode {
    #[default]
    Deterministic,
    GaussianExploration {
        sigma: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPolicySpec", into = "RawPolicySpec")]
pub struct PolicySpec {
    pub kind: PolicyKind,
    pub input_dim: usize,
    pub output_dim: usize,
    pub action: ActionMode,
}

impl PolicySpec {
    pub fn linear(input_dim: usize, output_dim: usize) -> Self {
        PolicySpec {
            kind: PolicyKind::Linear,
            input_dim,
            output_dim,
            action: ActionMode::Deterministic,
        }
    }

    pub fn mlp(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Self {
        PolicySpec {
            kind: PolicyKind::Mlp { hidden },
            input_dim,
            output_dim,
            action: ActionMode::Deterministic,
        }
    }

    pub fn with_action(mut self, action: ActionMode) -> Self {
        self.action = action;
        self
    }

    /// Layer widths from input to output.
    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        if let PolicyKind::Mlp { hidden } = &self.kind {
            w.extend_from_slice(hidden);
        }
        w.push(self.output_dim);
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths().contains(&0) {
            return Err(Error::invalid("policy layer widths must be positive"));
        }
        if let ActionMode::GaussianExploration { sigma } = self.action {
            if !(sigma.is_finite() && sigma >= 0.0) {
                return Err(Error::invalid("exploration sigma must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

/// Flat parameter count including biases.
/// Largest parameter vector a policy may have.
pub const MAX_PARAMS: usize = 1 << 24;

pub fn param_count(spec: &PolicySpec) -> Result<usize> {
    spec.validate()?;
    spec.widths()
        .windows(2)
        .try_fold(0usize, |acc, w| {
            w[0].checked_add(1)
                .and_then(|a| a.checked_mul(w[1]))
                .and_then(|n| acc.checked_add(n))
        })
        .filter(|&n| n <= MAX_PARAMS)
        .ok_or_else(|| Error::invalid(format!("policy exceeds {MAX_PARAMS} parameters")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    spec: PolicySpec,
    params: ParamVector,
}

impl Policy {
    pub fn new(spec: PolicySpec, params: ParamVector) -> Result<Self> {
        check_dims(param_count(&spec)?, params.len())?;
        Ok(Policy { spec, params })
    }

    pub fn zeros(spec: PolicySpec) -> Result<Self> {
        let d = param_count(&spec)?;
        Self::new(spec, ParamVector::zeros(d))
    }

    /// Gaussian weights with standard deviation `1/sqrt(fan_in)`, zero biases.
    pub fn init_scaled(spec: PolicySpec, rng: &mut RngStream) -> Result<Self> {
        let d = param_count(&spec)?;
        let mut values = Vec::with_capacity(d);
        for w in spec.widths().windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                let z: f64 = StandardNormal.sample(rng);
                values.push(scale * z);
            }
            values.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self::new(spec, ParamVector::new(values)?)
    }

    pub fn spec(&self) -> &PolicySpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn get_params(&self) -> &ParamVector {
        &self.params
    }

    pub fn set_params(&self, params: ParamVector) -> Result<Policy> {
        Policy::new(self.spec.clone(), params)
    }

    /// Network output for `state`, before any exploration noise.
    pub fn mean_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        check_dims(self.spec.input_dim, state.len())?;
        let widths = self.spec.widths();
        let theta = self.params.as_slice();
        let mut offset = 0;
        let mut x = state.to_vec();
        let layers = widths.len() - 1;
        for (layer, w) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = &theta[offset..offset + fan_in * fan_out];
            let bias = &theta[offset + fan_in * fan_out..offset + (fan_in + 1) * fan_out];
            offset += (fan_in + 1) * fan_out;
            let hidden = layer + 1 < layers;
            x = weights
                .chunks_exact(fan_in)
                .zip(bias)
                .map(|(row, b)| {
                    let z = b + row.iter().zip(&x).map(|(a, s)| a * s).sum::<f64>();
                    if hidden {
                        z.tanh()
                    } else {
                        z
                    }
                })
                .collect();
        }
        Ok(x)
    }

    /// Action at step `h` (1-based) in `state`. Policies are stationary,
    /// so `h` only has to be a valid step index.
    pub fn act(&self, h: usize, state: &[f64], rng: &mut RngStream) -> Result<Vec<f64>> {
        if h == 0 {
            return Err(Error::invalid("step index h is 1-based"));
        }
        let mut a = self.mean_action(state)?;
        if let ActionMode::GaussianExploration { sigma } = self.spec.action {
            if sigma > 0.0 {
                let noise = Normal::new(0.0, sigma).expect("validated sigma");
                for x in &mut a {
                    *x += noise.sample(rng);
                }
            }
        }
        Ok(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{mask_apply, MaskVector};
    use crate::perturb::sample_rademacher;
    use crate::rng::Role;
    use proptest::prelude::*;

    fn rng() -> RngStream {
        RngStream::at(3, 0, Role::Test, 0)
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = PolicySpec::mlp(3, vec![8], 2)
            .with_action(ActionMode::GaussianExploration { sigma: 0.5 });
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<PolicySpec>(&text).unwrap(), spec);
        let linear: PolicySpec =
            serde_json::from_str(r#"{"kind":"linear","input_dim":2,"output_dim":4}"#).unwrap();
        assert_eq!(linear, PolicySpec::linear(2, 4));
        let mlp: PolicySpec =
            serde_json::from_str(r#"{"kind":"mlp","input_dim":3,"output_dim":2}"#).unwrap();
        assert_eq!(
            mlp.kind,
            PolicyKind::Mlp {
                hidden: vec![64, 64]
            }
        );
        for bad in [
            r#"{"kind":"linear","input_dim":2,"output_dim":4,"hidden":[3]}"#,
            r#"{"kind":"linear","input_dim":2,"output_dim":4,"extra":1}"#,
            r#"{"kind":"conv","input_dim":2,"output_dim":4}"#,
        ] {
            assert!(serde_json::from_str::<PolicySpec>(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn param_count_examples() {
        assert_eq!(param_count(&PolicySpec::linear(4, 2)).unwrap(), 10);
        assert_eq!(param_count(&PolicySpec::linear(1, 1)).unwrap(), 2);
        assert_eq!(
            param_count(&PolicySpec::mlp(3, vec![64, 64], 2)).unwrap(),
            (3 * 64 + 64) + (64 * 64 + 64) + (64 * 2 + 2)
        );
        assert_eq!(
            param_count(&PolicySpec::mlp(3, vec![64, 64], 2)).unwrap(),
            4546
        );
        assert!(param_count(&PolicySpec::linear(0, 2)).is_err());
        assert!(param_count(&PolicySpec::mlp(3, vec![64, 0], 2)).is_err());
        assert!(param_count(&PolicySpec::linear(4096, 4096)).is_err());
        assert!(param_count(&PolicySpec::mlp(1, vec![usize::MAX, 2], 1)).is_err());
    }

    #[test]
    fn mlp_count_matches_slots_read() {
        // Mark each parameter with its own index and check the forward pass
        // touches exactly `param_count` distinct slots by perturbing each one.
        let spec = PolicySpec::mlp(2, vec![3, 2], 2);
        let d = param_count(&spec).unwrap();
        assert_eq!(d, (2 + 1) * 3 + (3 + 1) * 2 + (2 + 1) * 2);
        let base = Policy::init_scaled(spec.clone(), &mut rng()).unwrap();
        let s = [0.3, -0.7];
        let y0 = base.mean_action(&s).unwrap();
        for i in 0..d {
            let mut e = vec![0.0; d];
            e[i] = 1e-3;
            let moved = base
                .set_params(base.get_params().add_scaled(1.0, &e).unwrap())
                .unwrap();
            assert_ne!(moved.mean_action(&s).unwrap(), y0, "slot {i} unused");
        }
    }

    #[test]
    fn zero_and_identity_linear() {
        let zero = Policy::zeros(PolicySpec::linear(2, 2)).unwrap();
        assert_eq!(
            zero.act(1, &[1.0, 2.0], &mut rng()).unwrap(),
            vec![0.0, 0.0]
        );
        // rows e_1, e_2 with zero bias
        let ident = ParamVector::new(vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let p = zero.set_params(ident).unwrap();
        assert_eq!(p.act(1, &[1.0, 2.0], &mut rng()).unwrap(), vec![1.0, 2.0]);
        assert_eq!(
            p.act(3, &[1.0, 2.0], &mut rng()).unwrap(),
            p.act(3, &[1.0, 2.0], &mut rng()).unwrap()
        );
        assert!(p.act(1, &[1.0], &mut rng()).is_err());
        assert!(p.act(0, &[1.0, 2.0], &mut rng()).is_err());
    }

    #[test]
    fn set_params_length_checked() {
        let p = Policy::zeros(PolicySpec::linear(2, 1)).unwrap();
        assert!(p.set_params(ParamVector::zeros(4)).is_err());
    }

    #[test]
    fn exploration_noise_is_seeded() {
        let spec =
            PolicySpec::linear(2, 2).with_action(ActionMode::GaussianExploration { sigma: 0.5 });
        let p = Policy::zeros(spec).unwrap();
        let a = p.act(1, &[0.0, 0.0], &mut rng()).unwrap();
        assert_ne!(a, vec![0.0, 0.0]);
        assert_eq!(a, p.act(1, &[0.0, 0.0], &mut rng()).unwrap());
    }

    #[test]
    fn block_perturbation_only_moves_its_output_row() {
        // Linear 3 -> 2: W occupies coordinates 0..6 (row 1 = 0,1,2), biases 6 and 7.
        let spec = PolicySpec::linear(3, 2);
        let base = Policy::init_scaled(spec, &mut rng()).unwrap();
        let row_one =
            MaskVector::from_bits(vec![true, true, true, false, false, false, true, false]);
        let v = ParamVector::new(sample_rademacher(8, &mut rng()).unwrap().to_f64()).unwrap();
        let masked = mask_apply(&v, &row_one).unwrap();
        let moved = base
            .set_params(
                base.get_params()
                    .add_scaled(0.1, masked.as_slice())
                    .unwrap(),
            )
            .unwrap();
        let s = [0.5, -1.0, 2.0];
        let (y0, y1) = (
            base.mean_action(&s).unwrap(),
            moved.mean_action(&s).unwrap(),
        );
        assert_eq!(y0[1], y1[1]);
        assert_ne!(y0[0], y1[0]);
    }

    proptest! {
        #[test]
        fn layout_round_trip(seed: u64, hidden in proptest::collection::vec(1usize..6, 0..3)) {
            let spec = if hidden.is_empty() {
                PolicySpec::linear(3, 2)
            } else {
                PolicySpec::mlp(3, hidden, 2)
            };
            let mut r = RngStream::at(seed, 0, Role::Test, 0);
            let p = Policy::init_scaled(spec.clone(), &mut r).unwrap();
            let q = Policy::zeros(spec).unwrap().set_params(p.get_params().clone()).unwrap();
            prop_assert_eq!(q.get_params(), p.get_params());
            prop_assert_eq!(q.mean_action(&[0.1, 0.2, 0.3]).unwrap(), p.mean_action(&[0.1, 0.2, 0.3]).unwrap());
        }

        #[test]
        fn output_is_lipschitz_in_params(seed: u64) {
            // Finite-difference slope along random directions on a bounded input.
            let spec = PolicySpec::mlp(3, vec![8, 8], 2);
            let mut r = RngStream::at(seed, 0, Role::Test, 0);
            let p = Policy::init_scaled(spec, &mut r).unwrap();
            let d = p.dim();
            let dir = sample_rademacher(d, &mut r).unwrap().to_f64();
            let h = 1e-4;
            let q = p.set_params(p.get_params().add_scaled(h, &dir).unwrap()).unwrap();
            let s = [0.9, -0.4, 0.2];
            let (y0, y1) = (p.mean_action(&s).unwrap(), q.mean_action(&s).unwrap());
            let delta = crate::params::l2_norm(&y0.iter().zip(&y1).map(|(a, b)| a - b).collect::<Vec<_>>());
            let slope = delta / (h * (d as f64).sqrt());
            // Crude bound: product of layer operator norms on |s| <= 1, well under 50 here.
            prop_assert!(slope < 50.0, "slope {}", slope);
        }

        #[test]
        fn zero_step_keeps_behaviour(seed: u64) {
            let spec = PolicySpec::mlp(2, vec![4], 1);
            let mut r = RngStream::at(seed, 0, Role::Test, 0);
            let p = Policy::init_scaled(spec, &mut r).unwrap();
            let v = sample_rademacher(p.dim(), &mut r).unwrap().to_f64();
            let q = p.set_params(p.get_params().add_scaled(0.0, &v).unwrap()).unwrap();
            prop_assert_eq!(q.mean_action(&[0.3, 0.4]).unwrap(), p.mean_action(&[0.3, 0.4]).unwrap());
        }
    }
}
