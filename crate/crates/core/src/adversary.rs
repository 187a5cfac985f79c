//! Compromised agents and the values they broadcast.
//!
//! An attack overwrites the broadcast state of each compromised agent from
//! `start_round` on. That is the additive model `x^(k+1) = W x^(k) + Δ^(k)` with
//! `Δ = injected − nominal`. Round 0 is never touched (`Δ^(0) = 0`), the
//! topology is never altered, and each compromised agent sends one value per
//! round to all of its out-neighbours.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repc::{AffineMap, NetworkState};
use crate::topology::AgentId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    Constant { value: f64 },
    /// `target + (x_a^(0) − target) · rate^k`.
    Converging { target: f64, rate: f64 },
    Gaussian { mu: f64, sigma: f64 },
    /// Uniform on `[mean − half_width, mean + half_width]`.
    Uniform { mean: f64, half_width: f64 },
    /// `values[k − start_round]`, holding the last value afterwards.
    Replay { values: Vec<f64> },
}

impl Strategy {
    fn is_noise(&self) -> bool {
        matches!(self, Strategy::Gaussian { .. } | Strategy::Uniform { .. })
    }

    fn validate(&self, errs: &mut Vec<String>, ctx: &str) {
        match self {
            Strategy::Converging { rate, .. } if !(0.0..1.0).contains(rate) => {
                errs.push(format!("{ctx}: converging rate must lie in [0,1)"))
            }
            Strategy::Gaussian { sigma, .. } if !(*sigma >= 0.0 && sigma.is_finite()) => {
                errs.push(format!("{ctx}: sigma must be a finite nonnegative number"))
            }
            Strategy::Uniform { half_width, .. } if !(*half_width >= 0.0 && half_width.is_finite()) => {
                errs.push(format!("{ctx}: half_width must be a finite nonnegative number"))
            }
            Strategy::Replay { values } if values.is_empty() => {
                errs.push(format!("{ctx}: replay needs at least one value"))
            }
            _ => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentAttack {
    pub agent: AgentId,
    #[serde(flatten)]
    pub strategy: Strategy,
}

/// Domain in which strategy values are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    #[default]
    Normalized,
    /// Same units as the raw initial states; mapped through the initial affine map.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub agents: Vec<AgentAttack>,
    pub start_round: u64,
    /// Clamp noise samples to `[0, 1]` in the normalized domain.
    pub clamp: bool,
    pub units: Units,
}

impl Default for AttackSpec {
    fn default() -> Self {
        AttackSpec {
            agents: Vec::new(),
            start_round: 1,
            clamp: true,
            units: Units::Normalized,
        }
    }
}

/// Everything besides the attack description that injected values depend on.
#[derive(Debug, Clone)]
pub struct AttackContext {
    pub seed: u64,
    pub map: AffineMap,
    /// Normalized `x^(0)`.
    pub initial: Vec<f64>,
}

impl AttackSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn attacked(&self) -> BTreeSet<AgentId> {
        self.agents.iter().map(|a| a.agent).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let mut errs = Vec::new();
        if self.start_round < 1 {
            errs.push("attack start_round must be at least 1: the initial state cannot be attacked".into());
        }
        let mut seen = BTreeSet::new();
        for (idx, a) in self.agents.iter().enumerate() {
            let ctx = format!("attack.agents[{idx}]");
            if a.agent >= n {
                errs.push(format!("{ctx}: agent {} out of range 0..{n}", a.agent));
            }
            if !seen.insert(a.agent) {
                errs.push(format!("{ctx}: agent {} is attacked twice", a.agent));
            }
            a.strategy.validate(&mut errs, &ctx);
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Normalized value broadcast by `attack` in round `k >= start_round`.
    pub fn value_at(&self, attack: &AgentAttack, k: u64, ctx: &AttackContext) -> f64 {
        let to_norm = |v: f64| match self.units {
            Units::Normalized => v,
            Units::Raw => ctx.map.normalize(v),
        };
        let mut rng = round_rng(ctx.seed, attack.agent, k);
        let v = match &attack.strategy {
            Strategy::Constant { value } => to_norm(*value),
            Strategy::Converging { target, rate } => {
                let target = to_norm(*target);
                let exp = i32::try_from(k).unwrap_or(i32::MAX);
                target + (ctx.initial[attack.agent] - target) * rate.powi(exp)
            }
            Strategy::Gaussian { mu, sigma } => {
                let sample = Normal::new(*mu, *sigma).expect("validated sigma").sample(&mut rng);
                to_norm(sample)
            }
            Strategy::Uniform { mean, half_width } => {
                let sample = if *half_width == 0.0 {
                    *mean
                } else {
                    Uniform::new_inclusive(mean - half_width, mean + half_width)
                        .expect("validated half width")
                        .sample(&mut rng)
                };
                to_norm(sample)
            }
            Strategy::Replay { values } => {
                let idx = (k.saturating_sub(self.start_round) as usize).min(values.len() - 1);
                to_norm(values[idx])
            }
        };
        if self.clamp && attack.strategy.is_noise() {
            v.clamp(0.0, 1.0)
        } else {
            v
        }
    }

    /// Overwrites the compromised agents' states in place for round `k`.
    pub fn inject_into(&self, x: &mut [f64], k: u64, ctx: &AttackContext) {
        if k < self.start_round {
            return;
        }
        for a in &self.agents {
            x[a.agent] = self.value_at(a, k, ctx);
        }
    }
}

/// Returns `state` with the compromised agents' broadcasts for round `k`.
pub fn inject(spec: &AttackSpec, state: &NetworkState, k: u64, ctx: &AttackContext) -> Result<NetworkState> {
    spec.validate(state.n())?;
    let mut out = state.clone();
    spec.inject_into(&mut out.x, k, ctx);
    Ok(out)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent reproducible seed from a parent seed and labels.
pub fn derive_seed(seed: u64, labels: &[u64]) -> u64 {
    labels.iter().fold(splitmix64(seed), |acc, &l| splitmix64(acc ^ splitmix64(l)))
}

fn round_rng(seed: u64, agent: AgentId, k: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x00A7_7AC4, agent as u64, k]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repc::normalize_initial;

    fn ctx(seed: u64) -> AttackContext {
        let (initial, map) = normalize_initial(&[1.0, 0.0, 3.0, 1.2, 2.5]);
        AttackContext { seed, map, initial }
    }

    fn spec(strategy: Strategy) -> AttackSpec {
        AttackSpec {
            agents: vec![AgentAttack { agent: 0, strategy }],
            ..Default::default()
        }
    }

    fn state() -> NetworkState {
        let x = ctx(0).initial;
        NetworkState { k: 0, c: vec![vec![1.0; 5]; 5], x }
    }

    #[test]
    fn round_zero_is_untouched() {
        let s = spec(Strategy::Constant { value: 0.9 });
        assert_eq!(inject(&s, &state(), 0, &ctx(1)).unwrap(), state());
    }

    #[test]
    fn constant_overwrites_attacked_only() {
        let s = spec(Strategy::Constant { value: 0.9 });
        for k in 1..5 {
            let out = inject(&s, &state(), k, &ctx(1)).unwrap();
            assert_eq!(out.x[0], 0.9);
            assert_eq!(&out.x[1..], &state().x[1..]);
        }
    }

    #[test]
    fn converging_is_geometric() {
        let s = spec(Strategy::Converging { target: 0.8, rate: 0.5 });
        let c = ctx(0);
        let x0 = c.initial[0];
        for k in 1..30u64 {
            let v = s.value_at(&s.agents[0], k, &c);
            let expect = 0.8 + (x0 - 0.8) * 0.5f64.powi(k as i32);
            assert!((v - expect).abs() < 1e-15);
        }
        assert!((s.value_at(&s.agents[0], 60, &c) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn noise_is_reproducible_and_clamped() {
        let s = spec(Strategy::Gaussian { mu: 0.5, sigma: 0.2 });
        let a: Vec<f64> = (1..50).map(|k| s.value_at(&s.agents[0], k, &ctx(7))).collect();
        let b: Vec<f64> = (1..50).map(|k| s.value_at(&s.agents[0], k, &ctx(7))).collect();
        let other: Vec<f64> = (1..50).map(|k| s.value_at(&s.agents[0], k, &ctx(8))).collect();
        assert_eq!(a, b);
        assert_ne!(a, other);

        let wide = spec(Strategy::Gaussian { mu: 0.5, sigma: 5.0 });
        assert!((1..200).all(|k| (0.0..=1.0).contains(&wide.value_at(&wide.agents[0], k, &ctx(3)))));
        let unclamped = AttackSpec { clamp: false, ..wide.clone() };
        assert!((1..200).any(|k| !(0.0..=1.0).contains(&unclamped.value_at(&unclamped.agents[0], k, &ctx(3)))));
    }

    #[test]
    fn raw_units_are_mapped() {
        let s = AttackSpec { units: Units::Raw, ..spec(Strategy::Constant { value: 1.5 }) };
        assert!((s.value_at(&s.agents[0], 1, &ctx(0)) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn replay_holds_last_value() {
        let s = spec(Strategy::Replay { values: vec![0.1, 0.2, 0.3] });
        let v: Vec<f64> = (1..6).map(|k| s.value_at(&s.agents[0], k, &ctx(0))).collect();
        assert_eq!(v, vec![0.1, 0.2, 0.3, 0.3, 0.3]);
    }

    #[test]
    fn validation() {
        let mut s = spec(Strategy::Constant { value: 0.1 });
        s.agents.push(AgentAttack { agent: 9, strategy: Strategy::Gaussian { mu: 0.0, sigma: -1.0 } });
        s.start_round = 0;
        match s.validate(5) {
            Err(Error::Config(errs)) => assert_eq!(errs.len(), 3, "{errs:?}"),
            other => panic!("expected config error, got {other:?}"),
        }
        assert!(inject(&s, &state(), 1, &ctx(0)).is_err());
    }

    #[test]
    fn empty_attack_is_identity() {
        let s = AttackSpec::none();
        for k in 0..10 {
            assert_eq!(inject(&s, &state(), k, &ctx(0)).unwrap(), state());
        }
    }

    #[test]
    fn descriptor_json() {
        let a: AgentAttack = serde_json::from_str(r#"{"agent": 0, "kind": "gaussian", "mu": 0.5, "sigma": 0.2}"#).unwrap();
        assert_eq!(a.strategy, Strategy::Gaussian { mu: 0.5, sigma: 0.2 });
    }
}
