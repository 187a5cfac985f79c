//! Trimmed-mean comparison algorithm: every agent drops the `f_trim` largest
//! and `f_trim` smallest values it hears and averages what is left.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repc::NetworkState;
use crate::topology::{AgentId, Topology};

/// Where the agent's own value enters the trimmed mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelfMode {
    /// Trim among proper neighbours and average the survivors only.
    #[default]
    Exclude,
    /// Trim among proper neighbours, then average self with the survivors (W-MSR).
    Keep,
    /// The own value joins the trim pool like any other.
    Pool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrimParams {
    pub f_trim: usize,
    pub self_mode: SelfMode,
}

impl Default for TrimParams {
    fn default() -> Self {
        TrimParams { f_trim: 1, self_mode: SelfMode::Exclude }
    }
}

impl TrimParams {
    pub fn validate(&self) -> Result<()> {
        if self.f_trim < 1 {
            return Err(Error::config("f_trim must be at least 1"));
        }
        Ok(())
    }
}

/// Mean of `pool` after dropping `f` values from each end. Ties are broken by
/// agent id, so exactly `f` occurrences leave each end.
pub fn trimmed_mean(pool: &[(AgentId, f64)], f: usize) -> Option<f64> {
    if pool.len() <= 2 * f {
        return None;
    }
    let mut sorted = pool.to_vec();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let kept = &sorted[f..sorted.len() - f];
    Some(kept.iter().map(|p| p.1).sum::<f64>() / kept.len() as f64)
}

/// One synchronous trimmed-mean round. Returns the new state and the agents
/// that held their value because they heard too few neighbours.
pub fn trimmed_step(state: &NetworkState, topo: &Topology, params: &TrimParams) -> (NetworkState, Vec<AgentId>) {
    let f = params.f_trim;
    let mut next = NetworkState {
        k: state.k + 1,
        x: state.x.clone(),
        c: state.c.clone(),
    };
    let mut held = Vec::new();
    for i in 0..state.n() {
        let pool: Vec<(AgentId, f64)> = match params.self_mode {
            SelfMode::Pool => topo.closed(i),
            SelfMode::Exclude | SelfMode::Keep => topo.proper(i),
        }
        .iter()
        .map(|&j| (j, state.x[j]))
        .collect();
        let value = match params.self_mode {
            SelfMode::Keep if pool.len() > 2 * f => {
                let m = trimmed_mean(&pool, f).expect("pool large enough");
                let kept = (pool.len() - 2 * f) as f64;
                Some((state.x[i] + m * kept) / (kept + 1.0))
            }
            SelfMode::Keep => None,
            SelfMode::Exclude | SelfMode::Pool => trimmed_mean(&pool, f),
        };
        match value {
            Some(v) => next.x[i] = v,
            None => held.push(i),
        }
    }
    (next, held)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::make_complete;

    #[test]
    fn pool_trim() {
        let pool: Vec<(usize, f64)> = (0..5).map(|i| (i, i as f64)).collect();
        assert_eq!(trimmed_mean(&pool, 1), Some(2.0));
        assert_eq!(trimmed_mean(&pool[..2], 1), None);
        // Ties: both 0s share the low end, id order decides which one goes.
        assert_eq!(trimmed_mean(&[(0, 0.0), (1, 0.0), (2, 1.0), (3, 5.0)], 1), Some(0.5));
    }

    #[test]
    fn both_modes_on_a_five_pool() {
        let topo = make_complete(5).unwrap();
        let s = NetworkState::initial(vec![2.0, 0.0, 1.0, 3.0, 4.0], &topo);
        for self_mode in [SelfMode::Exclude, SelfMode::Keep, SelfMode::Pool] {
            let (next, held) = trimmed_step(&s, &topo, &TrimParams { f_trim: 1, self_mode });
            assert!(held.is_empty());
            assert_eq!(next.x[0], 2.0);
        }
        // Agent 1 hears {2, 1, 3, 4}: exclude keeps {2, 3}, keep adds its own 0.
        let x1 = |self_mode| trimmed_step(&s, &topo, &TrimParams { f_trim: 1, self_mode }).0.x[1];
        assert_eq!(x1(SelfMode::Exclude), 2.5);
        assert_eq!(x1(SelfMode::Keep), 5.0 / 3.0);
        assert_eq!(x1(SelfMode::Pool), 2.0);
    }

    #[test]
    fn equal_states_are_fixed() {
        let topo = make_complete(4).unwrap();
        let s = NetworkState::initial(vec![0.3; 4], &topo);
        let (next, _) = trimmed_step(&s, &topo, &TrimParams::default());
        assert_eq!(next.x, s.x);
    }

    #[test]
    fn small_neighbourhoods_hold() {
        let topo = Topology::new(3, [(0, 1), (1, 2), (2, 0)]).unwrap();
        let s = NetworkState::initial(vec![0.0, 0.5, 1.0], &topo);
        let (next, held) = trimmed_step(&s, &topo, &TrimParams::default());
        assert_eq!(held, vec![0, 1, 2]);
        assert_eq!(next.x, s.x);
    }
}
