//! Property tests for the protocol, the adversary, the baseline and the harness.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use repc_core::adversary::{inject, AgentAttack, AttackContext, AttackSpec, Strategy as Signal};
use repc_core::baseline::{trimmed_mean, trimmed_step, SelfMode, TrimParams};
use repc_core::config::{DetectParams, Scheduler, SimConfig};
use repc_core::harness::{run, DetectionTracker, RepMark};
use repc_core::repc::{
    fmin, normalize_initial, reputation_row, sync_step, AffineMap, NetworkState, RepcParams,
};
use repc_core::topology::{make_complete, make_random_strongly_connected, Topology};

/// Brute-force reading: walk up the distinct values, never stepping onto the maximum.
fn fmin_oracle(values: &[f64], f: usize) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut y = values.iter().copied().fold(f64::INFINITY, f64::min);
    for _ in 1..f {
        let next = values.iter().copied().filter(|&v| v > y).fold(f64::INFINITY, f64::min);
        if next < max {
            y = next;
        }
    }
    y
}

fn params_strategy() -> impl Strategy<Value = RepcParams> {
    (0.01f64..0.99, 1usize..4, any::<bool>(), any::<bool>(), any::<bool>()).prop_map(
        |(epsilon, f, include_self_in_discrepancy, fresh_reputation_in_update, self_weight_in_update)| RepcParams {
            epsilon,
            f,
            include_self_in_discrepancy,
            fresh_reputation_in_update,
            self_weight_in_update,
        },
    )
}

/// A random strongly connected graph with normalized states.
fn network() -> impl Strategy<Value = (Topology, Vec<f64>)> {
    (2usize..10, 0.0f64..1.0, any::<u64>()).prop_flat_map(|(n, p, seed)| {
        let topo = make_random_strongly_connected(n, p, seed).unwrap();
        (Just(topo), prop::collection::vec(0.0f64..=1.0, n))
    })
}

fn permutation(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

proptest! {
    #[test]
    fn fmin_matches_oracle(values in prop::collection::vec(prop::sample::select(vec![-1.0, 0.0, 0.5, 2.0, 7.0]), 1..9), f in 1usize..10) {
        let got = fmin(&values, f).unwrap();
        prop_assert_eq!(got, fmin_oracle(&values, f));
        prop_assert!(values.contains(&got));
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let all_equal = values.iter().all(|&v| v == values[0]);
        prop_assert!(all_equal || got < max);
    }

    #[test]
    fn fmin_ignores_order(mut values in prop::collection::vec(-5.0f64..5.0, 1..12), f in 1usize..6) {
        let a = fmin(&values, f).unwrap();
        values.reverse();
        prop_assert_eq!(a, fmin(&values, f).unwrap());
    }

    #[test]
    fn step_stays_in_convex_hull((topo, x) in network(), params in params_strategy(), rounds in 1usize..6) {
        let mut s = NetworkState::initial(x, &topo);
        for _ in 0..rounds {
            let next = sync_step(&s, &topo, &params);
            for i in 0..topo.n() {
                let hood = topo.neighbors(i).unwrap();
                let lo = hood.iter().map(|&j| s.x[j]).fold(f64::INFINITY, f64::min);
                let hi = hood.iter().map(|&j| s.x[j]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(next.x[i] >= lo - 1e-12 && next.x[i] <= hi + 1e-12,
                    "agent {} left [{}, {}]: {}", i, lo, hi, next.x[i]);
            }
            s = next;
        }
    }

    #[test]
    fn reputation_matrix_invariants((topo, x) in network(), params in params_strategy(), rounds in 0usize..8) {
        let mut s = NetworkState::initial(x, &topo);
        prop_assert!(s.check_reputation_invariants(&topo).is_ok());
        for _ in 0..rounds {
            s = sync_step(&s, &topo, &params);
            if let Err(e) = s.check_reputation_invariants(&topo) {
                return Err(TestCaseError::fail(e));
            }
        }
    }

    #[test]
    fn reputation_row_shape((topo, x) in network(), params in params_strategy(), k in 0u64..400) {
        for i in 0..topo.n() {
            let hood = topo.neighbors(i).unwrap();
            let row = reputation_row(i, &x, hood, k, &params);
            let me = row.index_of(i).unwrap();
            prop_assert_eq!(row.normalized[me], 1.0);
            prop_assert_eq!(row.confident[me], 1.0);
            prop_assert!(row.raw.iter().all(|&r| r <= 1.0));
            prop_assert!(row.confident.iter().all(|&c| c > 0.0 && c <= 1.0));
            for p in 0..hood.len() {
                if row.floored(p) {
                    prop_assert_eq!(row.confident[p], params.confidence_floor(k));
                }
            }
        }
    }

    #[test]
    fn relabeling_commutes_with_step_bitwise((topo, x) in network(), params in params_strategy(), seed in any::<u64>()) {
        let n = topo.n();
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(seed));
        let moved = topo.relabeled(&perm).unwrap();
        let mut px = vec![0.0; n];
        for v in 0..n {
            px[perm[v]] = x[v];
        }
        let a = sync_step(&sync_step(&NetworkState::initial(x, &topo), &topo, &params), &topo, &params);
        let b = sync_step(&sync_step(&NetworkState::initial(px, &moved), &moved, &params), &moved, &params);
        for v in 0..n {
            prop_assert_eq!(a.x[v].to_bits(), b.x[perm[v]].to_bits());
            for u in 0..n {
                prop_assert_eq!(a.c[v][u].to_bits(), b.c[perm[v]][perm[u]].to_bits(), "c[{}][{}]", v, u);
            }
        }
    }

    #[test]
    fn relabeled_graph_keeps_degrees((n, perm) in (2usize..12).prop_flat_map(|n| (Just(n), permutation(n))), p in 0.0f64..1.0, seed in any::<u64>()) {
        let topo = make_random_strongly_connected(n, p, seed).unwrap();
        let moved = topo.relabeled(&perm).unwrap();
        prop_assert_eq!(topo.edge_count(), moved.edge_count());
        for v in 0..n {
            prop_assert_eq!(topo.in_degree(v), moved.in_degree(perm[v]));
        }
    }

    #[test]
    fn normalization_round_trips(x0 in prop::collection::vec(-100.0f64..100.0, 1..10)) {
        let (x, map) = normalize_initial(&x0);
        if map.degenerate {
            prop_assert!(x.iter().all(|&v| v == 0.0));
        } else {
            prop_assert!(x.iter().all(|&v| (0.0..=1.0).contains(&v)));
            for (a, b) in x0.iter().zip(&x) {
                prop_assert!((map.denormalize(*b) - a).abs() <= 1e-9 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn injection_spares_round_zero_and_regular_agents(x in prop::collection::vec(0.0f64..=1.0, 3..8), value in -1.0f64..2.0, k in 0u64..20, seed in any::<u64>()) {
        let n = x.len();
        let topo = make_complete(n).unwrap();
        let spec = AttackSpec {
            agents: vec![
                AgentAttack { agent: 0, strategy: Signal::Constant { value } },
                AgentAttack { agent: 1, strategy: Signal::Gaussian { mu: 0.5, sigma: 0.2 } },
            ],
            ..Default::default()
        };
        let ctx = AttackContext { seed, map: AffineMap { min: 0.0, max: 1.0, degenerate: false }, initial: x.clone() };
        let mut state = NetworkState::initial(x.clone(), &topo);
        state.k = k;
        let out = inject(&spec, &state, k, &ctx).unwrap();
        if k == 0 {
            prop_assert_eq!(&out.x, &x);
        } else {
            prop_assert_eq!(out.x[0], value);
            prop_assert!((0.0..=1.0).contains(&out.x[1]));
        }
        prop_assert_eq!(&out.x[2..], &x[2..]);
        prop_assert_eq!(&out, &inject(&spec, &state, k, &ctx).unwrap());
    }

    #[test]
    fn trimmed_mean_stays_within_survivors(values in prop::collection::vec(-10.0f64..10.0, 1..10), f in 0usize..4) {
        let pool: Vec<(usize, f64)> = values.iter().copied().enumerate().collect();
        match trimmed_mean(&pool, f) {
            None => prop_assert!(values.len() <= 2 * f),
            Some(m) => {
                let mut sorted = values.clone();
                sorted.sort_by(f64::total_cmp);
                let kept = &sorted[f..sorted.len() - f];
                prop_assert!(m >= kept[0] - 1e-12 && m <= kept[kept.len() - 1] + 1e-12);
            }
        }
    }

    #[test]
    fn trimmed_step_stays_in_hull((topo, x) in network(), f_trim in 0usize..3, mode in prop::sample::select(vec![SelfMode::Exclude, SelfMode::Keep, SelfMode::Pool])) {
        let s = NetworkState::initial(x.clone(), &topo);
        let (next, held) = trimmed_step(&s, &topo, &TrimParams { f_trim, self_mode: mode });
        let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(next.x.iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
        for i in held {
            prop_assert_eq!(next.x[i], x[i]);
        }
    }

    #[test]
    fn runs_are_reproducible((topo, x) in network(), seed in any::<u64>(), sched in 0usize..3) {
        let n = topo.n();
        let mut cfg = SimConfig::new(topo, x).with_attack(AttackSpec {
            agents: vec![AgentAttack { agent: n - 1, strategy: Signal::Uniform { mean: 0.4, half_width: 0.3 } }],
            ..Default::default()
        });
        cfg.seed = seed;
        cfg.round_cap = Some(200);
        cfg.scheduler = match sched {
            0 => Scheduler::Synchronous,
            1 => Scheduler::AsyncRandomSubset { min_active: 1 },
            _ => Scheduler::StochasticEdges { edge_prob: 0.7 },
        };
        let (a, b) = (run(&cfg).unwrap(), run(&cfg).unwrap());
        prop_assert_eq!(a.rounds, b.rounds);
        prop_assert_eq!(&a.trace, &b.trace);
        prop_assert_eq!(&a.final_state, &b.final_state);
        prop_assert_eq!(&a.detection, &b.detection);
    }

    #[test]
    fn detection_needs_an_unbroken_streak(horizon in 1usize..6, pattern in prop::collection::vec(any::<bool>(), 1..20)) {
        let mut t = DetectionTracker::new(2, &DetectParams { horizon, ..Default::default() });
        for &floor in &pattern {
            let mark = if floor { RepMark::Floor } else { RepMark::Positive };
            t.observe(&[vec![RepMark::NotEvaluated, mark], vec![RepMark::NotEvaluated; 2]]);
        }
        let streak = pattern.iter().rev().take_while(|&&b| b).count();
        let expect = if pattern.len() < horizon { streak == pattern.len() } else { streak >= horizon };
        let d = t.detection();
        prop_assert_eq!(d.flags.get(&0).is_some_and(|s| s.contains(&1)), expect);
        prop_assert!(!d.flags.contains_key(&1));
    }
}

/// Kept-edge frequency under stochastic delivery matches the edge probability
/// within three standard deviations.
#[test]
fn stochastic_edges_match_their_probability() {
    let topo = make_random_strongly_connected(8, 0.5, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for p in [0.2, 0.5, 0.8] {
        let rounds = 10_000;
        let kept: usize = (0..rounds).map(|_| topo.thinned(p, &mut rng).edge_count()).sum();
        let trials = (rounds * topo.edge_count()) as f64;
        let sigma = (p * (1.0 - p) / trials).sqrt();
        let freq = kept as f64 / trials;
        assert!((freq - p).abs() <= 3.0 * sigma, "p = {p}: observed {freq}, 3σ = {}", 3.0 * sigma);
    }
}

/// Under the asynchronous scheduler every agent is active in a fixed share of
/// rounds: rejection sampling of fair coin subsets with `|A′| ≥ m`.
#[test]
fn async_activity_matches_its_marginal() {
    let n = 5;
    let min_active = 3;
    // P(agent active | at least m of n active) for fair coins.
    let binom = |k: u64| (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
    let accepted: f64 = (min_active..=n).map(binom).sum();
    let with_agent: f64 = (min_active..=n).map(|k| binom(k) * k as f64 / n as f64).sum();
    let p = with_agent / accepted;

    let mut cfg = SimConfig::new(make_complete(n as usize).unwrap(), vec![0.0, 1.0, 2.0, 3.0, 4.0]);
    cfg.scheduler = Scheduler::AsyncRandomSubset { min_active: min_active as usize };
    cfg.round_cap = Some(10_000);
    cfg.delta = 1e-300;
    cfg.seed = 5;
    let r = run(&cfg).unwrap();
    let rounds = r.trace.len();
    for agent in 0..n as usize {
        // An agent that recomputed its reputations was active.
        let active = r.trace.iter().filter(|t| t.marks[agent].iter().any(|&m| m != RepMark::NotEvaluated)).count();
        let freq = active as f64 / rounds as f64;
        let sigma = (p * (1.0 - p) / rounds as f64).sqrt();
        assert!((freq - p).abs() <= 3.0 * sigma, "agent {agent}: observed {freq}, expected {p} ± {}", 3.0 * sigma);
    }
}
