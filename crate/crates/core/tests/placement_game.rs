mod common;

use common::{exact_expectation, World};
use evcity_core::placement_game::{
    best_response, candidate_policies, expected_utility, hypervolume_contains, play_stage, CoverageDirection,
    GameConfig, GameError,
};
use evcity_core::sites::PlacementPolicy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn empty(l: usize) -> [PlacementPolicy; 3] {
    std::array::from_fn(|_| PlacementPolicy::empty(l))
}

fn config(l: usize, cost: f64, weight: f64) -> GameConfig {
    GameConfig {
        weight,
        costs: std::array::from_fn(|_| vec![cost; l]),
        samples: 16,
        ev_scale: 500.0,
        seed: 77,
        ..GameConfig::default()
    }
}

#[test]
fn sampled_utility_agrees_with_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..4 {
        let l = 1 + trial % 2;
        let world = World::random(&mut rng, l, 6);
        let mut cfg = config(l, 0.5, 0.01);
        cfg.samples = 300;
        cfg.rho = rng.random_range(0.2..0.8);
        cfg.seed = trial as u64;
        let known = empty(l);
        let k = trial % 3;
        let policy = PlacementPolicy::full(l);
        let ev = expected_utility(&world.inputs(), &cfg, k, &policy, &known).unwrap();
        let (r, b) = exact_expectation(&world, &cfg, k, &policy, &known);
        let exact = r - ev.placement_cost - cfg.weight * b;
        assert!(
            (ev.expected_utility - exact).abs() <= 3.0 * ev.utility_se.max(1e-12),
            "trial {trial}: sampled {} ± {} vs exact {exact}",
            ev.expected_utility,
            ev.utility_se
        );
    }
}

#[test]
fn without_impact_weight_utility_is_profit() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let world = World::random(&mut rng, 2, 5);
    let cfg = config(2, 0.3, 0.0);
    let ev = expected_utility(&world.inputs(), &cfg, 1, &"11".parse().unwrap(), &empty(2)).unwrap();
    assert_eq!(ev.expected_utility, ev.expected_revenue - ev.placement_cost);
    assert!((ev.placement_cost - 0.6).abs() < 1e-12);
}

#[test]
fn empty_policy_is_worth_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let world = World::random(&mut rng, 2, 5);
    let cfg = config(2, 0.3, 0.01);
    let ev = expected_utility(&world.inputs(), &cfg, 0, &PlacementPolicy::empty(2), &empty(2)).unwrap();
    assert_eq!((ev.expected_revenue, ev.expected_impact, ev.expected_utility), (0.0, 0.0, 0.0));
}

#[test]
fn cheap_profitable_site_is_built() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let world = World::random(&mut rng, 1, 6);
    let cfg = config(1, 1e-3, 0.0);
    let br = best_response(&world.inputs(), &cfg, 0, &empty(1), &PlacementPolicy::empty(1)).unwrap();
    assert_eq!(br.policy, PlacementPolicy(vec![true]));
}

#[test]
fn prohibitive_costs_keep_previous_placements() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let world = World::random(&mut rng, 3, 6);
    let cfg = config(3, 1e6, 0.0);
    let previous: [PlacementPolicy; 3] = ["010", "000", "100"].map(|s| s.parse().unwrap());
    let out = play_stage(&world.inputs(), &cfg, &previous).unwrap();
    assert_eq!(out.policies, previous);
}

#[test]
fn unreachable_coverage_is_infeasible() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let world = World::random(&mut rng, 2, 4);
    let mut cfg = config(2, 0.1, 0.0);
    cfg.coverage_threshold = 100.0;
    cfg.coverage_direction = CoverageDirection::AtLeast;
    cfg.qos.replications = 2;
    match best_response(&world.inputs(), &cfg, 0, &empty(2), &PlacementPolicy::empty(2)) {
        Err(GameError::Infeasible { provider, nearest }) => {
            assert_eq!(provider, 0);
            assert!(nearest.violation > 0.0);
        }
        other => panic!("expected infeasible, got {other:?}"),
    }
}

#[test]
fn argmax_is_the_only_containing_hypervolume() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let world = World::random(&mut rng, 3, 6);
    let cfg = config(3, 1.0, 0.02);
    let br = best_response(&world.inputs(), &cfg, 2, &empty(3), &PlacementPolicy::empty(3)).unwrap();
    for _ in 0..50 {
        let theta: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..5.0)).collect();
        let utility = |e: &evcity_core::placement_game::PolicyEvaluation| {
            let cost: f64 = e.policy.active().iter().map(|&j| theta[j]).sum();
            e.expected_revenue - cost - cfg.weight * e.expected_impact
        };
        let best = br
            .evaluation
            .entries
            .iter()
            .max_by(|a, b| utility(a).total_cmp(&utility(b)))
            .unwrap();
        for e in &br.evaluation.entries {
            let inside = hypervolume_contains(&theta, &e.policy, &br.evaluation, cfg.weight);
            assert_eq!(inside, e.policy == best.policy);
        }
    }
}

#[test]
fn best_response_follows_the_cost_vector() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let world = World::random(&mut rng, 3, 6);
    let mut cfg = config(3, 1.0, 0.0);
    let base = best_response(&world.inputs(), &cfg, 0, &empty(3), &PlacementPolicy::empty(3)).unwrap();
    for _ in 0..5 {
        let theta: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..3.0)).collect();
        cfg.costs[0] = theta.clone();
        let br = best_response(&world.inputs(), &cfg, 0, &empty(3), &PlacementPolicy::empty(3)).unwrap();
        assert!(hypervolume_contains(&theta, &br.policy, &base.evaluation, 0.0));
    }
}

#[test]
fn locked_sites_stay_in_every_candidate_policy() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let world = World::random(&mut rng, 4, 2);
    let locked: PlacementPolicy = "0100".parse().unwrap();
    let all = candidate_policies(&world.candidates, 1, &locked).unwrap();
    assert_eq!(all.len(), 8);
    assert!(all.iter().all(|p| p.contains(&locked)));
}

#[test]
fn same_seed_same_stage() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let world = World::random(&mut rng, 3, 6);
    let cfg = config(3, 0.8, 0.01);
    let a = play_stage(&world.inputs(), &cfg, &empty(3)).unwrap();
    let b = play_stage(&world.inputs(), &cfg, &empty(3)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn invalid_configuration_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let world = World::random(&mut rng, 2, 2);
    for cfg in [
        GameConfig { rho: 1.0, ..config(2, 1.0, 0.0) },
        GameConfig { weight: -1.0, ..config(2, 1.0, 0.0) },
        GameConfig { samples: 0, ..config(2, 1.0, 0.0) },
        config(3, 1.0, 0.0),
        config(2, 0.0, 0.0),
    ] {
        assert!(matches!(
            best_response(&world.inputs(), &cfg, 0, &empty(2), &PlacementPolicy::empty(2)),
            Err(GameError::Config(_))
        ));
    }
}
