use std::collections::HashSet;

use barplan::config::{HeuristicKind, PlannerConfig};
use barplan::fixtures::{arch, robot_for, stack2, tetrahedron, triangle};
use barplan::model::{BarStructure, PartialStructure};
use barplan::motion::PlanContext;
use barplan::search::{
    best_first, forward_bruteforce, heuristic_euclidean, heuristic_stiffplan, run_search, validate_plan, Direction,
    SearchFailure, SearchOptions, TooLarge, ViolationKind,
};
use barplan::stiffness::{check_stiffness, StiffnessChecker};

fn with_ctx<T>(s: &BarStructure, cfg: &PlannerConfig, f: impl FnOnce(&PlanContext) -> T) -> T {
    let (robot, workcell) = robot_for(s.mode);
    let ctx = PlanContext {
        structure: s,
        robot: &robot,
        workcell: &workcell,
        config: cfg,
    };
    f(&ctx)
}

#[test]
fn euclidean_heuristic_is_negated_midpoint_height() {
    let s = stack2();
    let h = heuristic_euclidean(&s);
    assert_eq!(h.kind, HeuristicKind::EuclideanDist);
    assert_eq!(h.values.len(), 2);
    approx::assert_relative_eq!(h.values[0], -0.075, epsilon = 1e-15);
    approx::assert_relative_eq!(h.values[1], -0.225, epsilon = 1e-15);
    assert!(h.sequence.is_none());
}

#[test]
fn stiffplan_values_follow_the_greedy_sequence() {
    let s = tetrahedron();
    let mut checker = StiffnessChecker::new(0.005);
    let h = heuristic_stiffplan(&s, &mut checker);
    assert_eq!(h.kind, HeuristicKind::StiffPlan);
    let seq = h.sequence.clone().unwrap();
    assert_eq!(seq.len(), 6);
    for (i, &e) in seq.iter().enumerate() {
        assert_eq!(h.value(e), -(i as f64));
    }
    assert_eq!(heuristic_stiffplan(&stack2(), &mut checker).sequence, Some(vec![0, 1]));
}

#[test]
fn stiffplan_falls_back_when_no_sequence_exists() {
    let s = stack2();
    let mut checker = StiffnessChecker::new(1e-12);
    let h = heuristic_stiffplan(&s, &mut checker);
    assert_eq!(h.kind, HeuristicKind::EuclideanDist);
}

#[test]
fn bruteforce_enumerates_every_stiff_order() {
    let cfg = PlannerConfig::default();
    let s = triangle();
    let all = with_ctx(&s, &cfg, |ctx| forward_bruteforce(ctx, false, false)).unwrap();
    assert_eq!(all.len(), 6);
    let distinct: HashSet<_> = all.iter().collect();
    assert_eq!(distinct.len(), 6);

    let s = stack2();
    let all = with_ctx(&s, &cfg, |ctx| forward_bruteforce(ctx, true, false)).unwrap();
    assert_eq!(all, vec![vec![0, 1]]);

    let s = arch();
    let err = with_ctx(&s, &cfg, |ctx| forward_bruteforce(ctx, false, true)).unwrap_err();
    assert_eq!(err, TooLarge(40));
}

#[test]
fn queue_discipline_and_no_reexpansion() {
    let cfg = PlannerConfig::default();
    for s in [triangle(), tetrahedron()] {
        for direction in [Direction::Backward, Direction::Forward] {
            let result = with_ctx(&s, &cfg, |ctx| {
                let mut checker = StiffnessChecker::new(cfg.tolerance);
                let h = heuristic_stiffplan(&s, &mut checker);
                best_first(ctx, &h, direction, &SearchOptions { instrument: true })
            });
            assert!(result.outcome.is_ok(), "{direction:?}: {}", result.stats.outcome);
            let trace = result.trace.unwrap();
            assert!(!trace.pops.is_empty());
            for (popped, min) in &trace.pops {
                assert_eq!(popped, min);
            }
            let unique: HashSet<&PartialStructure> = trace.expanded.iter().collect();
            assert_eq!(unique.len(), trace.expanded.len());
            assert_eq!(trace.expanded.len(), result.stats.states_expanded);
        }
    }
}

#[test]
fn both_directions_return_valid_plans() {
    let cfg = PlannerConfig::default();
    let s = tetrahedron();
    for direction in [Direction::Backward, Direction::Forward] {
        with_ctx(&s, &cfg, |ctx| {
            let (_, result) = run_search(ctx, direction, &SearchOptions::default());
            let plan = result.outcome.expect("plan");
            assert_eq!(plan.sequence.len(), 6);
            assert!(validate_plan(ctx, &plan).is_empty());
            assert_eq!(result.sequence, Some(plan.sequence.clone()));
            assert_eq!(result.stats.outcome, "plan");
        });
    }
}

#[test]
fn same_seed_gives_identical_plans() {
    let cfg = PlannerConfig {
        seed: 11,
        ..PlannerConfig::default()
    };
    let s = tetrahedron();
    let run = || {
        with_ctx(&s, &cfg, |ctx| {
            let (_, r) = run_search(ctx, Direction::Backward, &SearchOptions::default());
            serde_json::to_string(&r.outcome.unwrap()).unwrap()
        })
    };
    assert_eq!(run(), run());
}

#[test]
fn too_flexible_structure_is_reported_up_front() {
    let cfg = PlannerConfig {
        tolerance: 1e-9,
        ..PlannerConfig::default()
    };
    let s = stack2();
    with_ctx(&s, &cfg, |ctx| {
        let (_, r) = run_search(ctx, Direction::Backward, &SearchOptions::default());
        assert!(matches!(r.outcome, Err(SearchFailure::FullStructureTooFlexible { .. })));
        assert_eq!(r.stats.states_expanded, 0);
        assert_eq!(r.stats.outcome, "infeasible-stiffness");
    });
}

#[test]
fn expansion_budget_times_out() {
    let cfg = PlannerConfig {
        max_expansions: Some(1),
        ..PlannerConfig::default()
    };
    let s = triangle();
    with_ctx(&s, &cfg, |ctx| {
        let (_, r) = run_search(ctx, Direction::Backward, &SearchOptions::default());
        assert!(matches!(r.outcome, Err(SearchFailure::Timeout)));
        assert_eq!(r.stats.states_expanded, 1);
    });
}

#[test]
fn validator_flags_swapped_steps_and_tightened_tolerance() {
    let cfg = PlannerConfig::default();
    let s = stack2();
    let plan = with_ctx(&s, &cfg, |ctx| run_search(ctx, Direction::Backward, &SearchOptions::default()).1.outcome.unwrap());

    let mut swapped = plan.clone();
    swapped.steps.swap(0, 1);
    swapped.sequence.swap(0, 1);
    let report = with_ctx(&s, &cfg, |ctx| validate_plan(ctx, &swapped));
    assert!(
        report.iter().any(|v| v.kind == ViolationKind::Connectivity && v.step == Some(0)),
        "{report:?}"
    );

    // between the single-bar and the two-bar deflections
    let one = check_stiffness(&s, &PartialStructure::from_ids(2, [0]), 1.0).max_translation_norm;
    let two = check_stiffness(&s, &s.full_partial(), 1.0).max_translation_norm;
    assert!(one < two);
    let tight = PlannerConfig {
        tolerance: (one + two) / 2.0,
        ..PlannerConfig::default()
    };
    let report = with_ctx(&s, &tight, |ctx| validate_plan(ctx, &plan));
    assert_eq!(report.len(), 1, "{report:?}");
    assert_eq!(report[0].kind, ViolationKind::Stiffness);
    assert_eq!(report[0].step, Some(1));

    let mut truncated = plan.clone();
    truncated.steps.pop();
    truncated.sequence.pop();
    let report = with_ctx(&s, &cfg, |ctx| validate_plan(ctx, &truncated));
    assert!(report.iter().any(|v| v.kind == ViolationKind::Sequence));
}
