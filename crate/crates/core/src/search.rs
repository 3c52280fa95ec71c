//! Backward best-first search over partial structures, a matched forward
//! search, exhaustive forward enumeration and the plan validator.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};
use web_time::Instant;

use ordered_float::OrderedFloat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::collision::{resample, state_in_collision};
use crate::config::HeuristicKind;
use crate::kinematics::pose_distance;
use crate::model::{addition_candidates, grounded_connected, removal_candidates, BarStructure, ElementId, PartialStructure};
use crate::motion::{element_frame, MotionError, PlanContext, TrajectoryKind};
use crate::skeleton::{evaluate_element, matches_skeleton, scene_for, splice, ActionKind, ConstructionPlan, ElementStep, SpliceError};
use crate::stiffness::{check_stiffness, greedy_stiffness_sequence, StiffnessChecker};

/// Per-element heuristic values; lower values are removed first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heuristic {
    pub kind: HeuristicKind,
    pub values: Vec<f64>,
    /// The precomputed construction sequence for stiff-plan.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence: Option<Vec<ElementId>>,
}

impl Heuristic {
    pub fn value(&self, e: ElementId) -> f64 {
        self.values[e]
    }
}

/// h(e) = −(height of the element midpoint above z = 0).
pub fn heuristic_euclidean(structure: &BarStructure) -> Heuristic {
    Heuristic {
        kind: HeuristicKind::EuclideanDist,
        values: (0..structure.num_elements()).map(|e| -structure.midpoint(e).z).collect(),
        sequence: None,
    }
}

/// h(S[i]) = −i for the greedy stiffness-only sequence S; falls back to the
/// euclidean heuristic when no sequence exists.
pub fn heuristic_stiffplan(structure: &BarStructure, checker: &mut StiffnessChecker) -> Heuristic {
    match greedy_stiffness_sequence(structure, checker) {
        Ok(seq) => {
            let mut values = vec![0.0; structure.num_elements()];
            for (i, &e) in seq.iter().enumerate() {
                values[e] = -(i as f64);
            }
            Heuristic {
                kind: HeuristicKind::StiffPlan,
                values,
                sequence: Some(seq),
            }
        }
        Err(err) => {
            log::warn!("no stiffness-only sequence ({err}); falling back to euclidean heuristic");
            heuristic_euclidean(structure)
        }
    }
}

pub fn build_heuristic(kind: HeuristicKind, structure: &BarStructure, checker: &mut StiffnessChecker) -> Heuristic {
    match kind {
        HeuristicKind::EuclideanDist => heuristic_euclidean(structure),
        HeuristicKind::StiffPlan => heuristic_stiffplan(structure, checker),
    }
}

/// Independent random stream for evaluating `element` on top of `built`.
pub fn evaluation_rng(seed: u64, built: &PartialStructure, element: ElementId) -> ChaCha8Rng {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    ChaCha8Rng::seed_from_u64(mix(seed ^ mix(built.digest() ^ mix(element as u64))))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Backward,
    Forward,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintChecks {
    pub stiffness: usize,
    pub stiffness_cache_hits: usize,
    pub geometric: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub heuristic: f64,
    pub search: f64,
    pub splice: f64,
    pub validate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchStats {
    pub direction: Direction,
    pub heuristic: HeuristicKind,
    pub elements: usize,
    pub states_expanded: usize,
    pub states_generated: usize,
    pub constraint_checks: ConstraintChecks,
    pub dead_ends: usize,
    pub backtracks: usize,
    /// Fewest remaining elements (backward) or most built (forward) reached.
    pub deepest: usize,
    pub wall_time: PhaseTimes,
    pub outcome: String,
}

/// Priority key: (elements still to handle, h, element id, partial).
pub type Key = (usize, OrderedFloat<f64>, ElementId, PartialStructure);

/// Records every pop for checking the queue discipline and re-expansion.
#[derive(Clone, Debug, Default)]
pub struct QueueTrace {
    /// (popped key, smallest key present in the queue just before the pop).
    pub pops: Vec<(Key, Key)>,
    pub expanded: Vec<PartialStructure>,
}

#[derive(Clone, Debug, Default)]
pub struct SearchOptions {
    pub instrument: bool,
}

#[derive(Debug)]
pub enum SearchFailure {
    /// The full structure already violates the stiffness tolerance.
    FullStructureTooFlexible { max_translation_norm: f64 },
    /// Search space exhausted under the candidate sets and budgets.
    Exhausted,
    /// Wall-clock or expansion budget exceeded.
    Timeout,
    /// A sequence was found but could not be joined into a plan.
    Splice(SpliceError),
    /// The spliced plan failed validation.
    Invalid(Vec<Violation>),
}

#[derive(Debug)]
pub struct SearchResult {
    pub outcome: Result<ConstructionPlan, SearchFailure>,
    /// Construction sequence found by the search (before splicing), if any.
    pub sequence: Option<Vec<ElementId>>,
    pub stats: SearchStats,
    pub trace: Option<QueueTrace>,
}

struct Node {
    partial: PartialStructure,
    parent: Option<usize>,
    step: Option<ElementStep>,
}

/// Best-first search from the complete structure (backward) or the empty
/// one (forward). Both apply the same stiffness and geometric checks to each
/// (built, element) pair.
pub fn best_first(
    ctx: &PlanContext,
    heuristic: &Heuristic,
    direction: Direction,
    options: &SearchOptions,
) -> SearchResult {
    let t0 = Instant::now();
    let s = ctx.structure;
    let cfg = ctx.config;
    let n = s.members().len();
    let mut checker = StiffnessChecker::new(cfg.tolerance);
    let mut stats = SearchStats {
        direction,
        heuristic: heuristic.kind,
        elements: n,
        states_expanded: 0,
        states_generated: 0,
        constraint_checks: ConstraintChecks::default(),
        dead_ends: 0,
        backtracks: 0,
        deepest: n,
        wall_time: PhaseTimes::default(),
        outcome: String::new(),
    };
    let mut trace = options.instrument.then(QueueTrace::default);
    let full = s.full_partial();
    let finish = |mut stats: SearchStats, outcome: Result<ConstructionPlan, SearchFailure>, sequence, trace, t: Instant| {
        stats.wall_time.search = t.elapsed().as_secs_f64() - stats.wall_time.splice - stats.wall_time.validate;
        stats.outcome = match &outcome {
            Ok(_) => "plan".into(),
            Err(SearchFailure::FullStructureTooFlexible { .. }) => "infeasible-stiffness".into(),
            Err(SearchFailure::Exhausted) => "infeasible".into(),
            Err(SearchFailure::Timeout) => "timeout".into(),
            Err(SearchFailure::Splice(_)) => "splice-failed".into(),
            Err(SearchFailure::Invalid(_)) => "invalid".into(),
        };
        SearchResult { outcome, sequence, stats, trace }
    };

    let full_verdict = checker.check(s, &full);
    stats.constraint_checks.stiffness += 1;
    if !full_verdict.ok {
        return finish(
            stats,
            Err(SearchFailure::FullStructureTooFlexible {
                max_translation_norm: full_verdict.max_translation_norm,
            }),
            None,
            trace,
            t0,
        );
    }

    let (root, goal) = match direction {
        Direction::Backward => (full.clone(), PartialStructure::empty(s.num_elements())),
        Direction::Forward => (PartialStructure::empty(s.num_elements()), full.clone()),
    };
    let remaining = |p: &PartialStructure| match direction {
        Direction::Backward => p.len(),
        Direction::Forward => n - p.len(),
    };
    let mut nodes = vec![Node {
        partial: root.clone(),
        parent: None,
        step: None,
    }];
    let mut seen: HashSet<PartialStructure> = HashSet::from([root.clone()]);
    let mut heap: BinaryHeap<Reverse<(Key, usize)>> = BinaryHeap::new();
    heap.push(Reverse(((remaining(&root), OrderedFloat(f64::NEG_INFINITY), 0, root), 0)));
    let mut last_expanded: Option<usize> = None;

    loop {
        if t0.elapsed().as_secs_f64() > cfg.time_limit || cfg.max_expansions.is_some_and(|m| stats.states_expanded >= m) {
            return finish(stats, Err(SearchFailure::Timeout), None, trace, t0);
        }
        if let Some(tr) = trace.as_mut() {
            if let Some(min) = heap.iter().map(|Reverse((k, _))| k).min().cloned() {
                let Reverse((top, _)) = heap.peek().unwrap();
                tr.pops.push((top.clone(), min));
            }
        }
        let Some(Reverse((_, idx))) = heap.pop() else {
            return finish(stats, Err(SearchFailure::Exhausted), None, trace, t0);
        };
        let partial = nodes[idx].partial.clone();
        if partial == goal {
            let mut steps = Vec::new();
            let mut cur = Some(idx);
            while let Some(i) = cur {
                if let Some(st) = nodes[i].step.take() {
                    steps.push(st);
                }
                cur = nodes[i].parent;
            }
            if direction == Direction::Forward {
                steps.reverse();
            }
            let sequence: Vec<ElementId> = steps.iter().map(|st| st.element).collect();
            let ts = Instant::now();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let plan = splice(ctx, steps, &ctx.robot.home, &mut rng);
            stats.wall_time.splice = ts.elapsed().as_secs_f64();
            let plan = match plan {
                Ok(p) => p,
                Err(e) => return finish(stats, Err(SearchFailure::Splice(e)), Some(sequence), trace, t0),
            };
            let tv = Instant::now();
            let report = validate_plan(ctx, &plan);
            stats.wall_time.validate = tv.elapsed().as_secs_f64();
            let outcome = if report.is_empty() { Ok(plan) } else { Err(SearchFailure::Invalid(report)) };
            return finish(stats, outcome, Some(sequence), trace, t0);
        }

        stats.states_expanded += 1;
        if let Some(tr) = trace.as_mut() {
            tr.expanded.push(partial.clone());
        }
        if last_expanded.is_some() && nodes[idx].parent != last_expanded {
            stats.backtracks += 1;
        }
        last_expanded = Some(idx);

        // (element, built-before, successor partial, key h)
        let mut candidates: Vec<(ElementId, PartialStructure, PartialStructure, f64)> = match direction {
            Direction::Backward => removal_candidates(s, &partial)
                .into_iter()
                .map(|e| {
                    let next = partial.without(e);
                    (e, next.clone(), next, heuristic.value(e))
                })
                .collect(),
            Direction::Forward => addition_candidates(s, &partial)
                .into_iter()
                .map(|e| (e, partial.clone(), partial.with(e), -heuristic.value(e)))
                .collect(),
        };
        candidates.sort_by(|a, b| a.3.total_cmp(&b.3).then(a.0.cmp(&b.0)));

        let mut admitted = 0;
        for (e, built, next, h) in candidates {
            if seen.contains(&next) {
                continue;
            }
            let with_e = built.with(e);
            let hits = checker.cache_hits;
            let verdict = checker.check(s, &with_e);
            stats.constraint_checks.stiffness += 1;
            stats.constraint_checks.stiffness_cache_hits += checker.cache_hits - hits;
            if !verdict.ok {
                continue;
            }
            stats.constraint_checks.geometric += 1;
            let mut rng = evaluation_rng(cfg.seed, &built, e);
            let Ok(step) = evaluate_element(ctx, &built, e, &ctx.robot.home, &mut rng) else {
                continue;
            };
            admitted += 1;
            stats.states_generated += 1;
            stats.deepest = stats.deepest.min(remaining(&next));
            seen.insert(next.clone());
            nodes.push(Node {
                partial: next.clone(),
                parent: Some(idx),
                step: Some(step),
            });
            heap.push(Reverse(((remaining(&next), OrderedFloat(h), e, next), nodes.len() - 1)));
        }
        if admitted == 0 {
            stats.dead_ends += 1;
        }
    }
}

pub fn backward_plan(ctx: &PlanContext, heuristic: &Heuristic, options: &SearchOptions) -> SearchResult {
    best_first(ctx, heuristic, Direction::Backward, options)
}

pub fn forward_plan(ctx: &PlanContext, heuristic: &Heuristic, options: &SearchOptions) -> SearchResult {
    best_first(ctx, heuristic, Direction::Forward, options)
}

/// Builds the configured heuristic and runs the search in `direction`;
/// heuristic construction time is reported in the stats.
pub fn run_search(ctx: &PlanContext, direction: Direction, options: &SearchOptions) -> (Heuristic, SearchResult) {
    let t = Instant::now();
    let mut checker = StiffnessChecker::new(ctx.config.tolerance);
    let heuristic = build_heuristic(ctx.config.heuristic, ctx.structure, &mut checker);
    let elapsed = t.elapsed().as_secs_f64();
    let mut result = best_first(ctx, &heuristic, direction, options);
    result.stats.wall_time.heuristic = elapsed;
    (heuristic, result)
}

/// Largest structure accepted by [`forward_bruteforce`].
pub const BRUTEFORCE_LIMIT: usize = 8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("exhaustive enumeration is limited to {BRUTEFORCE_LIMIT} elements, structure has {0}")]
pub struct TooLarge(pub usize);

/// Every valid construction sequence, checking stiffness and optionally
/// geometry with the same rules as the searches.
pub fn forward_bruteforce(ctx: &PlanContext, geometry: bool, first_only: bool) -> Result<Vec<Vec<ElementId>>, TooLarge> {
    let s = ctx.structure;
    let n = s.members().len();
    if n > BRUTEFORCE_LIMIT {
        return Err(TooLarge(n));
    }
    struct Dfs<'a, 'b> {
        ctx: &'a PlanContext<'b>,
        geometry: bool,
        first_only: bool,
        checker: StiffnessChecker,
        geo: HashMap<(PartialStructure, ElementId), bool>,
        out: Vec<Vec<ElementId>>,
    }
    impl Dfs<'_, '_> {
        fn run(&mut self, built: &PartialStructure, seq: &mut Vec<ElementId>) {
            let s = self.ctx.structure;
            if seq.len() == s.members().len() {
                self.out.push(seq.clone());
                return;
            }
            for e in addition_candidates(s, built) {
                if self.first_only && !self.out.is_empty() {
                    return;
                }
                let next = built.with(e);
                if !self.checker.check(s, &next).ok {
                    continue;
                }
                if self.geometry {
                    let key = (built.clone(), e);
                    let ok = match self.geo.get(&key) {
                        Some(v) => *v,
                        None => {
                            let mut rng = evaluation_rng(self.ctx.config.seed, built, e);
                            let v = evaluate_element(self.ctx, built, e, &self.ctx.robot.home, &mut rng).is_ok();
                            self.geo.insert(key, v);
                            v
                        }
                    };
                    if !ok {
                        continue;
                    }
                }
                seq.push(e);
                self.run(&next, seq);
                seq.pop();
            }
        }
    }
    let mut dfs = Dfs {
        ctx,
        geometry,
        first_only,
        checker: StiffnessChecker::new(ctx.config.tolerance),
        geo: HashMap::new(),
        out: vec![],
    };
    dfs.run(&PartialStructure::empty(s.num_elements()), &mut vec![]);
    Ok(dfs.out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    Skeleton,
    Sequence,
    Connectivity,
    Stiffness,
    Collision,
    Attachment,
    Continuity,
    JointLimits,
    Kinematics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Construction step (index into the sequence); `None` for plan-level issues
    /// and the final transit.
    pub step: Option<usize>,
    pub kind: ViolationKind,
    pub message: String,
}

/// Tool pose tolerance when checking that primitives reach their targets.
const POSE_CHECK_TOLERANCE: (f64, f64) = (1e-3, 1e-2);

/// Replays `plan` forward and lists every violation.
pub fn validate_plan(ctx: &PlanContext, plan: &ConstructionPlan) -> Vec<Violation> {
    let s = ctx.structure;
    let robot = ctx.robot;
    let mut out = Vec::new();
    let mut push = |step: Option<usize>, kind: ViolationKind, message: String| out.push(Violation { step, kind, message });

    if plan.mode != s.mode {
        push(None, ViolationKind::Skeleton, format!("plan mode {} does not match structure mode {}", plan.mode, s.mode));
    }
    if !matches_skeleton(s.mode, &plan.flattened()) {
        push(None, ViolationKind::Skeleton, format!("action list does not match the {} skeleton", s.mode));
    }
    let step_elements: Vec<ElementId> = plan.steps.iter().map(|st| st.element).collect();
    if step_elements != plan.sequence {
        push(None, ViolationKind::Sequence, "sequence does not match the element steps".into());
    }
    let mut built = PartialStructure::empty(s.num_elements());
    for (i, &e) in plan.sequence.iter().enumerate() {
        if e >= s.num_elements() || s.element(e).is_connector() {
            push(Some(i), ViolationKind::Sequence, format!("element {e} is not a bar of the structure"));
            return out;
        }
        if built.contains(e) {
            push(Some(i), ViolationKind::Sequence, format!("element {e} is built twice"));
        }
        built.insert(e);
    }
    let missing: Vec<ElementId> = s.members().iter().copied().filter(|&m| !built.contains(m)).collect();
    if !missing.is_empty() {
        push(None, ViolationKind::Sequence, format!("elements never built: {missing:?}"));
    }

    let mut built = PartialStructure::empty(s.num_elements());
    let mut prev_config = robot.home.clone();
    let mut prev: Option<ElementId> = None;
    let check_traj = |push: &mut dyn FnMut(Option<usize>, ViolationKind, String),
                      step: Option<usize>,
                      t: &crate::motion::Trajectory,
                      built: &PartialStructure,
                      element: Option<ElementId>,
                      prev: Option<ElementId>,
                      prev_config: &mut crate::kinematics::Configuration| {
        if t.waypoints.is_empty() {
            push(step, ViolationKind::Continuity, format!("{:?} trajectory has no waypoints", t.kind));
            return;
        }
        if t.first() != prev_config {
            push(step, ViolationKind::Continuity, format!("{:?} does not start where the previous motion ended", t.kind));
        }
        *prev_config = t.last().clone();
        if let Some(bad) = t.waypoints.iter().position(|q| !robot.within_limits(q)) {
            push(step, ViolationKind::JointLimits, format!("{:?} waypoint {bad} violates joint limits", t.kind));
            return;
        }
        let expect_attached = t.kind.carries_element();
        match (&t.attached, expect_attached) {
            (Some(a), true) if Some(a.element) == element => {}
            (None, false) => {}
            _ => push(step, ViolationKind::Attachment, format!("{:?} has wrong attachment", t.kind)),
        }
        let spec = scene_for(ctx, t.kind, built, element, prev, if expect_attached { t.attached.as_ref() } else { None });
        let scene = spec.scene(ctx);
        let states = resample(&t.waypoints, ctx.config.collision.max_joint_step);
        if let Some(k) = states
            .iter()
            .position(|q| state_in_collision(scene.world, robot, q, scene.held.as_ref(), &scene.ignore, &scene.params))
        {
            push(step, ViolationKind::Collision, format!("{:?} collides at resampled state {k}", t.kind));
        }
    };

    for (i, st) in plan.steps.iter().enumerate() {
        let e = st.element;
        if e >= s.num_elements() {
            break;
        }
        let with_e = built.with(e);
        if !grounded_connected(s, &with_e) {
            push(Some(i), ViolationKind::Connectivity, format!("element {e} is not connected to the grounded structure"));
        }
        let v = check_stiffness(s, &with_e, ctx.config.tolerance);
        if !v.ok {
            push(
                Some(i),
                ViolationKind::Stiffness,
                format!("deflection {:.6e} m exceeds tolerance {:.6e} m", v.max_translation_norm, ctx.config.tolerance),
            );
        }
        let kinds: Vec<ActionKind> = st.actions.iter().map(|a| a.kind).collect();
        let mut grasp = None;
        for a in &st.actions {
            let tk: Vec<TrajectoryKind> = a.trajectories.iter().map(|t| t.kind).collect();
            if tk != a.kind.trajectory_kinds() {
                push(Some(i), ViolationKind::Skeleton, format!("{:?} action carries {:?}", a.kind, tk));
                continue;
            }
            if a.element != Some(e) {
                push(Some(i), ViolationKind::Skeleton, format!("{:?} action names element {:?}, expected {e}", a.kind, a.element));
            }
            for t in &a.trajectories {
                check_traj(&mut push, Some(i), t, &built, Some(e), prev, &mut prev_config);
                if let Some(att) = &t.attached {
                    match grasp {
                        None => grasp = Some(att.grasp),
                        Some(g) if g == att.grasp => {}
                        Some(_) => push(Some(i), ViolationKind::Attachment, "grasp changes while holding the element".into()),
                    }
                }
            }
            // primitives must reach their geometric targets
            let reach = |q: &crate::kinematics::Configuration, target: &crate::kinematics::Pose| {
                let (dp, dr) = pose_distance(&robot.tool_pose(q).expect("dimension"), target);
                dp <= POSE_CHECK_TOLERANCE.0 && dr <= POSE_CHECK_TOLERANCE.1
            };
            match a.kind {
                ActionKind::Extrude if !a.trajectories.is_empty() => {
                    let t = &a.trajectories[0];
                    let (pa, pb) = s.endpoints(e);
                    let p0 = robot.tool_pose(t.first()).expect("dimension").translation.vector;
                    let p1 = robot.tool_pose(t.last()).expect("dimension").translation.vector;
                    let ok = |x: &nalgebra::Vector3<f64>, y: &nalgebra::Point3<f64>| (x - y.coords).norm() <= POSE_CHECK_TOLERANCE.0;
                    if !((ok(&p0, &pa) && ok(&p1, &pb)) || (ok(&p0, &pb) && ok(&p1, &pa))) {
                        push(Some(i), ViolationKind::Kinematics, "extrusion does not trace the element".into());
                    }
                }
                ActionKind::Place if a.trajectories.len() == 2 => {
                    if let Some(att) = &a.trajectories[0].attached {
                        if !reach(a.trajectories[0].last(), &(element_frame(s, e) * att.grasp)) {
                            push(Some(i), ViolationKind::Kinematics, "place-approach does not reach the design pose".into());
                        }
                    }
                }
                ActionKind::Pick if a.trajectories.len() == 2 => {
                    if let (Some(att), Some(rack)) = (&a.trajectories[1].attached, &ctx.workcell.rack) {
                        if !reach(a.trajectories[0].last(), &(rack.pose * att.grasp)) {
                            push(Some(i), ViolationKind::Kinematics, "pick-approach does not reach the rack grasp".into());
                        }
                    }
                }
                _ => {}
            }
        }
        if !matches_skeleton(s.mode, &[kinds.as_slice(), &[ActionKind::Transit]].concat()) {
            push(Some(i), ViolationKind::Skeleton, format!("step actions {kinds:?} do not match the skeleton"));
        }
        built.insert(e);
        prev = Some(e);
    }
    for t in &plan.final_transit.trajectories {
        check_traj(&mut push, None, t, &built, None, prev, &mut prev_config);
    }
    if prev_config != robot.home {
        push(None, ViolationKind::Continuity, "plan does not return to the home configuration".into());
    }
    out
}

/// Geometric failure reasons are soft; exposed for diagnostics.
pub fn explain_element(ctx: &PlanContext, built: &PartialStructure, element: ElementId) -> Result<(), MotionError> {
    let mut rng = evaluation_rng(ctx.config.seed, built, element);
    evaluate_element(ctx, built, element, &ctx.robot.home, &mut rng).map(|_| ())
}
