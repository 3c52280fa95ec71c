//! Plan skeletons: per-mode action templates, per-element evaluation and
//! splicing of element steps into a full construction plan.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::collision::{CollisionWorld, HeldElement, IgnoreSet};
use crate::kinematics::Configuration;
use crate::model::{BarStructure, ElementId, Mode, PartialStructure};
use crate::motion::{
    element_local_capsule, grasp_candidates, held_element, place_ignore, plan_extrude, plan_joint_motion, plan_pick,
    plan_place, Attachment, MotionError, PlanContext, Scene, Trajectory, TrajectoryKind,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionKind {
    Transit,
    Pick,
    Transfer,
    Place,
    Extrude,
}

impl ActionKind {
    /// Parameter slots of the template.
    pub fn slots(self) -> &'static [&'static str] {
        match self {
            ActionKind::Transit => &["partial", "previous_trajectory", "next_trajectory", "transit_trajectory"],
            ActionKind::Pick => &["partial", "element", "grasp", "pick_trajectory"],
            ActionKind::Transfer => &["partial", "element", "grasp", "pick_trajectory", "place_trajectory", "transfer_trajectory"],
            ActionKind::Place => &["partial", "element", "grasp", "place_trajectory"],
            ActionKind::Extrude => &["partial", "element", "extrude_trajectory"],
        }
    }

    /// Trajectory kinds an action of this kind carries, in order.
    pub fn trajectory_kinds(self) -> &'static [TrajectoryKind] {
        match self {
            ActionKind::Transit => &[TrajectoryKind::Transit],
            ActionKind::Pick => &[TrajectoryKind::PickApproach, TrajectoryKind::PickRetreat],
            ActionKind::Transfer => &[TrajectoryKind::Transfer],
            ActionKind::Place => &[TrajectoryKind::PlaceApproach, TrajectoryKind::PlaceRetreat],
            ActionKind::Extrude => &[TrajectoryKind::Extrude],
        }
    }
}

/// Templates repeated once per element.
pub fn skeleton_iteration(mode: Mode) -> &'static [ActionKind] {
    match mode {
        Mode::Extrusion => &[ActionKind::Transit, ActionKind::Extrude],
        Mode::Assembly => &[ActionKind::Transit, ActionKind::Pick, ActionKind::Transfer, ActionKind::Place],
    }
}

/// Whether `actions` is n repetitions of the mode's iteration plus a final transit.
pub fn matches_skeleton(mode: Mode, actions: &[ActionKind]) -> bool {
    let it = skeleton_iteration(mode);
    let Some((last, body)) = actions.split_last() else {
        return false;
    };
    *last == ActionKind::Transit && body.len() % it.len() == 0 && body.chunks(it.len()).all(|c| c == it)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element: Option<ElementId>,
    pub trajectories: Vec<Trajectory>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElementStep {
    pub element: ElementId,
    /// Elements already built when this step was planned, ascending.
    pub planned_on: Vec<ElementId>,
    pub actions: Vec<Action>,
}

impl ElementStep {
    pub fn entry(&self) -> &Configuration {
        self.actions[0].trajectories[0].first()
    }

    pub fn exit(&self) -> &Configuration {
        self.actions.last().unwrap().trajectories.last().unwrap().last()
    }

    pub fn trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        self.actions.iter().flat_map(|a| a.trajectories.iter())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstructionPlan {
    pub mode: Mode,
    pub sequence: Vec<ElementId>,
    pub steps: Vec<ElementStep>,
    pub final_transit: Action,
}

impl ConstructionPlan {
    pub fn flattened(&self) -> Vec<ActionKind> {
        self.steps
            .iter()
            .flat_map(|s| s.actions.iter().map(|a| a.kind))
            .chain(std::iter::once(self.final_transit.kind))
            .collect()
    }
}

/// Collision setup for one trajectory: world, attachment and ignore set.
pub struct SceneSpec {
    pub world: CollisionWorld,
    pub held: Option<HeldElement>,
    pub ignore: IgnoreSet,
}

/// Extrusion transits may touch the element just extruded and the one about
/// to be extruded, together with their neighbours.
fn transit_ignore(s: &BarStructure, mode: Mode, partial: &PartialStructure, prev: Option<ElementId>, next: Option<ElementId>) -> IgnoreSet {
    let mut ig = IgnoreSet::default();
    if mode == Mode::Extrusion {
        for e in prev.into_iter().chain(next) {
            ig.elements.extend(s.neighbors_in(e, partial));
            if partial.contains(e) {
                ig.elements.insert(e);
            }
        }
    }
    ig
}

/// The collision rules for a trajectory of `kind` moving `element` onto
/// `partial` (the elements built before it). `prev` is the element built just
/// before; for the final transit `element` is `None` and `partial` is complete.
pub fn scene_for(
    ctx: &PlanContext,
    kind: TrajectoryKind,
    partial: &PartialStructure,
    element: Option<ElementId>,
    prev: Option<ElementId>,
    attachment: Option<&Attachment>,
) -> SceneSpec {
    let s = ctx.structure;
    let world = ctx.world(partial);
    let held = attachment.map(|a| held_element(s, a));
    let rack_element = |w: &CollisionWorld, e: ElementId| match &ctx.workcell.rack {
        Some(r) => w.with_obstacle(element_local_capsule(s, e).transformed(&r.pose)),
        None => (w.clone(), usize::MAX),
    };
    match kind {
        TrajectoryKind::Transit => {
            let ignore = transit_ignore(s, s.mode, partial, prev, element);
            let world = match (s.mode, element) {
                (Mode::Assembly, Some(e)) => rack_element(&world, e).0,
                _ => world,
            };
            SceneSpec { world, held: None, ignore }
        }
        TrajectoryKind::Extrude => SceneSpec {
            ignore: IgnoreSet::elements(element.map(|e| s.neighbors_in(e, partial)).unwrap_or_default()),
            world,
            held: None,
        },
        TrajectoryKind::PickApproach => {
            let (world, id) = rack_element(&world, element.expect("pick has an element"));
            let mut ignore = IgnoreSet::default();
            ignore.obstacles.insert(id);
            ignore.obstacles.extend(ctx.workcell.rail_ids());
            SceneSpec { world, held: None, ignore }
        }
        TrajectoryKind::PickRetreat => {
            let mut ignore = IgnoreSet::default();
            ignore.obstacles.extend(ctx.workcell.rail_ids());
            SceneSpec { world, held, ignore }
        }
        TrajectoryKind::Transfer | TrajectoryKind::PlaceApproach => SceneSpec {
            ignore: place_ignore(s, partial, element.expect("place has an element")),
            world,
            held,
        },
        TrajectoryKind::PlaceRetreat => {
            let e = element.expect("place has an element");
            let mut ignore = IgnoreSet::elements(s.neighbors_in(e, partial));
            ignore.elements.insert(e);
            SceneSpec {
                world: ctx.world(&partial.with(e)),
                held: None,
                ignore,
            }
        }
    }
}

impl SceneSpec {
    pub fn scene<'a>(&'a self, ctx: &PlanContext<'a>) -> Scene<'a> {
        Scene {
            robot: ctx.robot,
            world: &self.world,
            held: self.held,
            ignore: self.ignore.clone(),
            params: ctx.config.collision,
        }
    }
}

/// Plans all primitives needed to build `element` on top of `partial`,
/// starting from `q_entry`.
pub fn evaluate_element(
    ctx: &PlanContext,
    partial: &PartialStructure,
    element: ElementId,
    q_entry: &Configuration,
    rng: &mut impl Rng,
) -> Result<ElementStep, MotionError> {
    let s = ctx.structure;
    let cfg = ctx.config;
    let planned_on: Vec<ElementId> = partial.iter().collect();
    match s.mode {
        Mode::Extrusion => {
            let world = ctx.world(partial);
            let ex = plan_extrude(ctx, &world, partial, element, rng)?;
            let spec = scene_for(ctx, TrajectoryKind::Transit, partial, Some(element), None, None);
            let transit = plan_joint_motion(&spec.scene(ctx), q_entry, ex.trajectory.first(), rng, &cfg.rrt, TrajectoryKind::Transit, None)?;
            Ok(ElementStep {
                element,
                planned_on,
                actions: vec![
                    Action {
                        kind: ActionKind::Transit,
                        element: Some(element),
                        trajectories: vec![transit],
                    },
                    Action {
                        kind: ActionKind::Extrude,
                        element: Some(element),
                        trajectories: vec![ex.trajectory],
                    },
                ],
            })
        }
        Mode::Assembly => {
            let mut last_err = MotionError::CandidatesExhausted;
            for grasp in grasp_candidates(element, cfg.grasp_rotations, cfg.grasp_sides) {
                let place = match plan_place(ctx, partial, element, &grasp, rng) {
                    Ok(p) => p,
                    Err(e) => {
                        last_err = e;
                        continue;
                    }
                };
                let pick = match plan_pick(ctx, partial, element, &grasp, rng) {
                    Ok(p) => p,
                    Err(e) => {
                        last_err = e;
                        continue;
                    }
                };
                let attachment = Attachment {
                    element,
                    grasp: grasp.grasp,
                };
                let spec = scene_for(ctx, TrajectoryKind::Transfer, partial, Some(element), None, Some(&attachment));
                let transfer = match plan_joint_motion(
                    &spec.scene(ctx),
                    pick.retreat.last(),
                    place.approach.first(),
                    rng,
                    &cfg.rrt,
                    TrajectoryKind::Transfer,
                    Some(attachment.clone()),
                ) {
                    Ok(t) => t,
                    Err(e) => {
                        last_err = e;
                        continue;
                    }
                };
                let spec = scene_for(ctx, TrajectoryKind::Transit, partial, Some(element), None, None);
                let transit = match plan_joint_motion(&spec.scene(ctx), q_entry, pick.approach.first(), rng, &cfg.rrt, TrajectoryKind::Transit, None) {
                    Ok(t) => t,
                    Err(e) => {
                        last_err = e;
                        continue;
                    }
                };
                return Ok(ElementStep {
                    element,
                    planned_on,
                    actions: vec![
                        Action {
                            kind: ActionKind::Transit,
                            element: Some(element),
                            trajectories: vec![transit],
                        },
                        Action {
                            kind: ActionKind::Pick,
                            element: Some(element),
                            trajectories: vec![pick.approach, pick.retreat],
                        },
                        Action {
                            kind: ActionKind::Transfer,
                            element: Some(element),
                            trajectories: vec![transfer],
                        },
                        Action {
                            kind: ActionKind::Place,
                            element: Some(element),
                            trajectories: vec![place.approach, place.retreat],
                        },
                    ],
                });
            }
            Err(last_err)
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpliceError {
    #[error("step {index} (element {element}) was planned on a different partial structure")]
    OrderMismatch { index: usize, element: ElementId },
    #[error("bridging transit into step {index} failed: {source}")]
    Bridge { index: usize, source: MotionError },
}

/// Joins per-element steps in construction order, re-planning each leading
/// transit from the previous exit and appending a final transit home.
pub fn splice(
    ctx: &PlanContext,
    steps: Vec<ElementStep>,
    q_home: &Configuration,
    rng: &mut impl Rng,
) -> Result<ConstructionPlan, SpliceError> {
    let s = ctx.structure;
    let mut built = PartialStructure::empty(s.num_elements());
    let mut out = Vec::with_capacity(steps.len());
    let mut prev_exit = q_home.clone();
    let mut prev: Option<ElementId> = None;
    for (index, mut step) in steps.into_iter().enumerate() {
        let expected: Vec<ElementId> = built.iter().collect();
        if step.planned_on != expected || built.contains(step.element) {
            return Err(SpliceError::OrderMismatch { index, element: step.element });
        }
        if step.entry() != &prev_exit {
            let target = step.actions[0].trajectories[0].last().clone();
            let spec = scene_for(ctx, TrajectoryKind::Transit, &built, Some(step.element), prev, None);
            let t = plan_joint_motion(&spec.scene(ctx), &prev_exit, &target, rng, &ctx.config.rrt, TrajectoryKind::Transit, None)
                .map_err(|source| SpliceError::Bridge { index, source })?;
            step.actions[0].trajectories[0] = t;
        }
        prev_exit = step.exit().clone();
        prev = Some(step.element);
        built.insert(step.element);
        out.push(step);
    }
    let spec = scene_for(ctx, TrajectoryKind::Transit, &built, None, prev, None);
    let home = plan_joint_motion(&spec.scene(ctx), &prev_exit, q_home, rng, &ctx.config.rrt, TrajectoryKind::Transit, None)
        .map_err(|source| SpliceError::Bridge { index: out.len(), source })?;
    Ok(ConstructionPlan {
        mode: s.mode,
        sequence: out.iter().map(|st| st.element).collect(),
        steps: out,
        final_transit: Action {
            kind: ActionKind::Transit,
            element: None,
            trajectories: vec![home],
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PlannerConfig;
    use crate::fixtures::default_robot;
    use crate::motion::Workcell;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn skeleton_pattern() {
        use ActionKind::*;
        assert!(matches_skeleton(Mode::Extrusion, &[Transit, Extrude, Transit]));
        assert!(matches_skeleton(Mode::Extrusion, &[Transit]));
        assert!(!matches_skeleton(Mode::Extrusion, &[Transit, Extrude]));
        assert!(matches_skeleton(Mode::Assembly, &[Transit, Pick, Transfer, Place, Transit, Pick, Transfer, Place, Transit]));
        assert!(!matches_skeleton(Mode::Assembly, &[Transit, Pick, Place, Transfer, Transit]));
        assert_eq!(Transfer.slots().len(), 6);
        assert_eq!(Pick.slots(), &["partial", "element", "grasp", "pick_trajectory"]);
    }

    #[test]
    fn single_element_extrusion_plan() {
        let mut b = crate::fixtures::StructureBuilder::new(Mode::Extrusion, 0.002);
        b.bar([0.55, 0.0, 0.0], [0.55, 0.0, 0.2]);
        let s = b.build().unwrap();
        let robot = default_robot(false);
        let wc = Workcell::open();
        let cfg = PlannerConfig::default();
        let ctx = PlanContext { structure: &s, robot: &robot, workcell: &wc, config: &cfg };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let empty = PartialStructure::empty(1);
        let step = evaluate_element(&ctx, &empty, 0, &robot.home, &mut rng).unwrap();
        let plan = splice(&ctx, vec![step], &robot.home, &mut rng).unwrap();
        assert_eq!(plan.flattened(), vec![ActionKind::Transit, ActionKind::Extrude, ActionKind::Transit]);
        assert_eq!(plan.steps[0].entry(), &robot.home);
        assert_eq!(plan.final_transit.trajectories[0].last(), &robot.home);
    }

    #[test]
    fn shuffled_steps_are_rejected() {
        let s = crate::fixtures::stack2();
        let robot = default_robot(false);
        let wc = Workcell::open();
        let cfg = PlannerConfig::default();
        let ctx = PlanContext { structure: &s, robot: &robot, workcell: &wc, config: &cfg };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p0 = PartialStructure::empty(2);
        let s0 = evaluate_element(&ctx, &p0, 0, &robot.home, &mut rng).unwrap();
        let s1 = evaluate_element(&ctx, &p0.with(0), 1, &robot.home, &mut rng).unwrap();
        assert!(splice(&ctx, vec![s0.clone(), s1.clone()], &robot.home, &mut rng).is_ok());
        assert_eq!(
            splice(&ctx, vec![s1, s0], &robot.home, &mut rng),
            Err(SpliceError::OrderMismatch { index: 0, element: 1 })
        );
    }
}
