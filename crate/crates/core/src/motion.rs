//! Motion primitives: joint-space RRT-Connect, chained Cartesian segments,
//! extrusion, pick and place.

use nalgebra::{Isometry3, Point3, Quaternion, Translation3, Unit, UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::collision::{
    state_in_collision, Capsule, CollisionParams, CollisionWorld, HeldElement, IgnoreSet,
};
use crate::config::{PlannerConfig, RrtParams};
use crate::kinematics::{Configuration, IkParams, Pose, RobotModel};
use crate::model::{BarStructure, ElementId, PartialStructure};
use crate::stiffness::local_axes;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MotionError {
    #[error("start configuration in collision")]
    StartInCollision,
    #[error("goal configuration in collision")]
    GoalInCollision,
    #[error("joint-space planner exhausted its iteration budget")]
    RrtExhausted,
    #[error("no inverse kinematics solution at waypoint {0}")]
    Ik(usize),
    #[error("collision or discontinuity at waypoint {0}")]
    Blocked(usize),
    #[error("element has no anchored end")]
    NotAnchored,
    #[error("no candidate succeeded")]
    CandidatesExhausted,
    #[error("workcell has no material rack")]
    NoRack,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryKind {
    Transit,
    Transfer,
    Extrude,
    PickApproach,
    PickRetreat,
    PlaceApproach,
    PlaceRetreat,
}

impl TrajectoryKind {
    /// Whether this kind moves with an element in the gripper.
    pub fn carries_element(self) -> bool {
        matches!(self, TrajectoryKind::Transfer | TrajectoryKind::PickRetreat | TrajectoryKind::PlaceApproach)
    }
}

/// Pose serialized as position plus (w, x, y, z) quaternion.
pub mod pose_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Repr {
        xyz: [f64; 3],
        wxyz: [f64; 4],
    }

    pub fn serialize<S: Serializer>(pose: &Pose, s: S) -> Result<S::Ok, S::Error> {
        let t = pose.translation.vector;
        let q = pose.rotation.quaternion();
        Repr {
            xyz: [t.x, t.y, t.z],
            wxyz: [q.w, q.i, q.j, q.k],
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Pose, D::Error> {
        let r = Repr::deserialize(d)?;
        let q = Quaternion::new(r.wxyz[0], r.wxyz[1], r.wxyz[2], r.wxyz[3]);
        let n = q.norm();
        if !((n - 1.0).abs() <= 1e-9) {
            return Err(serde::de::Error::custom(format!("quaternion norm {n} is not 1")));
        }
        Ok(Isometry3::from_parts(
            Translation3::new(r.xyz[0], r.xyz[1], r.xyz[2]),
            UnitQuaternion::new_unchecked(q),
        ))
    }
}

/// An element rigidly held by the tool. `grasp` is the tool frame expressed in
/// the element frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub element: ElementId,
    #[serde(with = "pose_serde")]
    pub grasp: Pose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub kind: TrajectoryKind,
    pub waypoints: Vec<Configuration>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attached: Option<Attachment>,
}

impl Trajectory {
    pub fn first(&self) -> &Configuration {
        &self.waypoints[0]
    }

    pub fn last(&self) -> &Configuration {
        self.waypoints.last().expect("trajectory has waypoints")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraspCandidate {
    pub element: ElementId,
    pub grasp: Pose,
    /// Tool approach axis in the element frame.
    pub approach: Unit<Vector3<f64>>,
}

/// Material rack holding the next element at a fixed pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rack {
    /// Element frame of a bar lying on the rack.
    #[serde(with = "pose_serde")]
    pub pose: Pose,
    /// Support capsules in world coordinates.
    pub rails: Vec<Capsule>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct Workcell {
    #[serde(default)]
    pub obstacles: Vec<Capsule>,
    #[serde(default = "yes")]
    pub ground: bool,
    #[serde(default)]
    pub rack: Option<Rack>,
}

fn yes() -> bool {
    true
}

impl Workcell {
    pub fn open() -> Self {
        Workcell {
            obstacles: vec![],
            ground: true,
            rack: None,
        }
    }

    /// Static world: obstacles followed by rack rails.
    pub fn base_world(&self) -> CollisionWorld {
        let mut obstacles = self.obstacles.clone();
        if let Some(r) = &self.rack {
            obstacles.extend(r.rails.iter().copied());
        }
        CollisionWorld::new(obstacles, self.ground)
    }

    /// Obstacle indices of the rack rails in [`Workcell::base_world`].
    pub fn rail_ids(&self) -> impl Iterator<Item = usize> + '_ {
        let n = self.obstacles.len();
        (0..self.rack.as_ref().map_or(0, |r| r.rails.len())).map(move |i| n + i)
    }
}

/// Everything a primitive planner needs besides the partial structure.
#[derive(Clone, Copy)]
pub struct PlanContext<'a> {
    pub structure: &'a BarStructure,
    pub robot: &'a RobotModel,
    pub workcell: &'a Workcell,
    pub config: &'a PlannerConfig,
}

impl PlanContext<'_> {
    pub fn world(&self, partial: &PartialStructure) -> CollisionWorld {
        self.workcell.base_world().with_structure(self.structure, partial)
    }
}

/// A collision query setup: world, attachment and ignore set.
#[derive(Clone, Debug)]
pub struct Scene<'a> {
    pub robot: &'a RobotModel,
    pub world: &'a CollisionWorld,
    pub held: Option<HeldElement>,
    pub ignore: IgnoreSet,
    pub params: CollisionParams,
}

impl Scene<'_> {
    pub fn free(&self, q: &Configuration) -> bool {
        self.robot.within_limits(q) && !state_in_collision(self.world, self.robot, q, self.held.as_ref(), &self.ignore, &self.params)
    }

    /// Interior and end states of the straight joint motion `a → b` are free.
    pub fn edge_free(&self, a: &Configuration, b: &Configuration) -> bool {
        let n = (a.max_abs_diff(b) / self.params.max_joint_step).ceil().max(1.0) as usize;
        (1..=n).all(|k| self.free(&a.lerp(b, k as f64 / n as f64)))
    }
}

/// Element frame: origin at the midpoint, x along `end_a → end_b`.
pub fn element_frame(structure: &BarStructure, element: ElementId) -> Pose {
    let (a, b) = structure.endpoints(element);
    let axes = local_axes(b - a);
    let rot = nalgebra::Rotation3::from_matrix_unchecked(axes.transpose());
    Isometry3::from_parts(Translation3::from(nalgebra::center(&a, &b).coords), UnitQuaternion::from_rotation_matrix(&rot))
}

/// Element capsule in its own frame.
pub fn element_local_capsule(structure: &BarStructure, element: ElementId) -> Capsule {
    let h = structure.length(element) / 2.0;
    Capsule::new(Point3::new(-h, 0.0, 0.0), Point3::new(h, 0.0, 0.0), structure.element(element).radius)
}

pub fn held_element(structure: &BarStructure, attachment: &Attachment) -> HeldElement {
    HeldElement {
        element: attachment.element,
        capsule: element_local_capsule(structure, attachment.element).transformed(&attachment.grasp.inverse()),
    }
}

/// Midpoint grasps with the tool axis perpendicular to the bar: `rotations`
/// approach directions about the bar axis, each with the tool flipped `sides` ways.
pub fn grasp_candidates(element: ElementId, rotations: usize, sides: usize) -> Vec<GraspCandidate> {
    let mut out = Vec::with_capacity(rotations * sides);
    for k in 0..rotations {
        let phi = std::f64::consts::TAU * k as f64 / rotations as f64;
        let approach = Unit::new_normalize(Vector3::new(0.0, -phi.cos(), -phi.sin()));
        for side in 0..sides {
            let x = if side == 0 { Vector3::x() } else { -Vector3::x() };
            let y = approach.cross(&x);
            let m = nalgebra::Matrix3::from_columns(&[x, y, approach.into_inner()]);
            let rot = UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(m));
            out.push(GraspCandidate {
                element,
                grasp: Isometry3::from_parts(Translation3::identity(), rot),
                approach,
            });
        }
    }
    out
}

/// Poses from `a` to `b` (inclusive) with bounded translation and rotation steps.
pub fn interpolate_poses(a: &Pose, b: &Pose, step: f64, angle_step: f64) -> Vec<Pose> {
    let dist = (b.translation.vector - a.translation.vector).norm();
    let angle = a.rotation.angle_to(&b.rotation);
    let n = ((dist / step).ceil().max((angle / angle_step).ceil()) as usize).max(1);
    (0..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            let p = a.translation.vector.lerp(&b.translation.vector, t);
            let r = a.rotation.slerp(&b.rotation, t);
            Isometry3::from_parts(Translation3::from(p), r)
        })
        .collect()
}

/// Element poses from `goal` outward to a standoff reached by translating
/// `distance` along `direction` while rotating `angle` about that direction
/// through the element midpoint.
pub fn screw_path(goal: &Pose, direction: &Unit<Vector3<f64>>, distance: f64, angle: f64, step: f64, angle_step: f64) -> Vec<Pose> {
    let n = (((distance / step).ceil()).max((angle.abs() / angle_step).ceil()) as usize).max(1);
    (0..=n)
        .map(|i| {
            let s = i as f64 / n as f64;
            let rot = UnitQuaternion::from_axis_angle(direction, angle * s);
            Isometry3::from_parts(
                Translation3::from(goal.translation.vector + direction.into_inner() * (distance * s)),
                rot * goal.rotation,
            )
        })
        .collect()
}

fn random_near(robot: &RobotModel, q: &Configuration, radius: f64, rng: &mut impl Rng) -> Configuration {
    Configuration(
        q.iter()
            .zip(&robot.joints)
            .map(|(v, j)| (v + rng.random_range(-radius..=radius)).clamp(j.lower, j.upper))
            .collect(),
    )
}

/// Tool path following `poses` with IK chained from `seed`. Waypoints that
/// jump or collide are repaired by randomized restarts near the previous
/// waypoint.
pub fn plan_cartesian_segment(
    scene: &Scene,
    poses: &[Pose],
    seed: &Configuration,
    rng: &mut impl Rng,
    config: &PlannerConfig,
) -> Result<Vec<Configuration>, MotionError> {
    let robot = scene.robot;
    let Some(first) = poses.first() else {
        return Ok(vec![]);
    };
    let q0 = robot.inverse_kinematics(first, seed, rng, &config.ik).map_err(|_| MotionError::Ik(0))?;
    if !scene.free(&q0) {
        return Err(MotionError::Blocked(0));
    }
    let local = IkParams { restarts: 0, ..config.ik };
    let max_jump = 5.0 * config.collision.max_joint_step;
    let mut out = Vec::with_capacity(poses.len());
    out.push(q0);
    for (k, pose) in poses.iter().enumerate().skip(1) {
        let prev = out.last().unwrap().clone();
        let ok = |q: &Configuration| q.max_abs_diff(&prev) <= max_jump && scene.edge_free(&prev, q);
        let mut found = robot.inverse_kinematics(pose, &prev, rng, &local).ok().filter(ok);
        let mut ik_failed = found.is_none();
        for attempt in 0..config.repair_attempts {
            if found.is_some() {
                break;
            }
            let start = random_near(robot, &prev, max_jump * (attempt + 1) as f64 / config.repair_attempts as f64, rng);
            if let Ok(q) = robot.inverse_kinematics(pose, &start, rng, &local) {
                ik_failed = false;
                found = Some(q).filter(ok);
            }
        }
        match found {
            Some(q) => out.push(q),
            None if ik_failed => return Err(MotionError::Ik(k)),
            None => return Err(MotionError::Blocked(k)),
        }
    }
    Ok(out)
}

/// Raw and shortcut-smoothed RRT-Connect paths.
#[derive(Clone, Debug)]
pub struct JointPath {
    pub raw: Vec<Configuration>,
    pub smoothed: Vec<Configuration>,
}

pub fn path_length(path: &[Configuration]) -> f64 {
    path.windows(2).map(|w| w[0].distance(&w[1])).sum()
}

struct Tree {
    nodes: Vec<Configuration>,
    parents: Vec<usize>,
}

impl Tree {
    fn new(root: Configuration) -> Self {
        Tree {
            nodes: vec![root],
            parents: vec![usize::MAX],
        }
    }

    fn nearest(&self, q: &Configuration) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, n) in self.nodes.iter().enumerate() {
            let d = n.distance(q);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    fn path_to_root(&self, mut i: usize) -> Vec<Configuration> {
        let mut out = vec![];
        while i != usize::MAX {
            out.push(self.nodes[i].clone());
            i = self.parents[i];
        }
        out
    }
}

enum Extend {
    Reached(usize),
    Advanced(usize),
    Trapped,
}

fn extend(tree: &mut Tree, target: &Configuration, scene: &Scene, step: f64) -> Extend {
    let near = tree.nearest(target);
    let from = &tree.nodes[near];
    let d = from.distance(target);
    let (q, reached) = if d <= step { (target.clone(), true) } else { (from.lerp(target, step / d), false) };
    if !scene.edge_free(from, &q) {
        return Extend::Trapped;
    }
    tree.nodes.push(q);
    tree.parents.push(near);
    let id = tree.nodes.len() - 1;
    if reached {
        Extend::Reached(id)
    } else {
        Extend::Advanced(id)
    }
}

/// RRT-Connect between two free configurations followed by random shortcutting.
pub fn plan_joint_path(
    scene: &Scene,
    start: &Configuration,
    goal: &Configuration,
    rng: &mut impl Rng,
    params: &RrtParams,
) -> Result<JointPath, MotionError> {
    if start == goal {
        return Ok(JointPath {
            raw: vec![start.clone()],
            smoothed: vec![start.clone()],
        });
    }
    if !scene.free(start) {
        return Err(MotionError::StartInCollision);
    }
    if !scene.free(goal) {
        return Err(MotionError::GoalInCollision);
    }
    if scene.edge_free(start, goal) {
        let p = vec![start.clone(), goal.clone()];
        return Ok(JointPath { raw: p.clone(), smoothed: p });
    }
    let mut a = Tree::new(start.clone());
    let mut b = Tree::new(goal.clone());
    let mut a_is_start = true;
    let mut raw = None;
    for _ in 0..params.max_iterations {
        let target = if rng.random_bool(params.goal_bias) {
            b.nodes[0].clone()
        } else {
            scene.robot.sample_configuration(rng)
        };
        let new = match extend(&mut a, &target, scene, params.step) {
            Extend::Trapped => None,
            Extend::Reached(i) | Extend::Advanced(i) => Some(i),
        };
        if let Some(ni) = new {
            let qn = a.nodes[ni].clone();
            loop {
                match extend(&mut b, &qn, scene, params.step) {
                    Extend::Advanced(_) => continue,
                    Extend::Trapped => break,
                    Extend::Reached(bi) => {
                        let mut pa = a.path_to_root(ni);
                        pa.reverse();
                        let pb = b.path_to_root(bi);
                        pa.extend(pb.into_iter().skip(1));
                        if !a_is_start {
                            pa.reverse();
                        }
                        raw = Some(pa);
                        break;
                    }
                }
            }
        }
        if raw.is_some() {
            break;
        }
        std::mem::swap(&mut a, &mut b);
        a_is_start = !a_is_start;
    }
    let raw = raw.ok_or(MotionError::RrtExhausted)?;
    let mut path = raw.clone();
    for _ in 0..params.shortcut_attempts {
        if path.len() <= 2 {
            break;
        }
        let i = rng.random_range(0..path.len() - 2);
        let j = rng.random_range(i + 2..path.len());
        if scene.edge_free(&path[i], &path[j]) {
            path.drain(i + 1..j);
        }
    }
    Ok(JointPath { raw, smoothed: path })
}

pub fn plan_joint_motion(
    scene: &Scene,
    start: &Configuration,
    goal: &Configuration,
    rng: &mut impl Rng,
    params: &RrtParams,
    kind: TrajectoryKind,
    attached: Option<Attachment>,
) -> Result<Trajectory, MotionError> {
    let path = plan_joint_path(scene, start, goal, rng, params)?;
    Ok(Trajectory {
        kind,
        waypoints: path.smoothed,
        attached,
    })
}

/// Tool-axis directions (pointing away from the work) inside a cone about
/// world up: the axis itself plus eight per ring.
pub fn cone_directions(half_angle: f64, rings: usize) -> Vec<Unit<Vector3<f64>>> {
    let mut out = vec![Vector3::z_axis()];
    for r in 1..=rings {
        let tilt = half_angle * r as f64 / rings as f64;
        for k in 0..8 {
            let az = std::f64::consts::FRAC_PI_4 * k as f64;
            out.push(Unit::new_normalize(Vector3::new(tilt.sin() * az.cos(), tilt.sin() * az.sin(), tilt.cos())));
        }
    }
    out
}

/// Extrusion of `element` on top of `partial`, with the tool at constant orientation.
#[derive(Clone, Debug)]
pub struct ExtrudePlan {
    pub trajectory: Trajectory,
    /// Node where extrusion starts.
    pub start_node: usize,
    pub ignore: IgnoreSet,
}

pub fn plan_extrude(
    ctx: &PlanContext,
    world: &CollisionWorld,
    partial: &PartialStructure,
    element: ElementId,
    rng: &mut impl Rng,
) -> Result<ExtrudePlan, MotionError> {
    let s = ctx.structure;
    let cfg = ctx.config;
    let el = s.element(element);
    let (a, b) = (el.end_a, el.end_b);
    let orders: Vec<(usize, usize)> = match (s.anchored(element, a, partial), s.anchored(element, b, partial)) {
        (true, true) => vec![(a, b), (b, a)],
        (true, false) => vec![(a, b)],
        (false, true) => vec![(b, a)],
        (false, false) => return Err(MotionError::NotAnchored),
    };
    let ignore = IgnoreSet::elements(s.neighbors_in(element, partial));
    let scene = Scene {
        robot: ctx.robot,
        world,
        held: None,
        ignore: ignore.clone(),
        params: cfg.collision,
    };
    for (from, to) in orders {
        let p0 = s.node(from).position;
        let p1 = s.node(to).position;
        for d in cone_directions(cfg.extrusion_cone, cfg.extrusion_rings) {
            let axis = Unit::new_unchecked(-d.into_inner());
            let Ok(q0) = ctx.robot.ik_on_partial_constraint(&p0, &axis, &ctx.robot.home, rng, &cfg.ik) else {
                continue;
            };
            if !scene.free(&q0) {
                continue;
            }
            let rot = ctx.robot.tool_pose(&q0).expect("dimension checked").rotation;
            let n = ((p1 - p0).norm() / cfg.cartesian_step).ceil().max(1.0) as usize;
            let poses: Vec<Pose> = (0..=n)
                .map(|i| Isometry3::from_parts(Translation3::from(p0.coords.lerp(&p1.coords, i as f64 / n as f64)), rot))
                .collect();
            if let Ok(waypoints) = plan_cartesian_segment(&scene, &poses, &q0, rng, cfg) {
                return Ok(ExtrudePlan {
                    trajectory: Trajectory {
                        kind: TrajectoryKind::Extrude,
                        waypoints,
                        attached: None,
                    },
                    start_node: from,
                    ignore,
                });
            }
        }
    }
    Err(MotionError::CandidatesExhausted)
}

fn retreat_poses(tool: &Pose, distance: f64, cfg: &PlannerConfig) -> Vec<Pose> {
    let back = tool.rotation * Vector3::new(0.0, 0.0, -distance);
    let end = Isometry3::from_parts(Translation3::from(tool.translation.vector + back), tool.rotation);
    interpolate_poses(tool, &end, cfg.cartesian_step, cfg.cartesian_angle_step)
}

/// Pick-approach and pick-retreat for one grasp of the element on the rack.
#[derive(Clone, Debug)]
pub struct PickPlan {
    pub approach: Trajectory,
    pub retreat: Trajectory,
}

pub fn plan_pick(
    ctx: &PlanContext,
    partial: &PartialStructure,
    element: ElementId,
    grasp: &GraspCandidate,
    rng: &mut impl Rng,
) -> Result<PickPlan, MotionError> {
    let cfg = ctx.config;
    let rack = ctx.workcell.rack.as_ref().ok_or(MotionError::NoRack)?;
    let local = element_local_capsule(ctx.structure, element);
    let base = ctx.world(partial);
    let (with_element, element_obstacle) = base.with_obstacle(local.transformed(&rack.pose));
    let tool_goal = rack.pose * grasp.grasp;
    let q_grasp = ctx
        .robot
        .inverse_kinematics(&tool_goal, &ctx.robot.home, rng, &cfg.ik)
        .map_err(|_| MotionError::Ik(0))?;
    let poses = retreat_poses(&tool_goal, cfg.approach_distance, cfg);

    let mut ignore = IgnoreSet::default();
    ignore.obstacles.insert(element_obstacle);
    ignore.obstacles.extend(ctx.workcell.rail_ids());
    let approach_scene = Scene {
        robot: ctx.robot,
        world: &with_element,
        held: None,
        ignore: ignore.clone(),
        params: cfg.collision,
    };
    let mut approach = plan_cartesian_segment(&approach_scene, &poses, &q_grasp, rng, cfg)?;
    approach.reverse();

    let attachment = Attachment {
        element,
        grasp: grasp.grasp,
    };
    let mut held_ignore = IgnoreSet::default();
    held_ignore.obstacles.extend(ctx.workcell.rail_ids());
    let retreat_scene = Scene {
        robot: ctx.robot,
        world: &base,
        held: Some(held_element(ctx.structure, &attachment)),
        ignore: held_ignore,
        params: cfg.collision,
    };
    let retreat = plan_cartesian_segment(&retreat_scene, &poses, &q_grasp, rng, cfg)?;
    Ok(PickPlan {
        approach: Trajectory {
            kind: TrajectoryKind::PickApproach,
            waypoints: approach,
            attached: None,
        },
        retreat: Trajectory {
            kind: TrajectoryKind::PickRetreat,
            waypoints: retreat,
            attached: Some(attachment),
        },
    })
}

/// Ignore set while placing `element` onto `partial`: touching neighbours and,
/// for grounded bars, the ground.
pub fn place_ignore(structure: &BarStructure, partial: &PartialStructure, element: ElementId) -> IgnoreSet {
    let mut ig = IgnoreSet::elements(structure.neighbors_in(element, partial));
    ig.ground = structure.is_grounded_element(element);
    ig
}

/// Insertion directions perpendicular to the bar (element-frame y/z plane),
/// in world coordinates, ordered by descending height gain.
pub fn insertion_directions(frame: &Pose, count: usize) -> Vec<Unit<Vector3<f64>>> {
    let mut dirs: Vec<(usize, Unit<Vector3<f64>>)> = (0..count)
        .map(|k| {
            let a = std::f64::consts::TAU * k as f64 / count as f64;
            (k, Unit::new_normalize(frame.rotation * Vector3::new(0.0, a.cos(), a.sin())))
        })
        .collect();
    dirs.sort_by(|x, y| y.1.z.total_cmp(&x.1.z).then(x.0.cmp(&y.0)));
    dirs.into_iter().map(|(_, d)| d).collect()
}

#[derive(Clone, Debug)]
pub struct PlacePlan {
    pub approach: Trajectory,
    pub retreat: Trajectory,
    /// Screw rotation component of the chosen insertion (rad).
    pub insertion_angle: f64,
    pub insertion_direction: Unit<Vector3<f64>>,
}

/// Screw-insertion candidates as (rotation, direction), rotation-major.
pub fn insertion_candidates(frame: &Pose, cfg: &PlannerConfig) -> Vec<(f64, Unit<Vector3<f64>>)> {
    let dirs = insertion_directions(frame, cfg.insertion_directions);
    cfg.insertion_angles
        .iter()
        .flat_map(|&a| dirs.iter().map(move |d| (a, *d)))
        .collect()
}

/// Place-approach along an insertion screw followed by a tool retreat.
pub fn plan_place(
    ctx: &PlanContext,
    partial: &PartialStructure,
    element: ElementId,
    grasp: &GraspCandidate,
    rng: &mut impl Rng,
) -> Result<PlacePlan, MotionError> {
    plan_place_with(ctx, partial, element, grasp, &insertion_candidates(&element_frame(ctx.structure, element), ctx.config), rng)
}

pub fn plan_place_with(
    ctx: &PlanContext,
    partial: &PartialStructure,
    element: ElementId,
    grasp: &GraspCandidate,
    candidates: &[(f64, Unit<Vector3<f64>>)],
    rng: &mut impl Rng,
) -> Result<PlacePlan, MotionError> {
    let cfg = ctx.config;
    let s = ctx.structure;
    let goal = element_frame(s, element);
    let tool_goal = goal * grasp.grasp;
    let world = ctx.world(partial);
    let attachment = Attachment {
        element,
        grasp: grasp.grasp,
    };
    let scene = Scene {
        robot: ctx.robot,
        world: &world,
        held: Some(held_element(s, &attachment)),
        ignore: place_ignore(s, partial, element),
        params: cfg.collision,
    };
    let q_goal = ctx
        .robot
        .inverse_kinematics(&tool_goal, &ctx.robot.home, rng, &cfg.ik)
        .map_err(|_| MotionError::Ik(0))?;
    if !scene.free(&q_goal) {
        return Err(MotionError::GoalInCollision);
    }

    // retreat first: it is cheap and independent of the insertion choice
    let placed = partial.with(element);
    let world_after = ctx.world(&placed);
    let mut retreat_ignore = IgnoreSet::elements(s.neighbors_in(element, partial));
    retreat_ignore.elements.insert(element);
    let retreat_scene = Scene {
        robot: ctx.robot,
        world: &world_after,
        held: None,
        ignore: retreat_ignore,
        params: cfg.collision,
    };
    let retreat = plan_cartesian_segment(&retreat_scene, &retreat_poses(&tool_goal, cfg.retreat_distance, cfg), &q_goal, rng, cfg)?;
    let strict = Scene {
        ignore: IgnoreSet::default(),
        ..retreat_scene.clone()
    };
    if !strict.free(retreat.last().unwrap()) {
        return Err(MotionError::Blocked(retreat.len() - 1));
    }

    for (angle, dir) in candidates {
        let elem_path = screw_path(&goal, dir, cfg.insertion_distance, *angle, cfg.cartesian_step, cfg.cartesian_angle_step);
        let tool_path: Vec<Pose> = elem_path.iter().map(|p| p * grasp.grasp).collect();
        if let Ok(mut w) = plan_cartesian_segment(&scene, &tool_path, &q_goal, rng, cfg) {
            w.reverse();
            return Ok(PlacePlan {
                approach: Trajectory {
                    kind: TrajectoryKind::PlaceApproach,
                    waypoints: w,
                    attached: Some(attachment.clone()),
                },
                retreat: Trajectory {
                    kind: TrajectoryKind::PlaceRetreat,
                    waypoints: retreat,
                    attached: None,
                },
                insertion_angle: *angle,
                insertion_direction: *dir,
            });
        }
    }
    Err(MotionError::CandidatesExhausted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::element_capsule;
    use crate::fixtures::default_robot;
    use crate::model::test_structures;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scene<'a>(robot: &'a RobotModel, world: &'a CollisionWorld) -> Scene<'a> {
        Scene {
            robot,
            world,
            held: None,
            ignore: IgnoreSet::default(),
            params: CollisionParams::default(),
        }
    }

    #[test]
    fn element_frame_maps_local_capsule_to_world() {
        let s = test_structures::tetrahedron();
        for e in 0..s.num_elements() {
            let f = element_frame(&s, e);
            let c = element_local_capsule(&s, e).transformed(&f);
            let w = element_capsule(&s, e);
            assert!((c.p0 - w.p0).norm() < 1e-12 && (c.p1 - w.p1).norm() < 1e-12);
        }
    }

    #[test]
    fn grasps_are_perpendicular_through_midpoint() {
        let g = grasp_candidates(3, 16, 2);
        assert_eq!(g.len(), 32);
        for c in &g {
            let z = c.grasp.rotation * Vector3::z();
            assert!(z.dot(&Vector3::x()).abs() < 1e-12);
            assert!((z - c.approach.into_inner()).norm() < 1e-12);
            assert!(c.grasp.translation.vector.norm() < 1e-15);
        }
    }

    #[test]
    fn identical_start_goal_is_single_waypoint() {
        let robot = default_robot(false);
        let world = CollisionWorld::new(vec![], true);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = plan_joint_motion(&scene(&robot, &world), &robot.home, &robot.home, &mut rng, &RrtParams::default(), TrajectoryKind::Transit, None).unwrap();
        assert_eq!(t.waypoints, vec![robot.home.clone()]);
    }

    fn wall_scene() -> (RobotModel, CollisionWorld, Configuration, Configuration) {
        let robot = default_robot(false);
        // a tall post between two configurations on either side of it
        let world = CollisionWorld::new(vec![Capsule::new(Point3::new(0.40, 0.0, 0.0), Point3::new(0.40, 0.0, 0.9), 0.04)], true);
        let mut a = robot.home.clone();
        let mut b = robot.home.clone();
        a.0[0] = -0.6;
        b.0[0] = 0.6;
        (robot, world, a, b)
    }

    #[test]
    fn rrt_finds_path_around_post_and_smoothing_shortens() {
        let (robot, world, a, b) = wall_scene();
        let sc = scene(&robot, &world);
        assert!(sc.free(&a) && sc.free(&b));
        assert!(!sc.edge_free(&a, &b));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = plan_joint_path(&sc, &a, &b, &mut rng, &RrtParams::default()).unwrap();
        assert!(path_length(&p.smoothed) <= path_length(&p.raw) + 1e-12);
        assert_eq!(p.smoothed.first(), Some(&a));
        assert_eq!(p.smoothed.last(), Some(&b));
        for w in p.smoothed.windows(2) {
            assert!(sc.edge_free(&w[0], &w[1]));
        }
    }

    #[test]
    fn rrt_budget_dependent_and_deterministic() {
        let robot = default_robot(false);
        // two walls leaving a narrow corridor the arm must pass
        let world = CollisionWorld::new(
            vec![
                Capsule::new(Point3::new(0.5, 0.0, 0.0), Point3::new(0.5, 0.0, 0.55), 0.05),
                Capsule::new(Point3::new(0.5, 0.0, 0.95), Point3::new(0.5, 0.0, 2.0), 0.05),
            ],
            true,
        );
        let sc = scene(&robot, &world);
        let mut a = robot.home.clone();
        let mut b = robot.home.clone();
        a.0[0] = -0.7;
        b.0[0] = 0.7;
        a.0[1] = 0.0;
        b.0[1] = 0.0;
        a.0[2] = -0.9;
        b.0[2] = -0.9;
        assert!(sc.free(&a) && sc.free(&b));
        let tiny = RrtParams { max_iterations: 1, ..Default::default() };
        let big = RrtParams { max_iterations: 10_000, ..Default::default() };
        let run = |p: &RrtParams| plan_joint_path(&sc, &a, &b, &mut ChaCha8Rng::seed_from_u64(5), p).map(|r| r.smoothed);
        assert_eq!(run(&tiny), Err(MotionError::RrtExhausted));
        let ok = run(&big).unwrap();
        assert_eq!(run(&big).unwrap(), ok);
    }

    #[test]
    fn repeated_pose_gives_identical_waypoints() {
        let robot = default_robot(false);
        let world = CollisionWorld::new(vec![], true);
        let sc = scene(&robot, &world);
        let pose = robot.tool_pose(&robot.home).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = plan_cartesian_segment(&sc, &[pose, pose, pose], &robot.home, &mut rng, &PlannerConfig::default()).unwrap();
        assert_eq!(w, vec![robot.home.clone(); 3]);
    }

    #[test]
    fn vertical_retreat_stays_on_line() {
        let robot = default_robot(false);
        let world = CollisionWorld::new(vec![], true);
        let sc = scene(&robot, &world);
        let cfg = PlannerConfig::default();
        let start = robot.tool_pose(&robot.home).unwrap();
        let end = Isometry3::from_parts(Translation3::from(start.translation.vector + Vector3::new(0.0, 0.0, 0.1)), start.rotation);
        let poses = interpolate_poses(&start, &end, cfg.cartesian_step, cfg.cartesian_angle_step);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = plan_cartesian_segment(&sc, &poses, &robot.home, &mut rng, &cfg).unwrap();
        let p0 = start.translation.vector;
        for q in &w {
            let p = robot.tool_pose(q).unwrap().translation.vector - p0;
            assert!((p.x * p.x + p.y * p.y).sqrt() <= 1e-4);
            assert!(p.z >= -1e-4 && p.z <= 0.1 + 1e-4);
        }
        for pair in w.windows(2) {
            assert!(pair[0].max_abs_diff(&pair[1]) <= 5.0 * cfg.collision.max_joint_step);
        }
    }

    #[test]
    fn screw_path_ends_at_goal_and_standoff() {
        let goal = Isometry3::translation(0.5, 0.0, 0.2);
        let d = Vector3::y_axis();
        let p = screw_path(&goal, &d, 0.1, 0.3, 0.005, 1f64.to_radians());
        assert_eq!(p[0], goal);
        let last = p.last().unwrap();
        assert!((last.translation.vector - Vector3::new(0.5, 0.1, 0.2)).norm() < 1e-12);
        assert!((last.rotation.angle() - 0.3).abs() < 1e-12);
        // midpoint stays on the insertion line
        for q in &p {
            assert!(q.translation.x == 0.5 && q.translation.z == 0.2);
        }
    }

    #[test]
    fn cone_has_seventeen_directions_within_half_angle() {
        let dirs = cone_directions(30f64.to_radians(), 2);
        assert_eq!(dirs.len(), 17);
        for d in dirs {
            assert!(d.z >= 30f64.to_radians().cos() - 1e-12);
        }
    }
}
