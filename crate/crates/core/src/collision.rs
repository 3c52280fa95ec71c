//! Capsule collision world: robot links, the built structure, static
//! obstacles, a ground half-space and an optional held element.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use nalgebra::{Isometry3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::kinematics::{Configuration, RobotModel};
use crate::model::{BarStructure, ElementId, PartialStructure};

/// Structure size above which queries go through the uniform grid.
pub const GRID_THRESHOLD: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Capsule {
    pub p0: Point3<f64>,
    pub p1: Point3<f64>,
    pub radius: f64,
}

impl Capsule {
    pub fn new(p0: Point3<f64>, p1: Point3<f64>, radius: f64) -> Self {
        Capsule { p0, p1, radius }
    }

    pub fn transformed(&self, iso: &Isometry3<f64>) -> Capsule {
        Capsule {
            p0: iso * self.p0,
            p1: iso * self.p1,
            radius: self.radius,
        }
    }

    pub fn aabb(&self) -> Aabb {
        let r = Vector3::repeat(self.radius);
        Aabb {
            min: self.p0.inf(&self.p1) - r,
            max: self.p0.sup(&self.p1) + r,
        }
    }

    fn key(&self) -> [f64; 7] {
        [self.p0.x, self.p0.y, self.p0.z, self.p1.x, self.p1.y, self.p1.z, self.radius]
    }

    /// Lowest point of the capsule surface.
    pub fn min_z(&self) -> f64 {
        self.p0.z.min(self.p1.z) - self.radius
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    pub fn inflated(&self, margin: f64) -> Aabb {
        let m = Vector3::repeat(margin);
        Aabb {
            min: self.min - m,
            max: self.max + m,
        }
    }

    pub fn overlaps(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] <= other.max[i] && other.min[i] <= self.max[i])
    }
}

/// Closest points between segments `p0p1` and `q0q1`, as parameters (s, t).
fn closest_segment_params(p0: &Point3<f64>, p1: &Point3<f64>, q0: &Point3<f64>, q1: &Point3<f64>) -> (f64, f64) {
    let d1 = p1 - p0;
    let d2 = q1 - q0;
    let r = p0 - q0;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    const EPS: f64 = 1e-18;
    if a <= EPS && e <= EPS {
        return (0.0, 0.0);
    }
    if a <= EPS {
        return (0.0, (f / e).clamp(0.0, 1.0));
    }
    let c = d1.dot(&r);
    if e <= EPS {
        return ((-c / a).clamp(0.0, 1.0), 0.0);
    }
    let b = d1.dot(&d2);
    let denom = a * e - b * b;
    let mut s = if denom > EPS * a * e { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
    let mut t = (b * s + f) / e;
    if t < 0.0 {
        t = 0.0;
        s = (-c / a).clamp(0.0, 1.0);
    } else if t > 1.0 {
        t = 1.0;
        s = ((b - c) / a).clamp(0.0, 1.0);
    }
    (s, t)
}

/// Closest points between the axes of two capsules.
pub fn closest_points(a: &Capsule, b: &Capsule) -> (Point3<f64>, Point3<f64>) {
    let (s, t) = closest_segment_params(&a.p0, &a.p1, &b.p0, &b.p1);
    (a.p0 + (a.p1 - a.p0) * s, b.p0 + (b.p1 - b.p0) * t)
}

/// Distance between the axes of two capsules.
pub fn segment_distance(a: &Capsule, b: &Capsule) -> f64 {
    let (pa, pb) = closest_points(a, b);
    (pa - pb).norm()
}

/// Signed surface distance; negative means penetration. Symmetric in its
/// arguments bit for bit.
pub fn capsule_distance(a: &Capsule, b: &Capsule) -> f64 {
    let ord = a
        .key()
        .iter()
        .zip(b.key().iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal);
    let (first, second) = if ord == Ordering::Greater { (b, a) } else { (a, b) };
    segment_distance(first, second) - (first.radius + second.radius)
}

/// Uniform hash grid over structure capsules.
#[derive(Clone, Debug)]
struct UniformGrid {
    cell: f64,
    cells: HashMap<(i64, i64, i64), Vec<usize>>,
}

impl UniformGrid {
    fn build(capsules: &[(ElementId, Capsule)], cell: f64) -> Self {
        let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        for (i, (_, c)) in capsules.iter().enumerate() {
            for key in Self::keys(&c.aabb(), cell) {
                cells.entry(key).or_default().push(i);
            }
        }
        UniformGrid { cell, cells }
    }

    fn keys(aabb: &Aabb, cell: f64) -> impl Iterator<Item = (i64, i64, i64)> {
        let lo = aabb.min.map(|v| (v / cell).floor() as i64);
        let hi = aabb.max.map(|v| (v / cell).floor() as i64);
        (lo.x..=hi.x).flat_map(move |x| (lo.y..=hi.y).flat_map(move |y| (lo.z..=hi.z).map(move |z| (x, y, z))))
    }

    fn query(&self, aabb: &Aabb) -> Vec<usize> {
        let mut out: Vec<usize> = Self::keys(aabb, self.cell)
            .filter_map(|k| self.cells.get(&k))
            .flatten()
            .copied()
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Snapshot of the environment for one partial structure.
#[derive(Clone, Debug)]
pub struct CollisionWorld {
    /// Whether the z = 0 half-space is an obstacle.
    pub ground: bool,
    pub obstacles: Vec<Capsule>,
    structure: Vec<(ElementId, Capsule)>,
    grid: Option<UniformGrid>,
}

impl CollisionWorld {
    pub fn new(obstacles: Vec<Capsule>, ground: bool) -> Self {
        CollisionWorld {
            ground,
            obstacles,
            structure: Vec::new(),
            grid: None,
        }
    }

    /// A copy of this world with the members of `partial` as obstacles.
    pub fn with_structure(&self, structure: &BarStructure, partial: &PartialStructure) -> Self {
        let capsules = partial.iter().map(|e| (e, element_capsule(structure, e))).collect();
        self.with_capsules(capsules)
    }

    pub fn with_capsules(&self, capsules: Vec<(ElementId, Capsule)>) -> Self {
        let grid = (capsules.len() > GRID_THRESHOLD).then(|| {
            let mean_len = capsules.iter().map(|(_, c)| (c.p1 - c.p0).norm() + 2.0 * c.radius).sum::<f64>()
                / capsules.len() as f64;
            UniformGrid::build(&capsules, mean_len.max(0.05))
        });
        CollisionWorld {
            ground: self.ground,
            obstacles: self.obstacles.clone(),
            structure: capsules,
            grid,
        }
    }

    pub fn with_obstacle(&self, capsule: Capsule) -> (Self, usize) {
        let mut w = self.clone();
        w.obstacles.push(capsule);
        let id = w.obstacles.len() - 1;
        (w, id)
    }

    pub fn structure_capsules(&self) -> &[(ElementId, Capsule)] {
        &self.structure
    }

    /// Structure capsules whose boxes overlap `aabb`.
    pub fn structure_near(&self, aabb: &Aabb) -> Vec<(ElementId, Capsule)> {
        match &self.grid {
            Some(grid) => grid.query(aabb).into_iter().map(|i| self.structure[i]).collect(),
            None => self
                .structure
                .iter()
                .filter(|(_, c)| c.aabb().overlaps(aabb))
                .copied()
                .collect(),
        }
    }
}

pub fn element_capsule(structure: &BarStructure, element: ElementId) -> Capsule {
    let (a, b) = structure.endpoints(element);
    Capsule::new(a, b, structure.element(element).radius)
}

/// Things that may be touched (but not penetrated) without clearance.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IgnoreSet {
    pub elements: BTreeSet<ElementId>,
    pub obstacles: BTreeSet<usize>,
    /// The held element may rest on the ground.
    pub ground: bool,
}

impl IgnoreSet {
    pub fn elements(ids: impl IntoIterator<Item = ElementId>) -> Self {
        IgnoreSet {
            elements: ids.into_iter().collect(),
            ..Default::default()
        }
    }
}

/// An element rigidly attached to the tool.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeldElement {
    pub element: ElementId,
    /// Element axis capsule in the tool frame.
    pub capsule: Capsule,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollisionParams {
    /// Required gap between bodies that are not allowed to touch.
    pub clearance: f64,
    /// Penetration tolerated for touching pairs in the ignore set.
    pub contact_tolerance: f64,
    /// Joint-space sampling resolution for trajectories (rad).
    pub max_joint_step: f64,
}

impl Default for CollisionParams {
    fn default() -> Self {
        CollisionParams {
            clearance: 0.002,
            contact_tolerance: 1e-4,
            max_joint_step: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Contact {
    SelfCollision(usize, usize),
    LinkGround(usize),
    LinkObstacle(usize, usize),
    LinkStructure(usize, ElementId),
    HeldGround,
    HeldObstacle(usize),
    HeldStructure(ElementId),
    HeldRobot(usize),
}

/// Robot body capsules in world coordinates, tagged by link index. The tool
/// is link `joints + 1`.
pub fn robot_capsules(robot: &RobotModel, q: &Configuration) -> Vec<(usize, Capsule)> {
    let fk = robot.forward_kinematics(q).expect("configuration matches robot");
    let mut out = Vec::new();
    for (i, link) in robot.links.iter().enumerate() {
        for c in &link.capsules {
            out.push((i, c.transformed(&fk.links[i])));
        }
    }
    let tool_link = robot.tool_link();
    for c in &robot.tool_capsules {
        out.push((tool_link, c.transformed(&fk.tool)));
    }
    out
}

/// First contact found for the robot at `q`, if any.
pub fn check_state(
    world: &CollisionWorld,
    robot: &RobotModel,
    q: &Configuration,
    held: Option<&HeldElement>,
    ignore: &IgnoreSet,
    params: &CollisionParams,
) -> Option<Contact> {
    let c = params.clearance;
    let touch = -params.contact_tolerance;
    let fk = robot.forward_kinematics(q).expect("configuration matches robot");
    let tool_link = robot.tool_link();
    let mut bodies: Vec<(usize, Capsule)> = Vec::with_capacity(16);
    for (i, link) in robot.links.iter().enumerate() {
        for cap in &link.capsules {
            bodies.push((i, cap.transformed(&fk.links[i])));
        }
    }
    for cap in &robot.tool_capsules {
        bodies.push((tool_link, cap.transformed(&fk.tool)));
    }

    if world.ground {
        for (i, cap) in &bodies {
            if robot.checks_ground(*i) && cap.min_z() < c {
                return Some(Contact::LinkGround(*i));
            }
        }
    }
    for (x, (i, a)) in bodies.iter().enumerate() {
        for (j, b) in &bodies[x + 1..] {
            if robot.self_check_pair(*i, *j) && capsule_distance(a, b) < c {
                return Some(Contact::SelfCollision(*i, *j));
            }
        }
    }
    for (i, cap) in &bodies {
        for (k, obs) in world.obstacles.iter().enumerate() {
            let limit = if *i == tool_link && ignore.obstacles.contains(&k) { touch } else { c };
            if capsule_distance(cap, obs) < limit {
                return Some(Contact::LinkObstacle(*i, k));
            }
        }
        for (e, s) in world.structure_near(&cap.aabb().inflated(c)) {
            let limit = if *i == tool_link && ignore.elements.contains(&e) { touch } else { c };
            if capsule_distance(cap, &s) < limit {
                return Some(Contact::LinkStructure(*i, e));
            }
        }
    }

    if let Some(h) = held {
        let cap = h.capsule.transformed(&fk.tool);
        if world.ground {
            let hit = if ignore.ground {
                cap.p0.z.min(cap.p1.z) < touch
            } else {
                cap.min_z() < c
            };
            if hit {
                return Some(Contact::HeldGround);
            }
        }
        for (k, obs) in world.obstacles.iter().enumerate() {
            let limit = if ignore.obstacles.contains(&k) { touch } else { c };
            if capsule_distance(&cap, obs) < limit {
                return Some(Contact::HeldObstacle(k));
            }
        }
        for (e, s) in world.structure_near(&cap.aabb().inflated(c)) {
            if e == h.element {
                continue;
            }
            let limit = if ignore.elements.contains(&e) { touch } else { c };
            if capsule_distance(&cap, &s) < limit {
                return Some(Contact::HeldStructure(e));
            }
        }
        let holding = robot.joints.len();
        for (i, b) in &bodies {
            if *i >= holding {
                continue;
            }
            if capsule_distance(&cap, b) < c {
                return Some(Contact::HeldRobot(*i));
            }
        }
    }
    None
}

pub fn state_in_collision(
    world: &CollisionWorld,
    robot: &RobotModel,
    q: &Configuration,
    held: Option<&HeldElement>,
    ignore: &IgnoreSet,
    params: &CollisionParams,
) -> bool {
    check_state(world, robot, q, held, ignore, params).is_some()
}

/// Inserts intermediate configurations so consecutive waypoints differ by at
/// most `step` per joint.
pub fn resample(trajectory: &[Configuration], step: f64) -> Vec<Configuration> {
    let mut out = Vec::with_capacity(trajectory.len());
    let Some(first) = trajectory.first() else {
        return out;
    };
    out.push(first.clone());
    for pair in trajectory.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let n = (a.max_abs_diff(b) / step).ceil().max(1.0) as usize;
        for k in 1..=n {
            out.push(a.lerp(b, k as f64 / n as f64));
        }
    }
    out
}

/// Index (into the resampled trajectory) of the first colliding state.
pub fn trajectory_in_collision(
    world: &CollisionWorld,
    robot: &RobotModel,
    trajectory: &[Configuration],
    held: Option<&HeldElement>,
    ignore: &IgnoreSet,
    params: &CollisionParams,
) -> Option<usize> {
    resample(trajectory, params.max_joint_step)
        .iter()
        .position(|q| state_in_collision(world, robot, q, held, ignore, params))
}

/// Straight joint-space motion `a → b` is collision free at the configured resolution.
pub fn edge_free(
    world: &CollisionWorld,
    robot: &RobotModel,
    a: &Configuration,
    b: &Configuration,
    held: Option<&HeldElement>,
    ignore: &IgnoreSet,
    params: &CollisionParams,
) -> bool {
    let n = (a.max_abs_diff(b) / params.max_joint_step).ceil().max(1.0) as usize;
    (1..=n).all(|k| !state_in_collision(world, robot, &a.lerp(b, k as f64 / n as f64), held, ignore, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cap(a: [f64; 3], b: [f64; 3], r: f64) -> Capsule {
        Capsule::new(Point3::from(a), Point3::from(b), r)
    }

    #[test]
    fn identical_capsules_fully_overlap() {
        let a = cap([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], 0.2);
        assert_relative_eq!(capsule_distance(&a, &a), -0.4);
    }

    #[test]
    fn parallel_offset_segments() {
        let a = cap([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], 0.1);
        let b = cap([0.0, 1.0, 0.0], [1.0, 1.0, 0.0], 0.1);
        assert_relative_eq!(capsule_distance(&a, &b), 0.8, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_spheres() {
        let a = cap([0.0, 0.0, 0.0], [0.0, 0.0, 0.0], 0.1);
        let b = cap([0.0, 0.0, 1.0], [0.0, 0.0, 1.0], 0.2);
        assert_relative_eq!(capsule_distance(&a, &b), 0.7, epsilon = 1e-12);
        let c = cap([-1.0, 0.5, 0.0], [1.0, 0.5, 0.0], 0.1);
        assert_relative_eq!(capsule_distance(&a, &c), 0.3, epsilon = 1e-12);
    }

    fn random_capsule(rng: &mut ChaCha8Rng) -> Capsule {
        let mut p = || Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let (a, b) = (p(), p());
        Capsule::new(a, b, rng.random_range(0.01..0.3))
    }

    #[test]
    fn sampling_oracle_agrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        const SAMPLES: usize = 10_000;
        for _ in 0..1000 {
            let a = random_capsule(&mut rng);
            let b = random_capsule(&mut rng);
            // dense point sampling on both axes, refined locally around the best pair
            let pts = |c: &Capsule, n: usize| -> Vec<Point3<f64>> {
                (0..n).map(|i| c.p0 + (c.p1 - c.p0) * (i as f64 / (n - 1) as f64)).collect()
            };
            let coarse_a = pts(&a, 200);
            let coarse_b = pts(&b, 200);
            let mut best = (f64::INFINITY, 0usize, 0usize);
            for (i, pa) in coarse_a.iter().enumerate() {
                for (j, pb) in coarse_b.iter().enumerate() {
                    let d = (pa - pb).norm();
                    if d < best.0 {
                        best = (d, i, j);
                    }
                }
            }
            // refine with SAMPLES points per segment in a window around the coarse optimum
            let window = |c: &Capsule, k: usize| -> Vec<Point3<f64>> {
                let lo = (k as f64 - 1.0).max(0.0) / 199.0;
                let hi = (k as f64 + 1.0).min(199.0) / 199.0;
                (0..SAMPLES / 100)
                    .map(|i| c.p0 + (c.p1 - c.p0) * (lo + (hi - lo) * i as f64 / (SAMPLES / 100 - 1) as f64))
                    .collect()
            };
            let wa = window(&a, best.1);
            let wb = window(&b, best.2);
            let mut oracle = best.0;
            for pa in &wa {
                for pb in &wb {
                    oracle = oracle.min((pa - pb).norm());
                }
            }
            let oracle = oracle - a.radius - b.radius;
            let d = capsule_distance(&a, &b);
            assert!((d - oracle).abs() <= 1e-3, "{d} vs {oracle}");
            assert!(d <= oracle + 1e-12);
            if oracle.abs() > 1e-3 {
                assert_eq!(d < 0.0, oracle < 0.0);
            }
        }
    }

    #[test]
    fn symmetry_and_translation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let a = random_capsule(&mut rng);
            let b = random_capsule(&mut rng);
            assert_eq!(capsule_distance(&a, &b).to_bits(), capsule_distance(&b, &a).to_bits());
            let shift = Isometry3::translation(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let d0 = capsule_distance(&a, &b);
            let d1 = capsule_distance(&a.transformed(&shift), &b.transformed(&shift));
            assert!((d0 - d1).abs() <= 1e-12);
        }
    }

    #[test]
    fn grid_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let capsules: Vec<(ElementId, Capsule)> = (0..80)
            .map(|i| {
                let p = Point3::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
                let d = Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
                (i, Capsule::new(p, p + d, 0.01))
            })
            .collect();
        let world = CollisionWorld::new(vec![], false).with_capsules(capsules.clone());
        assert!(world.grid.is_some());
        for _ in 0..200 {
            let q = random_capsule(&mut rng);
            let bx = q.aabb();
            let mut grid: Vec<ElementId> = world.structure_near(&bx).iter().map(|(e, _)| *e).collect();
            grid.sort_unstable();
            // the grid may return extra candidates but must not miss overlaps
            for (e, c) in &capsules {
                if c.aabb().overlaps(&bx) {
                    assert!(grid.contains(e));
                }
            }
        }
    }
    use crate::fixtures::default_robot;

    #[test]
    fn home_is_free_in_empty_world() {
        for gripper in [false, true] {
            let robot = default_robot(gripper);
            let world = CollisionWorld::new(vec![], true);
            let c = check_state(&world, &robot, &robot.home, None, &IgnoreSet::default(), &CollisionParams::default());
            assert_eq!(c, None);
        }
    }

    #[test]
    fn coincident_structure_capsule_collides() {
        let robot = default_robot(false);
        let fk = robot.forward_kinematics(&robot.home).unwrap();
        let link = robot.links[3].capsules[0].transformed(&fk.links[3]);
        let world = CollisionWorld::new(vec![], true).with_capsules(vec![(0, link)]);
        assert!(state_in_collision(&world, &robot, &robot.home, None, &IgnoreSet::default(), &CollisionParams::default()));
        // arm links never use the ignore set
        assert!(state_in_collision(&world, &robot, &robot.home, None, &IgnoreSet::elements([0]), &CollisionParams::default()));
    }

    #[test]
    fn tangent_held_bar_needs_ignore_set() {
        let robot = default_robot(true);
        let tool = robot.tool_pose(&robot.home).unwrap();
        // held bar along the tool x axis through the tool point
        let r = 0.01;
        let held_local = cap([-0.1, 0.0, 0.0], [0.1, 0.0, 0.0], r);
        let held_world = held_local.transformed(&tool);
        // two neighbours resting tangentially under each end
        let down = tool.rotation * Vector3::new(0.0, 0.0, 1.0) * (2.0 * r);
        let side = tool.rotation * Vector3::new(0.0, 1.0, 0.0) * 0.05;
        let n1 = Capsule::new(held_world.p0 + down - side, held_world.p0 + down + side, r);
        let n2 = Capsule::new(held_world.p1 + down - side, held_world.p1 + down + side, r);
        assert!(capsule_distance(&held_world, &n1).abs() < 1e-12);
        let world = CollisionWorld::new(vec![], false).with_capsules(vec![(1, n1), (2, n2)]);
        let held = HeldElement { element: 0, capsule: held_local };
        let p = CollisionParams::default();
        assert!(!state_in_collision(&world, &robot, &robot.home, Some(&held), &IgnoreSet::elements([1, 2]), &p));
        assert_eq!(
            check_state(&world, &robot, &robot.home, Some(&held), &IgnoreSet::default(), &p),
            Some(Contact::HeldStructure(1))
        );
    }

    #[test]
    fn trajectory_checks() {
        let robot = default_robot(false);
        let p = CollisionParams::default();
        let empty = CollisionWorld::new(vec![], true);
        let ig = IgnoreSet::default();
        let traj = vec![robot.home.clone(); 3];
        assert_eq!(trajectory_in_collision(&empty, &robot, &traj, None, &ig, &p), None);

        // swing the base through a post
        let mut a = robot.home.clone();
        let mut b = robot.home.clone();
        a.0[0] = -1.2;
        b.0[0] = 1.2;
        let tool = robot.tool_pose(&robot.home).unwrap().translation.vector;
        let post = cap([tool.x, tool.y, 0.0], [tool.x, tool.y, 2.0], 0.03);
        let world = CollisionWorld::new(vec![post], true);
        let traj = vec![a, b];
        let idx = trajectory_in_collision(&world, &robot, &traj, None, &ig, &p).unwrap();
        let states = resample(&traj, p.max_joint_step);
        assert!(state_in_collision(&world, &robot, &states[idx], None, &ig, &p));
    }

    #[test]
    fn finer_resolution_never_clears_a_collision() {
        let robot = default_robot(false);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ig = IgnoreSet::default();
        let coarse = CollisionParams::default();
        let fine = CollisionParams { max_joint_step: coarse.max_joint_step / 2.0, ..coarse };
        for _ in 0..100 {
            let obstacles = (0..3)
                .map(|_| {
                    let p = Point3::new(rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8), rng.random_range(0.0..1.2));
                    Capsule::new(p, p + Vector3::new(0.0, 0.0, 0.3), rng.random_range(0.02..0.1))
                })
                .collect();
            let world = CollisionWorld::new(obstacles, true);
            let traj = vec![robot.sample_configuration(&mut rng), robot.sample_configuration(&mut rng)];
            if trajectory_in_collision(&world, &robot, &traj, None, &ig, &coarse).is_some() {
                assert!(trajectory_in_collision(&world, &robot, &traj, None, &ig, &fine).is_some());
            }
        }
    }

    #[test]
    fn clearance_is_monotone() {
        let robot = default_robot(false);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let ig = IgnoreSet::default();
        for _ in 0..300 {
            let p = Point3::new(rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8), rng.random_range(0.0..1.2));
            let world = CollisionWorld::new(vec![Capsule::new(p, p + Vector3::new(0.2, 0.0, 0.0), 0.05)], true);
            let q = robot.sample_configuration(&mut rng);
            let c = rng.random_range(0.0..0.05);
            let small = CollisionParams { clearance: c, ..Default::default() };
            let big = CollisionParams { clearance: c + rng.random_range(0.0..0.05), ..Default::default() };
            if state_in_collision(&world, &robot, &q, None, &ig, &small) {
                assert!(state_in_collision(&world, &robot, &q, None, &ig, &big));
            }
        }
    }
}
