//! Serial revolute arm: forward kinematics, geometric Jacobian and damped
//! least-squares inverse kinematics.

use std::collections::BTreeSet;
use std::f64::consts::{PI, TAU};
use std::ops::Deref;

use nalgebra::{DMatrix, DVector, Isometry3, Point3, Unit, UnitQuaternion, Vector3, Vector6};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::collision::Capsule;

pub type Pose = Isometry3<f64>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KinematicsError {
    #[error("configuration has {got} values, robot has {expected} joints")]
    Dimension { expected: usize, got: usize },
    #[error("invalid robot model: {0}")]
    InvalidModel(String),
    #[error("no inverse kinematics solution found")]
    NoSolution,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration(pub Vec<f64>);

impl Configuration {
    pub fn zeros(n: usize) -> Self {
        Configuration(vec![0.0; n])
    }

    /// Largest per-joint difference.
    pub fn max_abs_diff(&self, other: &Configuration) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn lerp(&self, other: &Configuration, t: f64) -> Configuration {
        Configuration(self.0.iter().zip(&other.0).map(|(a, b)| a + (b - a) * t).collect())
    }

    pub fn distance(&self, other: &Configuration) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }
}

impl Deref for Configuration {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Joint {
    pub name: String,
    /// Transform from the parent link frame to the joint frame at q = 0.
    pub origin: Isometry3<f64>,
    pub axis: Unit<Vector3<f64>>,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Link {
    pub capsules: Vec<Capsule>,
    /// Whether the ground half-space is checked against this link.
    pub check_ground: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobotModel {
    pub name: String,
    pub base_frame: Isometry3<f64>,
    pub joints: Vec<Joint>,
    /// `joints.len() + 1` links; link 0 is fixed to the base frame.
    pub links: Vec<Link>,
    /// Transform from the last link to the tool tip. Tool z is the approach axis.
    pub tool_frame: Isometry3<f64>,
    pub tool_capsules: Vec<Capsule>,
    pub home: Configuration,
    /// Link pairs excluded from self-collision checks (beyond adjacent pairs).
    pub disabled_collisions: BTreeSet<(usize, usize)>,
}

/// World transforms of every link and of the tool.
#[derive(Clone, Debug)]
pub struct ForwardKinematics {
    pub links: Vec<Isometry3<f64>>,
    pub tool: Isometry3<f64>,
}

impl RobotModel {
    pub fn validate(&self) -> Result<(), KinematicsError> {
        let bad = |m: String| Err(KinematicsError::InvalidModel(m));
        if self.links.len() != self.joints.len() + 1 {
            return bad(format!("expected {} links, found {}", self.joints.len() + 1, self.links.len()));
        }
        for j in &self.joints {
            if !(j.lower < j.upper) {
                return bad(format!("joint {} has limits [{}, {}]", j.name, j.lower, j.upper));
            }
        }
        let caps = self.links.iter().flat_map(|l| &l.capsules).chain(&self.tool_capsules);
        if caps.clone().any(|c| !(c.radius > 0.0)) {
            return bad("capsule radius must be positive".into());
        }
        if self.home.len() != self.joints.len() || !self.within_limits(&self.home) {
            return bad("home configuration outside joint limits".into());
        }
        Ok(())
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    /// Link index used for tool capsules.
    pub fn tool_link(&self) -> usize {
        self.joints.len() + 1
    }

    pub fn checks_ground(&self, link: usize) -> bool {
        link >= self.links.len() || self.links[link].check_ground
    }

    /// Whether links `i` and `j` are tested against each other.
    pub fn self_check_pair(&self, i: usize, j: usize) -> bool {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        b > a + 1 && !self.disabled_collisions.contains(&(a, b))
    }

    pub fn within_limits(&self, q: &Configuration) -> bool {
        q.len() == self.joints.len() && q.iter().zip(&self.joints).all(|(v, j)| *v >= j.lower && *v <= j.upper)
    }

    pub fn sample_configuration(&self, rng: &mut impl Rng) -> Configuration {
        Configuration(self.joints.iter().map(|j| rng.random_range(j.lower..=j.upper)).collect())
    }

    fn check_dim(&self, q: &Configuration) -> Result<(), KinematicsError> {
        if q.len() != self.joints.len() {
            return Err(KinematicsError::Dimension {
                expected: self.joints.len(),
                got: q.len(),
            });
        }
        Ok(())
    }

    pub fn forward_kinematics(&self, q: &Configuration) -> Result<ForwardKinematics, KinematicsError> {
        self.check_dim(q)?;
        let mut links = Vec::with_capacity(self.links.len());
        let mut t = self.base_frame;
        links.push(t);
        for (j, v) in self.joints.iter().zip(q.iter()) {
            t = t * j.origin * UnitQuaternion::from_axis_angle(&j.axis, *v);
            links.push(t);
        }
        Ok(ForwardKinematics {
            tool: t * self.tool_frame,
            links,
        })
    }

    pub fn tool_pose(&self, q: &Configuration) -> Result<Pose, KinematicsError> {
        Ok(self.forward_kinematics(q)?.tool)
    }

    /// Geometric Jacobian of the tool point: rows 0..3 linear, 3..6 angular.
    pub fn jacobian(&self, q: &Configuration) -> Result<DMatrix<f64>, KinematicsError> {
        let fk = self.forward_kinematics(q)?;
        Ok(self.jacobian_from(&fk))
    }

    fn jacobian_from(&self, fk: &ForwardKinematics) -> DMatrix<f64> {
        let n = self.joints.len();
        let p = fk.tool.translation.vector;
        let mut jac = DMatrix::zeros(6, n);
        for (i, j) in self.joints.iter().enumerate() {
            let frame = fk.links[i] * j.origin;
            let axis = frame.rotation * j.axis.into_inner();
            let lin = axis.cross(&(p - frame.translation.vector));
            jac.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
            jac.fixed_view_mut::<3, 1>(3, i).copy_from(&axis);
        }
        jac
    }

    /// Maps each joint value into its limits by whole turns; `None` if impossible.
    pub fn wrap_into_limits(&self, q: &Configuration) -> Option<Configuration> {
        let mut out = q.clone();
        for (v, j) in out.0.iter_mut().zip(&self.joints) {
            if *v < j.lower || *v > j.upper {
                let shifted = *v - TAU * ((*v - j.lower) / TAU).floor();
                if shifted > j.upper {
                    return None;
                }
                *v = shifted;
            }
        }
        Some(out)
    }

    /// Keeps an intermediate iterate inside the limits.
    fn project(&self, q: &mut Configuration) {
        for (v, j) in q.0.iter_mut().zip(&self.joints) {
            if *v < j.lower || *v > j.upper {
                let shifted = *v - TAU * ((*v - j.lower) / TAU).floor();
                *v = if shifted <= j.upper {
                    shifted
                } else if (*v - j.upper).abs() < (*v - j.lower).abs() {
                    j.upper
                } else {
                    j.lower
                };
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IkParams {
    pub restarts: usize,
    pub max_iterations: usize,
    pub damping: f64,
    /// Largest joint change per iteration (rad).
    pub max_step: f64,
    pub position_tolerance: f64,
    pub orientation_tolerance: f64,
    /// Allowed tool-axis misalignment for partially constrained targets (rad).
    pub axis_tolerance: f64,
}

impl Default for IkParams {
    fn default() -> Self {
        IkParams {
            restarts: 20,
            max_iterations: 150,
            damping: 0.02,
            max_step: 0.35,
            position_tolerance: 1e-4,
            orientation_tolerance: 1e-3,
            axis_tolerance: 2f64.to_radians(),
        }
    }
}

/// Rotation taking unit vector `from` onto unit vector `to`, as a rotation vector.
fn alignment_error(from: &Vector3<f64>, to: &Vector3<f64>) -> Vector3<f64> {
    let c = from.cross(to);
    let s = c.norm();
    let angle = s.atan2(from.dot(to));
    if s < 1e-12 {
        if angle > PI / 2.0 {
            // antiparallel: any perpendicular axis
            let perp = if from.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
            return from.cross(&perp).normalize() * PI;
        }
        return Vector3::zeros();
    }
    c / s * angle
}

#[derive(Clone, Copy, Debug)]
enum Target<'a> {
    Full(&'a Pose),
    Axis(&'a Point3<f64>, &'a Vector3<f64>),
}

impl RobotModel {
    fn error(&self, fk: &ForwardKinematics, target: Target) -> Vector6<f64> {
        let (pos, rot) = match target {
            Target::Full(pose) => (
                pose.translation.vector - fk.tool.translation.vector,
                (pose.rotation * fk.tool.rotation.inverse()).scaled_axis(),
            ),
            Target::Axis(p, a) => (
                p.coords - fk.tool.translation.vector,
                alignment_error(&(fk.tool.rotation * Vector3::z()), a),
            ),
        };
        Vector6::new(pos.x, pos.y, pos.z, rot.x, rot.y, rot.z)
    }

    fn accepted(&self, err: &Vector6<f64>, target: Target, p: &IkParams) -> bool {
        let pos = err.fixed_rows::<3>(0).norm();
        let rot = err.fixed_rows::<3>(3).norm();
        let rot_tol = match target {
            Target::Full(_) => p.orientation_tolerance,
            Target::Axis(..) => p.axis_tolerance,
        };
        pos <= p.position_tolerance && rot <= rot_tol
    }

    fn descend(&self, start: Configuration, target: Target, p: &IkParams) -> Option<Configuration> {
        let mut q = start;
        let n = self.joints.len();
        let lambda2 = p.damping * p.damping;
        for _ in 0..p.max_iterations {
            let fk = self.forward_kinematics(&q).ok()?;
            let err = self.error(&fk, target);
            let pos = err.fixed_rows::<3>(0).norm();
            let rot = err.fixed_rows::<3>(3).norm();
            if pos <= p.position_tolerance * 1e-3 && rot <= p.orientation_tolerance * 1e-3 {
                break;
            }
            let jac = self.jacobian_from(&fk);
            let jjt = &jac * jac.transpose() + DMatrix::identity(6, 6) * lambda2;
            let e = DVector::from_column_slice(err.as_slice());
            let y = jjt.cholesky()?.solve(&e);
            let mut dq = jac.transpose() * y;
            let m = dq.amax();
            if m > p.max_step {
                dq *= p.max_step / m;
            }
            for i in 0..n {
                q.0[i] += dq[i];
            }
            self.project(&mut q);
        }
        let fk = self.forward_kinematics(&q).ok()?;
        (self.within_limits(&q) && self.accepted(&self.error(&fk, target), target, p)).then_some(q)
    }

    fn solve(&self, target: Target, seed: &Configuration, rng: &mut impl Rng, p: &IkParams) -> Result<Configuration, KinematicsError> {
        self.check_dim(seed)?;
        let finite = match target {
            Target::Full(pose) => pose.translation.vector.iter().chain(pose.rotation.coords.iter()).all(|v| v.is_finite()),
            Target::Axis(pt, a) => pt.iter().chain(a.iter()).all(|v| v.is_finite()),
        };
        if !finite {
            return Err(KinematicsError::NoSolution);
        }
        if self.within_limits(seed) {
            let fk = self.forward_kinematics(seed)?;
            if self.accepted(&self.error(&fk, target), target, p) {
                return Ok(seed.clone());
            }
        }
        let mut start = seed.clone();
        self.project(&mut start);
        for attempt in 0..=p.restarts {
            if attempt > 0 {
                start = self.sample_configuration(rng);
            }
            if let Some(q) = self.descend(start.clone(), target, p) {
                return Ok(q);
            }
        }
        Err(KinematicsError::NoSolution)
    }

    /// Full-pose IK from `seed`, restarting from random configurations.
    pub fn inverse_kinematics(
        &self,
        target: &Pose,
        seed: &Configuration,
        rng: &mut impl Rng,
        params: &IkParams,
    ) -> Result<Configuration, KinematicsError> {
        self.solve(Target::Full(target), seed, rng, params)
    }

    /// Position IK with the tool z axis aligned to `axis`; rotation about the
    /// axis is left free.
    pub fn ik_on_partial_constraint(
        &self,
        position: &Point3<f64>,
        axis: &Unit<Vector3<f64>>,
        seed: &Configuration,
        rng: &mut impl Rng,
        params: &IkParams,
    ) -> Result<Configuration, KinematicsError> {
        self.solve(Target::Axis(position, axis), seed, rng, params)
    }

    /// Pose error (position metres, orientation radians) of `q` against `target`.
    pub fn pose_error(&self, q: &Configuration, target: &Pose) -> Result<(f64, f64), KinematicsError> {
        let t = self.tool_pose(q)?;
        Ok(pose_distance(&t, target))
    }
}

/// Position and orientation distance between two poses.
pub fn pose_distance(a: &Pose, b: &Pose) -> (f64, f64) {
    (
        (a.translation.vector - b.translation.vector).norm(),
        a.rotation.angle_to(&b.rotation),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::default_robot;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_chain(robot: &RobotModel, q: &Configuration) -> nalgebra::Matrix4<f64> {
        let mut m = robot.base_frame.to_homogeneous();
        for (j, v) in robot.joints.iter().zip(q.iter()) {
            let a = j.axis.into_inner();
            let (s, c) = v.sin_cos();
            // Rodrigues rotation matrix written out by hand
            let k = nalgebra::Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0);
            let r = nalgebra::Matrix3::identity() + k * s + k * k * (1.0 - c);
            let mut h = nalgebra::Matrix4::identity();
            h.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
            m = m * j.origin.to_homogeneous() * h;
        }
        m * robot.tool_frame.to_homogeneous()
    }

    #[test]
    fn fk_matches_naive_chain() {
        let robot = default_robot(false);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let q = robot.sample_configuration(&mut rng);
            let t = robot.tool_pose(&q).unwrap();
            let m = naive_chain(&robot, &q);
            let p = Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]);
            assert!((t.translation.vector - p).norm() <= 1e-12);
            assert!((t.rotation.norm() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn base_rotation_rotates_tool_about_base_axis() {
        let robot = default_robot(false);
        let q0 = robot.home.clone();
        let mut q1 = q0.clone();
        q1.0[0] += 0.7;
        let p0 = robot.tool_pose(&q0).unwrap().translation.vector;
        let p1 = robot.tool_pose(&q1).unwrap().translation.vector;
        let expected = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 0.7) * p0;
        assert!((expected - p1).norm() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let robot = default_robot(false);
        assert!(matches!(
            robot.forward_kinematics(&Configuration::zeros(3)),
            Err(KinematicsError::Dimension { expected: 6, got: 3 })
        ));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let robot = default_robot(false);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = 1e-6;
        for _ in 0..50 {
            let q = robot.sample_configuration(&mut rng);
            let jac = robot.jacobian(&q).unwrap();
            let t0 = robot.tool_pose(&q).unwrap();
            for i in 0..robot.dof() {
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp.0[i] += h;
                qm.0[i] -= h;
                let tp = robot.tool_pose(&qp).unwrap();
                let tm = robot.tool_pose(&qm).unwrap();
                let dv = (tp.translation.vector - tm.translation.vector) / (2.0 * h);
                let dw = ((tp.rotation * t0.rotation.inverse()).scaled_axis()
                    - (tm.rotation * t0.rotation.inverse()).scaled_axis())
                    / (2.0 * h);
                let col = Vector6::new(dv.x, dv.y, dv.z, dw.x, dw.y, dw.z);
                let analytic = jac.column(i).into_owned();
                let scale = analytic.norm().max(1e-3);
                assert!((col - Vector6::from_column_slice(analytic.as_slice())).norm() / scale <= 1e-5);
            }
        }
    }

    #[test]
    fn ik_fixed_point_returns_seed() {
        let robot = default_robot(false);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = robot.sample_configuration(&mut rng);
        let target = robot.tool_pose(&q).unwrap();
        let sol = robot.inverse_kinematics(&target, &q, &mut rng, &IkParams::default()).unwrap();
        assert_eq!(sol, q);
    }

    #[test]
    fn ik_far_target_fails() {
        let robot = default_robot(false);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let target = Isometry3::translation(1e4, 0.0, 0.0);
        let r = robot.inverse_kinematics(&target, &robot.home, &mut rng, &IkParams::default());
        assert_eq!(r, Err(KinematicsError::NoSolution));
    }

    #[test]
    fn ik_solves_random_reachable_targets() {
        let robot = default_robot(false);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = IkParams::default();
        let mut solved = 0;
        for _ in 0..100 {
            let q = robot.sample_configuration(&mut rng);
            let target = robot.tool_pose(&q).unwrap();
            if let Ok(sol) = robot.inverse_kinematics(&target, &robot.home, &mut rng, &params) {
                let (dp, dr) = robot.pose_error(&sol, &target).unwrap();
                assert!(dp <= 1e-4 && dr <= 1e-3);
                assert!(robot.within_limits(&sol));
                solved += 1;
            }
        }
        assert!(solved >= 95, "solved {solved}/100");
    }

    #[test]
    fn partial_ik_seed_on_axis_is_unchanged() {
        let robot = default_robot(false);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let q = robot.home.clone();
        let t = robot.tool_pose(&q).unwrap();
        let axis = Unit::new_normalize(t.rotation * Vector3::z());
        let p = Point3::from(t.translation.vector);
        let sol = robot.ik_on_partial_constraint(&p, &axis, &q, &mut rng, &IkParams::default()).unwrap();
        assert_eq!(sol, q);
    }

    #[test]
    fn partial_ik_aligns_axis_and_full_ik_agrees_on_some_rotation() {
        let robot = default_robot(false);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let params = IkParams::default();
        let down = Unit::new_normalize(Vector3::new(0.0, 0.0, -1.0));
        let mut checked = 0;
        for k in 0..10 {
            let p = Point3::new(0.45 + 0.03 * k as f64, -0.2 + 0.04 * k as f64, 0.1 + 0.02 * k as f64);
            let Ok(sol) = robot.ik_on_partial_constraint(&p, &down, &robot.home, &mut rng, &params) else {
                continue;
            };
            let t = robot.tool_pose(&sol).unwrap();
            assert!((t.translation.vector - p.coords).norm() <= 1e-4);
            assert!((t.rotation * Vector3::z()).dot(&down) >= 2f64.to_radians().cos());
            assert!(robot.within_limits(&sol));
            // discretized rotations about the axis: one must admit a full-pose solution
            let base = UnitQuaternion::rotation_between(&Vector3::z(), &down).unwrap_or(UnitQuaternion::from_axis_angle(&Vector3::x_axis(), PI));
            let found = (0..32).any(|r| {
                let rot = UnitQuaternion::from_axis_angle(&down, r as f64 * TAU / 32.0) * base;
                let pose = Isometry3::from_parts(p.coords.into(), rot);
                robot.inverse_kinematics(&pose, &sol, &mut rng, &params).is_ok()
            });
            assert!(found);
            checked += 1;
        }
        assert!(checked >= 8);
    }

    #[test]
    fn wrap_into_limits_uses_whole_turns() {
        let robot = default_robot(false);
        let mut q = robot.home.clone();
        q.0[0] += TAU;
        let w = robot.wrap_into_limits(&q).unwrap();
        assert!((w[0] - robot.home[0]).abs() < 1e-12);
    }
}
