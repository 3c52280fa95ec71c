//! Planner configuration with defaults.

use serde::{Deserialize, Serialize};

use crate::collision::CollisionParams;
use crate::kinematics::IkParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum HeuristicKind {
    EuclideanDist,
    #[default]
    StiffPlan,
}

impl std::str::FromStr for HeuristicKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "euclidean-dist" | "euclidean" => Ok(HeuristicKind::EuclideanDist),
            "stiff-plan" | "stiffplan" => Ok(HeuristicKind::StiffPlan),
            other => Err(format!("unknown heuristic `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RrtParams {
    /// Tree extensions per connect attempt.
    pub max_iterations: usize,
    /// Extension step length in joint space (rad, Euclidean).
    pub step: f64,
    pub goal_bias: f64,
    pub shortcut_attempts: usize,
}

impl Default for RrtParams {
    fn default() -> Self {
        RrtParams {
            max_iterations: 1500,
            step: 0.2,
            goal_bias: 0.1,
            shortcut_attempts: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Maximum allowed nodal translation under self-weight (m).
    pub tolerance: f64,
    pub collision: CollisionParams,
    pub ik: IkParams,
    pub rrt: RrtParams,
    /// Tool positional step along Cartesian paths (m).
    pub cartesian_step: f64,
    /// Tool rotational step along Cartesian paths (rad).
    pub cartesian_angle_step: f64,
    /// Randomized repair attempts per Cartesian waypoint.
    pub repair_attempts: usize,
    /// Half-angle of the extrusion tool-axis cone about world up (rad).
    pub extrusion_cone: f64,
    /// Tool-axis samples inside the cone: 1 + 8 per ring.
    pub extrusion_rings: usize,
    pub grasp_rotations: usize,
    pub grasp_sides: usize,
    pub approach_distance: f64,
    pub insertion_distance: f64,
    pub insertion_directions: usize,
    /// Screw rotation components tried for each insertion direction (rad).
    pub insertion_angles: Vec<f64>,
    pub retreat_distance: f64,
    pub heuristic: HeuristicKind,
    pub seed: u64,
    /// Wall-clock budget for the whole search (s).
    pub time_limit: f64,
    /// Optional cap on expanded states.
    pub max_expansions: Option<usize>,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            tolerance: 0.005,
            collision: CollisionParams::default(),
            ik: IkParams::default(),
            rrt: RrtParams::default(),
            cartesian_step: 0.005,
            cartesian_angle_step: 1f64.to_radians(),
            repair_attempts: 20,
            extrusion_cone: 30f64.to_radians(),
            extrusion_rings: 2,
            grasp_rotations: 16,
            grasp_sides: 2,
            approach_distance: 0.08,
            insertion_distance: 0.10,
            insertion_directions: 8,
            insertion_angles: [0.0, 15.0, -15.0, 30.0, -30.0].iter().map(|d: &f64| d.to_radians()).collect(),
            retreat_distance: 0.08,
            heuristic: HeuristicKind::StiffPlan,
            seed: 0,
            time_limit: 1800.0,
            max_expansions: None,
        }
    }
}

impl PlannerConfig {
    /// Rejects non-positive lengths, budgets and counts.
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("tolerance", self.tolerance),
            ("clearance", self.collision.clearance),
            ("max_joint_step", self.collision.max_joint_step),
            ("cartesian_step", self.cartesian_step),
            ("cartesian_angle_step", self.cartesian_angle_step),
            ("extrusion_cone", self.extrusion_cone),
            ("approach_distance", self.approach_distance),
            ("insertion_distance", self.insertion_distance),
            ("retreat_distance", self.retreat_distance),
            ("rrt.step", self.rrt.step),
            ("time_limit", self.time_limit),
            ("ik.position_tolerance", self.ik.position_tolerance),
            ("ik.orientation_tolerance", self.ik.orientation_tolerance),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.collision.contact_tolerance < 0.0 {
            return Err("contact_tolerance must be non-negative".into());
        }
        let counts = [
            ("grasp_rotations", self.grasp_rotations),
            ("grasp_sides", self.grasp_sides),
            ("insertion_directions", self.insertion_directions),
            ("rrt.max_iterations", self.rrt.max_iterations),
            ("ik.max_iterations", self.ik.max_iterations),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(format!("{name} must be at least 1"));
            }
        }
        if self.insertion_angles.is_empty() {
            return Err("insertion_angles must not be empty".into());
        }
        if !(0.0..=1.0).contains(&self.rrt.goal_bias) {
            return Err("rrt.goal_bias must lie in [0, 1]".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let c = PlannerConfig::default();
        c.validate().unwrap();
        let s = serde_json::to_string(&c).unwrap();
        let back: PlannerConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
        let partial: PlannerConfig = serde_json::from_str(r#"{"tolerance": 0.001}"#).unwrap();
        assert_eq!(partial.tolerance, 0.001);
        assert_eq!(partial.grasp_rotations, 16);
    }

    #[test]
    fn rejects_non_positive_values() {
        let c = PlannerConfig { tolerance: 0.0, ..Default::default() };
        assert!(c.validate().is_err());
        let c = PlannerConfig { grasp_sides: 0, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
