//! Versioned JSON file formats: structures, robot cells, plans and stats.

use std::collections::BTreeSet;

use nalgebra::{Isometry3, Point3, Unit, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::collision::Capsule;
use crate::config::PlannerConfig;
use crate::kinematics::{Configuration, Joint, Link, Pose, RobotModel};
use crate::model::{BarElement, BarStructure, ElementId, ElementKind, Material, Mode, ModelError, Node, Section, DEFAULT_GROUND_EPSILON};
use crate::motion::{pose_serde, Workcell};
use crate::search::SearchStats;
use crate::skeleton::{Action, ConstructionPlan, ElementStep};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("malformed file")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported format_version {found} (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("invalid structure")]
    Model(#[from] ModelError),
    #[error("invalid file: {0}")]
    Invalid(String),
}

fn check_version(v: u32) -> Result<(), FormatError> {
    if v == FORMAT_VERSION {
        Ok(())
    } else {
        Err(FormatError::Version { found: v })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialRecord {
    pub name: String,
    pub youngs_modulus: f64,
    pub shear_modulus: f64,
    pub density: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cross_section: Option<Section>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub id: usize,
    pub xyz: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grounded: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElementRecord {
    pub id: usize,
    pub ends: [usize; 2],
    pub radius: f64,
    pub kind: ElementKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub material_ref: Option<String>,
    /// Connectors only: the two bars joined.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joins: Option<[usize; 2]>,
}

/// On-disk structure document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureFile {
    pub format_version: u32,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub materials: Vec<MaterialRecord>,
    pub nodes: Vec<NodeRecord>,
    pub elements: Vec<ElementRecord>,
}

impl StructureFile {
    pub fn from_structure(s: &BarStructure) -> Self {
        StructureFile {
            format_version: FORMAT_VERSION,
            mode: s.mode,
            ground_epsilon: Some(s.ground_epsilon),
            materials: s
                .materials
                .iter()
                .map(|m| MaterialRecord {
                    name: m.name.clone(),
                    youngs_modulus: m.youngs_modulus,
                    shear_modulus: m.shear_modulus,
                    density: m.density,
                    cross_section: m.section,
                })
                .collect(),
            nodes: s
                .nodes
                .iter()
                .map(|n| NodeRecord {
                    id: n.id,
                    xyz: [n.position.x, n.position.y, n.position.z],
                    grounded: Some(n.grounded),
                })
                .collect(),
            elements: s
                .elements
                .iter()
                .map(|e| ElementRecord {
                    id: e.id,
                    ends: [e.end_a, e.end_b],
                    radius: e.radius,
                    kind: e.kind,
                    material_ref: Some(s.materials[e.material].name.clone()),
                    joins: e.joins,
                })
                .collect(),
        }
    }

    /// Resolves defaults and validates.
    pub fn into_structure(self) -> Result<BarStructure, FormatError> {
        check_version(self.format_version)?;
        let eps = self.ground_epsilon.unwrap_or(DEFAULT_GROUND_EPSILON);
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(FormatError::Invalid(format!("ground_epsilon must be a non-negative number, got {eps}")));
        }
        let materials: Vec<Material> = if self.materials.is_empty() {
            vec![Material::default_pvc()]
        } else {
            self.materials
                .iter()
                .map(|m| Material {
                    name: m.name.clone(),
                    youngs_modulus: m.youngs_modulus,
                    shear_modulus: m.shear_modulus,
                    density: m.density,
                    section: m.cross_section,
                })
                .collect()
        };
        let nodes = self
            .nodes
            .iter()
            .map(|n| Node {
                id: n.id,
                position: Point3::from(n.xyz),
                grounded: n.grounded.unwrap_or(n.xyz[2] <= eps),
            })
            .collect();
        let elements = self
            .elements
            .iter()
            .map(|e| {
                let material = match &e.material_ref {
                    None => Ok(0),
                    Some(name) => materials
                        .iter()
                        .position(|m| &m.name == name)
                        .ok_or_else(|| FormatError::Invalid(format!("element {} references unknown material `{name}`", e.id))),
                }?;
                Ok(BarElement {
                    id: e.id,
                    end_a: e.ends[0],
                    end_b: e.ends[1],
                    radius: e.radius,
                    kind: e.kind,
                    material,
                    joins: e.joins,
                })
            })
            .collect::<Result<Vec<_>, FormatError>>()?;
        Ok(BarStructure::new(self.mode, nodes, elements, materials, eps)?)
    }
}

pub fn parse_structure(text: &str) -> Result<BarStructure, FormatError> {
    serde_json::from_str::<StructureFile>(text)?.into_structure()
}

pub fn structure_to_json(s: &BarStructure) -> String {
    serde_json::to_string_pretty(&StructureFile::from_structure(s)).expect("structure serializes")
}

/// SHA-256 (hex) of the canonical compact JSON form of a structure.
pub fn structure_hash(s: &BarStructure) -> String {
    let bytes = serde_json::to_vec(&StructureFile::from_structure(s)).expect("structure serializes");
    hex(&Sha256::digest(&bytes))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointRecord {
    pub name: String,
    #[serde(with = "pose_serde")]
    pub origin: Pose,
    pub axis: [f64; 3],
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkRecord {
    pub capsules: Vec<Capsule>,
    #[serde(default = "default_true")]
    pub check_ground: bool,
}

fn default_true() -> bool {
    true
}

/// On-disk robot cell: arm, tool and workcell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotFile {
    pub format_version: u32,
    pub name: String,
    #[serde(with = "pose_serde")]
    pub base_frame: Pose,
    pub joints: Vec<JointRecord>,
    pub links: Vec<LinkRecord>,
    #[serde(with = "pose_serde")]
    pub tool_frame: Pose,
    pub tool_capsules: Vec<Capsule>,
    pub home: Vec<f64>,
    #[serde(default)]
    pub disabled_collisions: Vec<[usize; 2]>,
    #[serde(default = "Workcell::open")]
    pub workcell: Workcell,
}

impl RobotFile {
    pub fn new(robot: &RobotModel, workcell: &Workcell) -> Self {
        RobotFile {
            format_version: FORMAT_VERSION,
            name: robot.name.clone(),
            base_frame: robot.base_frame,
            joints: robot
                .joints
                .iter()
                .map(|j| JointRecord {
                    name: j.name.clone(),
                    origin: j.origin,
                    axis: [j.axis.x, j.axis.y, j.axis.z],
                    lower: j.lower,
                    upper: j.upper,
                })
                .collect(),
            links: robot
                .links
                .iter()
                .map(|l| LinkRecord {
                    capsules: l.capsules.clone(),
                    check_ground: l.check_ground,
                })
                .collect(),
            tool_frame: robot.tool_frame,
            tool_capsules: robot.tool_capsules.clone(),
            home: robot.home.0.clone(),
            disabled_collisions: robot.disabled_collisions.iter().map(|&(a, b)| [a, b]).collect(),
            workcell: workcell.clone(),
        }
    }

    pub fn into_parts(self) -> Result<(RobotModel, Workcell), FormatError> {
        check_version(self.format_version)?;
        let joints = self
            .joints
            .into_iter()
            .map(|j| {
                let axis = Vector3::from(j.axis);
                if !(axis.norm() > 1e-9) {
                    return Err(FormatError::Invalid(format!("joint {} has a zero axis", j.name)));
                }
                Ok(Joint {
                    name: j.name,
                    origin: j.origin,
                    axis: Unit::new_normalize(axis),
                    lower: j.lower,
                    upper: j.upper,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let robot = RobotModel {
            name: self.name,
            base_frame: self.base_frame,
            joints,
            links: self
                .links
                .into_iter()
                .map(|l| Link {
                    capsules: l.capsules,
                    check_ground: l.check_ground,
                })
                .collect(),
            tool_frame: self.tool_frame,
            tool_capsules: self.tool_capsules,
            home: Configuration(self.home),
            disabled_collisions: self.disabled_collisions.iter().map(|p| (p[0].min(p[1]), p[0].max(p[1]))).collect::<BTreeSet<_>>(),
        };
        robot.validate().map_err(|e| FormatError::Invalid(e.to_string()))?;
        if let Some(r) = &self.workcell.rack {
            if r.rails.iter().any(|c| !(c.radius > 0.0)) {
                return Err(FormatError::Invalid("rack rail radius must be positive".into()));
            }
        }
        if self.workcell.obstacles.iter().any(|c| !(c.radius > 0.0)) {
            return Err(FormatError::Invalid("obstacle radius must be positive".into()));
        }
        Ok((robot, self.workcell))
    }
}

pub fn parse_robot(text: &str) -> Result<(RobotModel, Workcell), FormatError> {
    serde_json::from_str::<RobotFile>(text)?.into_parts()
}

pub fn robot_to_json(robot: &RobotModel, workcell: &Workcell) -> String {
    serde_json::to_string_pretty(&RobotFile::new(robot, workcell)).expect("robot serializes")
}

/// On-disk construction plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub format_version: u32,
    pub structure_hash: String,
    pub robot: String,
    pub mode: Mode,
    pub seed: u64,
    pub config: PlannerConfig,
    pub sequence: Vec<ElementId>,
    pub steps: Vec<ElementStep>,
    pub final_transit: Action,
}

impl PlanFile {
    pub fn new(structure: &BarStructure, robot: &RobotModel, config: &PlannerConfig, plan: ConstructionPlan) -> Self {
        PlanFile {
            format_version: FORMAT_VERSION,
            structure_hash: structure_hash(structure),
            robot: robot.name.clone(),
            mode: plan.mode,
            seed: config.seed,
            config: config.clone(),
            sequence: plan.sequence,
            steps: plan.steps,
            final_transit: plan.final_transit,
        }
    }

    pub fn plan(&self) -> ConstructionPlan {
        ConstructionPlan {
            mode: self.mode,
            sequence: self.sequence.clone(),
            steps: self.steps.clone(),
            final_transit: self.final_transit.clone(),
        }
    }

    /// Fails unless the plan was made for `structure`.
    pub fn check_structure(&self, structure: &BarStructure) -> Result<(), FormatError> {
        let h = structure_hash(structure);
        if h != self.structure_hash {
            return Err(FormatError::Invalid(format!(
                "plan was made for structure {}, this structure hashes to {h}",
                self.structure_hash
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plan serializes")
    }
}

pub fn parse_plan(text: &str) -> Result<PlanFile, FormatError> {
    let plan: PlanFile = serde_json::from_str(text)?;
    check_version(plan.format_version)?;
    Ok(plan)
}

/// On-disk search statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsFile {
    pub format_version: u32,
    pub structure_hash: String,
    pub seed: u64,
    pub stats: SearchStats,
}

pub fn parse_stats(text: &str) -> Result<StatsFile, FormatError> {
    let s: StatsFile = serde_json::from_str(text)?;
    check_version(s.format_version)?;
    Ok(s)
}

/// Deformation history as CSV with a header row.
pub fn history_csv(rows: &[crate::stiffness::HistoryRow]) -> String {
    let mut out = String::from("step,element,max_translation_norm,argmax_node\n");
    for r in rows {
        out.push_str(&format!("{},{},{:e},{}\n", r.step, r.element, r.max_translation_norm, r.argmax_node));
    }
    out
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
enum SceneLine<'a> {
    Capsule {
        source: &'a str,
        id: usize,
        p0: [f64; 3],
        p1: [f64; 3],
        radius: f64,
    },
    Trajectory {
        step: Option<usize>,
        element: Option<ElementId>,
        kind: crate::motion::TrajectoryKind,
        waypoints: &'a [Configuration],
    },
}

fn capsule_line(source: &str, id: usize, c: &Capsule) -> String {
    serde_json::to_string(&SceneLine::Capsule {
        source,
        id,
        p0: c.p0.into(),
        p1: c.p1.into(),
        radius: c.radius,
    })
    .expect("scene serializes")
}

/// JSON-lines scene: structure, obstacle and rail capsules, the robot at
/// home, then every trajectory of the plan in order.
pub fn scene_jsonl(
    structure: &BarStructure,
    robot: Option<(&RobotModel, &Workcell)>,
    plan: Option<&ConstructionPlan>,
) -> String {
    let mut lines = Vec::new();
    for &e in structure.members() {
        lines.push(capsule_line("structure", e, &crate::collision::element_capsule(structure, e)));
    }
    if let Some((robot, wc)) = robot {
        for (i, c) in wc.obstacles.iter().enumerate() {
            lines.push(capsule_line("obstacle", i, c));
        }
        if let Some(rack) = &wc.rack {
            for (i, c) in rack.rails.iter().enumerate() {
                lines.push(capsule_line("rail", i, c));
            }
        }
        let fk = robot.forward_kinematics(&robot.home).expect("home matches robot");
        for (i, link) in robot.links.iter().enumerate() {
            for c in &link.capsules {
                lines.push(capsule_line("robot", i, &c.transformed(&fk.links[i])));
            }
        }
        for c in &robot.tool_capsules {
            lines.push(capsule_line("robot", robot.tool_link(), &c.transformed(&fk.tool)));
        }
    }
    if let Some(plan) = plan {
        let steps = plan.steps.iter().enumerate().map(|(i, s)| (Some(i), Some(s.element), &s.actions));
        let last = std::iter::once((None, None, &plan.final_transit)).map(|(a, b, act)| (a, b, std::slice::from_ref(act)));
        for (step, element, actions) in steps.map(|(a, b, acts)| (a, b, acts.as_slice())).chain(last) {
            for t in actions.iter().flat_map(|a| &a.trajectories) {
                lines.push(
                    serde_json::to_string(&SceneLine::Trajectory {
                        step,
                        element,
                        kind: t.kind,
                        waypoints: &t.waypoints,
                    })
                    .expect("scene serializes"),
                );
            }
        }
    }
    let mut out = lines.join("\n");
    out.push('\n');
    out
}

/// Convenience used by tests and the demo: an identity pose.
pub fn identity_pose() -> Pose {
    Isometry3::identity()
}
