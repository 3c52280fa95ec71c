//! Bundled robot and structure definitions.

use std::collections::BTreeSet;
use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};

use crate::collision::{capsule_distance, closest_points, Capsule};
use crate::kinematics::{Configuration, Joint, Link, RobotModel};
use crate::motion::{Rack, Workcell};
use crate::model::{BarElement, BarStructure, ElementId, ElementKind, Material, Mode, ModelError, Node, NodeId, DEFAULT_GROUND_EPSILON};

fn cap(a: [f64; 3], b: [f64; 3], r: f64) -> Capsule {
    Capsule::new(Point3::from(a), Point3::from(b), r)
}

fn joint(name: &str, xyz: [f64; 3], axis: Vector3<f64>, lower: f64, upper: f64) -> Joint {
    Joint {
        name: name.into(),
        origin: Isometry3::translation(xyz[0], xyz[1], xyz[2]),
        axis: nalgebra::Unit::new_normalize(axis),
        lower,
        upper,
    }
}

fn link(capsules: Vec<Capsule>, check_ground: bool) -> Link {
    Link { capsules, check_ground }
}

/// Six-axis arm with about 1.2 m reach, base at the origin. `gripper` selects
/// the bar gripper instead of the extrusion nozzle.
///
/// At q = 0 the upper arm is vertical and the forearm points along +x.
pub fn default_robot(gripper: bool) -> RobotModel {
    let y = Vector3::y();
    let joints = vec![
        joint("j1", [0.0, 0.0, 0.30], Vector3::z(), -170f64.to_radians(), 170f64.to_radians()),
        joint("j2", [0.10, 0.0, 0.20], y, -100f64.to_radians(), 110f64.to_radians()),
        joint("j3", [0.0, 0.0, 0.55], y, -140f64.to_radians(), 80f64.to_radians()),
        joint("j4", [0.20, 0.0, 0.0], Vector3::x(), -PI, PI),
        joint("j5", [0.30, 0.0, 0.0], y, -125f64.to_radians(), 125f64.to_radians()),
        joint("j6", [0.08, 0.0, 0.0], Vector3::x(), -2.0 * PI, 2.0 * PI),
    ];
    let links = vec![
        link(vec![cap([0.0, 0.0, 0.0], [0.0, 0.0, 0.30], 0.12)], false),
        link(vec![cap([0.0, 0.0, 0.0], [0.10, 0.0, 0.20], 0.09)], false),
        link(vec![cap([0.0, 0.0, 0.0], [0.0, 0.0, 0.55], 0.065)], true),
        link(vec![cap([0.0, 0.0, 0.0], [0.20, 0.0, 0.0], 0.06)], true),
        link(vec![cap([0.0, 0.0, 0.0], [0.30, 0.0, 0.0], 0.05)], true),
        link(vec![cap([0.0, 0.0, 0.0], [0.06, 0.0, 0.0], 0.045)], true),
        link(vec![cap([0.0, 0.0, 0.0], [0.02, 0.0, 0.0], 0.04)], true),
    ];
    let (tool_len, tool_capsules) = if gripper {
        (
            0.14,
            vec![
                cap([0.0, 0.0, -0.14], [0.0, 0.0, -0.08], 0.035),
                cap([0.0, 0.0, -0.08], [0.0, 0.0, -0.045], 0.022),
            ],
        )
    } else {
        (
            0.15,
            vec![
                cap([0.0, 0.0, -0.15], [0.0, 0.0, -0.07], 0.025),
                cap([0.0, 0.0, -0.07], [0.0, 0.0, -0.025], 0.008),
            ],
        )
    };
    // tool z points along the flange x axis
    let tool_frame = Isometry3::from_parts(
        Translation3::new(tool_len, 0.0, 0.0),
        UnitQuaternion::from_axis_angle(&Vector3::y_axis(), FRAC_PI_2),
    );
    RobotModel {
        name: if gripper { "arm6-gripper" } else { "arm6-extruder" }.into(),
        base_frame: Isometry3::identity(),
        joints,
        links,
        tool_frame,
        tool_capsules,
        // tool pointing down above the work area
        home: Configuration(vec![0.0, -0.35, 0.6, 0.0, 1.3, 0.0]),
        disabled_collisions: BTreeSet::from([(0, 2), (4, 6), (5, 7), (4, 7)]),
    }
}

/// Incremental construction of a [`BarStructure`] from coordinates; nodes
/// with identical positions are merged.
pub struct StructureBuilder {
    mode: Mode,
    radius: f64,
    ground_level: f64,
    nodes: Vec<Point3<f64>>,
    elements: Vec<BarElement>,
}

impl StructureBuilder {
    pub fn new(mode: Mode, radius: f64) -> Self {
        StructureBuilder {
            mode,
            radius,
            ground_level: DEFAULT_GROUND_EPSILON,
            nodes: vec![],
            elements: vec![],
        }
    }

    pub fn node(&mut self, p: [f64; 3]) -> NodeId {
        let p = Point3::from(p);
        if let Some(i) = self.nodes.iter().position(|q| (q - p).norm() < 1e-9) {
            return i;
        }
        self.nodes.push(p);
        self.nodes.len() - 1
    }

    /// Nodes at or below `z` are supports (bars lying on the ground have
    /// their axis one radius up).
    pub fn set_ground_level(&mut self, z: f64) {
        self.ground_level = z;
    }

    /// Radius for subsequently added elements.
    pub fn set_radius(&mut self, radius: f64) {
        self.radius = radius;
    }

    pub fn bar(&mut self, a: [f64; 3], b: [f64; 3]) -> ElementId {
        let (end_a, end_b) = (self.node(a), self.node(b));
        let kind = match self.mode {
            Mode::Extrusion => ElementKind::ExtrudedBar,
            Mode::Assembly => ElementKind::AssembledBar,
        };
        self.push(end_a, end_b, kind, None)
    }

    /// A connector from the point `pa` on bar `a` to the point `pb` on bar `b`.
    pub fn connector(&mut self, a: ElementId, pa: [f64; 3], b: ElementId, pb: [f64; 3]) -> ElementId {
        let (end_a, end_b) = (self.node(pa), self.node(pb));
        self.push(end_a, end_b, ElementKind::Connector, Some([a, b]))
    }

    /// Adds a connector between every pair of bars whose surfaces touch
    /// (within `tol`), at their closest axis points.
    pub fn connect_touching(&mut self, tol: f64) {
        let bars: Vec<(ElementId, Capsule)> = self
            .elements
            .iter()
            .filter(|e| !e.is_connector())
            .map(|e| (e.id, Capsule::new(self.nodes[e.end_a], self.nodes[e.end_b], e.radius)))
            .collect();
        for (i, (a, ca)) in bars.iter().enumerate() {
            for (b, cb) in &bars[i + 1..] {
                if capsule_distance(ca, cb).abs() <= tol {
                    let (pa, pb) = closest_points(ca, cb);
                    self.connector(*a, pa.into(), *b, pb.into());
                }
            }
        }
    }

    fn push(&mut self, end_a: NodeId, end_b: NodeId, kind: ElementKind, joins: Option<[ElementId; 2]>) -> ElementId {
        let id = self.elements.len();
        self.elements.push(BarElement {
            id,
            end_a,
            end_b,
            radius: self.radius,
            kind,
            material: 0,
            joins,
        });
        id
    }

    pub fn build(self) -> Result<BarStructure, ModelError> {
        let nodes = self
            .nodes
            .iter()
            .enumerate()
            .map(|(id, &position)| Node {
                id,
                position,
                grounded: position.z <= self.ground_level,
            })
            .collect();
        BarStructure::new(self.mode, nodes, self.elements, vec![Material::default_pvc()], self.ground_level)
    }
}

/// Radius of extruded filament bars (m).
pub const EXTRUSION_RADIUS: f64 = 0.002;
/// Radius of assembled rods (m).
pub const ASSEMBLY_RADIUS: f64 = 0.006;

/// Two vertical bars stacked in front of the robot.
pub fn stack2() -> BarStructure {
    let mut b = StructureBuilder::new(Mode::Extrusion, EXTRUSION_RADIUS);
    b.bar([0.55, 0.0, 0.0], [0.55, 0.0, 0.15]);
    b.bar([0.55, 0.0, 0.15], [0.55, 0.0, 0.30]);
    b.build().expect("valid fixture")
}

/// A triangle standing in the xz plane; every bar touches the ground.
pub fn triangle() -> BarStructure {
    let mut b = StructureBuilder::new(Mode::Extrusion, EXTRUSION_RADIUS);
    let (p, q, r) = ([0.45, 0.0, 0.0], [0.65, 0.0, 0.0], [0.55, 0.0, 0.15]);
    b.bar(p, q);
    b.bar(p, r);
    b.bar(q, r);
    b.build().expect("valid fixture")
}

/// Six bars on four nodes: a tetrahedron on a grounded base triangle.
pub fn tetrahedron() -> BarStructure {
    let mut b = StructureBuilder::new(Mode::Extrusion, EXTRUSION_RADIUS);
    let p = [[0.48, -0.08, 0.0], [0.48, 0.08, 0.0], [0.62, 0.0, 0.0], [0.53, 0.0, 0.13]];
    for (i, j) in [(0, 1), (1, 2), (2, 0), (0, 3), (1, 3), (2, 3)] {
        b.bar(p[i], p[j]);
    }
    b.build().expect("valid fixture")
}

/// Parameters of the [`shell`] fixture.
#[derive(Clone, Copy, Debug)]
pub struct ShellParams {
    pub center: [f64; 2],
    pub posts: usize,
    pub radius: f64,
    pub height: f64,
    /// Height of the inner ledge.
    pub ledge_height: f64,
    pub ledge_length: f64,
}

impl Default for ShellParams {
    fn default() -> Self {
        ShellParams {
            center: [0.62, 0.0],
            posts: 6,
            radius: 0.09,
            height: 0.40,
            ledge_height: 0.10,
            ledge_length: 0.09,
        }
    }
}

/// A fence of posts capped by a top ring, enclosing a horizontal ledge
/// cantilevered inward from the post facing away from the robot. The ledge
/// is the last element of the stiffness-only order but cannot be printed
/// once the fence is closed.
pub fn shell_with(p: ShellParams) -> BarStructure {
    let mut b = StructureBuilder::new(Mode::Extrusion, EXTRUSION_RADIUS);
    let [cx, cy] = p.center;
    let at = |i: usize, z: f64| {
        let a = 2.0 * PI * i as f64 / p.posts as f64 + PI;
        [cx + p.radius * a.cos(), cy + p.radius * a.sin(), z]
    };
    let far = p.posts / 2;
    for i in 0..p.posts {
        if i == far {
            b.bar(at(i, 0.0), at(i, p.ledge_height));
            b.bar(at(i, p.ledge_height), at(i, p.height));
        } else {
            b.bar(at(i, 0.0), at(i, p.height));
        }
    }
    for i in 0..p.posts {
        b.bar(at(i, p.height), at((i + 1) % p.posts, p.height));
    }
    let root = at(far, p.ledge_height);
    let (dx, dy) = (cx - root[0], cy - root[1]);
    let d = dx.hypot(dy);
    b.bar(root, [root[0] + dx / d * p.ledge_length, root[1] + dy / d * p.ledge_length, p.ledge_height]);
    b.build().expect("valid fixture")
}

pub fn shell() -> BarStructure {
    shell_with(ShellParams::default())
}

/// Open workcell with a bar rack to the robot's left: bars lie along world x
/// on two rails, centred at the rack pose.
pub fn assembly_workcell() -> Workcell {
    let (x, y, z) = (0.15, 0.50, 0.12);
    let r = 0.006;
    let rail_z = z - ASSEMBLY_RADIUS - r;
    Workcell {
        obstacles: vec![],
        ground: true,
        rack: Some(Rack {
            pose: Isometry3::translation(x, y, z),
            rails: [-0.04, 0.04]
                .iter()
                .map(|dx| cap([x + dx, y - 0.04, rail_z], [x + dx, y + 0.04, rail_z], r))
                .collect(),
        }),
    }
}

/// Parameters of a corbelled arch built from crossing rods: two log-cabin
/// piers stepping toward each other, closed by lintels across the gap.
#[derive(Clone, Debug)]
pub struct CorbelParams {
    /// Arch centre in x (the span runs along y).
    pub center_x: f64,
    /// Pier levels (alternating x-rods and y-rods, starting with x-rods).
    pub levels: usize,
    /// x positions of the y-rods.
    pub y_rod_x: Vec<f64>,
    /// Half-length of the x-rods.
    pub x_rod_half: f64,
    /// Pier centre (y) at level 0.
    pub pier_y: f64,
    /// Half-distance between the two x-rods of a pier level.
    pub pier_half: f64,
    /// Inward step of each level.
    pub step: f64,
    /// Overhang of y-rods beyond the rods they rest on.
    pub overhang: f64,
    /// y positions of the capping x-rods laid across the lintels.
    pub cap_y: Vec<f64>,
}

impl CorbelParams {
    pub fn arch() -> Self {
        CorbelParams {
            center_x: 0.60,
            levels: 9,
            y_rod_x: vec![0.56, 0.64],
            x_rod_half: 0.06,
            pier_y: 0.16,
            pier_half: 0.03,
            step: 0.012,
            overhang: 0.02,
            cap_y: vec![-0.03, 0.03],
        }
    }

    pub fn vault() -> Self {
        CorbelParams {
            center_x: 0.60,
            levels: 13,
            y_rod_x: vec![0.52, 0.60, 0.68],
            x_rod_half: 0.10,
            pier_y: 0.20,
            pier_half: 0.03,
            step: 0.012,
            overhang: 0.02,
            cap_y: vec![-0.03, 0.03],
        }
    }
}

pub fn corbel_with(p: &CorbelParams) -> BarStructure {
    let r = ASSEMBLY_RADIUS;
    let mut b = StructureBuilder::new(Mode::Assembly, r);
    b.set_ground_level(r + 1e-6);
    let z = |k: usize| r + 2.0 * r * k as f64;
    let center = |k: usize| p.pier_y - p.step * k as f64;
    for k in 0..p.levels {
        for side in [1.0, -1.0] {
            if k % 2 == 0 {
                for dy in [-p.pier_half, p.pier_half] {
                    let y = side * (center(k) + dy);
                    b.bar([p.center_x - p.x_rod_half, y, z(k)], [p.center_x + p.x_rod_half, y, z(k)]);
                }
            } else {
                let inner = center(k + 1) - p.pier_half - p.overhang;
                let outer = center(k - 1) + p.pier_half + p.overhang;
                for &x in &p.y_rod_x {
                    b.bar([x, side * inner, z(k)], [x, side * outer, z(k)]);
                }
            }
        }
    }
    // lintels rest on the top x-rods of both piers
    let top = p.levels - 1;
    let reach = center(top) + p.pier_half + p.overhang;
    let lintel = if top.is_multiple_of(2) { p.levels } else { p.levels + 1 };
    for &x in &p.y_rod_x {
        b.bar([x, -reach, z(lintel)], [x, reach, z(lintel)]);
    }
    for &y in &p.cap_y {
        b.bar([p.center_x - p.x_rod_half, y, z(lintel + 1)], [p.center_x + p.x_rod_half, y, z(lintel + 1)]);
    }
    b.connect_touching(1e-9);
    b.build().expect("valid fixture")
}

/// Corbelled arch of 40 rods (assembly).
pub fn arch() -> BarStructure {
    corbel_with(&CorbelParams::arch())
}

/// Corbelled vault of 69 rods (assembly).
pub fn vault_assembly() -> BarStructure {
    corbel_with(&CorbelParams::vault())
}

/// Barrel vault frame of 67 filament bars on the same footprint as
/// [`vault_assembly`]: semicircular ribs, longitudinal ties and panel
/// diagonals.
pub fn vault_extrusion() -> BarStructure {
    let mut b = StructureBuilder::new(Mode::Extrusion, EXTRUSION_RADIUS);
    let ribs = [0.48, 0.56, 0.64, 0.72];
    let (radius, segments) = (0.20, 7usize);
    let node = |x: f64, i: usize| {
        let a = PI * i as f64 / segments as f64;
        [x, -radius * a.cos(), radius * a.sin()]
    };
    for &x in &ribs {
        for i in 0..segments {
            b.bar(node(x, i), node(x, i + 1));
        }
    }
    for w in ribs.windows(2) {
        for i in 1..segments {
            b.bar(node(w[0], i), node(w[1], i));
        }
        for i in 0..segments {
            // diagonals lean toward the crown
            if i < segments / 2 {
                b.bar(node(w[0], i), node(w[1], i + 1));
            } else {
                b.bar(node(w[0], i + 1), node(w[1], i));
            }
        }
    }
    b.build().expect("valid fixture")
}

/// Id of the rod that must be screwed into place in [`pocket`].
pub const POCKET_ELEMENT: ElementId = 0;

/// A rod resting against two posts, boxed in by a lid and a floor rod and
/// facing a window narrower than the rod: it can only enter the pocket by
/// twisting while it slides toward the posts.
pub fn pocket() -> BarStructure {
    let r = ASSEMBLY_RADIUS;
    let (x0, z0) = (0.60, 0.20);
    let mut b = StructureBuilder::new(Mode::Assembly, r);
    b.bar([x0, -0.08, z0], [x0, 0.08, z0]);
    let posts = [[x0 + 2.0 * r, 0.05], [x0 + 2.0 * r, -0.05]];
    for [x, y] in posts {
        b.bar([x, y, 0.0], [x, y, z0 + 0.03]);
    }
    for dz in [0.017, -0.017] {
        b.bar([x0, -0.09, z0 + dz], [x0, 0.09, z0 + dz]);
    }
    let window = [[x0 - 0.085, 0.091], [x0 - 0.085, -0.091]];
    for [x, y] in window {
        b.bar([x, y, 0.0], [x, y, z0 + 0.02]);
    }
    // ties tangent to a window post and a support post
    for (w, p) in window.iter().zip(&posts) {
        let (c1, c2) = (Vector3::new(w[0], w[1], 0.0), Vector3::new(p[0], p[1], 0.0));
        let u = (c2 - c1).normalize();
        let mut n = Vector3::new(-u.y, u.x, 0.0);
        if n.y * w[1] < 0.0 {
            n = -n;
        }
        let z = 0.06;
        let a = c1 + n * 2.0 * r - u * 0.02 + Vector3::z() * z;
        let e = c2 + n * 2.0 * r + u * 0.02 + Vector3::z() * z;
        b.bar(a.into(), e.into());
    }
    b.connect_touching(1e-9);
    b.build().expect("valid fixture")
}

/// A named structure shipped in `fixtures/`.
pub struct Bundled {
    pub name: &'static str,
    pub structure: BarStructure,
}

type Generator = (&'static str, fn() -> BarStructure);

/// Every bundled structure, in a fixed order.
pub fn bundled() -> Vec<Bundled> {
    let all: [Generator; 8] = [
        ("stack2", stack2),
        ("triangle", triangle),
        ("tetrahedron", tetrahedron),
        ("shell", shell),
        ("pocket", pocket),
        ("arch", arch),
        ("vault-extrusion", vault_extrusion),
        ("vault-assembly", vault_assembly),
    ];
    all.iter()
        .map(|&(name, f)| Bundled { name, structure: f() })
        .collect()
}

/// Robot and workcell matching a construction mode.
pub fn robot_for(mode: Mode) -> (RobotModel, Workcell) {
    match mode {
        Mode::Extrusion => (default_robot(false), Workcell::open()),
        Mode::Assembly => (default_robot(true), assembly_workcell()),
    }
}

/// Bundled file name of the robot cell for `mode`.
pub fn robot_file_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Extrusion => "robot_extruder.json",
        Mode::Assembly => "robot_gripper.json",
    }
}

/// A structure with no grounded node, kept as a schema-valid but
/// semantically invalid input.
pub const FLOATING_JSON: &str = r#"{
  "format_version": 1,
  "mode": "extrusion",
  "nodes": [
    { "id": 0, "xyz": [0.55, 0.0, 0.10], "grounded": false },
    { "id": 1, "xyz": [0.55, 0.0, 0.25], "grounded": false }
  ],
  "elements": [
    { "id": 0, "ends": [0, 1], "radius": 0.002, "kind": "extruded-bar" }
  ]
}
"#;

/// File name and contents of every bundled file.
pub fn bundled_files() -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = bundled()
        .iter()
        .map(|b| (format!("{}.json", b.name), crate::io::structure_to_json(&b.structure) + "\n"))
        .collect();
    out.push(("floating.json".into(), FLOATING_JSON.into()));
    for mode in [Mode::Extrusion, Mode::Assembly] {
        let (robot, wc) = robot_for(mode);
        out.push((robot_file_name(mode).into(), crate::io::robot_to_json(&robot, &wc) + "\n"));
    }
    out
}
