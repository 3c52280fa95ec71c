//! Bar-structure designs, partial structures and connectivity bookkeeping.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = usize;
pub type ElementId = usize;

/// Nodes with z at or below this height are treated as supports unless the
/// file says otherwise.
pub const DEFAULT_GROUND_EPSILON: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Extrusion,
    Assembly,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Extrusion => f.write_str("extrusion"),
            Mode::Assembly => f.write_str("assembly"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ElementKind {
    ExtrudedBar,
    AssembledBar,
    Connector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub position: Point3<f64>,
    pub grounded: bool,
}

/// Cross-section constants of a prismatic beam.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub area: f64,
    pub iy: f64,
    pub iz: f64,
    pub j: f64,
}

impl Section {
    /// Solid circular section.
    pub fn solid_circle(radius: f64) -> Self {
        let area = std::f64::consts::PI * radius * radius;
        let i = std::f64::consts::PI * radius.powi(4) / 4.0;
        Section {
            area,
            iy: i,
            iz: i,
            j: 2.0 * i,
        }
    }

    fn is_positive(&self) -> bool {
        self.area > 0.0 && self.iy > 0.0 && self.iz > 0.0 && self.j > 0.0
    }
}

/// Linear-elastic isotropic material. When `section` is `None` the element
/// radius defines a solid circular section.
#[derive(Clone, Debug, PartialEq)]
pub struct Material {
    pub name: String,
    pub youngs_modulus: f64,
    pub shear_modulus: f64,
    pub density: f64,
    pub section: Option<Section>,
}

impl Material {
    /// PVC-like defaults used when a file omits material data.
    pub fn default_pvc() -> Self {
        let e = 3.0e9;
        let nu = 0.38;
        Material {
            name: "default-pvc".into(),
            youngs_modulus: e,
            shear_modulus: e / (2.0 * (1.0 + nu)),
            density: 1400.0,
            section: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BarElement {
    pub id: ElementId,
    pub end_a: NodeId,
    pub end_b: NodeId,
    pub radius: f64,
    pub kind: ElementKind,
    pub material: usize,
    /// For connectors: the two bars joined.
    pub joins: Option<[ElementId; 2]>,
}

impl BarElement {
    pub fn is_connector(&self) -> bool {
        self.kind == ElementKind::Connector
    }
}

/// An immutable, validated design.
#[derive(Clone, Debug)]
pub struct BarStructure {
    pub mode: Mode,
    pub nodes: Vec<Node>,
    pub elements: Vec<BarElement>,
    pub materials: Vec<Material>,
    pub ground_epsilon: f64,
    /// Element → neighbors (elements sharing a node or joined by a connector).
    /// Connectors have empty neighbor lists; they never take part in the search.
    pub adjacency: Vec<Vec<ElementId>>,
    /// Ids of the elements the planner sequences (every non-connector).
    members: Vec<ElementId>,
    /// Per member: nodes lying on it, sorted along its axis (ends included).
    member_nodes: Vec<Vec<NodeId>>,
    /// Per member: connectors attached to it.
    member_connectors: Vec<Vec<ElementId>>,
    grounded_member: Vec<bool>,
}

impl BarStructure {
    /// Builds and validates a structure from its raw parts.
    pub fn new(
        mode: Mode,
        nodes: Vec<Node>,
        elements: Vec<BarElement>,
        materials: Vec<Material>,
        ground_epsilon: f64,
    ) -> Result<Self, ModelError> {
        let invalid = |msg: String| Err(ModelError::Validation(msg));

        for (i, n) in nodes.iter().enumerate() {
            if n.id != i {
                return invalid(format!("node ids must be dense and ordered; found {} at index {i}", n.id));
            }
            if !n.position.iter().all(|c| c.is_finite()) {
                return invalid(format!("node {i} has a non-finite coordinate"));
            }
        }
        for (i, m) in materials.iter().enumerate() {
            let sec_ok = m.section.map(|s| s.is_positive()).unwrap_or(true);
            if !(m.youngs_modulus > 0.0 && m.shear_modulus > 0.0 && m.density > 0.0 && sec_ok) {
                return invalid(format!("material {i} ({}) must have strictly positive properties", m.name));
            }
        }
        if elements.is_empty() {
            return invalid("structure has no elements".into());
        }
        for (i, e) in elements.iter().enumerate() {
            if e.id != i {
                return invalid(format!("element ids must be dense and ordered; found {} at index {i}", e.id));
            }
            if e.end_a >= nodes.len() || e.end_b >= nodes.len() {
                return invalid(format!("element {i} references a missing node"));
            }
            if e.end_a == e.end_b {
                return invalid(format!("element {i} has identical end nodes"));
            }
            let len = (nodes[e.end_b].position - nodes[e.end_a].position).norm();
            if len <= 0.0 {
                return invalid(format!("element {i} has zero length"));
            }
            if !(e.radius > 0.0) {
                return invalid(format!("element {i} must have a positive radius"));
            }
            if e.material >= materials.len() {
                return invalid(format!("element {i} references a missing material"));
            }
            match (mode, e.kind) {
                (Mode::Extrusion, ElementKind::ExtrudedBar) => {}
                (Mode::Assembly, ElementKind::AssembledBar) => {}
                (Mode::Assembly, ElementKind::Connector) => {}
                (m, k) => return invalid(format!("element {i} of kind {k:?} is not allowed in {m} mode")),
            }
            if e.is_connector() != e.joins.is_some() {
                return invalid(format!("element {i}: connectors (and only connectors) must name the two bars they join"));
            }
        }

        let members: Vec<ElementId> = elements.iter().filter(|e| !e.is_connector()).map(|e| e.id).collect();
        let n = elements.len();
        let mut member_nodes: Vec<Vec<NodeId>> = vec![Vec::new(); n];
        let mut member_connectors: Vec<Vec<ElementId>> = vec![Vec::new(); n];
        for &m in &members {
            member_nodes[m] = vec![elements[m].end_a, elements[m].end_b];
        }
        for c in elements.iter().filter(|e| e.is_connector()) {
            let [bar_a, bar_b] = c.joins.unwrap();
            if bar_a == bar_b || bar_a >= n || bar_b >= n || elements[bar_a].is_connector() || elements[bar_b].is_connector() {
                return invalid(format!("connector {} must join two distinct bars", c.id));
            }
            for (node, bar) in [(c.end_a, bar_a), (c.end_b, bar_b)] {
                let t = axis_parameter(&nodes, &elements[bar], node);
                match t {
                    Some(_) => {
                        if !member_nodes[bar].contains(&node) {
                            member_nodes[bar].push(node);
                        }
                    }
                    None => {
                        return invalid(format!("connector {} end node {node} does not lie on bar {bar}", c.id));
                    }
                }
            }
            member_connectors[bar_a].push(c.id);
            member_connectors[bar_b].push(c.id);
        }
        for &m in &members {
            let e = &elements[m];
            let mut keyed: Vec<(f64, NodeId)> = member_nodes[m]
                .iter()
                .map(|&nd| (axis_parameter(&nodes, e, nd).unwrap_or(0.0), nd))
                .collect();
            keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            member_nodes[m] = keyed.into_iter().map(|(_, nd)| nd).collect();
        }

        // adjacency over members
        let mut node_members: Vec<Vec<ElementId>> = vec![Vec::new(); nodes.len()];
        for &m in &members {
            for &nd in &member_nodes[m] {
                node_members[nd].push(m);
            }
        }
        let mut adjacency: Vec<BTreeSet<ElementId>> = vec![BTreeSet::new(); n];
        for list in &node_members {
            for &a in list {
                for &b in list {
                    if a != b {
                        adjacency[a].insert(b);
                    }
                }
            }
        }
        for c in elements.iter().filter(|e| e.is_connector()) {
            let [a, b] = c.joins.unwrap();
            adjacency[a].insert(b);
            adjacency[b].insert(a);
        }
        let adjacency: Vec<Vec<ElementId>> = adjacency.into_iter().map(|s| s.into_iter().collect()).collect();

        let grounded_member: Vec<bool> = (0..n)
            .map(|e| !elements[e].is_connector() && member_nodes[e].iter().any(|&nd| nodes[nd].grounded))
            .collect();

        let structure = BarStructure {
            mode,
            nodes,
            elements,
            materials,
            ground_epsilon,
            adjacency,
            members,
            member_nodes,
            member_connectors,
            grounded_member,
        };

        if !structure.nodes.iter().any(|n| n.grounded) {
            return invalid("no grounded node".into());
        }
        if structure.members.is_empty() {
            return invalid("structure has no bars".into());
        }
        let full = structure.full_partial();
        if !structure.is_single_component(&full) {
            return invalid("the design is not a single connected component".into());
        }
        if !grounded_connected(&structure, &full) {
            return invalid("the design does not touch a grounded node".into());
        }
        Ok(structure)
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    /// Elements that are sequenced by the planner (everything but connectors).
    pub fn members(&self) -> &[ElementId] {
        &self.members
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn element(&self, id: ElementId) -> &BarElement {
        &self.elements[id]
    }

    pub fn material_of(&self, id: ElementId) -> &Material {
        &self.materials[self.elements[id].material]
    }

    pub fn section_of(&self, id: ElementId) -> Section {
        let e = &self.elements[id];
        match self.materials[e.material].section {
            Some(s) => s,
            None => Section::solid_circle(e.radius),
        }
    }

    pub fn endpoints(&self, id: ElementId) -> (Point3<f64>, Point3<f64>) {
        let e = &self.elements[id];
        (self.nodes[e.end_a].position, self.nodes[e.end_b].position)
    }

    pub fn length(&self, id: ElementId) -> f64 {
        let (a, b) = self.endpoints(id);
        (b - a).norm()
    }

    pub fn midpoint(&self, id: ElementId) -> Point3<f64> {
        let (a, b) = self.endpoints(id);
        Point3::from((a.coords + b.coords) * 0.5)
    }

    pub fn is_grounded_element(&self, id: ElementId) -> bool {
        self.grounded_member[id]
    }

    /// Nodes on a member sorted along its axis (both ends included).
    pub fn nodes_on(&self, id: ElementId) -> &[NodeId] {
        &self.member_nodes[id]
    }

    pub fn connectors_of(&self, id: ElementId) -> &[ElementId] {
        &self.member_connectors[id]
    }

    pub fn full_partial(&self) -> PartialStructure {
        let mut p = PartialStructure::empty(self.num_elements());
        for &m in &self.members {
            p.insert(m);
        }
        p
    }

    /// Members of `partial` plus the connectors implied by it.
    pub fn effective_elements(&self, partial: &PartialStructure) -> Vec<ElementId> {
        let mut out: Vec<ElementId> = partial.iter().collect();
        for e in &self.elements {
            if let Some([a, b]) = e.joins {
                if partial.contains(a) && partial.contains(b) {
                    out.push(e.id);
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Neighbors of `element` that are present in `partial`.
    pub fn neighbors_in(&self, element: ElementId, partial: &PartialStructure) -> Vec<ElementId> {
        self.adjacency[element].iter().copied().filter(|&n| partial.contains(n)).collect()
    }

    /// Nodes of `element` that are supported either by the ground or by a
    /// member of `partial`.
    pub fn anchored(&self, element: ElementId, node: NodeId, partial: &PartialStructure) -> bool {
        if self.nodes[node].grounded {
            return true;
        }
        self.neighbors_in(element, partial)
            .iter()
            .any(|&n| self.member_nodes[n].contains(&node))
    }

    fn is_single_component(&self, partial: &PartialStructure) -> bool {
        let Some(start) = partial.iter().next() else {
            return true;
        };
        let mut seen = PartialStructure::empty(self.num_elements());
        let mut queue = VecDeque::from([start]);
        seen.insert(start);
        while let Some(e) = queue.pop_front() {
            for &n in &self.adjacency[e] {
                if partial.contains(n) && !seen.contains(n) {
                    seen.insert(n);
                    queue.push_back(n);
                }
            }
        }
        seen.len() == partial.len()
    }

    /// Number of connected components (over shared nodes and connectors) of
    /// the members in `partial`.
    pub fn component_count(&self, partial: &PartialStructure) -> usize {
        let mut seen = PartialStructure::empty(self.num_elements());
        let mut count = 0;
        for start in partial.iter() {
            if seen.contains(start) {
                continue;
            }
            count += 1;
            let mut queue = VecDeque::from([start]);
            seen.insert(start);
            while let Some(e) = queue.pop_front() {
                for &n in &self.adjacency[e] {
                    if partial.contains(n) && !seen.contains(n) {
                        seen.insert(n);
                        queue.push_back(n);
                    }
                }
            }
        }
        count
    }
}

/// Parameter of `node` along the axis of `bar`, if it lies on it.
fn axis_parameter(nodes: &[Node], bar: &BarElement, node: NodeId) -> Option<f64> {
    let a = nodes[bar.end_a].position;
    let b = nodes[bar.end_b].position;
    let p = nodes.get(node)?.position;
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = (p - a).dot(&ab) / len2;
    let tol = 1e-6 * len2.sqrt().max(1.0);
    if !(-1e-9..=1.0 + 1e-9).contains(&t) {
        return None;
    }
    let dist = (a + ab * t - p).norm();
    (dist <= tol).then_some(t.clamp(0.0, 1.0))
}

/// A subset of element ids, stored as a fixed-size bit set.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PartialStructure {
    words: Vec<u64>,
    capacity: usize,
    count: usize,
}

impl PartialStructure {
    pub fn empty(capacity: usize) -> Self {
        PartialStructure {
            words: vec![0; capacity.div_ceil(64)],
            capacity,
            count: 0,
        }
    }

    pub fn from_ids(capacity: usize, ids: impl IntoIterator<Item = ElementId>) -> Self {
        let mut p = Self::empty(capacity);
        for id in ids {
            p.insert(id);
        }
        p
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn contains(&self, id: ElementId) -> bool {
        id < self.capacity && self.words[id / 64] & (1 << (id % 64)) != 0
    }

    pub fn insert(&mut self, id: ElementId) -> bool {
        assert!(id < self.capacity, "element {id} outside partial capacity {}", self.capacity);
        let bit = 1u64 << (id % 64);
        let w = &mut self.words[id / 64];
        if *w & bit == 0 {
            *w |= bit;
            self.count += 1;
            true
        } else {
            false
        }
    }

    pub fn remove(&mut self, id: ElementId) -> bool {
        if !self.contains(id) {
            return false;
        }
        self.words[id / 64] &= !(1 << (id % 64));
        self.count -= 1;
        true
    }

    pub fn with(&self, id: ElementId) -> Self {
        let mut p = self.clone();
        p.insert(id);
        p
    }

    pub fn without(&self, id: ElementId) -> Self {
        let mut p = self.clone();
        p.remove(id);
        p
    }

    pub fn iter(&self) -> impl Iterator<Item = ElementId> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut bits = w;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let tz = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(wi * 64 + tz)
            })
        })
    }

    pub fn is_subset(&self, other: &PartialStructure) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    /// Stable 64-bit digest used to derive per-state random streams.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for w in &self.words {
            for byte in w.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

impl fmt::Debug for PartialStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

/// True iff every member of `partial` reaches a grounded member through
/// members of `partial`.
pub fn grounded_connected(structure: &BarStructure, partial: &PartialStructure) -> bool {
    if partial.is_empty() {
        return true;
    }
    let mut reached = PartialStructure::empty(structure.num_elements());
    let mut queue = VecDeque::new();
    for e in partial.iter() {
        if structure.is_grounded_element(e) {
            reached.insert(e);
            queue.push_back(e);
        }
    }
    while let Some(e) = queue.pop_front() {
        for &n in &structure.adjacency[e] {
            if partial.contains(n) && reached.insert(n) {
                queue.push_back(n);
            }
        }
    }
    reached.len() == partial.len()
}

/// Members whose removal keeps the rest grounded-connected, by ascending id.
pub fn removal_candidates(structure: &BarStructure, partial: &PartialStructure) -> Vec<ElementId> {
    partial
        .iter()
        .filter(|&e| grounded_connected(structure, &partial.without(e)))
        .collect()
}

/// Members outside `built` that can be added while keeping it grounded-connected.
pub fn addition_candidates(structure: &BarStructure, built: &PartialStructure) -> Vec<ElementId> {
    structure
        .members()
        .iter()
        .copied()
        .filter(|&e| !built.contains(e))
        .filter(|&e| structure.is_grounded_element(e) || structure.adjacency[e].iter().any(|&n| built.contains(n)))
        .collect()
}


#[cfg(test)]
pub(crate) mod test_structures {
    use super::*;

    pub fn node(id: NodeId, x: f64, y: f64, z: f64) -> Node {
        Node {
            id,
            position: Point3::new(x, y, z),
            grounded: z <= DEFAULT_GROUND_EPSILON,
        }
    }

    pub fn bar(id: ElementId, a: NodeId, b: NodeId) -> BarElement {
        BarElement {
            id,
            end_a: a,
            end_b: b,
            radius: 0.005,
            kind: ElementKind::ExtrudedBar,
            material: 0,
            joins: None,
        }
    }

    pub fn extrusion(nodes: Vec<Node>, elements: Vec<BarElement>) -> BarStructure {
        BarStructure::new(Mode::Extrusion, nodes, elements, vec![Material::default_pvc()], DEFAULT_GROUND_EPSILON)
            .expect("valid test structure")
    }

    pub fn single_bar() -> BarStructure {
        extrusion(vec![node(0, 0.0, 0.0, 0.0), node(1, 0.0, 0.0, 1.0)], vec![bar(0, 0, 1)])
    }

    pub fn stack2() -> BarStructure {
        extrusion(
            vec![node(0, 0.0, 0.0, 0.0), node(1, 0.0, 0.0, 0.5), node(2, 0.0, 0.0, 1.0)],
            vec![bar(0, 0, 1), bar(1, 1, 2)],
        )
    }

    /// Three bars in a vertical plane, each touching the ground.
    pub fn grounded_triangle() -> BarStructure {
        extrusion(
            vec![node(0, 0.0, 0.0, 0.0), node(1, 0.4, 0.0, 0.0), node(2, 0.2, 0.0, 0.3)],
            vec![bar(0, 0, 1), bar(1, 0, 2), bar(2, 1, 2)],
        )
    }

    pub fn tetrahedron() -> BarStructure {
        extrusion(
            vec![
                node(0, 0.0, 0.0, 0.0),
                node(1, 0.3, 0.0, 0.0),
                node(2, 0.15, 0.26, 0.0),
                node(3, 0.15, 0.087, 0.245),
            ],
            vec![bar(0, 0, 1), bar(1, 1, 2), bar(2, 2, 0), bar(3, 0, 3), bar(4, 1, 3), bar(5, 2, 3)],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::test_structures::*;
    use super::*;

    #[test]
    fn single_bar_has_no_neighbors() {
        let s = single_bar();
        assert_eq!(s.num_elements(), 1);
        assert_eq!(s.nodes.len(), 2);
        assert!(s.adjacency[0].is_empty());
    }

    #[test]
    fn tetrahedron_adjacency_is_dense() {
        let s = tetrahedron();
        for e in 0..6 {
            assert!(s.adjacency[e].len() >= 2);
            for &n in &s.adjacency[e] {
                assert!(s.adjacency[n].contains(&e));
            }
        }
    }

    #[test]
    fn floating_element_is_rejected() {
        let err = BarStructure::new(
            Mode::Extrusion,
            vec![node(0, 0.0, 0.0, 0.5), node(1, 0.0, 0.0, 1.0)],
            vec![bar(0, 0, 1)],
            vec![Material::default_pvc()],
            DEFAULT_GROUND_EPSILON,
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::Validation(_)));
    }

    #[test]
    fn disconnected_design_is_rejected() {
        let err = BarStructure::new(
            Mode::Extrusion,
            vec![
                node(0, 0.0, 0.0, 0.0),
                node(1, 0.0, 0.0, 1.0),
                node(2, 1.0, 0.0, 0.5),
                node(3, 1.0, 0.0, 1.0),
            ],
            vec![bar(0, 0, 1), bar(1, 2, 3)],
            vec![Material::default_pvc()],
            DEFAULT_GROUND_EPSILON,
        )
        .unwrap_err();
        assert!(err.to_string().contains("connected"));
    }

    #[test]
    fn zero_length_is_rejected() {
        let err = BarStructure::new(
            Mode::Extrusion,
            vec![node(0, 0.0, 0.0, 0.0), node(1, 0.0, 0.0, 0.0)],
            vec![bar(0, 0, 1)],
            vec![Material::default_pvc()],
            DEFAULT_GROUND_EPSILON,
        )
        .unwrap_err();
        assert!(err.to_string().contains("zero length"));
    }

    #[test]
    fn connectivity_examples() {
        let s = single_bar();
        assert!(grounded_connected(&s, &s.full_partial()));

        let s = stack2();
        let n = s.num_elements();
        assert!(grounded_connected(&s, &PartialStructure::from_ids(n, [0, 1])));
        assert!(!grounded_connected(&s, &PartialStructure::from_ids(n, [1])));
        assert!(grounded_connected(&s, &PartialStructure::empty(n)));
    }

    #[test]
    fn removal_candidate_examples() {
        let s = single_bar();
        assert_eq!(removal_candidates(&s, &s.full_partial()), vec![0]);
        let s = stack2();
        assert_eq!(removal_candidates(&s, &s.full_partial()), vec![1]);
        let s = grounded_triangle();
        assert_eq!(removal_candidates(&s, &s.full_partial()), vec![0, 1, 2]);
    }

    #[test]
    fn partial_bitset_basics() {
        let mut p = PartialStructure::empty(130);
        assert!(p.insert(3));
        assert!(p.insert(129));
        assert!(!p.insert(3));
        assert_eq!(p.len(), 2);
        assert_eq!(p.iter().collect::<Vec<_>>(), vec![3, 129]);
        assert!(p.remove(3));
        assert_eq!(p.len(), 1);
        assert!(!p.contains(3));
        assert!(p.is_subset(&PartialStructure::from_ids(130, [1, 129])));
    }
}
