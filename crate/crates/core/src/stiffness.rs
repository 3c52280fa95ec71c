//! Linear-elastic 3D frame analysis under self-weight and the deformation
//! constraint built on it.
//!
//! Every element (bar segment or connector) is an Euler–Bernoulli beam with
//! six DOFs per node. Self-weight enters as the consistent nodal loads of a
//! uniform line load: half the weight at each end plus the fixed-end moments
//! `wL²/12`.

use std::collections::{HashMap, HashSet};

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, SVector, Vector3};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};
use thiserror::Error;
use serde::{Deserialize, Serialize};

use crate::model::{addition_candidates, grounded_connected, BarStructure, ElementId, NodeId, PartialStructure};

pub const GRAVITY: f64 = 9.80665;

/// Free-DOF count above which the sparse factorization is used.
pub const DENSE_DOF_LIMIT: usize = 600;

/// Relative pivot threshold below which the system is reported singular.
const PIVOT_RATIO_LIMIT: f64 = 1e-14;

pub type Matrix12 = SMatrix<f64, 12, 12>;
pub type Vector12 = SVector<f64, 12>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeaError {
    #[error("partial structure is empty")]
    Empty,
    #[error("partial structure is not grounded-connected")]
    NotConnected,
    #[error("stiffness matrix is singular or indefinite ({0})")]
    Singular(String),
}

/// One prismatic beam of the frame model in its local axes.
#[derive(Clone, Debug)]
pub struct BeamMember {
    pub element: ElementId,
    pub node_a: NodeId,
    pub node_b: NodeId,
    pub length: f64,
    /// Rows are the local x, y, z axes in world coordinates.
    pub rotation: Matrix3<f64>,
    pub local_stiffness: Matrix12,
    /// Equivalent nodal self-weight loads, local axes.
    pub local_load: Vector12,
}

impl BeamMember {
    /// 12×12 local-to-global block rotation.
    pub fn transform(&self) -> Matrix12 {
        let mut t = Matrix12::zeros();
        for b in 0..4 {
            t.fixed_view_mut::<3, 3>(3 * b, 3 * b).copy_from(&self.rotation);
        }
        t
    }

    pub fn global_stiffness(&self) -> Matrix12 {
        let t = self.transform();
        t.transpose() * self.local_stiffness * t
    }

    pub fn global_load(&self) -> Vector12 {
        self.transform().transpose() * self.local_load
    }
}

/// Support condition of one node, one flag per DOF (ux uy uz rx ry rz).
pub type Fixity = [bool; 6];

pub const CLAMPED: Fixity = [true; 6];
pub const PINNED: Fixity = [true, true, true, false, false, false];

#[derive(Clone, Debug)]
pub struct FrameModel {
    /// Nodes touched by included elements, ascending.
    pub nodes: Vec<NodeId>,
    dof_base: HashMap<NodeId, usize>,
    pub beams: Vec<BeamMember>,
    pub load: DVector<f64>,
    pub fixed: Vec<bool>,
}

impl FrameModel {
    pub fn num_dofs(&self) -> usize {
        self.nodes.len() * 6
    }

    pub fn num_free_dofs(&self) -> usize {
        self.fixed.iter().filter(|f| !**f).count()
    }

    /// First global DOF index of `node`.
    pub fn dof_of(&self, node: NodeId) -> Option<usize> {
        self.dof_base.get(&node).copied()
    }

    /// Replaces the support condition of `node`.
    pub fn set_support(&mut self, node: NodeId, fixity: Fixity) {
        let base = self.dof_of(node).expect("node is part of the model");
        for (k, f) in fixity.iter().enumerate() {
            self.fixed[base + k] = *f;
        }
    }

    pub fn global_stiffness(&self) -> DMatrix<f64> {
        let n = self.num_dofs();
        let mut k = DMatrix::zeros(n, n);
        for beam in &self.beams {
            let kg = beam.global_stiffness();
            let idx = self.element_dofs(beam);
            for (r, &gr) in idx.iter().enumerate() {
                for (c, &gc) in idx.iter().enumerate() {
                    k[(gr, gc)] += kg[(r, c)];
                }
            }
        }
        k
    }

    fn element_dofs(&self, beam: &BeamMember) -> [usize; 12] {
        let a = self.dof_base[&beam.node_a];
        let b = self.dof_base[&beam.node_b];
        let mut out = [0; 12];
        for k in 0..6 {
            out[k] = a + k;
            out[6 + k] = b + k;
        }
        out
    }

    /// Total applied load along world z.
    pub fn total_vertical_load(&self) -> f64 {
        (0..self.nodes.len()).map(|i| self.load[i * 6 + 2]).sum()
    }
}

/// Euler–Bernoulli 3D beam stiffness in local axes, DOF order
/// (ux uy uz rx ry rz) at end a then end b.
pub fn local_beam_stiffness(e: f64, g: f64, area: f64, iy: f64, iz: f64, j: f64, l: f64) -> Matrix12 {
    let mut k = Matrix12::zeros();
    let ea = e * area / l;
    let gj = g * j / l;
    let (z12, z6, z4, z2) = (12.0 * e * iz / l.powi(3), 6.0 * e * iz / l.powi(2), 4.0 * e * iz / l, 2.0 * e * iz / l);
    let (y12, y6, y4, y2) = (12.0 * e * iy / l.powi(3), 6.0 * e * iy / l.powi(2), 4.0 * e * iy / l, 2.0 * e * iy / l);

    let mut set = |r: usize, c: usize, v: f64| {
        k[(r, c)] = v;
        k[(c, r)] = v;
    };
    set(0, 0, ea);
    set(0, 6, -ea);
    set(6, 6, ea);
    set(3, 3, gj);
    set(3, 9, -gj);
    set(9, 9, gj);
    // bending in the local x-y plane
    set(1, 1, z12);
    set(1, 5, z6);
    set(1, 7, -z12);
    set(1, 11, z6);
    set(5, 5, z4);
    set(5, 7, -z6);
    set(5, 11, z2);
    set(7, 7, z12);
    set(7, 11, -z6);
    set(11, 11, z4);
    // bending in the local x-z plane
    set(2, 2, y12);
    set(2, 4, -y6);
    set(2, 8, -y12);
    set(2, 10, -y6);
    set(4, 4, y4);
    set(4, 8, y6);
    set(4, 10, y2);
    set(8, 8, y12);
    set(8, 10, y6);
    set(10, 10, y4);
    k
}

/// Consistent nodal loads of a uniform line load `q` (force per length, local axes).
pub fn uniform_load_vector(q: Vector3<f64>, l: f64) -> Vector12 {
    let mut f = Vector12::zeros();
    let half = l / 2.0;
    let m = l * l / 12.0;
    f[0] = q.x * half;
    f[6] = q.x * half;
    f[1] = q.y * half;
    f[5] = q.y * m;
    f[7] = q.y * half;
    f[11] = -q.y * m;
    f[2] = q.z * half;
    f[4] = -q.z * m;
    f[8] = q.z * half;
    f[10] = q.z * m;
    f
}

/// Rows are the local axes of a beam running from `a` to `b`.
pub fn local_axes(dir: Vector3<f64>) -> Matrix3<f64> {
    let x = dir.normalize();
    let reference = if x.z.abs() > 0.999 { Vector3::x() } else { Vector3::z() };
    let y = reference.cross(&x).normalize();
    let z = x.cross(&y);
    Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()])
}

fn build_beam(structure: &BarStructure, element: ElementId, na: NodeId, nb: NodeId) -> BeamMember {
    let el = structure.element(element);
    let mat = structure.material_of(element);
    let section = match (el.joins, mat.section) {
        (_, Some(s)) => s,
        (Some([parent, _]), None) => structure.section_of(parent),
        (None, None) => structure.section_of(element),
    };
    let pa = structure.node(na).position;
    let pb = structure.node(nb).position;
    let length = (pb - pa).norm();
    let rotation = local_axes(pb - pa);
    let local_stiffness = local_beam_stiffness(
        mat.youngs_modulus,
        mat.shear_modulus,
        section.area,
        section.iy,
        section.iz,
        section.j,
        length,
    );
    let w = mat.density * section.area * GRAVITY;
    let q_local = rotation * Vector3::new(0.0, 0.0, -w);
    BeamMember {
        element,
        node_a: na,
        node_b: nb,
        length,
        rotation,
        local_stiffness,
        local_load: uniform_load_vector(q_local, length),
    }
}

/// Builds the frame model of the members in `partial` (plus implied connectors).
pub fn assemble(structure: &BarStructure, partial: &PartialStructure) -> Result<FrameModel, FeaError> {
    if partial.is_empty() {
        return Err(FeaError::Empty);
    }
    if !grounded_connected(structure, partial) {
        return Err(FeaError::NotConnected);
    }
    let mut beams = Vec::new();
    for e in structure.effective_elements(partial) {
        let el = structure.element(e);
        if el.is_connector() {
            beams.push(build_beam(structure, e, el.end_a, el.end_b));
        } else {
            for pair in structure.nodes_on(e).windows(2) {
                beams.push(build_beam(structure, e, pair[0], pair[1]));
            }
        }
    }
    let mut nodes: Vec<NodeId> = beams.iter().flat_map(|b| [b.node_a, b.node_b]).collect();
    nodes.sort_unstable();
    nodes.dedup();
    let dof_base: HashMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, &n)| (n, 6 * i)).collect();

    let ndof = nodes.len() * 6;
    let mut load = DVector::zeros(ndof);
    let mut fixed = vec![false; ndof];
    for beam in &beams {
        let fg = beam.global_load();
        for (k, nd) in [beam.node_a, beam.node_b].into_iter().enumerate() {
            let base = dof_base[&nd];
            for d in 0..6 {
                load[base + d] += fg[6 * k + d];
            }
        }
    }
    for &nd in &nodes {
        if structure.node(nd).grounded {
            let base = dof_base[&nd];
            fixed[base..base + 6].fill(true);
        }
    }
    Ok(FrameModel {
        nodes,
        dof_base,
        beams,
        load,
        fixed,
    })
}

#[derive(Clone, Debug)]
pub struct DeformationResult {
    /// Per model node: (dx dy dz rx ry rz).
    pub displacements: HashMap<NodeId, [f64; 6]>,
    pub max_translation_norm: f64,
    pub argmax_node: NodeId,
    /// ‖K_ff u_f − f_f‖ / ‖f_f‖.
    pub relative_residual: f64,
}

impl DeformationResult {
    pub fn translation(&self, node: NodeId) -> Option<Vector3<f64>> {
        self.displacements.get(&node).map(|d| Vector3::new(d[0], d[1], d[2]))
    }
}

/// Solves K_ff u_f = f_f for the free DOFs of `model`.
pub fn solve(model: &FrameModel) -> Result<DeformationResult, FeaError> {
    let free: Vec<usize> = (0..model.num_dofs()).filter(|&d| !model.fixed[d]).collect();
    let mut displacements: HashMap<NodeId, [f64; 6]> = model.nodes.iter().map(|&n| (n, [0.0; 6])).collect();
    if free.is_empty() {
        return Ok(DeformationResult {
            displacements,
            max_translation_norm: 0.0,
            argmax_node: model.nodes[0],
            relative_residual: 0.0,
        });
    }
    let mut reduced = vec![usize::MAX; model.num_dofs()];
    for (i, &d) in free.iter().enumerate() {
        reduced[d] = i;
    }
    let f = DVector::from_iterator(free.len(), free.iter().map(|&d| model.load[d]));

    let (u, residual) = if free.len() <= DENSE_DOF_LIMIT {
        solve_dense(model, &reduced, free.len(), &f)?
    } else {
        solve_sparse(model, &reduced, free.len(), &f)?
    };

    for (i, &d) in free.iter().enumerate() {
        let node = model.nodes[d / 6];
        displacements.get_mut(&node).unwrap()[d % 6] = u[i];
    }
    let mut max_norm = 0.0;
    let mut argmax = model.nodes[0];
    for &nd in &model.nodes {
        let base = model.dof_of(nd).unwrap();
        if model.fixed[base..base + 3].iter().all(|f| *f) {
            continue;
        }
        let d = displacements[&nd];
        let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if norm > max_norm {
            max_norm = norm;
            argmax = nd;
        }
    }
    Ok(DeformationResult {
        displacements,
        max_translation_norm: max_norm,
        argmax_node: argmax,
        relative_residual: residual,
    })
}

fn relative_residual(r: f64, f: &DVector<f64>) -> f64 {
    let fnorm = f.norm();
    if fnorm == 0.0 {
        r
    } else {
        r / fnorm
    }
}

fn solve_dense(model: &FrameModel, reduced: &[usize], n: usize, f: &DVector<f64>) -> Result<(DVector<f64>, f64), FeaError> {
    let mut k = DMatrix::zeros(n, n);
    for beam in &model.beams {
        let kg = beam.global_stiffness();
        let idx = model.element_dofs(beam);
        for (r, &gr) in idx.iter().enumerate() {
            let rr = reduced[gr];
            if rr == usize::MAX {
                continue;
            }
            for (c, &gc) in idx.iter().enumerate() {
                let cc = reduced[gc];
                if cc != usize::MAX {
                    k[(rr, cc)] += kg[(r, c)];
                }
            }
        }
    }
    let chol = k
        .clone()
        .cholesky()
        .ok_or_else(|| FeaError::Singular("Cholesky factorization failed".into()))?;
    let l = chol.l_dirty();
    check_pivots((0..n).map(|i| l[(i, i)]))?;
    let mut u = chol.solve(f);
    // one refinement step
    let r = f - &k * &u;
    u += chol.solve(&r);
    let residual = relative_residual((&k * &u - f).norm(), f);
    Ok((u, residual))
}

fn solve_sparse(model: &FrameModel, reduced: &[usize], n: usize, f: &DVector<f64>) -> Result<(DVector<f64>, f64), FeaError> {
    let mut coo = CooMatrix::new(n, n);
    for beam in &model.beams {
        let kg = beam.global_stiffness();
        let idx = model.element_dofs(beam);
        for (r, &gr) in idx.iter().enumerate() {
            let rr = reduced[gr];
            if rr == usize::MAX {
                continue;
            }
            for (c, &gc) in idx.iter().enumerate() {
                let cc = reduced[gc];
                if cc != usize::MAX && kg[(r, c)] != 0.0 {
                    coo.push(rr, cc, kg[(r, c)]);
                }
            }
        }
    }
    let k = CscMatrix::from(&coo);
    let chol = CscCholesky::factor(&k).map_err(|e| FeaError::Singular(format!("sparse Cholesky failed: {e}")))?;
    let l = chol.l();
    let diag = (0..n).map(|i| l.get_entry(i, i).map(|e| e.into_value()).unwrap_or(0.0));
    check_pivots(diag)?;
    let solve_vec = |b: &DVector<f64>| {
        let sol = chol.solve(&DMatrix::from_column_slice(n, 1, b.as_slice()));
        DVector::from_column_slice(sol.as_slice())
    };
    let residual_of = |u: &DVector<f64>| {
        let ku = &k * &DMatrix::from_column_slice(n, 1, u.as_slice());
        f - DVector::from_column_slice(ku.as_slice())
    };
    let mut u = solve_vec(f);
    // one refinement step
    u += solve_vec(&residual_of(&u));
    Ok((u.clone(), relative_residual(residual_of(&u).norm(), f)))
}

fn check_pivots(diag: impl Iterator<Item = f64>) -> Result<(), FeaError> {
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for d in diag {
        let d2 = d * d;
        if !d2.is_finite() {
            return Err(FeaError::Singular("non-finite pivot".into()));
        }
        lo = lo.min(d2);
        hi = hi.max(d2);
    }
    if hi == 0.0 || lo / hi < PIVOT_RATIO_LIMIT {
        return Err(FeaError::Singular(format!("pivot ratio {:.3e}", lo / hi)));
    }
    Ok(())
}

/// Deflection of `partial` under self-weight.
pub fn analyze(structure: &BarStructure, partial: &PartialStructure) -> Result<DeformationResult, FeaError> {
    solve(&assemble(structure, partial)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StiffnessVerdict {
    pub ok: bool,
    pub max_translation_norm: f64,
    /// Set when the analysis itself failed; such partials are infeasible.
    pub failure: Option<FeaError>,
}

/// Memoized deformation-constraint check.
#[derive(Debug, Default)]
pub struct StiffnessChecker {
    tolerance: f64,
    cache: HashMap<PartialStructure, Result<f64, FeaError>>,
    pub evaluations: usize,
    pub cache_hits: usize,
}

impl StiffnessChecker {
    pub fn new(tolerance: f64) -> Self {
        StiffnessChecker {
            tolerance,
            ..Default::default()
        }
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn check(&mut self, structure: &BarStructure, partial: &PartialStructure) -> StiffnessVerdict {
        let outcome = match self.cache.get(partial) {
            Some(hit) => {
                self.cache_hits += 1;
                hit.clone()
            }
            None => {
                self.evaluations += 1;
                let fresh = evaluate(structure, partial);
                if let Err(err) = &fresh {
                    log::debug!("stiffness analysis failed on {partial:?}: {err}");
                }
                self.cache.insert(partial.clone(), fresh.clone());
                fresh
            }
        };
        verdict(outcome, self.tolerance)
    }
}

fn evaluate(structure: &BarStructure, partial: &PartialStructure) -> Result<f64, FeaError> {
    if partial.is_empty() {
        return Ok(0.0);
    }
    analyze(structure, partial).map(|r| r.max_translation_norm)
}

fn verdict(outcome: Result<f64, FeaError>, tolerance: f64) -> StiffnessVerdict {
    match outcome {
        Ok(norm) => StiffnessVerdict {
            ok: norm <= tolerance,
            max_translation_norm: norm,
            failure: None,
        },
        Err(e) => StiffnessVerdict {
            ok: false,
            max_translation_norm: f64::INFINITY,
            failure: Some(e),
        },
    }
}

/// Deflection of the in-progress structure after each construction step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: usize,
    pub element: ElementId,
    pub max_translation_norm: f64,
    pub argmax_node: NodeId,
}

/// Analyses every prefix of `sequence`.
pub fn deformation_history(structure: &BarStructure, sequence: &[ElementId]) -> Result<Vec<HistoryRow>, FeaError> {
    let mut partial = PartialStructure::empty(structure.num_elements());
    let mut rows = Vec::with_capacity(sequence.len());
    for (step, &element) in sequence.iter().enumerate() {
        partial.insert(element);
        let r = analyze(structure, &partial)?;
        rows.push(HistoryRow {
            step,
            element,
            max_translation_norm: r.max_translation_norm,
            argmax_node: r.argmax_node,
        });
    }
    Ok(rows)
}

/// Unmemoized check, for callers that only need one answer.
pub fn check_stiffness(structure: &BarStructure, partial: &PartialStructure, tolerance: f64) -> StiffnessVerdict {
    verdict(evaluate(structure, partial), tolerance)
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("no stiffness-feasible sequence found (deepest partial had {} of {total} elements)", deepest.len())]
pub struct NoSequenceFound {
    pub deepest: Vec<ElementId>,
    pub total: usize,
}

/// Maximum number of partial structures the greedy sequencer will expand.
const GREEDY_EXPANSION_LIMIT: usize = 200_000;

/// Robot-agnostic forward sequence: always add the connectable element that
/// leaves the smallest deflection, backtracking out of dead ends.
pub fn greedy_stiffness_sequence(
    structure: &BarStructure,
    checker: &mut StiffnessChecker,
) -> Result<Vec<ElementId>, NoSequenceFound> {
    struct Dfs<'a> {
        structure: &'a BarStructure,
        checker: &'a mut StiffnessChecker,
        dead: HashSet<PartialStructure>,
        deepest: Vec<ElementId>,
        expansions: usize,
    }

    impl Dfs<'_> {
        fn run(&mut self, built: &PartialStructure, seq: &mut Vec<ElementId>) -> bool {
            if built.len() == self.structure.members().len() {
                return true;
            }
            if self.dead.contains(built) || self.expansions >= GREEDY_EXPANSION_LIMIT {
                return false;
            }
            self.expansions += 1;
            if seq.len() > self.deepest.len() {
                self.deepest = seq.clone();
            }
            let mut options: Vec<(f64, ElementId)> = addition_candidates(self.structure, built)
                .into_iter()
                .filter_map(|e| {
                    let v = self.checker.check(self.structure, &built.with(e));
                    v.ok.then_some((v.max_translation_norm, e))
                })
                .collect();
            options.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for (_, e) in options {
                seq.push(e);
                if self.run(&built.with(e), seq) {
                    return true;
                }
                seq.pop();
            }
            self.dead.insert(built.clone());
            false
        }
    }

    let mut dfs = Dfs {
        structure,
        checker,
        dead: HashSet::new(),
        deepest: Vec::new(),
        expansions: 0,
    };
    let mut seq = Vec::new();
    let empty = PartialStructure::empty(structure.num_elements());
    if dfs.run(&empty, &mut seq) {
        Ok(seq)
    } else {
        Err(NoSequenceFound {
            deepest: dfs.deepest,
            total: structure.members().len(),
        })
    }
}
