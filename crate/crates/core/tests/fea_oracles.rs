use barplan::model::{BarElement, BarStructure, ElementKind, Material, Mode, Node, PartialStructure, Section};
use barplan::stiffness::{analyze, assemble, solve, GRAVITY, PINNED};
use nalgebra::Point3;
use proptest::prelude::*;

fn node(id: usize, x: f64, y: f64, z: f64, grounded: bool) -> Node {
    Node {
        id,
        position: Point3::new(x, y, z),
        grounded,
    }
}

fn bar(id: usize, a: usize, b: usize, radius: f64) -> BarElement {
    BarElement {
        id,
        end_a: a,
        end_b: b,
        radius,
        kind: ElementKind::ExtrudedBar,
        material: 0,
        joins: None,
    }
}

fn structure(nodes: Vec<Node>, elements: Vec<BarElement>, material: Material) -> BarStructure {
    BarStructure::new(Mode::Extrusion, nodes, elements, vec![material], 1e-6).unwrap()
}

const R: f64 = 0.01;

fn line_load(m: &Material) -> (f64, f64) {
    let s = Section::solid_circle(R);
    (m.density * s.area * GRAVITY, m.youngs_modulus * s.iy)
}

#[test]
fn cantilever_tip_matches_closed_form() {
    let m = Material::default_pvc();
    let l = 0.9;
    let s = structure(
        vec![node(0, 0.0, 0.0, 1.0, true), node(1, l, 0.0, 1.0, false)],
        vec![bar(0, 0, 1, R)],
        m.clone(),
    );
    let r = analyze(&s, &s.full_partial()).unwrap();
    let (w, ei) = line_load(&m);
    let expected = w * l.powi(4) / (8.0 * ei);
    let tip = r.translation(1).unwrap();
    assert!(((-tip.z) - expected).abs() / expected <= 1e-6, "{} vs {expected}", -tip.z);
    assert!(tip.x.abs() < 1e-15 && tip.y.abs() < 1e-15);
    assert_eq!(r.argmax_node, 1);
}

#[test]
fn simply_supported_midspan_matches_closed_form() {
    let m = Material::default_pvc();
    let l = 1.2;
    let s = structure(
        vec![
            node(0, 0.0, 0.0, 1.0, true),
            node(1, l / 2.0, 0.0, 1.0, false),
            node(2, l, 0.0, 1.0, true),
        ],
        vec![bar(0, 0, 1, R), bar(1, 1, 2, R)],
        m.clone(),
    );
    let mut model = assemble(&s, &s.full_partial()).unwrap();
    // pin both ends; one end also blocks twisting about the beam axis
    model.set_support(0, [true, true, true, true, false, false]);
    model.set_support(2, PINNED);
    let r = solve(&model).unwrap();
    let (w, ei) = line_load(&m);
    let expected = 5.0 * w * l.powi(4) / (384.0 * ei);
    let mid = -r.translation(1).unwrap().z;
    assert!((mid - expected).abs() / expected <= 1e-6, "{mid} vs {expected}");
}

#[test]
fn vertical_bar_axial_shortening() {
    let m = Material::default_pvc();
    let l = 1.5;
    let s = structure(
        vec![node(0, 0.0, 0.0, 0.0, true), node(1, 0.0, 0.0, l, false)],
        vec![bar(0, 0, 1, R)],
        m.clone(),
    );
    let r = analyze(&s, &s.full_partial()).unwrap();
    let expected = m.density * GRAVITY * l * l / (2.0 * m.youngs_modulus);
    let tip = r.translation(1).unwrap();
    assert!(((-tip.z) - expected).abs() / expected <= 1e-9);
    assert!(tip.x.abs() < 1e-18 && tip.y.abs() < 1e-18);
}

#[test]
fn dense_and_sparse_paths_agree() {
    // compact lattice: > 600 free DOFs forces the sparse path
    let (nx, ny, nz) = (6usize, 6usize, 4usize);
    let id = |i: usize, j: usize, k: usize| (k * ny + j) * nx + i;
    let mut nodes = Vec::new();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                nodes.push(node(id(i, j, k), i as f64 * 0.1, j as f64 * 0.1, k as f64 * 0.1, k == 0));
            }
        }
    }
    let mut els = Vec::new();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                if i + 1 < nx && k > 0 {
                    els.push(bar(els.len(), id(i, j, k), id(i + 1, j, k), 0.005));
                }
                if j + 1 < ny && k > 0 {
                    els.push(bar(els.len(), id(i, j, k), id(i, j + 1, k), 0.005));
                }
                if k + 1 < nz {
                    els.push(bar(els.len(), id(i, j, k), id(i, j, k + 1), 0.005));
                }
            }
        }
    }
    let s = structure(nodes, els, Material::default_pvc());
    let model = assemble(&s, &s.full_partial()).unwrap();
    assert!(model.num_free_dofs() > 600);
    let sparse = solve(&model).unwrap();
    assert!(sparse.relative_residual <= 1e-9, "residual {}", sparse.relative_residual);

    // dense oracle on the same model
    let k = model.global_stiffness();
    let free: Vec<usize> = (0..model.num_dofs()).filter(|&d| !model.fixed[d]).collect();
    let kff = k.select_rows(&free).select_columns(&free);
    let ff = nalgebra::DVector::from_iterator(free.len(), free.iter().map(|&d| model.load[d]));
    let u = kff.cholesky().unwrap().solve(&ff);
    let mut max = 0.0f64;
    for chunk in 0..model.nodes.len() {
        let base = chunk * 6;
        let idx: Vec<usize> = (base..base + 3).collect();
        let t: f64 = idx
            .iter()
            .map(|d| free.iter().position(|f| f == d).map(|p| u[p]).unwrap_or(0.0).powi(2))
            .sum::<f64>()
            .sqrt();
        max = max.max(t);
    }
    assert!((max - sparse.max_translation_norm).abs() <= 1e-9 * max, "{max} vs {}", sparse.max_translation_norm);
}

fn scaled(density_factor: f64, modulus_factor: f64) -> f64 {
    let mut m = Material::default_pvc();
    m.density *= density_factor;
    m.youngs_modulus *= modulus_factor;
    m.shear_modulus *= modulus_factor;
    let s = structure(
        vec![
            node(0, 0.0, 0.0, 0.0, true),
            node(1, 0.3, 0.0, 0.4, false),
            node(2, 0.6, 0.1, 0.5, false),
            node(3, 0.2, 0.3, 0.0, true),
        ],
        vec![bar(0, 0, 1, R), bar(1, 1, 2, R), bar(2, 3, 1, R)],
        m,
    );
    analyze(&s, &s.full_partial()).unwrap().max_translation_norm
}

#[test]
fn deflection_scales_with_density_and_modulus() {
    let base = scaled(1.0, 1.0);
    assert!((scaled(2.0, 1.0) / base - 2.0).abs() <= 2e-9);
    assert!((scaled(1.0, 2.0) / base - 0.5).abs() <= 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Random small frames: SPD free stiffness, tiny residual, shift invariance.
    #[test]
    fn random_frames_solve_cleanly(
        pts in prop::collection::vec((-0.5f64..0.5, -0.5f64..0.5, 0.05f64..0.8), 3..6),
        dx in -2.0f64..2.0,
        dy in -2.0f64..2.0,
    ) {
        let mut nodes = vec![node(0, 0.0, 0.0, 0.0, true)];
        for (i, p) in pts.iter().enumerate() {
            nodes.push(node(i + 1, p.0, p.1, p.2, false));
        }
        // chain plus a brace back to the ground node
        let mut els = Vec::new();
        for i in 0..pts.len() {
            els.push(bar(els.len(), i, i + 1, R));
        }
        els.push(bar(els.len(), 0, 2, R));
        let s = structure(nodes.clone(), els.clone(), Material::default_pvc());
        let r = analyze(&s, &s.full_partial()).unwrap();
        prop_assert!(r.relative_residual <= 1e-9);

        let shifted: Vec<Node> = nodes.iter().map(|n| node(n.id, n.position.x + dx, n.position.y + dy, n.position.z, n.grounded)).collect();
        let s2 = structure(shifted, els, Material::default_pvc());
        let r2 = analyze(&s2, &s2.full_partial()).unwrap();
        prop_assert!((r.max_translation_norm - r2.max_translation_norm).abs() <= 1e-9 * r.max_translation_norm.max(1e-12));
    }
}

#[test]
fn partial_subset_of_frame_is_analyzable() {
    let s = structure(
        vec![node(0, 0.0, 0.0, 0.0, true), node(1, 0.0, 0.0, 0.5, false), node(2, 0.3, 0.0, 0.5, false)],
        vec![bar(0, 0, 1, R), bar(1, 1, 2, R)],
        Material::default_pvc(),
    );
    let lower = PartialStructure::from_ids(2, [0]);
    let both = s.full_partial();
    let a = analyze(&s, &lower).unwrap().max_translation_norm;
    let b = analyze(&s, &both).unwrap().max_translation_norm;
    assert!(b > a);
}
