mod common;

use std::sync::OnceLock;

use common::{deform_direct, dense_row, random_field, small_face, Face};
use ffd_face::basis::{flat_index, BasisKind};
use ffd_face::lattice::{
    build_lattice, parameterize, DeformationField, LatticeError, DEFAULT_TOLERANCE,
};
use ffd_face::mesh::Mesh;
use nalgebra::{Matrix3, Point3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn face() -> &'static Face {
    static FACE: OnceLock<Face> = OnceLock::new();
    FACE.get_or_init(|| small_face(61, BasisKind::default()))
}

fn bernstein_face() -> &'static Face {
    static FACE: OnceLock<Face> = OnceLock::new();
    FACE.get_or_init(|| small_face(25, BasisKind::Bernstein))
}

#[test]
fn default_dims_give_700_points() {
    let f = face();
    assert_eq!(f.pm.control_point_count(), 700);
    assert_eq!(f.pm.grid().config().dims, [6, 19, 4]);
}

#[test]
fn rest_grid_is_uniform_with_k_fastest() {
    let grid = face().pm.grid();
    let c = grid.config();
    for i in 0..=6 {
        for j in 0..=19 {
            for k in 0..=4 {
                let p = grid.points()[flat_index(i, j, k, c.dims)];
                let want = c.bbox.origin
                    + Vector3::new(
                        c.bbox.lengths.x * i as f64 / 6.0,
                        c.bbox.lengths.y * j as f64 / 19.0,
                        c.bbox.lengths.z * k as f64 / 4.0,
                    );
                assert!((p - want).amax() <= 1e-12);
            }
        }
    }
}

#[test]
fn padded_box_strictly_contains_every_vertex() {
    let f = face();
    let b = f.pm.grid().config().bbox;
    let hi = b.max_corner();
    for v in f.mesh.vertices() {
        for a in 0..3 {
            assert!(v[a] > b.origin[a] && v[a] < hi[a]);
        }
    }
}

#[test]
fn reconstruction_matches_forward_evaluation() {
    let f = face();
    let diag = f.pm.box_diagonal();
    let pts: Vec<Vector3<f64>> = f.pm.grid().points().iter().map(|p| p.coords).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let q = rng.random_range(0..f.mesh.vertex_count());
        let stu = f.pm.params()[q];
        assert!(stu.iter().all(|s| (0.0..=1.0).contains(s)));
        let row = dense_row(stu, [6, 19, 4], BasisKind::default());
        let x: Vector3<f64> = row.iter().zip(&pts).map(|(w, p)| p * *w).sum();
        assert!((x - f.mesh.vertices()[q].coords).amax() <= 1e-10 * diag);
    }
    assert!(f.pm.max_residual() <= 1e-10 * diag);
    f.pm.check_row_sums(1e-12).unwrap();
}

#[test]
fn random_interior_points_embed() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pts: Vec<Point3<f64>> = (0..500)
        .map(|_| {
            Point3::new(
                rng.random_range(-3.0..5.0),
                rng.random_range(0.0..40.0),
                rng.random_range(1.0..2.0),
            )
        })
        .collect();
    let mesh = Mesh::new(pts, vec![]).unwrap();
    let grid = build_lattice(&mesh, [6, 19, 4], BasisKind::default(), 0.05).unwrap();
    let pm = parameterize(&mesh, &grid, DEFAULT_TOLERANCE, 50).unwrap();
    let direct = deform_direct(&pm, &DeformationField::zeros(700));
    for (d, v) in direct.iter().zip(mesh.vertices()) {
        assert!((d - v).amax() <= 1e-10 * pm.box_diagonal());
    }
}

#[test]
fn dims_below_degree_rejected() {
    let f = face();
    let err = build_lattice(&f.mesh, [1, 1, 1], BasisKind::default(), 0.05).unwrap_err();
    assert!(err.to_string().contains("dims must be >= degree"), "{err}");
}

#[test]
fn bernstein_center_maps_to_half() {
    let cube: Vec<Point3<f64>> = (0..8)
        .map(|c| Point3::new((c & 1) as f64, ((c >> 1) & 1) as f64, ((c >> 2) & 1) as f64))
        .collect();
    let mut pts = cube;
    pts.push(Point3::new(0.5, 0.5, 0.5));
    let mesh = Mesh::new(pts, vec![]).unwrap();
    let grid = build_lattice(&mesh, [3, 3, 3], BasisKind::Bernstein, 0.0).unwrap();
    let pm = parameterize(&mesh, &grid, DEFAULT_TOLERANCE, 50).unwrap();
    for s in pm.params()[8] {
        assert!((s - 0.5).abs() < 1e-12);
    }
    assert_eq!(pm.params()[0], [0.0, 0.0, 0.0]);
}

#[test]
fn zero_field_reproduces_reference() {
    let f = face();
    let out = f.pm.deform(&DeformationField::zeros(700)).unwrap();
    for (a, b) in out.vertices().iter().zip(f.mesh.vertices()) {
        assert!((a - b).amax() <= f.pm.max_residual());
    }
    assert_eq!(out.faces(), f.mesh.faces());
}

#[test]
fn constant_field_translates() {
    let f = face();
    let c = Vector3::new(1.5, -2.25, 0.125);
    let zero = f.pm.deform_points(&DeformationField::zeros(700)).unwrap();
    let moved =
        f.pm.deform_points(&DeformationField::constant(700, c))
            .unwrap();
    for (a, b) in moved.iter().zip(&zero) {
        assert!((a - b - c).amax() <= 1e-12);
    }
}

#[test]
fn affine_field_is_equivariant() {
    let f = face();
    let diag = f.pm.box_diagonal();
    let l = Matrix3::new(1.1, 0.2, -0.05, -0.1, 0.9, 0.3, 0.02, -0.2, 1.2);
    let b = Vector3::new(4.0, -3.0, 7.5);
    let field = DeformationField::from_affine(f.pm.grid(), &l, &b);
    let out = f.pm.deform_points(&field).unwrap();
    for (o, v) in out.iter().zip(f.mesh.vertices()) {
        assert!((o.coords - (l * v.coords + b)).amax() <= 1e-9 * diag);
    }
}

#[test]
fn single_point_moves_only_its_support() {
    let f = face();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let zero = f.pm.deform_points(&DeformationField::zeros(700)).unwrap();
    let mut total = 0;
    for _ in 0..20 {
        let (i, j, k) = (
            rng.random_range(1..6),
            rng.random_range(1..19),
            rng.random_range(1..4),
        );
        let flat = flat_index(i, j, k, [6, 19, 4]);
        let h = 0.75;
        let mut field = DeformationField::zeros(700);
        field.delta[flat] = Vector3::new(0.0, 0.0, h);
        let moved = f.pm.deform_points(&field).unwrap();
        let mask = f.pm.support_mask(flat).unwrap();
        let mut in_mask = vec![false; zero.len()];
        for &q in &mask {
            in_mask[q] = true;
        }
        for q in 0..zero.len() {
            if in_mask[q] {
                let coeff = f.pm.coeffs().get(q, flat);
                assert!(coeff > 0.0);
                assert!((moved[q].z - zero[q].z - h * coeff).abs() <= 1e-12);
            } else {
                assert_eq!(moved[q], zero[q]);
            }
        }
        total += mask.len();
    }
    assert!(total > 0);
}

#[test]
fn support_masks_match_column_scan_and_cover_mesh() {
    let f = face();
    let mut covered = vec![false; f.mesh.vertex_count()];
    let mut empty = 0;
    for flat in 0..700 {
        let mask = f.pm.support_mask(flat).unwrap();
        let scan: Vec<usize> = (0..f.mesh.vertex_count())
            .filter(|&q| f.pm.coeffs().get(q, flat) != 0.0)
            .collect();
        assert_eq!(mask, scan);
        empty += mask.is_empty() as usize;
        for q in mask {
            covered[q] = true;
        }
    }
    assert!(covered.iter().all(|&c| c));
    // the face surface is low at the lateral corners, leaving the front corners of the box empty
    assert!(f
        .pm
        .support_mask(flat_index(0, 0, 4, [6, 19, 4]))
        .unwrap()
        .is_empty());
    assert!(empty > 0);
    assert!(matches!(
        f.pm.support_mask(700),
        Err(LatticeError::ControlPointOutOfRange { .. })
    ));
}

#[test]
fn field_length_checked() {
    let f = face();
    assert!(matches!(
        f.pm.deform(&DeformationField::zeros(699)),
        Err(LatticeError::DimensionMismatch {
            expected: 700,
            actual: 699
        })
    ));
    assert!(DeformationField::new(vec![Vector3::new(f64::NAN, 0.0, 0.0)]).is_err());
}

#[test]
fn bernstein_is_global_for_interior_vertices() {
    let f = bernstein_face();
    for q in 0..f.mesh.vertex_count() {
        let stu = f.pm.params()[q];
        if stu.iter().all(|&s| s > 0.0 && s < 1.0) {
            let (idx, val) = f.pm.coeffs().row(q);
            assert_eq!(idx.len(), 700);
            assert!(val.iter().all(|&v| v > 0.0));
        }
    }
    assert!(f.pm.max_residual() <= 1e-10 * f.pm.box_diagonal());
}

#[test]
fn deform_matches_direct_product_of_displaced_points() {
    let f = face();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let field = random_field(&mut rng, 700, 3.0);
    let fast = f.pm.deform_points(&field).unwrap();
    let direct = deform_direct(&f.pm, &field);
    for (a, b) in fast.iter().zip(&direct) {
        assert!((a - b).amax() <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn deform_is_linear_in_the_field(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let f = face();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f1 = random_field(&mut rng, 700, 2.0);
        let f2 = random_field(&mut rng, 700, 2.0);
        let base = f.pm.deform_points(&DeformationField::zeros(700)).unwrap();
        let d = |x: &DeformationField| -> Vec<Vector3<f64>> {
            f.pm.deform_points(x).unwrap().iter().zip(&base).map(|(p, q)| p - q).collect()
        };
        let lhs = d(&f1.scaled_add(a, &f2, b));
        let (d1, d2) = (d(&f1), d(&f2));
        for q in 0..lhs.len() {
            prop_assert!((lhs[q] - (d1[q] * a + d2[q] * b)).amax() <= 1e-12);
        }
    }
}
