//! Reference computations shared by the integration tests. Everything here is
//! written from the defining formulas, without calling into the optimized
//! code paths it is compared against.

#![allow(dead_code)]

use ffd_face::basis::BasisKind;
use ffd_face::landmarks::{LandmarkScheme, Region};
use ffd_face::lattice::{
    build_lattice, parameterize, DeformationField, ParameterizedMesh, DEFAULT_MAX_ITER,
    DEFAULT_PADDING, DEFAULT_TOLERANCE,
};
use ffd_face::mesh::Mesh;
use ffd_face::projection::Pose;
use ffd_face::sample::generate_face;
use nalgebra::{Point3, Rotation3, Unit, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Clamped uniform knots for `count` functions of degree `p`.
pub fn clamped_knots(count: usize, p: usize) -> Vec<f64> {
    let spans = count - p;
    let mut k = vec![0.0; p + 1];
    for i in 1..spans {
        k.push(i as f64 / spans as f64);
    }
    k.extend(std::iter::repeat_n(1.0, p + 1));
    k
}

/// Literal Cox–de Boor recursion with `0/0 := 0`. Spans are half-open except
/// the last non-empty one, which also takes `u = 1`.
pub fn cox_de_boor(i: usize, p: usize, u: f64, knots: &[f64]) -> f64 {
    if p == 0 {
        let (a, b) = (knots[i], knots[i + 1]);
        let last = *knots.last().unwrap();
        if a <= u && u < b {
            return 1.0;
        }
        // closing the final non-empty span at u = 1
        if u == last && b == last && a < b {
            return 1.0;
        }
        return 0.0;
    }
    let ratio = |num: f64, den: f64| if den == 0.0 { 0.0 } else { num / den };
    ratio(u - knots[i], knots[i + p] - knots[i]) * cox_de_boor(i, p - 1, u, knots)
        + ratio(knots[i + p + 1] - u, knots[i + p + 1] - knots[i + 1])
            * cox_de_boor(i + 1, p - 1, u, knots)
}

pub fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

pub fn bernstein_oracle(i: usize, n: usize, u: f64) -> f64 {
    binomial(n, i) * u.powi(i as i32) * (1.0 - u).powi((n - i) as i32)
}

/// 1-D values of all `divisions + 1` functions along one axis.
pub fn axis_values(kind: BasisKind, divisions: usize, u: f64) -> Vec<f64> {
    match kind {
        BasisKind::Bernstein => (0..=divisions)
            .map(|i| bernstein_oracle(i, divisions, u))
            .collect(),
        BasisKind::BSpline { degree } => {
            let knots = clamped_knots(divisions + 1, degree);
            (0..=divisions)
                .map(|i| cox_de_boor(i, degree, u, &knots))
                .collect()
        }
    }
}

/// Dense tensor row by exhaustive products, flat index `(i, j, k)` with `k`
/// fastest.
pub fn dense_row(stu: [f64; 3], dims: [usize; 3], kind: BasisKind) -> Vec<f64> {
    let a = axis_values(kind, dims[0], stu[0]);
    let b = axis_values(kind, dims[1], stu[1]);
    let c = axis_values(kind, dims[2], stu[2]);
    let mut out = Vec::with_capacity(a.len() * b.len() * c.len());
    for x in &a {
        for y in &b {
            for z in &c {
                out.push(x * y * z);
            }
        }
    }
    out
}

pub struct Face {
    pub mesh: Mesh,
    pub scheme: LandmarkScheme,
    pub pm: ParameterizedMesh,
}

/// Procedural face at reduced resolution, embedded with default settings.
pub fn small_face(resolution: usize, kind: BasisKind) -> Face {
    let f = generate_face(resolution).unwrap();
    let grid = build_lattice(&f.mesh, [6, 19, 4], kind, DEFAULT_PADDING).unwrap();
    let pm = parameterize(&f.mesh, &grid, DEFAULT_TOLERANCE, DEFAULT_MAX_ITER).unwrap();
    Face {
        mesh: f.mesh,
        scheme: f.scheme,
        pm,
    }
}

pub fn random_field(rng: &mut ChaCha8Rng, count: usize, amplitude: f64) -> DeformationField {
    let delta = (0..count)
        .map(|_| {
            Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ) * amplitude
        })
        .collect();
    DeformationField::new(delta).unwrap()
}

pub fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation3<f64> {
    let axis = loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if v.norm() > 0.1 {
            break v;
        }
    };
    Rotation3::from_axis_angle(&Unit::new_normalize(axis), rng.random_range(-3.0..3.0))
}

pub fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let t = Vector3::new(
        rng.random_range(-50.0..50.0),
        rng.random_range(-50.0..50.0),
        rng.random_range(-50.0..50.0),
    );
    Pose::from_rotation(rng.random_range(0.5..2.0), random_rotation(rng), t).unwrap()
}

/// Face-like pose: moderate rotation so the face stays roughly frontal.
pub fn random_head_pose(rng: &mut ChaCha8Rng) -> Pose {
    let t = Vector3::new(
        rng.random_range(-20.0..20.0),
        rng.random_range(-20.0..20.0),
        rng.random_range(-20.0..20.0),
    );
    Pose::from_euler_degrees(
        rng.random_range(0.7..1.4),
        rng.random_range(-80.0..80.0),
        rng.random_range(-30.0..30.0),
        rng.random_range(-20.0..20.0),
        t,
    )
    .unwrap()
}

pub fn posed(points: &[Point3<f64>], pose: &Pose) -> Vec<Point3<f64>> {
    points
        .iter()
        .map(|p| Point3::from(pose.rotation() * p.coords * pose.scale() + pose.translation()))
        .collect()
}

pub fn rmse(a: &[Point3<f64>], b: &[Point3<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    (a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm_squared())
        .sum::<f64>()
        / a.len() as f64)
        .sqrt()
}

/// Mean over entries of squared coordinate differences.
pub fn mse_entries(a: &[Point3<f64>], b: &[Point3<f64>]) -> f64 {
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(b) {
        for c in 0..3 {
            sum += (x[c] - y[c]).powi(2);
        }
    }
    sum / (3 * a.len()) as f64
}

/// Weighted loss computed from its definition on explicit point lists.
pub fn direct_total_loss(
    pred: &[Point3<f64>],
    gt: &[Point3<f64>],
    scheme: &LandmarkScheme,
    vertex_weight: f64,
    region_weights: [f64; 9],
) -> (f64, [f64; 9], f64) {
    let v = mse_entries(pred, gt);
    let mut regions = [0.0; 9];
    for r in Region::ALL {
        let idx = scheme.region_vertices(r);
        let a: Vec<_> = idx.iter().map(|&i| pred[i]).collect();
        let b: Vec<_> = idx.iter().map(|&i| gt[i]).collect();
        regions[r.index()] = mse_entries(&a, &b);
    }
    let total = vertex_weight * v
        + regions
            .iter()
            .zip(region_weights)
            .map(|(l, w)| l * w)
            .sum::<f64>();
    (v, regions, total)
}

/// Deformed vertices `B (P0 + dP)` from the coefficient rows.
pub fn deform_direct(pm: &ParameterizedMesh, field: &DeformationField) -> Vec<Point3<f64>> {
    let p: Vec<Vector3<f64>> = pm
        .grid()
        .points()
        .iter()
        .zip(&field.delta)
        .map(|(a, d)| a.coords + d)
        .collect();
    (0..pm.vertex_count())
        .map(|q| {
            let (idx, val) = pm.coeffs().row(q);
            Point3::from(
                idx.iter()
                    .zip(val)
                    .fold(Vector3::zeros(), |acc, (&c, &w)| acc + p[c as usize] * w),
            )
        })
        .collect()
}
