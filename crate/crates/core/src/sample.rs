//! Deterministic synthetic face surface and its 68-landmark scheme.
//!
//! The face is a height field over a disc: a square `res x res` grid with
//! three vertices cut from each corner is mapped onto the unit disc and
//! lifted by an ellipsoid with nose, brow, eye-socket, lip and chin features.
//! At the default resolution of 189 the mesh has 35,709 vertices. `x` is
//! lateral, `y` vertical and `z` points out of the face.

use std::f64::consts::PI;
use std::path::PathBuf;

use nalgebra::Point3;

use crate::landmarks::{LandmarkError, LandmarkScheme, LANDMARK_COUNT};
use crate::mesh::{load_mesh, Mesh, MeshError};

pub const DEFAULT_RESOLUTION: usize = 189;
pub const HALF_WIDTH: f64 = 72.0;
pub const HALF_HEIGHT: f64 = 100.0;

/// Path of the bundled face mesh (OBJ, 35,709 vertices).
pub fn bundled_face_path() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/data/sample_face.obj"))
}

/// Path of the bundled landmark scheme for [`bundled_face_path`].
pub fn bundled_landmarks_path() -> PathBuf {
    PathBuf::from(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/data/landmarks68.json"
    ))
}

pub fn load_bundled_face() -> Result<(Mesh, LandmarkScheme), LandmarkError> {
    let mesh = load_mesh(bundled_face_path())?;
    let scheme = LandmarkScheme::load(bundled_landmarks_path())?;
    scheme.validate_for(mesh.vertex_count())?;
    Ok((mesh, scheme))
}

#[derive(Debug, Clone)]
pub struct SampleFace {
    pub mesh: Mesh,
    pub scheme: LandmarkScheme,
    /// Disc coordinates of every vertex, the domain of the height field.
    pub disc: Vec<[f64; 2]>,
}

fn gauss(dx: f64, dy: f64, sx: f64, sy: f64) -> f64 {
    (-(dx * dx) / (sx * sx) - (dy * dy) / (sy * sy)).exp()
}

/// Surface height at disc coordinates `(x, y)`.
pub fn face_height(x: f64, y: f64) -> f64 {
    let base = 55.0 * (1.0 - 0.85 * x * x - 0.35 * y * y).max(0.0).sqrt();
    let ridge = {
        // rises from the brow line to the nose tip and stops above the lip
        let along = ((0.32 - y) / 0.42).clamp(0.0, 1.0);
        let cutoff = 1.0 / (1.0 + (-(y + 0.13) / 0.02).exp());
        18.0 * along * cutoff * gauss(x, 0.0, 0.08 + 0.06 * along, 1.0)
    };
    let tip = 8.0 * gauss(x, y + 0.08, 0.09, 0.07);
    let sockets =
        -6.0 * (gauss(x + 0.36, y - 0.22, 0.14, 0.1) + gauss(x - 0.36, y - 0.22, 0.14, 0.1));
    let brows = 3.0 * gauss(x.abs() - 0.38, y - 0.42, 0.25, 0.06);
    let lips = 4.0 * gauss(x, y + 0.47, 0.22, 0.08);
    let chin = 3.0 * gauss(x, y + 0.8, 0.25, 0.14);
    base + ridge + tip + sockets + brows + lips + chin
}

/// The 68 landmark positions in disc coordinates, in iBUG order.
pub fn landmark_disc_positions() -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(LANDMARK_COUNT);
    // contour, from the right temple under the chin to the left temple
    for k in 0..17 {
        let th = PI + PI * k as f64 / 16.0;
        out.push([0.9 * th.cos(), 0.2 + 1.15 * th.sin()]);
    }
    for (x0, x1) in [(-0.62, -0.15), (0.15, 0.62)] {
        for k in 0..5 {
            let t = k as f64 / 4.0;
            out.push([x0 + (x1 - x0) * t, 0.40 + 0.05 * (PI * t).sin()]);
        }
    }
    for y in [0.28, 0.18, 0.08, -0.02] {
        out.push([0.0, y]);
    }
    for (x, y) in [
        (-0.14, -0.12),
        (-0.07, -0.14),
        (0.0, -0.15),
        (0.07, -0.14),
        (0.14, -0.12),
    ] {
        out.push([x, y]);
    }
    for cx in [-0.36, 0.36] {
        for deg in [180.0_f64, 120.0, 60.0, 0.0, -60.0, -120.0] {
            let a = deg.to_radians();
            out.push([cx + 0.12 * a.cos(), 0.22 + 0.045 * a.sin()]);
        }
    }
    for k in 0..12 {
        let a = (180.0 - 30.0 * k as f64).to_radians();
        out.push([0.26 * a.cos(), -0.47 + 0.1 * a.sin()]);
    }
    for k in 0..8 {
        let a = (180.0 - 45.0 * k as f64).to_radians();
        out.push([0.17 * a.cos(), -0.47 + 0.03 * a.sin()]);
    }
    out
}

/// Generates the face at `resolution x resolution` grid samples (at least 8).
pub fn generate_face(resolution: usize) -> Result<SampleFace, LandmarkError> {
    assert!(resolution >= 8, "resolution must be at least 8");
    let r = resolution;
    let cut = |i: usize, j: usize| {
        let (a, b) = (i.min(r - 1 - i), j.min(r - 1 - j));
        a + b <= 1
    };
    let mut index = vec![usize::MAX; r * r];
    let mut vertices = Vec::new();
    let mut disc = Vec::new();
    for j in 0..r {
        for i in 0..r {
            if cut(i, j) {
                continue;
            }
            let u = -1.0 + 2.0 * i as f64 / (r - 1) as f64;
            let v = -1.0 + 2.0 * j as f64 / (r - 1) as f64;
            let x = u * (1.0 - 0.5 * v * v).sqrt();
            let y = v * (1.0 - 0.5 * u * u).sqrt();
            index[j * r + i] = vertices.len();
            vertices.push(Point3::new(
                HALF_WIDTH * x,
                HALF_HEIGHT * y,
                face_height(x, y),
            ));
            disc.push([x, y]);
        }
    }
    let mut faces = Vec::new();
    for j in 0..r - 1 {
        for i in 0..r - 1 {
            let a = index[j * r + i];
            let b = index[j * r + i + 1];
            let d = index[(j + 1) * r + i];
            let e = index[(j + 1) * r + i + 1];
            for tri in [[a, b, e], [a, e, d]] {
                if tri.iter().all(|&t| t != usize::MAX) {
                    faces.push(tri);
                }
            }
        }
    }
    let mesh = Mesh::new(vertices, faces).map_err(LandmarkError::from)?;
    // nearest vertex not already taken, so coarse grids still give 68 distinct indices
    let mut landmarks: Vec<usize> = Vec::with_capacity(LANDMARK_COUNT);
    for [lx, ly] in landmark_disc_positions() {
        let q = disc
            .iter()
            .enumerate()
            .filter(|(q, _)| !landmarks.contains(q))
            .min_by(|(_, a), (_, b)| {
                let da = (a[0] - lx).powi(2) + (a[1] - ly).powi(2);
                let db = (b[0] - lx).powi(2) + (b[1] - ly).powi(2);
                da.total_cmp(&db)
            })
            .map(|(q, _)| q)
            .expect("mesh has more than 68 vertices");
        landmarks.push(q);
    }
    let scheme = LandmarkScheme::ibug68(landmarks)?;
    Ok(SampleFace { mesh, scheme, disc })
}

/// The mesh as stored on disk: coordinates rounded to six decimals.
pub fn rounded(mesh: &Mesh) -> Result<Mesh, MeshError> {
    let round = |c: f64| (c * 1e6).round() / 1e6;
    mesh.with_vertices(mesh.vertices().iter().map(|p| p.map(round)).collect())
}
