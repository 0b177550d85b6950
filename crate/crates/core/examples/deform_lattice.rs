//! Moves control points by hand and shows how far the edit reaches.
//!
//! ```bash
//! cargo run --release -p ffd-face --example deform_lattice
//! ```
//!
//! One interior control point is lifted along depth, then the whole lattice
//! is put through an affine map. The deformed meshes are written as OBJ.

use ffd_face::basis::flat_index;
use ffd_face::lattice::{DEFAULT_DIMS, DEFAULT_MAX_ITER, DEFAULT_PADDING, DEFAULT_TOLERANCE};
use ffd_face::sample::generate_face;
use ffd_face::{build_lattice, parameterize, save_mesh, BasisKind, DeformationField};
use nalgebra::{Matrix3, Vector3};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let face = generate_face(95)?;
    let grid = build_lattice(
        &face.mesh,
        DEFAULT_DIMS,
        BasisKind::default(),
        DEFAULT_PADDING,
    )?;
    let pm = parameterize(&face.mesh, &grid, DEFAULT_TOLERANCE, DEFAULT_MAX_ITER)?;
    let m = pm.control_point_count();

    // lift a point near the nose tip
    let nose = flat_index(3, 9, 3, DEFAULT_DIMS);
    let mut field = DeformationField::zeros(m);
    field.delta[nose] = Vector3::new(0.0, 0.0, 10.0);
    let lifted = pm.deform(&field)?;
    let moved = pm.support_mask(nose)?;
    let peak = moved
        .iter()
        .map(|&q| lifted.vertices()[q].z - pm.reference_points()[q].z)
        .fold(0.0, f64::max);
    println!(
        "control point {nose} reaches {} of {} vertices, largest lift {peak:.3}",
        moved.len(),
        pm.vertex_count()
    );

    // an affine map of the control points is the same affine map of the mesh
    let linear = Matrix3::new(1.1, 0.0, 0.0, 0.0, 0.9, 0.1, 0.0, 0.0, 1.0);
    let affine = DeformationField::from_affine(pm.grid(), &linear, &Vector3::new(0.0, 5.0, 0.0));
    let sheared = pm.deform(&affine)?;
    let err = sheared
        .vertices()
        .iter()
        .zip(face.mesh.vertices())
        .map(|(a, v)| (a.coords - (linear * v.coords + Vector3::new(0.0, 5.0, 0.0))).amax())
        .fold(0.0, f64::max);
    println!("affine lattice edit matches the affine map of the mesh to {err:.1e}");

    let dir = std::env::temp_dir();
    save_mesh(&lifted, dir.join("lifted.obj"))?;
    save_mesh(&sheared, dir.join("sheared.obj"))?;
    println!("wrote lifted.obj and sheared.obj to {}", dir.display());
    Ok(())
}
