//! Writes the editor bundle for a deformed face and reads an edited field
//! back.
//!
//! ```bash
//! cargo run --release -p ffd-face --example export_bundle
//! ```
//!
//! The bundle carries the mesh, the lattice, the sparse coefficient rows and
//! the current displacements, which is all a viewer needs to redraw the mesh
//! as control points are dragged.

use ffd_face::basis::flat_index;
use ffd_face::formats::{load_bundle, load_field, save_bundle, save_field, BundleDoc};
use ffd_face::lattice::{DEFAULT_DIMS, DEFAULT_MAX_ITER, DEFAULT_PADDING, DEFAULT_TOLERANCE};
use ffd_face::sample::generate_face;
use ffd_face::{build_lattice, parameterize, BasisKind, DeformationField};
use nalgebra::Vector3;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let face = generate_face(61)?;
    let grid = build_lattice(
        &face.mesh,
        DEFAULT_DIMS,
        BasisKind::default(),
        DEFAULT_PADDING,
    )?;
    let pm = parameterize(&face.mesh, &grid, DEFAULT_TOLERANCE, DEFAULT_MAX_ITER)?;

    let mut field = DeformationField::zeros(pm.control_point_count());
    field.delta[flat_index(3, 5, 3, DEFAULT_DIMS)] = Vector3::new(0.0, -4.0, 6.0);
    let dir = std::env::temp_dir();
    let bundle_path = dir.join("face.bundle.json");
    save_bundle(&BundleDoc::build(&pm, Some(&field), None)?, &bundle_path)?;
    let size = std::fs::metadata(&bundle_path)?.len();
    println!(
        "wrote {} ({:.1} MB)",
        bundle_path.display(),
        size as f64 / 1e6
    );

    // a viewer redraws from the bundle alone
    let mut bundle = load_bundle(&bundle_path)?;
    bundle.delta[flat_index(2, 14, 3, DEFAULT_DIMS)][2] += 3.0;
    let shown = bundle.evaluate();

    // and hands back the field, which the library deforms the same way
    let edited = dir.join("face.edited.json");
    save_field(&bundle.field()?, &edited)?;
    let deformed = pm.deform_points(&load_field(&edited)?)?;
    let gap = shown
        .iter()
        .zip(&deformed)
        .map(|(a, b)| (a - b).amax())
        .fold(0.0, f64::max);
    println!("bundle redraw and library deform agree to {gap:.1e}");
    Ok(())
}
