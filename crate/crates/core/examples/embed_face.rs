//! Embeds a face mesh in a B-spline control lattice and saves the result.
//!
//! ```bash
//! cargo run --release -p ffd-face --example embed_face
//! cargo run --release -p ffd-face --example embed_face -- path/to/mesh.obj /tmp/mesh.params.json
//! ```

use std::path::PathBuf;
use std::time::Instant;

use ffd_face::formats::save_parameterization;
use ffd_face::lattice::{DEFAULT_DIMS, DEFAULT_MAX_ITER, DEFAULT_PADDING, DEFAULT_TOLERANCE};
use ffd_face::sample::bundled_face_path;
use ffd_face::{build_lattice, load_mesh, parameterize, BasisKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let mesh_path = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(bundled_face_path);
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("face.params.json"));

    let mesh = load_mesh(&mesh_path)?;
    let start = Instant::now();
    let grid = build_lattice(&mesh, DEFAULT_DIMS, BasisKind::default(), DEFAULT_PADDING)?;
    let pm = parameterize(&mesh, &grid, DEFAULT_TOLERANCE, DEFAULT_MAX_ITER)?;
    println!(
        "{} vertices in a {:?} lattice ({} control points)",
        pm.vertex_count(),
        DEFAULT_DIMS,
        pm.control_point_count()
    );
    println!("embedded in {:.2} s", start.elapsed().as_secs_f64());
    println!(
        "at most {} nonzero coefficients per vertex",
        pm.coeffs().max_row_nnz()
    );
    println!(
        "max reconstruction residual {:.2e} x box diagonal",
        pm.max_residual() / pm.box_diagonal()
    );

    save_parameterization(&pm, &out)?;
    println!("wrote {}", out.display());
    Ok(())
}
