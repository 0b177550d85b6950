//! Regenerates the bundled face mesh and landmark scheme.
//!
//! ```bash
//! cargo run --release -p ffd-face --example generate_sample
//! cargo run --release -p ffd-face --example generate_sample -- 95 /tmp/face95
//! ```
//!
//! With no arguments the files are written to the crate's `data/` directory
//! at full resolution (35,709 vertices).

use std::path::PathBuf;

use ffd_face::mesh::save_mesh;
use ffd_face::sample::{
    bundled_face_path, bundled_landmarks_path, generate_face, rounded, DEFAULT_RESOLUTION,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let resolution: usize = args
        .next()
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(DEFAULT_RESOLUTION);
    let (mesh_path, scheme_path) = match args.next() {
        Some(prefix) => (
            PathBuf::from(format!("{prefix}.obj")),
            PathBuf::from(format!("{prefix}.landmarks.json")),
        ),
        None => (bundled_face_path(), bundled_landmarks_path()),
    };

    let face = generate_face(resolution)?;
    save_mesh(&rounded(&face.mesh)?, &mesh_path)?;
    std::fs::write(&scheme_path, face.scheme.to_json_string() + "\n")?;

    let (lo, hi) = face.mesh.bounding_box();
    println!(
        "{} vertices, {} triangles",
        face.mesh.vertex_count(),
        face.mesh.faces().len()
    );
    println!("box {:?} .. {:?}", [lo.x, lo.y, lo.z], [hi.x, hi.y, hi.z]);
    println!(
        "wrote {} and {}",
        mesh_path.display(),
        scheme_path.display()
    );
    Ok(())
}
