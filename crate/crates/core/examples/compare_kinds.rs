//! Fits the same targets with a B-spline and a Bernstein lattice and prints
//! the comparison.
//!
//! ```bash
//! cargo run --release -p ffd-face --example compare_kinds
//! ```
//!
//! Bernstein rows are dense (every vertex depends on every control point),
//! so the face is generated at reduced resolution.

use ffd_face::evaluation::{compare_kinds, ComparisonTarget};
use ffd_face::lattice::{DEFAULT_DIMS, DEFAULT_MAX_ITER, DEFAULT_PADDING, DEFAULT_TOLERANCE};
use ffd_face::sample::generate_face;
use ffd_face::{build_lattice, parameterize, BasisKind, FitConfig, LossWeights, Pose, Region};
use nalgebra::Vector3;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let face = generate_face(41)?;
    let embed = |kind| -> Result<_, Box<dyn std::error::Error>> {
        let grid = build_lattice(&face.mesh, DEFAULT_DIMS, kind, DEFAULT_PADDING)?;
        Ok(parameterize(
            &face.mesh,
            &grid,
            DEFAULT_TOLERANCE,
            DEFAULT_MAX_ITER,
        )?)
    };
    let (bspline, bernstein) = (embed(BasisKind::default())?, embed(BasisKind::Bernstein)?);
    let diag = bspline.box_diagonal();

    // a Gaussian bump under each region pushes the surface out locally; the
    // camera yaws are off frontal so the depth change shows in 2-D
    let mut targets = Vec::new();
    for (n, region) in [
        Region::UpperNose,
        Region::LowerLip,
        Region::LeftEye,
        Region::RightEyebrow,
        Region::Contour,
    ]
    .into_iter()
    .enumerate()
    {
        let idx = face.scheme.region_vertices(region);
        let centre = idx.iter().fold(Vector3::zeros(), |acc, &i| {
            acc + face.mesh.vertices()[i].coords
        }) / idx.len() as f64;
        let sigma = 0.05 * diag;
        let pts = face
            .mesh
            .vertices()
            .iter()
            .map(|p| {
                p + Vector3::z()
                    * 0.02
                    * diag
                    * (-(p.coords - centre).norm_squared() / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        targets.push(ComparisonTarget {
            name: format!("bump-{region}"),
            mesh: face.mesh.with_vertices(pts)?,
            pose: Pose::from_euler_degrees(
                1.0,
                -60.0 + 25.0 * n as f64,
                0.0,
                0.0,
                Vector3::zeros(),
            )?,
        });
    }

    let report = compare_kinds(
        &bspline,
        &bernstein,
        &targets,
        &face.scheme,
        &LossWeights::default(),
        &FitConfig::default(),
    )?;
    print!("{}", report.render());
    Ok(())
}
