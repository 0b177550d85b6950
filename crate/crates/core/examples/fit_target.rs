//! Fits pose and control-point displacements to a synthetic scan, then to
//! its 68 landmarks alone.
//!
//! ```bash
//! cargo run --release -p ffd-face --example fit_target
//! ```

use ffd_face::fitting::fit_pose_and_deformation;
use ffd_face::landmarks::sample_landmarks;
use ffd_face::lattice::{DEFAULT_DIMS, DEFAULT_MAX_ITER, DEFAULT_PADDING, DEFAULT_TOLERANCE};
use ffd_face::projection::apply_pose;
use ffd_face::sample::generate_face;
use ffd_face::{
    build_lattice, parameterize, BasisKind, DeformationField, FitConfig, FitTarget, LossWeights,
    Pose,
};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let face = generate_face(95)?;
    let grid = build_lattice(
        &face.mesh,
        DEFAULT_DIMS,
        BasisKind::default(),
        DEFAULT_PADDING,
    )?;
    let pm = parameterize(&face.mesh, &grid, DEFAULT_TOLERANCE, DEFAULT_MAX_ITER)?;
    let diag = pm.box_diagonal();

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let truth = DeformationField::new(
        (0..pm.control_point_count())
            .map(|_| Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)) * 0.01 * diag)
            .collect(),
    )?;
    let pose = Pose::from_euler_degrees(1.3, 35.0, -10.0, 5.0, Vector3::new(20.0, -4.0, 60.0))?;
    let scan = apply_pose(&pm.deform(&truth)?, &pose);

    let weights = LossWeights::default();
    let cfg = FitConfig::default();
    let fit = fit_pose_and_deformation(&pm, FitTarget::Mesh(&scan), &face.scheme, &weights, &cfg)?;
    println!(
        "mesh target: {} rounds in {:.2} s",
        fit.rounds, fit.elapsed_seconds
    );
    println!(
        "  objective {:.3e} -> {:.3e}",
        fit.history[0], fit.objective
    );
    println!(
        "  surface rmse {:.2e} x box diagonal",
        fit.observed_rmse / diag
    );
    // a small similarity of the lattice is itself a displacement field, so
    // the split between pose and field is not unique; the surface is
    println!(
        "  pose scale {:.4} against {:.4} used to make the scan",
        fit.pose.scale(),
        pose.scale()
    );

    // landmarks only: the rest of the surface is not observed
    let landmarks = sample_landmarks(&scan, &face.scheme)?.points;
    let cfg = FitConfig {
        lambda: 1e-4,
        ..cfg
    };
    let fit = fit_pose_and_deformation(
        &pm,
        FitTarget::Landmarks(&landmarks),
        &face.scheme,
        &weights,
        &cfg,
    )?;
    println!(
        "landmark target: landmark rmse {:.2e} x box diagonal",
        fit.observed_rmse / diag
    );
    Ok(())
}
