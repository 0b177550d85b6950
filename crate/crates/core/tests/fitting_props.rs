mod common;

use std::sync::OnceLock;

use common::{
    direct_total_loss, mse_entries, posed, random_field, random_head_pose, rmse, small_face, Face,
};
use ffd_face::basis::BasisKind;
use ffd_face::fitting::{
    fit_deformation, fit_pose_and_deformation, landmark_loss, landmark_region_loss,
    landmark_region_loss_named, loss_gradient, total_loss, vertex_loss, vertex_loss_points,
    FitConfig, FitError, FitTarget, Fitter, LossWeights, SolverKind, TargetKind,
};
use ffd_face::landmarks::{LandmarkError, Region};
use ffd_face::lattice::DeformationField;
use ffd_face::mesh::Mesh;
use ffd_face::projection::{apply_pose, Pose};
use nalgebra::{Point3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn face() -> &'static Face {
    static FACE: OnceLock<Face> = OnceLock::new();
    FACE.get_or_init(|| small_face(61, BasisKind::default()))
}

fn offset_mesh(mesh: &Mesh, f: impl Fn(usize) -> Vector3<f64>) -> Mesh {
    mesh.with_vertices(
        mesh.vertices()
            .iter()
            .enumerate()
            .map(|(i, p)| p + f(i))
            .collect(),
    )
    .unwrap()
}

fn exact_config() -> FitConfig {
    FitConfig {
        lambda: 0.0,
        ..FitConfig::default()
    }
}

#[test]
fn loss_examples() {
    let f = face();
    let id = Pose::identity();
    let m = &f.mesh;
    assert_eq!(vertex_loss(m, m, &id, &id).unwrap(), 0.0);

    let shifted = offset_mesh(m, |_| Vector3::new(1.0, 0.0, 0.0));
    assert!((vertex_loss(&shifted, m, &id, &id).unwrap() - 1.0 / 3.0).abs() <= 1e-12);

    let a = [Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 2.0, 0.0)];
    let b = [Point3::origin(), Point3::origin()];
    assert!((vertex_loss_points(&a, &b, &id, &id).unwrap() - 5.0 / 6.0).abs() <= 1e-15);

    let target = f.scheme.vertices()[3];
    let bumped = offset_mesh(m, |i| {
        if i == target {
            Vector3::new(3.0, 0.0, 0.0)
        } else {
            Vector3::zeros()
        }
    });
    let contour = landmark_region_loss(&bumped, m, &f.scheme, Region::Contour, &id, &id).unwrap();
    assert!((contour - 9.0 / 51.0).abs() <= 1e-15);
    let named = landmark_region_loss_named(&bumped, m, &f.scheme, "contour", &id, &id).unwrap();
    assert_eq!(named, contour);
    assert_eq!(
        landmark_region_loss(&bumped, m, &f.scheme, Region::LeftEye, &id, &id).unwrap(),
        0.0
    );
    assert!(matches!(
        landmark_region_loss_named(&bumped, m, &f.scheme, "chin", &id, &id),
        Err(FitError::Landmark(LandmarkError::UnknownRegion(_)))
    ));
}

#[test]
fn non_landmark_offsets_leave_regions_at_zero() {
    let f = face();
    let id = Pose::identity();
    let marked: std::collections::HashSet<usize> = f.scheme.vertices().iter().copied().collect();
    let n = f.mesh.vertex_count() as f64;
    // vertex loss of exactly 2 carried only by unmarked vertices
    let a = (2.0 * n / (n - 68.0)).sqrt();
    let gt = offset_mesh(&f.mesh, |i| {
        if marked.contains(&i) {
            Vector3::zeros()
        } else {
            Vector3::new(a, a, a)
        }
    });
    let report = total_loss(&f.mesh, &gt, &f.scheme, &LossWeights::default(), &id, &id).unwrap();
    assert!((report.vertex_loss.unwrap() - 2.0).abs() <= 1e-12);
    assert!(report.region_losses.iter().all(|&l| l == 0.0));
    assert!((report.total - 0.92).abs() <= 1e-12);
}

#[test]
fn unit_losses_total_one_under_default_weights() {
    let f = face();
    let id = Pose::identity();
    let w = LossWeights::default();
    assert!((w.sum() - 1.0).abs() <= 1e-15);
    let gt = offset_mesh(&f.mesh, |_| Vector3::new(1.0, -1.0, 1.0));
    let report = total_loss(&f.mesh, &gt, &f.scheme, &w, &id, &id).unwrap();
    assert!((report.vertex_loss.unwrap() - 1.0).abs() <= 1e-14);
    assert!(report
        .region_losses
        .iter()
        .all(|&l| (l - 1.0).abs() <= 1e-14));
    assert!((report.total - 1.0).abs() <= 1e-14);
    let zero = total_loss(&f.mesh, &f.mesh, &f.scheme, &w, &id, &id).unwrap();
    assert_eq!(zero.total, 0.0);
}

#[test]
fn losses_match_direct_evaluation_under_poses() {
    let f = face();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let w = LossWeights {
        vertex: 0.3,
        regions: [0.1, 0.05, 0.2, 0.0, 0.07, 0.11, 0.02, 0.09, 0.16],
    };
    for _ in 0..5 {
        let pred = f.pm.deform(&random_field(&mut rng, 700, 2.0)).unwrap();
        let (pp, pg) = (random_head_pose(&mut rng), random_head_pose(&mut rng));
        let report = total_loss(&pred, &f.mesh, &f.scheme, &w, &pp, &pg).unwrap();
        let (v, regions, total) = direct_total_loss(
            &posed(pred.vertices(), &pp),
            &posed(f.mesh.vertices(), &pg),
            &f.scheme,
            w.vertex,
            w.regions,
        );
        assert!((report.vertex_loss.unwrap() - v).abs() <= 1e-12 * v.max(1.0));
        for r in 0..9 {
            assert!((report.region_losses[r] - regions[r]).abs() <= 1e-12 * regions[r].max(1.0));
        }
        assert!((report.total - total).abs() <= 1e-12 * total.max(1.0));
    }
}

#[test]
fn loss_errors() {
    let f = face();
    let id = Pose::identity();
    let short = Mesh::new(f.mesh.vertices()[..100].to_vec(), vec![]).unwrap();
    assert!(matches!(
        vertex_loss(&short, &f.mesh, &id, &id),
        Err(FitError::VertexCountMismatch { .. })
    ));
    assert!(matches!(
        landmark_loss(
            &f.mesh,
            &[Point3::origin(); 10],
            &f.scheme,
            &LossWeights::default(),
            &id,
            &id
        ),
        Err(FitError::TargetSize {
            expected: 68,
            actual: 10
        })
    ));
    let bad = LossWeights {
        vertex: -1.0,
        ..LossWeights::default()
    };
    assert!(matches!(
        fit_deformation(&f.pm, &f.mesh, &f.scheme, &bad, &FitConfig::default()),
        Err(FitError::InvalidWeights)
    ));
    let cfg = FitConfig {
        lambda: -1.0,
        ..FitConfig::default()
    };
    assert!(matches!(
        fit_deformation(&f.pm, &f.mesh, &f.scheme, &LossWeights::default(), &cfg),
        Err(FitError::InvalidConfig(_))
    ));
    assert!(matches!(
        fit_deformation(
            &f.pm,
            &short,
            &f.scheme,
            &LossWeights::default(),
            &FitConfig::default()
        ),
        Err(FitError::TargetSize { .. })
    ));
}

#[test]
fn gradient_matches_central_differences() {
    let f = face();
    let diag = f.pm.box_diagonal();
    let h = 1e-6 * diag;
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let w = LossWeights::default();
    let gt_pts =
        f.pm.deform_points(&random_field(&mut rng, 700, 0.02 * diag))
            .unwrap();
    let gt = f.mesh.with_vertices(gt_pts).unwrap();
    for _ in 0..2 {
        let field = random_field(&mut rng, 700, 0.02 * diag);
        let (pp, pg) = (random_head_pose(&mut rng), random_head_pose(&mut rng));
        let grad = loss_gradient(&f.pm, &field, &gt, &f.scheme, &w, &pp, &pg).unwrap();
        let gt_posed = posed(gt.vertices(), &pg);
        let loss = |fd: &DeformationField| {
            let pred = posed(&f.pm.deform_points(fd).unwrap(), &pp);
            direct_total_loss(&pred, &gt_posed, &f.scheme, w.vertex, w.regions).2
        };
        let (mut err, mut norm) = (0.0, 0.0);
        for c in 0..700 {
            for a in 0..3 {
                let mut plus = field.clone();
                plus.delta[c][a] += h;
                let mut minus = field.clone();
                minus.delta[c][a] -= h;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                err += (fd - grad[c][a]).powi(2);
                norm += grad[c][a].powi(2);
            }
        }
        assert!(norm > 0.0);
        assert!(
            (err / norm).sqrt() < 1e-5,
            "relative error {}",
            (err / norm).sqrt()
        );
    }
}

#[test]
fn zero_weights_give_zero_gradient() {
    let f = face();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let field = random_field(&mut rng, 700, 3.0);
    let w = LossWeights {
        vertex: 0.0,
        regions: [0.0; 9],
    };
    let id = Pose::identity();
    let g = loss_gradient(&f.pm, &field, &f.mesh, &f.scheme, &w, &id, &id).unwrap();
    assert!(g.iter().all(|v| *v == Vector3::zeros()));
}

#[test]
fn gradient_vanishes_at_unregularized_minimizer() {
    let f = face();
    let diag = f.pm.box_diagonal();
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let w = LossWeights::default();
    let id = Pose::identity();
    // a target the lattice cannot reproduce exactly
    let noise: Vec<Vector3<f64>> = (0..f.mesh.vertex_count())
        .map(|_| {
            Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
        })
        .collect();
    let noisy = offset_mesh(&f.mesh, |i| noise[i] * 0.01 * diag);
    let (field, _) = fit_deformation(&f.pm, &noisy, &f.scheme, &w, &exact_config()).unwrap();
    let at_zero = loss_gradient(
        &f.pm,
        &DeformationField::zeros(700),
        &noisy,
        &f.scheme,
        &w,
        &id,
        &id,
    )
    .unwrap();
    let at_min = loss_gradient(&f.pm, &field, &noisy, &f.scheme, &w, &id, &id).unwrap();
    let norm = |g: &[Vector3<f64>]| g.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
    // the gram spectrum decays smoothly to ~1e-30 of its top, so the truncated
    // pseudo-inverse leaves a small residual gradient in the discarded directions
    assert!(
        norm(&at_min) <= 1e-6 * norm(&at_zero),
        "{} vs {}",
        norm(&at_min),
        norm(&at_zero)
    );
}

#[test]
fn reference_target_gives_zero_field() {
    let f = face();
    let (field, report) = fit_deformation(
        &f.pm,
        &f.mesh,
        &f.scheme,
        &LossWeights::default(),
        &FitConfig::default(),
    )
    .unwrap();
    // what remains is the parameterization residual pushed through the solve
    assert!(
        field.max_abs() <= 1e-9 * f.pm.box_diagonal(),
        "{}",
        field.max_abs()
    );
    assert!(report.total <= 1e-20);
}

#[test]
fn translation_is_fitted_exactly() {
    let f = face();
    let diag = f.pm.box_diagonal();
    let c = Vector3::new(0.05, -0.02, 0.03) * diag;
    let target = offset_mesh(&f.mesh, |_| c);
    let (field, _) = fit_deformation(
        &f.pm,
        &target,
        &f.scheme,
        &LossWeights::default(),
        &FitConfig::default(),
    )
    .unwrap();
    let fitted = f.pm.deform_points(&field).unwrap();
    for (a, b) in fitted.iter().zip(target.vertices()) {
        assert!((a - b).amax() <= 1e-9 * diag);
    }
}

#[test]
fn deformation_round_trip() {
    let f = face();
    let diag = f.pm.box_diagonal();
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let w = LossWeights::default();
    let fitter = Fitter::new(&f.pm, &f.scheme, w, FitConfig::default(), TargetKind::Mesh).unwrap();
    for trial in 0..20 {
        let truth = random_field(&mut rng, 700, 0.01 * diag);
        let target = f.pm.deform(&truth).unwrap();
        let fit = fitter
            .fit_deformation_at(&FitTarget::Mesh(&target), &Pose::identity(), None)
            .unwrap();
        let fitted = f.pm.deform_points(&fit.field).unwrap();
        let e = rmse(&fitted, target.vertices());
        assert!(e <= 1e-6 * diag, "trial {trial}: {e}");
        assert!(fit.relative_gradient <= 1e-8);
        // the free-function entry point agrees
        if trial == 0 {
            let (field, _) =
                fit_deformation(&f.pm, &target, &f.scheme, &w, &FitConfig::default()).unwrap();
            assert!(field.scaled_add(1.0, &fit.field, -1.0).max_abs() <= 1e-9 * diag);
        }
    }
}

#[test]
fn conjugate_gradient_agrees_with_dense() {
    let f = face();
    let diag = f.pm.box_diagonal();
    let mut rng = ChaCha8Rng::seed_from_u64(36);
    let target =
        f.pm.deform(&random_field(&mut rng, 700, 0.01 * diag))
            .unwrap();
    let w = LossWeights::default();
    let dense = FitConfig {
        solver: SolverKind::Dense,
        ..FitConfig::default()
    };
    let cg = FitConfig {
        solver: SolverKind::ConjugateGradient,
        lambda: 1e-4,
        ..FitConfig::default()
    };
    let dense = FitConfig {
        lambda: 1e-4,
        ..dense
    };
    let (a, _) = fit_deformation(&f.pm, &target, &f.scheme, &w, &dense).unwrap();
    let (b, _) = fit_deformation(&f.pm, &target, &f.scheme, &w, &cg).unwrap();
    let (pa, pb) = (
        f.pm.deform_points(&a).unwrap(),
        f.pm.deform_points(&b).unwrap(),
    );
    assert!(rmse(&pa, &pb) <= 1e-8 * diag);
}

#[test]
fn rank_deficiency_is_flagged_without_regularization() {
    let f = face();
    let fitter = Fitter::new(
        &f.pm,
        &f.scheme,
        LossWeights::default(),
        exact_config(),
        TargetKind::Mesh,
    )
    .unwrap();
    let fit = fitter
        .fit_deformation_at(&FitTarget::Mesh(&f.mesh), &Pose::identity(), None)
        .unwrap();
    // control points with empty support make the normal equations singular
    assert!(fit.rank_deficient);
    assert!(fit.field.max_abs() <= 1e-8 * f.pm.box_diagonal());
}

#[test]
fn joint_round_trip_and_monotone_history() {
    let f = face();
    let diag = f.pm.box_diagonal();
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let fitter = Fitter::new(
        &f.pm,
        &f.scheme,
        LossWeights::default(),
        FitConfig::default(),
        TargetKind::Mesh,
    )
    .unwrap();
    for trial in 0..6 {
        let truth = random_field(&mut rng, 700, 0.01 * diag);
        let pose = random_head_pose(&mut rng);
        let target = apply_pose(&f.pm.deform(&truth).unwrap(), &pose);
        let fit = fitter
            .fit_pose_and_deformation(&FitTarget::Mesh(&target))
            .unwrap();
        let fitted = fit.pose.apply_all(&f.pm.deform_points(&fit.field).unwrap());
        let e = rmse(&fitted, target.vertices());
        assert!(e <= 1e-5 * diag, "trial {trial}: {e}");
        assert!((fit.observed_rmse - e).abs() <= 1e-9 * diag);
        for pair in fit.history.windows(2) {
            assert!(pair[1] <= pair[0], "trial {trial}: {:?}", fit.history);
        }
        assert_eq!(fit.history.len(), 1 + 2 * fit.rounds);
    }
}

#[test]
fn rigid_target_recovers_pose() {
    let f = face();
    let diag = f.pm.box_diagonal();
    let mut rng = ChaCha8Rng::seed_from_u64(38);
    let pose = random_head_pose(&mut rng);
    let target = apply_pose(&f.mesh, &pose);
    let fit = fit_pose_and_deformation(
        &f.pm,
        FitTarget::Mesh(&target),
        &f.scheme,
        &LossWeights::default(),
        &FitConfig::default(),
    )
    .unwrap();
    assert!(fit.pose.rotation_angle_to(&pose) <= 1e-9);
    assert!((fit.pose.scale() - pose.scale()).abs() <= 1e-9 * pose.scale());
    assert!((fit.pose.translation() - pose.translation()).norm() <= 1e-9 * diag);
    assert!(fit.field.max_abs() <= 1e-9 * diag);
}

#[test]
fn landmark_target_reports_landmark_residual_only() {
    let f = face();
    let diag = f.pm.box_diagonal();
    let mut rng = ChaCha8Rng::seed_from_u64(39);
    let pose = random_head_pose(&mut rng);
    let truth =
        f.pm.deform_points(&random_field(&mut rng, 700, 0.01 * diag))
            .unwrap();
    let lm: Vec<Point3<f64>> = f
        .scheme
        .vertices()
        .iter()
        .map(|&v| pose.apply(&truth[v]))
        .collect();
    let w = LossWeights::default();
    let cfg = FitConfig {
        lambda: 1e-4,
        ..FitConfig::default()
    };
    let fit =
        fit_pose_and_deformation(&f.pm, FitTarget::Landmarks(&lm), &f.scheme, &w, &cfg).unwrap();
    assert_eq!(fit.report.vertex_loss, None);

    let fitted = fit.pose.apply_all(&f.pm.deform_points(&fit.field).unwrap());
    let pred: Vec<Point3<f64>> = f.scheme.vertices().iter().map(|&v| fitted[v]).collect();
    let mut total = 0.0;
    for r in Region::ALL {
        let slots = f.scheme.region_slots(r);
        let a: Vec<_> = slots.iter().map(|&s| pred[s]).collect();
        let b: Vec<_> = slots.iter().map(|&s| lm[s]).collect();
        let direct = mse_entries(&a, &b);
        assert!(
            (fit.report.region(r) - direct).abs() <= 1e-12 * diag * diag,
            "{r}"
        );
        total += w.region(r) * direct;
    }
    assert!((fit.report.total - total).abs() <= 1e-12 * diag * diag);
    assert!((fit.observed_rmse - rmse(&pred, &lm)).abs() <= 1e-9 * diag);
    // 68 points pin the landmarks but not the rest of the surface
    assert!(fit.observed_rmse <= 1e-3 * diag);

    let wrong = FitTarget::Landmarks(&lm[..60]);
    assert!(matches!(
        fit_pose_and_deformation(&f.pm, wrong, &f.scheme, &w, &cfg),
        Err(FitError::TargetSize {
            expected: 68,
            actual: 60
        })
    ));
}

#[test]
fn doubling_weights_doubles_loss_and_keeps_argmin() {
    let f = face();
    let diag = f.pm.box_diagonal();
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let target = offset_mesh(
        &f.pm
            .deform(&random_field(&mut rng, 700, 0.01 * diag))
            .unwrap(),
        |i| Vector3::new(0.0, 0.0, 1e-3 * diag * ((i % 7) as f64 - 3.0)),
    );
    let w = LossWeights::default();
    let (a, ra) = fit_deformation(&f.pm, &target, &f.scheme, &w, &exact_config()).unwrap();
    let (b, rb) =
        fit_deformation(&f.pm, &target, &f.scheme, &w.scaled(2.0), &exact_config()).unwrap();
    let (pa, pb) = (
        f.pm.deform_points(&a).unwrap(),
        f.pm.deform_points(&b).unwrap(),
    );
    assert!(rmse(&pa, &pb) <= 1e-9 * diag);
    let id = Pose::identity();
    let fitted = f.pm.deform(&a).unwrap();
    let once = total_loss(&fitted, &target, &f.scheme, &w, &id, &id).unwrap();
    let twice = total_loss(&fitted, &target, &f.scheme, &w.scaled(2.0), &id, &id).unwrap();
    assert!((twice.total - 2.0 * once.total).abs() <= 1e-15 * once.total);
    assert!((rb.total - 2.0 * ra.total).abs() <= 1e-6 * ra.total);
}

#[test]
fn concurrent_fits_share_the_parameterization() {
    let f = face();
    let diag = f.pm.box_diagonal();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let targets: Vec<Mesh> = (0..4)
        .map(|_| {
            f.pm.deform(&random_field(&mut rng, 700, 0.01 * diag))
                .unwrap()
        })
        .collect();
    let w = LossWeights::default();
    let serial: Vec<_> = targets
        .iter()
        .map(|t| {
            fit_deformation(&f.pm, t, &f.scheme, &w, &FitConfig::default())
                .unwrap()
                .0
        })
        .collect();
    let parallel: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = targets
            .iter()
            .map(|t| {
                s.spawn(|| {
                    fit_deformation(&f.pm, t, &f.scheme, &w, &FitConfig::default())
                        .unwrap()
                        .0
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(serial, parallel);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn total_loss_is_nonnegative_and_linear_in_weights(seed in any::<u64>(), k in 0.1f64..10.0) {
        let f = face();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pred = f.pm.deform(&random_field(&mut rng, 700, 1.0)).unwrap();
        let mut w = LossWeights { vertex: rng.random_range(0.0..1.0), ..LossWeights::default() };
        for r in &mut w.regions {
            *r = rng.random_range(0.0..1.0);
        }
        let id = Pose::identity();
        let a = total_loss(&pred, &f.mesh, &f.scheme, &w, &id, &id).unwrap();
        let b = total_loss(&pred, &f.mesh, &f.scheme, &w.scaled(k), &id, &id).unwrap();
        prop_assert!(a.total >= 0.0);
        prop_assert!((b.total - k * a.total).abs() <= 1e-12 * b.total.max(1e-300));
        let sum = w.vertex * a.vertex_loss.unwrap()
            + a.region_losses.iter().zip(&w.regions).map(|(l, w)| l * w).sum::<f64>();
        prop_assert!((a.total - sum).abs() <= 1e-15 * sum.max(1e-300));
    }
}
