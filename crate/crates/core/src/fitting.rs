//! Weighted vertex/landmark losses and direct fitting of control-point
//! displacements and pose.
//!
//! Losses are mean squared errors over vertex-coordinate entries (each sum of
//! squared distances is divided by three times the point count). The total
//! loss is a weighted sum of the whole-mesh vertex term and nine
//! landmark-region terms; with the default weights (0.46 and 0.06 x 9) the
//! weights sum to one.
//!
//! For a fixed pose the deformed vertices are affine in the displacement
//! field, so the loss plus a Tikhonov term is a convex quadratic. The
//! regularizer follows the same mean convention as the losses,
//! `lambda |dP - mean(dP)|^2 / (3 M)` for `M` control points. It leaves a
//! rigid shift of the whole lattice free, so translations are fitted
//! exactly. The quadratic is minimized through its normal equations, where
//! every vertex contributes with a scalar weight
//!
//! ```text
//! c_q = w_vertex / (3 N) + sum over regions r containing q of w_r / (3 M_r)
//! ```
//!
//! and a pose `(s, R, t)` only rescales the system by `s^2` after the target
//! is mapped back into the lattice frame.

use std::time::Instant;

use nalgebra::{DMatrix, Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::landmarks::{LandmarkError, LandmarkScheme, Region, LANDMARK_COUNT};
use crate::lattice::{DeformationField, LatticeError, ParameterizedMesh};
use crate::mesh::Mesh;
use crate::projection::{estimate_pose_weighted, Pose, PoseError};
use crate::solve::{dense_cholesky, dense_pseudo_inverse, preconditioned_cg, SolveStats};

pub const DEFAULT_VERTEX_WEIGHT: f64 = 0.46;
pub const DEFAULT_REGION_WEIGHT: f64 = 0.06;
/// Largest control-point count solved by dense factorization under
/// [`SolverKind::Auto`].
pub const DENSE_LIMIT: usize = 1000;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("vertex count mismatch: prediction has {pred}, ground truth has {gt}")]
    VertexCountMismatch { pred: usize, gt: usize },
    #[error("expected {expected} target points, got {actual}")]
    TargetSize { expected: usize, actual: usize },
    #[error("weights must be finite and non-negative")]
    InvalidWeights,
    #[error("invalid fit configuration: {0}")]
    InvalidConfig(String),
    #[error("linear solver did not converge: relative residual {residual:e} after {iterations} iterations")]
    NotConverged { residual: f64, iterations: usize },
    #[error("objective increased from {before:e} to {after:e} in round {round}")]
    ObjectiveIncreased {
        round: usize,
        before: f64,
        after: f64,
    },
    #[error(transparent)]
    Landmark(#[from] LandmarkError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Pose(#[from] PoseError),
}

pub type FitResult<T> = Result<T, FitError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub vertex: f64,
    pub regions: [f64; 9],
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            vertex: DEFAULT_VERTEX_WEIGHT,
            regions: [DEFAULT_REGION_WEIGHT; 9],
        }
    }
}

impl LossWeights {
    pub fn region(&self, r: Region) -> f64 {
        self.regions[r.index()]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            vertex: self.vertex * factor,
            regions: self.regions.map(|w| w * factor),
        }
    }

    pub fn sum(&self) -> f64 {
        self.vertex + self.regions.iter().sum::<f64>()
    }

    pub fn validate(&self) -> FitResult<()> {
        let ok = |w: f64| w.is_finite() && w >= 0.0;
        if ok(self.vertex) && self.regions.iter().all(|&w| ok(w)) {
            Ok(())
        } else {
            Err(FitError::InvalidWeights)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    /// Dense factorization up to [`DENSE_LIMIT`] control points, CG beyond.
    Auto,
    Dense,
    ConjugateGradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Tikhonov weight on the spread of the displacements about their mean,
    /// `|dP - mean(dP)|^2 / (3 M)`.
    pub lambda: f64,
    /// Relative residual target of the linear solver.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Pose/deformation alternation rounds.
    pub rounds: usize,
    /// Alternation stops once a round lowers the objective by less than this
    /// fraction.
    pub round_tolerance: f64,
    pub solver: SolverKind,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-8,
            tolerance: 1e-10,
            max_iterations: 20_000,
            rounds: 8,
            round_tolerance: 1e-9,
            solver: SolverKind::Auto,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> FitResult<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(FitError::InvalidConfig(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.tolerance > 0.0) || !(self.round_tolerance >= 0.0) {
            return Err(FitError::InvalidConfig(
                "tolerances must be positive".into(),
            ));
        }
        if self.rounds == 0 || self.max_iterations == 0 {
            return Err(FitError::InvalidConfig(
                "rounds and max_iterations must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// `None` when the target is a landmark set and the whole-mesh term is
    /// not observable.
    pub vertex_loss: Option<f64>,
    pub region_losses: [f64; 9],
    pub total: f64,
}

impl LossReport {
    pub fn region(&self, r: Region) -> f64 {
        self.region_losses[r.index()]
    }

    fn assemble(vertex_loss: Option<f64>, region_losses: [f64; 9], weights: &LossWeights) -> Self {
        let total = vertex_loss.map_or(0.0, |v| weights.vertex * v)
            + region_losses
                .iter()
                .zip(&weights.regions)
                .map(|(l, w)| l * w)
                .sum::<f64>();
        Self {
            vertex_loss,
            region_losses,
            total,
        }
    }
}

fn mean_squared<'a>(
    pairs: impl Iterator<Item = (&'a Point3<f64>, &'a Point3<f64>)>,
    pred: &Pose,
    gt: &Pose,
) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (a, b) in pairs {
        sum += (pred.apply(a) - gt.apply(b)).norm_squared();
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        sum / (3 * count) as f64
    }
}

/// Mean over all vertex-coordinate entries of the squared difference between
/// the posed prediction and the posed ground truth.
pub fn vertex_loss(pred: &Mesh, gt: &Mesh, pose_pred: &Pose, pose_gt: &Pose) -> FitResult<f64> {
    vertex_loss_points(pred.vertices(), gt.vertices(), pose_pred, pose_gt)
}

/// [`vertex_loss`] over bare point lists, which may be shorter than a mesh.
pub fn vertex_loss_points(
    pred: &[Point3<f64>],
    gt: &[Point3<f64>],
    pose_pred: &Pose,
    pose_gt: &Pose,
) -> FitResult<f64> {
    if pred.len() != gt.len() {
        return Err(FitError::VertexCountMismatch {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    Ok(mean_squared(pred.iter().zip(gt), pose_pred, pose_gt))
}

pub fn landmark_region_loss(
    pred: &Mesh,
    gt: &Mesh,
    scheme: &LandmarkScheme,
    region: Region,
    pose_pred: &Pose,
    pose_gt: &Pose,
) -> FitResult<f64> {
    scheme.validate_for(pred.vertex_count())?;
    scheme.validate_for(gt.vertex_count())?;
    let (p, g) = (pred.vertices(), gt.vertices());
    let idx = scheme.region_vertices(region);
    Ok(mean_squared(
        idx.iter().map(|&i| (&p[i], &g[i])),
        pose_pred,
        pose_gt,
    ))
}

/// Region loss looked up by name (`"contour"`, `"upper_lip"`, ...).
pub fn landmark_region_loss_named(
    pred: &Mesh,
    gt: &Mesh,
    scheme: &LandmarkScheme,
    region: &str,
    pose_pred: &Pose,
    pose_gt: &Pose,
) -> FitResult<f64> {
    let region: Region = region.parse()?;
    landmark_region_loss(pred, gt, scheme, region, pose_pred, pose_gt)
}

pub fn total_loss(
    pred: &Mesh,
    gt: &Mesh,
    scheme: &LandmarkScheme,
    weights: &LossWeights,
    pose_pred: &Pose,
    pose_gt: &Pose,
) -> FitResult<LossReport> {
    let v = vertex_loss(pred, gt, pose_pred, pose_gt)?;
    let mut regions = [0.0; 9];
    for r in Region::ALL {
        regions[r.index()] = landmark_region_loss(pred, gt, scheme, r, pose_pred, pose_gt)?;
    }
    Ok(LossReport::assemble(Some(v), regions, weights))
}

/// Losses against a bare 68-point landmark target (given in landmark order);
/// the whole-mesh term is reported as unobserved.
pub fn landmark_loss(
    pred: &Mesh,
    gt_landmarks: &[Point3<f64>],
    scheme: &LandmarkScheme,
    weights: &LossWeights,
    pose_pred: &Pose,
    pose_gt: &Pose,
) -> FitResult<LossReport> {
    if gt_landmarks.len() != LANDMARK_COUNT {
        return Err(FitError::TargetSize {
            expected: LANDMARK_COUNT,
            actual: gt_landmarks.len(),
        });
    }
    scheme.validate_for(pred.vertex_count())?;
    let p = pred.vertices();
    let mut regions = [0.0; 9];
    for r in Region::ALL {
        let slots = scheme.region_slots(r);
        regions[r.index()] = mean_squared(
            slots
                .iter()
                .map(|&s| (&p[scheme.vertices()[s]], &gt_landmarks[s])),
            pose_pred,
            pose_gt,
        );
    }
    Ok(LossReport::assemble(None, regions, weights))
}

/// What a fit is matched against.
#[derive(Debug, Clone, Copy)]
pub enum FitTarget<'a> {
    /// A mesh with the reference topology, vertex-for-vertex.
    Mesh(&'a Mesh),
    /// 68 landmark positions in landmark order.
    Landmarks(&'a [Point3<f64>]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    Mesh,
    Landmarks,
}

impl FitTarget<'_> {
    pub fn kind(&self) -> TargetKind {
        match self {
            FitTarget::Mesh(_) => TargetKind::Mesh,
            FitTarget::Landmarks(_) => TargetKind::Landmarks,
        }
    }

    fn points(&self) -> &[Point3<f64>] {
        match self {
            FitTarget::Mesh(m) => m.vertices(),
            FitTarget::Landmarks(l) => l,
        }
    }
}

/// Per-observation vertex index and weight `c_q`.
#[derive(Debug, Clone)]
struct Observations {
    vertices: Vec<usize>,
    weights: Vec<f64>,
}

impl Observations {
    fn new(
        kind: TargetKind,
        vertex_count: usize,
        scheme: &LandmarkScheme,
        w: &LossWeights,
    ) -> Self {
        match kind {
            TargetKind::Mesh => {
                let mut weights = vec![w.vertex / (3 * vertex_count) as f64; vertex_count];
                for r in Region::ALL {
                    let verts = scheme.region_vertices(r);
                    let share = w.region(r) / (3 * verts.len()) as f64;
                    for v in verts {
                        weights[v] += share;
                    }
                }
                Self {
                    vertices: (0..vertex_count).collect(),
                    weights,
                }
            }
            TargetKind::Landmarks => {
                let mut weights = vec![0.0; LANDMARK_COUNT];
                for r in Region::ALL {
                    let slots = scheme.region_slots(r);
                    let share = w.region(r) / (3 * slots.len()) as f64;
                    for &s in slots {
                        weights[s] += share;
                    }
                }
                Self {
                    vertices: scheme.vertices().to_vec(),
                    weights,
                }
            }
        }
    }
}

/// Outcome of fitting a displacement field at a fixed pose.
#[derive(Debug, Clone)]
pub struct DeformationFit {
    pub field: DeformationField,
    pub report: LossReport,
    /// `report.total + lambda |dP - mean(dP)|^2 / (3 M)`.
    pub objective: f64,
    pub solve: SolveStats,
    /// Norm of the objective gradient at the solution, relative to the
    /// gradient norm at `dP = 0`.
    pub relative_gradient: f64,
    /// True when the system was singular and solved by pseudo-inverse.
    pub rank_deficient: bool,
}

/// Outcome of the joint pose/deformation fit.
#[derive(Debug, Clone)]
pub struct JointFit {
    pub pose: Pose,
    pub field: DeformationField,
    pub report: LossReport,
    pub objective: f64,
    /// Objective after every pose step and every deformation step, starting
    /// with the value at the initial state.
    pub history: Vec<f64>,
    pub rounds: usize,
    pub solve: SolveStats,
    pub rank_deficient: bool,
    /// RMS distance over the observed points (all vertices, or the 68
    /// landmarks) between posed fit and target.
    pub observed_rmse: f64,
    pub elapsed_seconds: f64,
}

/// Reusable fitting setup for one reference embedding, landmark scheme,
/// weighting and target kind. The Gram matrix `B' C B` depends on none of the
/// target values, so it is built once and shared by every fit.
pub struct Fitter<'a> {
    pm: &'a ParameterizedMesh,
    scheme: &'a LandmarkScheme,
    weights: LossWeights,
    cfg: FitConfig,
    kind: TargetKind,
    obs: Observations,
    gram: Option<DMatrix<f64>>,
    gram_diagonal: Vec<f64>,
    /// `B' C 1`, the gram matrix applied to a constant field.
    gram_ones: Vec<f64>,
}

impl<'a> Fitter<'a> {
    pub fn new(
        pm: &'a ParameterizedMesh,
        scheme: &'a LandmarkScheme,
        weights: LossWeights,
        cfg: FitConfig,
        kind: TargetKind,
    ) -> FitResult<Self> {
        weights.validate()?;
        cfg.validate()?;
        scheme.validate_for(pm.vertex_count())?;
        let obs = Observations::new(kind, pm.vertex_count(), scheme, &weights);
        let m = pm.control_point_count();
        let dense = match cfg.solver {
            SolverKind::Auto => m <= DENSE_LIMIT,
            SolverKind::Dense => true,
            SolverKind::ConjugateGradient => false,
        };
        let gram = dense.then(|| gram_matrix(pm, &obs));
        let gram_diagonal = match &gram {
            Some(g) => g.diagonal().iter().copied().collect(),
            None => gram_diagonal(pm, &obs),
        };
        let gram_ones = column_weights(pm, &obs);
        Ok(Self {
            pm,
            scheme,
            weights,
            cfg,
            kind,
            obs,
            gram,
            gram_diagonal,
            gram_ones,
        })
    }

    pub fn config(&self) -> &FitConfig {
        &self.cfg
    }

    pub fn weights(&self) -> &LossWeights {
        &self.weights
    }

    fn check_target(&self, target: &FitTarget<'_>) -> FitResult<()> {
        let expected = self.obs.vertices.len();
        let actual = target.points().len();
        if target.kind() != self.kind || expected != actual {
            return Err(FitError::TargetSize { expected, actual });
        }
        Ok(())
    }

    /// Observed deformed points (lattice frame) for a field.
    fn observed_points(&self, field: &DeformationField) -> Vec<Point3<f64>> {
        let coeffs = self.pm.coeffs();
        let reference = self.pm.reference_points();
        self.obs
            .vertices
            .iter()
            .map(|&q| {
                let (idx, val) = coeffs.row(q);
                let d = idx.iter().zip(val).fold(Vector3::zeros(), |acc, (&c, &w)| {
                    acc + field.delta[c as usize] * w
                });
                reference[q] + d
            })
            .collect()
    }

    /// `sum_q c_q |pose(x_q) - y_q|^2 + lambda |dP - mean(dP)|^2 / (3 M)`.
    pub fn objective(
        &self,
        target: &FitTarget<'_>,
        field: &DeformationField,
        pose: &Pose,
    ) -> FitResult<f64> {
        self.check_target(target)?;
        Ok(
            self.data_term(&self.observed_points(field), target.points(), pose)
                + self.ridge() * spread(field),
        )
    }

    /// Coefficient of `|dP - mean(dP)|^2` in the objective.
    fn ridge(&self) -> f64 {
        self.cfg.lambda / (3 * self.pm.control_point_count()) as f64
    }

    fn data_term(&self, x: &[Point3<f64>], y: &[Point3<f64>], pose: &Pose) -> f64 {
        x.iter()
            .zip(y)
            .zip(&self.obs.weights)
            .map(|((a, b), &c)| c * (pose.apply(a) - b).norm_squared())
            .sum()
    }

    /// `sum_q c_q B_q' (z_q - x0_q)` with `z` the target mapped into the
    /// lattice frame.
    fn rhs(&self, target: &[Point3<f64>], pose: &Pose) -> Vec<Vector3<f64>> {
        let coeffs = self.pm.coeffs();
        let reference = self.pm.reference_points();
        let mut out = vec![Vector3::zeros(); self.pm.control_point_count()];
        for ((&q, y), &c) in self.obs.vertices.iter().zip(target).zip(&self.obs.weights) {
            if c == 0.0 {
                continue;
            }
            let r = (pose.unapply(y) - reference[q]) * c;
            let (idx, val) = coeffs.row(q);
            for (&col, &w) in idx.iter().zip(val) {
                out[col as usize] += r * w;
            }
        }
        out
    }

    /// `(B' C B) v` for one scalar coordinate, without forming the matrix.
    fn gram_apply(&self, v: &[f64]) -> Vec<f64> {
        let coeffs = self.pm.coeffs();
        let mut out = vec![0.0; v.len()];
        for (&q, &c) in self.obs.vertices.iter().zip(&self.obs.weights) {
            if c == 0.0 {
                continue;
            }
            let (idx, val) = coeffs.row(q);
            let bx: f64 = idx
                .iter()
                .zip(val)
                .map(|(&col, &w)| w * v[col as usize])
                .sum();
            let cbx = c * bx;
            for (&col, &w) in idx.iter().zip(val) {
                out[col as usize] += w * cbx;
            }
        }
        out
    }

    /// Minimizes the objective over `dP` at a fixed pose. `start` warm-starts
    /// the iterative solver.
    pub fn fit_deformation_at(
        &self,
        target: &FitTarget<'_>,
        pose: &Pose,
        start: Option<&DeformationField>,
    ) -> FitResult<DeformationFit> {
        self.check_target(target)?;
        let m = self.pm.control_point_count();
        let s2 = pose.scale() * pose.scale();
        let lambda = self.ridge();
        let rhs: Vec<Vector3<f64>> = self
            .rhs(target.points(), pose)
            .into_iter()
            .map(|v| v * s2)
            .collect();

        // Split off the weighted mean offset, which a constant dP reproduces
        // exactly at no regularization cost, and solve for the remainder.
        let total_weight: f64 = self.obs.weights.iter().sum();
        let shift = if total_weight > 0.0 {
            rhs.iter().sum::<Vector3<f64>>() / (s2 * total_weight)
        } else {
            Vector3::zeros()
        };
        let reduced: Vec<Vector3<f64>> = rhs
            .iter()
            .zip(&self.gram_ones)
            .map(|(b, &g)| b - shift * (g * s2))
            .collect();
        let inv_m = 1.0 / m as f64;

        let (delta, solve, rank_deficient) = match &self.gram {
            Some(g) => {
                let mut a = g * s2;
                if lambda > 0.0 {
                    a.add_scalar_mut(-lambda * inv_m);
                    for i in 0..m {
                        a[(i, i)] += lambda;
                    }
                }
                let chol = if lambda > 0.0 {
                    dense_cholesky(&a, &reduced)
                } else {
                    None
                };
                match chol {
                    Some((x, stats)) => (x, stats, false),
                    None => {
                        let (x, stats) = dense_pseudo_inverse(&a, &reduced, 1e-12);
                        let deficient = stats.dropped_directions > 0;
                        (x, stats, deficient)
                    }
                }
            }
            None => {
                let diag: Vec<f64> = self
                    .gram_diagonal
                    .iter()
                    .map(|d| d * s2 + lambda * (1.0 - inv_m))
                    .collect();
                let x0: Vec<Vector3<f64>> = match start {
                    Some(f) => f.delta.iter().map(|d| d - shift).collect(),
                    None => vec![Vector3::zeros(); m],
                };
                let apply = |v: &[f64]| {
                    let mut out = self.gram_apply(v);
                    let mean = v.iter().sum::<f64>() * inv_m;
                    for (o, vi) in out.iter_mut().zip(v) {
                        *o = *o * s2 + lambda * (vi - mean);
                    }
                    out
                };
                // a near-zero remainder only needs solving to the accuracy of the full problem
                let floor = rhs.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
                let (x, stats) = preconditioned_cg(
                    apply,
                    &diag,
                    &reduced,
                    &x0,
                    self.cfg.tolerance,
                    self.cfg.max_iterations,
                    floor,
                );
                if !stats.converged {
                    return Err(FitError::NotConverged {
                        residual: stats.relative_residual,
                        iterations: stats.iterations,
                    });
                }
                let deficient = lambda == 0.0 && self.gram_diagonal.contains(&0.0);
                (x, stats, deficient)
            }
        };
        if rank_deficient {
            log::warn!(
                "normal equations are rank deficient with lambda = {}; returning a minimum-norm solution",
                self.cfg.lambda
            );
        }

        let field = DeformationField::new(delta.into_iter().map(|d| d + shift).collect())?;
        let x = self.observed_points(&field);
        let objective = self.data_term(&x, target.points(), pose) + lambda * spread(&field);

        // gradient of the objective, relative to its value at dP = 0
        let g_at = |field: &DeformationField| {
            let mut g = self.gram_times(field, s2);
            let mean = field.delta.iter().sum::<Vector3<f64>>() * inv_m;
            for ((gi, bi), di) in g.iter_mut().zip(&rhs).zip(&field.delta) {
                *gi += (di - mean) * lambda - bi;
            }
            g.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt()
        };
        let g0 = rhs.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
        let g1 = g_at(&field);
        let relative_gradient = if g0 > 0.0 { g1 / g0 } else { g1 };

        let report = self.report(target, &field, pose)?;
        Ok(DeformationFit {
            field,
            report,
            objective,
            solve,
            relative_gradient,
            rank_deficient,
        })
    }

    fn gram_times(&self, field: &DeformationField, s2: f64) -> Vec<Vector3<f64>> {
        match &self.gram {
            Some(g) => {
                let x = DMatrix::from_fn(field.len(), 3, |r, c| field.delta[r][c]);
                let y = g * x * s2;
                (0..field.len())
                    .map(|r| Vector3::new(y[(r, 0)], y[(r, 1)], y[(r, 2)]))
                    .collect()
            }
            None => {
                let cols: Vec<Vec<f64>> = (0..3)
                    .map(|c| {
                        let v: Vec<f64> = field.delta.iter().map(|d| d[c]).collect();
                        self.gram_apply(&v)
                    })
                    .collect();
                (0..field.len())
                    .map(|r| Vector3::new(cols[0][r], cols[1][r], cols[2][r]) * s2)
                    .collect()
            }
        }
    }

    /// Loss report of the posed, deformed reference against the target.
    pub fn report(
        &self,
        target: &FitTarget<'_>,
        field: &DeformationField,
        pose: &Pose,
    ) -> FitResult<LossReport> {
        let fitted = self.pm.deform(field)?;
        match target {
            FitTarget::Mesh(gt) => total_loss(
                &fitted,
                gt,
                self.scheme,
                &self.weights,
                pose,
                &Pose::identity(),
            ),
            FitTarget::Landmarks(l) => landmark_loss(
                &fitted,
                l,
                self.scheme,
                &self.weights,
                pose,
                &Pose::identity(),
            ),
        }
    }

    /// Block-coordinate descent: a weighted similarity fit of the pose on the
    /// current correspondences, then the displacement solve in the de-posed
    /// frame. Each step minimizes the objective exactly over its block, so the
    /// objective never increases; an increase beyond rounding is an error.
    pub fn fit_pose_and_deformation(&self, target: &FitTarget<'_>) -> FitResult<JointFit> {
        self.check_target(target)?;
        let started = Instant::now();
        let y = target.points();
        let diag = self.pm.box_diagonal();
        let slack = |prev: f64| prev * 1e-9 + 1e-24 * diag * diag;

        let mut field = DeformationField::zeros(self.pm.control_point_count());
        let mut pose = Pose::identity();
        let mut current = self.objective(target, &field, &pose)?;
        let mut history = vec![current];
        let mut last_solve = None;
        let mut rank_deficient = false;
        let mut rounds = 0;

        for round in 1..=self.cfg.rounds {
            rounds = round;
            let start_of_round = current;

            let x = self.observed_points(&field);
            let candidate = estimate_pose_weighted(&x, y, &self.obs.weights)?;
            let after_pose = self.objective(target, &field, &candidate)?;
            if after_pose > current + slack(current) {
                return Err(FitError::ObjectiveIncreased {
                    round,
                    before: current,
                    after: after_pose,
                });
            }
            // rounding can make the closed form marginally worse; keep the old pose then
            if after_pose <= current {
                pose = candidate;
                current = after_pose;
            }
            history.push(current);

            let fit = self.fit_deformation_at(target, &pose, Some(&field))?;
            if fit.objective > current + slack(current) {
                return Err(FitError::ObjectiveIncreased {
                    round,
                    before: current,
                    after: fit.objective,
                });
            }
            if fit.objective <= current {
                field = fit.field;
                current = fit.objective;
            }
            rank_deficient |= fit.rank_deficient;
            last_solve = Some(fit.solve);
            history.push(current);

            if start_of_round - current <= self.cfg.round_tolerance * start_of_round {
                break;
            }
        }

        let report = self.report(target, &field, &pose)?;
        let x = self.observed_points(&field);
        let sq: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| (pose.apply(a) - b).norm_squared())
            .sum();
        Ok(JointFit {
            pose,
            field,
            report,
            objective: current,
            history,
            rounds,
            solve: last_solve.expect("at least one round"),
            rank_deficient,
            observed_rmse: (sq / y.len() as f64).sqrt(),
            elapsed_seconds: started.elapsed().as_secs_f64(),
        })
    }
}

fn gram_matrix(pm: &ParameterizedMesh, obs: &Observations) -> DMatrix<f64> {
    let m = pm.control_point_count();
    let coeffs = pm.coeffs();
    let chunk = 2048;
    let pairs: Vec<(usize, f64)> = obs
        .vertices
        .iter()
        .copied()
        .zip(obs.weights.iter().copied())
        .collect();
    let mut g = pairs
        .par_chunks(chunk)
        .map(|block| {
            let mut local = DMatrix::<f64>::zeros(m, m);
            for &(q, c) in block {
                if c == 0.0 {
                    continue;
                }
                let (idx, val) = coeffs.row(q);
                for (a, (&ca, &wa)) in idx.iter().zip(val).enumerate() {
                    let cwa = c * wa;
                    // upper triangle only; mirrored below
                    for (&cb, &wb) in idx[a..].iter().zip(&val[a..]) {
                        local[(ca as usize, cb as usize)] += cwa * wb;
                    }
                }
            }
            local
        })
        .reduce(|| DMatrix::zeros(m, m), |a, b| a + b);
    for i in 0..m {
        for j in 0..i {
            g[(i, j)] = g[(j, i)];
        }
    }
    g
}

fn column_weights(pm: &ParameterizedMesh, obs: &Observations) -> Vec<f64> {
    let mut d = vec![0.0; pm.control_point_count()];
    for (&q, &c) in obs.vertices.iter().zip(&obs.weights) {
        let (idx, val) = pm.coeffs().row(q);
        for (&col, &w) in idx.iter().zip(val) {
            d[col as usize] += c * w;
        }
    }
    d
}

/// `|dP - mean(dP)|^2`.
fn spread(field: &DeformationField) -> f64 {
    if field.is_empty() {
        return 0.0;
    }
    let mean = field.delta.iter().sum::<Vector3<f64>>() / field.len() as f64;
    field.delta.iter().map(|d| (d - mean).norm_squared()).sum()
}

fn gram_diagonal(pm: &ParameterizedMesh, obs: &Observations) -> Vec<f64> {
    let mut d = vec![0.0; pm.control_point_count()];
    for (&q, &c) in obs.vertices.iter().zip(&obs.weights) {
        let (idx, val) = pm.coeffs().row(q);
        for (&col, &w) in idx.iter().zip(val) {
            d[col as usize] += c * w * w;
        }
    }
    d
}

/// Fits `dP` so that the deformed reference matches `target` (same frame,
/// vertex-for-vertex).
pub fn fit_deformation(
    pm: &ParameterizedMesh,
    target: &Mesh,
    scheme: &LandmarkScheme,
    weights: &LossWeights,
    cfg: &FitConfig,
) -> FitResult<(DeformationField, LossReport)> {
    let fitter = Fitter::new(pm, scheme, *weights, *cfg, TargetKind::Mesh)?;
    let fit = fitter.fit_deformation_at(&FitTarget::Mesh(target), &Pose::identity(), None)?;
    Ok((fit.field, fit.report))
}

/// Jointly fits pose and `dP` to a camera-frame mesh or landmark target.
pub fn fit_pose_and_deformation(
    pm: &ParameterizedMesh,
    target: FitTarget<'_>,
    scheme: &LandmarkScheme,
    weights: &LossWeights,
    cfg: &FitConfig,
) -> FitResult<JointFit> {
    Fitter::new(pm, scheme, *weights, *cfg, target.kind())?.fit_pose_and_deformation(&target)
}

/// Analytic gradient of [`total_loss`] with respect to `field.delta`, where
/// the prediction is `deform(pm, field)` posed by `pose_pred`.
pub fn loss_gradient(
    pm: &ParameterizedMesh,
    field: &DeformationField,
    target: &Mesh,
    scheme: &LandmarkScheme,
    weights: &LossWeights,
    pose_pred: &Pose,
    pose_gt: &Pose,
) -> FitResult<Vec<Vector3<f64>>> {
    weights.validate()?;
    if target.vertex_count() != pm.vertex_count() {
        return Err(FitError::VertexCountMismatch {
            pred: pm.vertex_count(),
            gt: target.vertex_count(),
        });
    }
    scheme.validate_for(pm.vertex_count())?;
    let pred = pm.deform_points(field)?;
    let obs = Observations::new(TargetKind::Mesh, pm.vertex_count(), scheme, weights);
    let s = pose_pred.scale();
    let rt = pose_pred.rotation().transpose();
    let residual: Vec<Vector3<f64>> = pred
        .iter()
        .zip(target.vertices())
        .zip(&obs.weights)
        .map(|((p, g), &c)| rt * (pose_pred.apply(p) - pose_gt.apply(g)) * (2.0 * c * s))
        .collect();
    Ok(pm.coeffs().transpose_mul(&residual))
}
