//! Landmark accuracy under the normalized-mean-error protocol, yaw binning,
//! balanced sampling and the Bernstein/B-spline comparison harness.

use std::fmt::Write as _;

use nalgebra::Point3;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fitting::{FitConfig, FitError, FitTarget, Fitter, LossReport, LossWeights, TargetKind};
use crate::landmarks::{LandmarkScheme, LANDMARK_COUNT};
use crate::lattice::{DeformationField, ParameterizedMesh};
use crate::mesh::{Mesh, MeshError};
use crate::projection::Pose;

pub const BIN_LABELS: [&str; 3] = ["0 to 30", "30 to 60", "60 to 90"];
/// Mean NME (%) quoted for each basis in the reference comparison.
pub const REFERENCE_MEAN_BERNSTEIN: f64 = 3.86;
pub const REFERENCE_MEAN_BSPLINE: f64 = 3.51;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("record has {0} landmarks, expected 68")]
    WrongLandmarkCount(usize),
    #[error("bounding box must have positive area, got {width} x {height}")]
    ZeroAreaBox { width: f64, height: f64 },
    #[error("record contains non-finite values")]
    NonFinite,
    #[error("|yaw| exceeds 90 degrees for records {0:?}")]
    YawOutOfRange(Vec<usize>),
    #[error("no records")]
    Empty,
    #[error("bin {bin} holds {available} records, {requested} requested")]
    InsufficientRecords {
        bin: &'static str,
        available: usize,
        requested: usize,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("parameterizations differ: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

pub type EvalResult<T> = Result<T, EvalError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxSize {
    pub width: f64,
    pub height: f64,
}

/// One evaluated face: predicted and ground-truth landmarks in the camera
/// frame, the ground-truth 2-D box and the head yaw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub pred: Vec<Point3<f64>>,
    pub gt: Vec<Point3<f64>>,
    pub bbox: BoxSize,
    pub yaw: f64,
}

impl EvalRecord {
    pub fn validate(&self) -> EvalResult<()> {
        for pts in [&self.pred, &self.gt] {
            if pts.len() != LANDMARK_COUNT {
                return Err(EvalError::WrongLandmarkCount(pts.len()));
            }
            if pts.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
                return Err(EvalError::NonFinite);
            }
        }
        let BoxSize { width, height } = self.bbox;
        if !(width > 0.0 && height > 0.0) || !width.is_finite() || !height.is_finite() {
            return Err(EvalError::ZeroAreaBox { width, height });
        }
        if !self.yaw.is_finite() {
            return Err(EvalError::NonFinite);
        }
        Ok(())
    }
}

/// Size measure dividing the landmark error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `sqrt(w * h)`
    #[default]
    GeometricMean,
    MaxSide,
    Diagonal,
}

impl Normalization {
    pub fn size(self, b: BoxSize) -> f64 {
        match self {
            Normalization::GeometricMean => (b.width * b.height).sqrt(),
            Normalization::MaxSide => b.width.max(b.height),
            Normalization::Diagonal => b.width.hypot(b.height),
        }
    }
}

/// Mean 2-D (x, y) landmark distance over `sqrt(w h)`, as a fraction.
pub fn nme(record: &EvalRecord) -> EvalResult<f64> {
    nme_with(record, Normalization::GeometricMean)
}

pub fn nme_with(record: &EvalRecord, norm: Normalization) -> EvalResult<f64> {
    record.validate()?;
    let sum: f64 = record
        .pred
        .iter()
        .zip(&record.gt)
        .map(|(p, g)| (p.x - g.x).hypot(p.y - g.y))
        .sum();
    Ok(sum / LANDMARK_COUNT as f64 / norm.size(record.bbox))
}

/// Bin of `|yaw|`: `[0, 30)`, `[30, 60)` or `[60, 90]`.
pub fn yaw_bin(yaw: f64) -> Option<usize> {
    let a = yaw.abs();
    match a {
        a if a < 30.0 => Some(0),
        a if a < 60.0 => Some(1),
        a if a <= 90.0 => Some(2),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmeTable {
    /// Per-bin mean NME in percent; `None` for an empty bin.
    pub bins: [Option<f64>; 3],
    pub counts: [usize; 3],
    /// Unweighted mean of the non-empty bin means.
    pub mean: f64,
}

impl NmeTable {
    pub fn from_bin_means(bins: [Option<f64>; 3], counts: [usize; 3]) -> EvalResult<Self> {
        let present: Vec<f64> = bins.iter().flatten().copied().collect();
        if present.is_empty() {
            return Err(EvalError::Empty);
        }
        let mean = present.iter().sum::<f64>() / present.len() as f64;
        Ok(Self { bins, counts, mean })
    }

    /// Aligned text table with a header row and one value row.
    pub fn render(&self, label: &str) -> String {
        let width = label.len().max(6);
        let mut out = String::new();
        let _ = write!(out, "{:<width$}", "");
        for h in BIN_LABELS.iter().chain(std::iter::once(&"Mean")) {
            let _ = write!(out, " | {h:>8}");
        }
        out.push('\n');
        let _ = write!(out, "{label:<width$}");
        for b in self.bins {
            match b {
                Some(v) => {
                    let _ = write!(out, " | {v:>8.2}");
                }
                None => {
                    let _ = write!(out, " | {:>8}", "-");
                }
            }
        }
        let _ = write!(out, " | {:>8.2}", self.mean);
        out.push('\n');
        let _ = write!(out, "{:<width$}", "count");
        for c in self.counts {
            let _ = write!(out, " | {c:>8}");
        }
        let _ = write!(out, " | {:>8}", self.counts.iter().sum::<usize>());
        out.push('\n');
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }
}

/// Assigns records to yaw bins and averages NME (reported in percent).
pub fn bin_and_tabulate(records: &[EvalRecord]) -> EvalResult<NmeTable> {
    bin_and_tabulate_with(records, Normalization::GeometricMean)
}

pub fn bin_and_tabulate_with(records: &[EvalRecord], norm: Normalization) -> EvalResult<NmeTable> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let bad: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| yaw_bin(r.yaw).is_none())
        .map(|(i, _)| i)
        .collect();
    if !bad.is_empty() {
        return Err(EvalError::YawOutOfRange(bad));
    }
    let mut sums = [0.0; 3];
    let mut counts = [0usize; 3];
    for r in records {
        let b = yaw_bin(r.yaw).expect("checked above");
        sums[b] += nme_with(r, norm)? * 100.0;
        counts[b] += 1;
    }
    let mut bins = [None; 3];
    for b in 0..3 {
        if counts[b] == 0 {
            log::warn!(
                "yaw bin {} is empty; table mean uses the remaining bins",
                BIN_LABELS[b]
            );
        } else {
            bins[b] = Some(sums[b] / counts[b] as f64);
        }
    }
    NmeTable::from_bin_means(bins, counts)
}

/// Draws exactly `per_bin` records from each yaw bin, reproducibly for a
/// given seed. Selected records keep their input order within a bin.
pub fn balanced_sample(
    records: &[EvalRecord],
    per_bin: usize,
    seed: u64,
) -> EvalResult<Vec<EvalRecord>> {
    let yaws: Vec<f64> = records.iter().map(|r| r.yaw).collect();
    Ok(balanced_sample_indices(&yaws, per_bin, seed)?
        .into_iter()
        .map(|i| records[i].clone())
        .collect())
}

pub fn balanced_sample_indices(yaws: &[f64], per_bin: usize, seed: u64) -> EvalResult<Vec<usize>> {
    let mut members: [Vec<usize>; 3] = Default::default();
    let mut bad = Vec::new();
    for (i, &y) in yaws.iter().enumerate() {
        match yaw_bin(y) {
            Some(b) => members[b].push(i),
            None => bad.push(i),
        }
    }
    if !bad.is_empty() {
        return Err(EvalError::YawOutOfRange(bad));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(3 * per_bin);
    for (b, m) in members.iter().enumerate() {
        if m.len() < per_bin {
            return Err(EvalError::InsufficientRecords {
                bin: BIN_LABELS[b],
                available: m.len(),
                requested: per_bin,
            });
        }
        let mut picked = sample(&mut rng, m.len(), per_bin).into_vec();
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|k| m[k]));
    }
    Ok(out)
}

/// Parses one record per non-blank line.
pub fn parse_records_jsonl(text: &str) -> EvalResult<Vec<EvalRecord>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = n + 1;
        let record: EvalRecord = serde_json::from_str(line).map_err(|e| EvalError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        record.validate().map_err(|e| EvalError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    if out.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(out)
}

pub fn records_to_jsonl(records: &[EvalRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

/// Record built from posed landmark sets; the box is the 2-D extent of the
/// ground-truth landmarks and the yaw is taken from `yaw`.
pub fn record_from_landmarks(
    pred: Vec<Point3<f64>>,
    gt: Vec<Point3<f64>>,
    yaw: f64,
) -> EvalResult<EvalRecord> {
    let (lo, hi) = crate::mesh::bounding_box(&gt)?;
    let record = EvalRecord {
        pred,
        gt,
        bbox: BoxSize {
            width: hi.x - lo.x,
            height: hi.y - lo.y,
        },
        yaw,
    };
    record.validate()?;
    Ok(record)
}

/// A mesh target in the reference frame plus the camera pose under which its
/// landmarks are compared.
#[derive(Debug, Clone)]
pub struct ComparisonTarget {
    pub name: String,
    pub mesh: Mesh,
    pub pose: Pose,
}

/// One basis fitted to one target.
#[derive(Debug, Clone)]
pub struct KindOutcome {
    pub field: DeformationField,
    pub fitted: Mesh,
    pub report: LossReport,
    /// Posed-landmark NME as a fraction.
    pub nme: f64,
    /// Root mean squared vertex distance between posed fit and posed target.
    pub surface_rmse: f64,
}

#[derive(Debug, Clone)]
pub struct TargetComparison {
    pub name: String,
    pub bspline: KindOutcome,
    pub bernstein: KindOutcome,
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub targets: Vec<TargetComparison>,
    pub mean_nme_bspline: f64,
    pub mean_nme_bernstein: f64,
    pub mean_rmse_bspline: f64,
    pub mean_rmse_bernstein: f64,
}

impl ComparisonReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<20} | {:>14} | {:>14} | {:>14} | {:>14}",
            "target", "B-spline NME%", "Bernstein NME%", "B-spline RMSE", "Bernstein RMSE"
        );
        let row = |out: &mut String, name: &str, a: f64, b: f64, c: f64, d: f64| {
            let _ = writeln!(
                out,
                "{name:<20} | {a:>14.6} | {b:>14.6} | {c:>14.6e} | {d:>14.6e}"
            );
        };
        for t in &self.targets {
            row(
                &mut out,
                &t.name,
                t.bspline.nme * 100.0,
                t.bernstein.nme * 100.0,
                t.bspline.surface_rmse,
                t.bernstein.surface_rmse,
            );
        }
        row(
            &mut out,
            "mean",
            self.mean_nme_bspline * 100.0,
            self.mean_nme_bernstein * 100.0,
            self.mean_rmse_bspline,
            self.mean_rmse_bernstein,
        );
        let _ = writeln!(
            out,
            "reference mean NME% (trained regressor): Bernstein {REFERENCE_MEAN_BERNSTEIN:.2}, B-spline {REFERENCE_MEAN_BSPLINE:.2}"
        );
        out
    }
}

fn posed_landmarks(mesh: &Mesh, scheme: &LandmarkScheme, pose: &Pose) -> Vec<Point3<f64>> {
    scheme
        .vertices()
        .iter()
        .map(|&i| pose.apply(&mesh.vertices()[i]))
        .collect()
}

fn outcome(
    fitter: &Fitter<'_>,
    pm: &ParameterizedMesh,
    target: &ComparisonTarget,
    scheme: &LandmarkScheme,
) -> EvalResult<KindOutcome> {
    let fit = fitter.fit_deformation_at(&FitTarget::Mesh(&target.mesh), &Pose::identity(), None)?;
    let fitted = pm.deform(&fit.field).map_err(FitError::from)?;
    let record = record_from_landmarks(
        posed_landmarks(&fitted, scheme, &target.pose),
        posed_landmarks(&target.mesh, scheme, &target.pose),
        0.0,
    )?;
    let sq: f64 = fitted
        .vertices()
        .iter()
        .zip(target.mesh.vertices())
        .map(|(a, b)| (target.pose.apply(a) - target.pose.apply(b)).norm_squared())
        .sum();
    Ok(KindOutcome {
        field: fit.field,
        report: fit.report,
        nme: nme(&record)?,
        surface_rmse: (sq / fitted.vertex_count() as f64).sqrt(),
        fitted,
    })
}

/// Fits both parameterizations of the same reference to every target and
/// reports landmark NME and surface RMSE side by side.
pub fn compare_kinds(
    pm_bspline: &ParameterizedMesh,
    pm_bernstein: &ParameterizedMesh,
    targets: &[ComparisonTarget],
    scheme: &LandmarkScheme,
    weights: &LossWeights,
    cfg: &FitConfig,
) -> EvalResult<ComparisonReport> {
    if targets.is_empty() {
        return Err(EvalError::Empty);
    }
    let (a, b) = (pm_bspline, pm_bernstein);
    if a.mesh().vertices() != b.mesh().vertices() {
        return Err(EvalError::Incompatible("reference meshes differ".into()));
    }
    if a.grid().config().dims != b.grid().config().dims {
        return Err(EvalError::Incompatible("lattice dimensions differ".into()));
    }
    let fit_a = Fitter::new(a, scheme, *weights, *cfg, TargetKind::Mesh)?;
    let fit_b = Fitter::new(b, scheme, *weights, *cfg, TargetKind::Mesh)?;
    let mut rows = Vec::with_capacity(targets.len());
    for t in targets {
        rows.push(TargetComparison {
            name: t.name.clone(),
            bspline: outcome(&fit_a, a, t, scheme)?,
            bernstein: outcome(&fit_b, b, t, scheme)?,
        });
    }
    let n = rows.len() as f64;
    let mean = |f: &dyn Fn(&TargetComparison) -> f64| rows.iter().map(f).sum::<f64>() / n;
    Ok(ComparisonReport {
        mean_nme_bspline: mean(&|t| t.bspline.nme),
        mean_nme_bernstein: mean(&|t| t.bernstein.nme),
        mean_rmse_bspline: mean(&|t| t.bspline.surface_rmse),
        mean_rmse_bernstein: mean(&|t| t.bernstein.surface_rmse),
        targets: rows,
    })
}
