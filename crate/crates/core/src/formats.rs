//! JSON artifacts exchanged between commands and with the editor: lattice,
//! parameterization, displacement field, pose, weights, landmark targets, fit
//! reports and the editor bundle.
//!
//! Floats are written in their shortest round-trip form, so every value reads
//! back bit-for-bit.

use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use nalgebra::{Point3, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::basis::BasisKind;
use crate::fitting::{FitError, JointFit, LossReport, LossWeights};
use crate::landmarks::{LandmarkError, Region, LANDMARK_COUNT};
use crate::lattice::{
    ControlGrid, DeformationField, LatticeBox, LatticeConfig, LatticeError, ParameterizedMesh,
};
use crate::mesh::{Mesh, MeshDoc, MeshError};
use crate::projection::{Pose, PoseError};

pub const FORMAT_VERSION: u32 = 1;
/// Row-sum tolerance applied to serialized coefficient rows.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("unsupported format version {found} (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("unknown basis kind {0:?}")]
    UnknownKind(String),
    #[error("inconsistent artifact: {0}")]
    Inconsistent(String),
    #[error("coefficient row {row} sums to {sum}")]
    RowSum { row: usize, sum: f64 },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Pose(#[from] PoseError),
    #[error(transparent)]
    Landmark(#[from] LandmarkError),
    #[error(transparent)]
    Fit(#[from] FitError),
}

pub type FormatResult<T> = Result<T, FormatError>;

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> FormatResult<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.to_owned(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| FormatError::Json {
        path: path.to_owned(),
        source,
    })
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> FormatResult<()> {
    let path = path.as_ref();
    let text = serde_json::to_string(value).map_err(|source| FormatError::Json {
        path: path.to_owned(),
        source,
    })?;
    fs::write(path, text).map_err(|source| FormatError::Io {
        path: path.to_owned(),
        source,
    })
}

fn current_version() -> u32 {
    FORMAT_VERSION
}

fn check_version(v: u32) -> FormatResult<()> {
    if v == FORMAT_VERSION {
        Ok(())
    } else {
        Err(FormatError::Version { found: v })
    }
}

fn to_arrays(points: &[Point3<f64>]) -> Vec<[f64; 3]> {
    points.iter().map(|p| [p.x, p.y, p.z]).collect()
}

/// Lattice configuration plus the rest control points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeDoc {
    pub dims: [usize; 3],
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<usize>,
    #[serde(rename = "box")]
    pub bbox: BoxDoc,
    pub axis_map: [usize; 3],
    pub points: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxDoc {
    pub origin: [f64; 3],
    pub lengths: [f64; 3],
}

impl From<&ControlGrid> for LatticeDoc {
    fn from(grid: &ControlGrid) -> Self {
        let c = grid.config();
        Self {
            dims: c.dims,
            kind: c.kind.name().to_owned(),
            degree: c.degree(),
            bbox: BoxDoc {
                origin: c.bbox.origin.into(),
                lengths: c.bbox.lengths.into(),
            },
            axis_map: c.axis_map,
            points: to_arrays(grid.points()),
        }
    }
}

impl LatticeDoc {
    pub fn to_grid(&self) -> FormatResult<ControlGrid> {
        let kind = match self.kind.as_str() {
            "bspline" => BasisKind::BSpline {
                degree: self.degree.unwrap_or(3),
            },
            "bernstein" => BasisKind::Bernstein,
            other => return Err(FormatError::UnknownKind(other.to_owned())),
        };
        let bbox = LatticeBox {
            origin: Point3::from(self.bbox.origin),
            lengths: Vector3::from(self.bbox.lengths),
        };
        let grid =
            ControlGrid::undeformed(LatticeConfig::new(self.dims, kind, bbox, self.axis_map)?);
        if self.points.len() != grid.len() {
            return Err(FormatError::Inconsistent(format!(
                "{} control points listed, dims imply {}",
                self.points.len(),
                grid.len()
            )));
        }
        let tol = 1e-9 * bbox.diagonal();
        for (i, (listed, rest)) in self.points.iter().zip(grid.points()).enumerate() {
            if (Point3::from(*listed) - rest).amax() > tol {
                return Err(FormatError::Inconsistent(format!(
                    "control point {i} is not at its rest position"
                )));
            }
        }
        Ok(grid)
    }
}

/// Embedded reference mesh: mesh, lattice and per-vertex parameters. The
/// coefficient matrix is rebuilt from the parameters on load.
#[derive(Serialize, Deserialize)]
struct ParamDoc {
    version: u32,
    mesh: MeshDoc,
    lattice: LatticeDoc,
    params: Vec<[f64; 3]>,
    #[serde(default)]
    max_residual: f64,
}

pub fn save_parameterization(pm: &ParameterizedMesh, path: impl AsRef<Path>) -> FormatResult<()> {
    let doc = ParamDoc {
        version: FORMAT_VERSION,
        mesh: MeshDoc::from(pm.mesh()),
        lattice: LatticeDoc::from(pm.grid()),
        params: pm.params().to_vec(),
        max_residual: pm.max_residual(),
    };
    write_json(&doc, path)
}

pub fn load_parameterization(path: impl AsRef<Path>) -> FormatResult<ParameterizedMesh> {
    let doc: ParamDoc = read_json(path)?;
    check_version(doc.version)?;
    let mesh = Mesh::try_from(doc.mesh)?;
    let grid = doc.lattice.to_grid()?;
    let pm = ParameterizedMesh::assemble(mesh, grid, doc.params)?;
    pm.check_row_sums(1e-12)?;
    Ok(pm)
}

pub fn save_lattice(grid: &ControlGrid, path: impl AsRef<Path>) -> FormatResult<()> {
    write_json(&LatticeDoc::from(grid), path)
}

pub fn load_lattice(path: impl AsRef<Path>) -> FormatResult<ControlGrid> {
    read_json::<LatticeDoc>(path)?.to_grid()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldDoc {
    #[serde(default = "current_version")]
    pub version: u32,
    pub delta: Vec<[f64; 3]>,
}

impl From<&DeformationField> for FieldDoc {
    fn from(f: &DeformationField) -> Self {
        Self {
            version: FORMAT_VERSION,
            delta: f.delta.iter().map(|d| [d.x, d.y, d.z]).collect(),
        }
    }
}

impl FieldDoc {
    pub fn to_field(&self) -> FormatResult<DeformationField> {
        check_version(self.version)?;
        Ok(DeformationField::new(
            self.delta.iter().map(|&d| Vector3::from(d)).collect(),
        )?)
    }
}

pub fn save_field(field: &DeformationField, path: impl AsRef<Path>) -> FormatResult<()> {
    write_json(&FieldDoc::from(field), path)
}

pub fn load_field(path: impl AsRef<Path>) -> FormatResult<DeformationField> {
    read_json::<FieldDoc>(path)?.to_field()
}

pub fn save_pose(pose: &Pose, path: impl AsRef<Path>) -> FormatResult<()> {
    write_json(pose, path)
}

pub fn load_pose(path: impl AsRef<Path>) -> FormatResult<Pose> {
    read_json(path)
}

/// Loss weights file; entries left out keep their defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WeightsDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertex: Option<f64>,
    #[serde(default)]
    pub regions: IndexMap<String, f64>,
}

impl From<&LossWeights> for WeightsDoc {
    fn from(w: &LossWeights) -> Self {
        Self {
            vertex: Some(w.vertex),
            regions: Region::ALL
                .iter()
                .map(|r| (r.name().to_owned(), w.region(*r)))
                .collect(),
        }
    }
}

impl WeightsDoc {
    pub fn to_weights(&self) -> FormatResult<LossWeights> {
        let mut w = LossWeights::default();
        if let Some(v) = self.vertex {
            w.vertex = v;
        }
        for (name, &value) in &self.regions {
            let r: Region = name.parse()?;
            w.regions[r.index()] = value;
        }
        w.validate()?;
        Ok(w)
    }
}

pub fn load_weights(path: impl AsRef<Path>) -> FormatResult<LossWeights> {
    read_json::<WeightsDoc>(path)?.to_weights()
}

/// 68 target landmark positions in landmark order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkTargetDoc {
    pub landmarks: Vec<[f64; 3]>,
}

impl LandmarkTargetDoc {
    pub fn new(points: &[Point3<f64>]) -> Self {
        Self {
            landmarks: to_arrays(points),
        }
    }

    pub fn to_points(&self) -> FormatResult<Vec<Point3<f64>>> {
        if self.landmarks.len() != LANDMARK_COUNT {
            return Err(LandmarkError::WrongCount(self.landmarks.len()).into());
        }
        Ok(self.landmarks.iter().map(|&p| Point3::from(p)).collect())
    }
}

/// SHA-256 over the vertex coordinates (little-endian f64) followed by the
/// face indices (little-endian u64).
pub fn mesh_hash(mesh: &Mesh) -> String {
    let mut h = Sha256::new();
    for p in mesh.vertices() {
        for c in p.iter() {
            h.update(c.to_le_bytes());
        }
    }
    for f in mesh.faces() {
        for &i in f {
            h.update((i as u64).to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossDoc {
    pub vertex: Option<f64>,
    pub regions: IndexMap<String, f64>,
    pub total: f64,
}

impl From<&LossReport> for LossDoc {
    fn from(r: &LossReport) -> Self {
        Self {
            vertex: r.vertex_loss,
            regions: Region::ALL
                .iter()
                .map(|x| (x.name().to_owned(), r.region(*x)))
                .collect(),
            total: r.total,
        }
    }
}

/// Machine-readable summary written by the fit command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReportDoc {
    pub version: u32,
    /// `"mesh"` or `"landmarks"`.
    pub target: String,
    pub weights: WeightsDoc,
    pub lambda: f64,
    /// Set whenever the Tikhonov term is active.
    pub regularized: bool,
    pub loss: LossDoc,
    pub objective: f64,
    pub objective_history: Vec<f64>,
    pub rounds: usize,
    pub solver_iterations: usize,
    pub solver_relative_residual: f64,
    pub rank_deficient: bool,
    /// RMS distance over the observed points.
    pub observed_rmse: f64,
    /// `"measured"` for mesh targets, `"unconstrained"` for landmark targets.
    pub surface_error: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    pub delta_path: String,
    pub pose_path: String,
    pub mesh_hash: String,
}

impl FitReportDoc {
    pub fn from_fit(
        fit: &JointFit,
        weights: &LossWeights,
        lambda: f64,
        landmark_target: bool,
        fitted: &Mesh,
        delta_path: &Path,
        pose_path: &Path,
    ) -> Self {
        let mut notes = Vec::new();
        if landmark_target {
            notes.push(
                "68 landmarks under-determine the control points; surface error away from the landmarks is unconstrained"
                    .to_owned(),
            );
            if lambda < 1e-4 {
                notes.push("consider lambda >= 1e-4 for landmark-only targets".to_owned());
            }
        }
        if fit.rank_deficient {
            notes.push(
                "normal equations were rank deficient; a minimum-norm solution was returned"
                    .to_owned(),
            );
        }
        Self {
            version: FORMAT_VERSION,
            target: if landmark_target { "landmarks" } else { "mesh" }.to_owned(),
            weights: WeightsDoc::from(weights),
            lambda,
            regularized: lambda > 0.0,
            loss: LossDoc::from(&fit.report),
            objective: fit.objective,
            objective_history: fit.history.clone(),
            rounds: fit.rounds,
            solver_iterations: fit.solve.iterations,
            solver_relative_residual: fit.solve.relative_residual,
            rank_deficient: fit.rank_deficient,
            observed_rmse: fit.observed_rmse,
            surface_error: if landmark_target {
                "unconstrained"
            } else {
                "measured"
            }
            .to_owned(),
            notes,
            delta_path: delta_path.display().to_string(),
            pose_path: pose_path.display().to_string(),
            mesh_hash: mesh_hash(fitted),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseRowsDoc {
    pub indices: Vec<Vec<u32>>,
    pub values: Vec<Vec<f64>>,
}

/// Everything the editor needs: mesh, lattice, the fixed coefficient rows,
/// the current displacement and an optional pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleDoc {
    pub version: u32,
    pub mesh: BundleMesh,
    pub lattice: LatticeDoc,
    pub coeffs: SparseRowsDoc,
    pub delta: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<Pose>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
}

impl BundleDoc {
    pub fn build(
        pm: &ParameterizedMesh,
        field: Option<&DeformationField>,
        pose: Option<Pose>,
    ) -> FormatResult<Self> {
        let m = pm.control_point_count();
        let zeros = DeformationField::zeros(m);
        let field = field.unwrap_or(&zeros);
        if field.len() != m {
            return Err(LatticeError::DimensionMismatch {
                expected: m,
                actual: field.len(),
            }
            .into());
        }
        let c = pm.coeffs();
        let (indices, values) = (0..c.rows())
            .map(|q| {
                let (i, v) = c.row(q);
                (i.to_vec(), v.to_vec())
            })
            .unzip();
        let doc = Self {
            version: FORMAT_VERSION,
            mesh: BundleMesh {
                vertices: to_arrays(pm.mesh().vertices()),
                faces: pm.mesh().faces().to_vec(),
            },
            lattice: LatticeDoc::from(pm.grid()),
            coeffs: SparseRowsDoc { indices, values },
            delta: FieldDoc::from(field).delta,
            pose,
        };
        doc.validate()?;
        Ok(doc)
    }

    /// Checks dimensions and coefficient row sums.
    pub fn validate(&self) -> FormatResult<()> {
        check_version(self.version)?;
        let n = self.mesh.vertices.len();
        let m: usize = self.lattice.dims.iter().map(|d| d + 1).product();
        if self.lattice.points.len() != m || self.delta.len() != m {
            return Err(FormatError::Inconsistent(format!(
                "lattice implies {m} control points; {} listed, {} displacements",
                self.lattice.points.len(),
                self.delta.len()
            )));
        }
        if self.coeffs.indices.len() != n || self.coeffs.values.len() != n {
            return Err(FormatError::Inconsistent(format!(
                "{n} vertices but {} coefficient rows",
                self.coeffs.indices.len()
            )));
        }
        for (row, (idx, val)) in self
            .coeffs
            .indices
            .iter()
            .zip(&self.coeffs.values)
            .enumerate()
        {
            if idx.len() != val.len() || idx.iter().any(|&i| i as usize >= m) {
                return Err(FormatError::Inconsistent(format!(
                    "coefficient row {row} is malformed"
                )));
            }
            let sum: f64 = val.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(FormatError::RowSum { row, sum });
            }
        }
        Ok(())
    }

    /// Displayed vertices `coeffs * (P0 + dP)`, optionally posed.
    pub fn evaluate(&self) -> Vec<Point3<f64>> {
        let p: Vec<Vector3<f64>> = self
            .lattice
            .points
            .iter()
            .zip(&self.delta)
            .map(|(a, d)| Vector3::from(*a) + Vector3::from(*d))
            .collect();
        self.coeffs
            .indices
            .iter()
            .zip(&self.coeffs.values)
            .map(|(idx, val)| {
                let v = idx
                    .iter()
                    .zip(val)
                    .fold(Vector3::zeros(), |acc, (&i, &w)| acc + p[i as usize] * w);
                let v = Point3::from(v);
                self.pose.as_ref().map_or(v, |pose| pose.apply(&v))
            })
            .collect()
    }

    pub fn field(&self) -> FormatResult<DeformationField> {
        FieldDoc {
            version: FORMAT_VERSION,
            delta: self.delta.clone(),
        }
        .to_field()
    }
}

pub fn save_bundle(bundle: &BundleDoc, path: impl AsRef<Path>) -> FormatResult<()> {
    bundle.validate()?;
    write_json(bundle, path)
}

pub fn load_bundle(path: impl AsRef<Path>) -> FormatResult<BundleDoc> {
    let doc: BundleDoc = read_json(path)?;
    doc.validate()?;
    Ok(doc)
}
