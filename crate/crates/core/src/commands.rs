//! The command-line operations as library functions. Each returns a summary
//! whose `Display` form is what the `ffd` binary prints.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Point3;
use thiserror::Error;

use crate::basis::BasisKind;
use crate::evaluation::{
    balanced_sample, bin_and_tabulate, parse_records_jsonl, EvalError, NmeTable,
};
use crate::fitting::{FitConfig, FitError, FitTarget, LossWeights};
use crate::formats::{
    load_field, load_parameterization, load_pose, load_weights, mesh_hash, save_bundle, save_field,
    save_lattice, save_parameterization, save_pose, write_json, BundleDoc, FitReportDoc,
    FormatError, LandmarkTargetDoc,
};
use crate::landmarks::{LandmarkError, LandmarkScheme};
use crate::lattice::{
    build_lattice, parameterize, DeformationField, LatticeError, DEFAULT_MAX_ITER,
    DEFAULT_TOLERANCE,
};
use crate::mesh::{load_mesh, save_mesh, MeshError};
use crate::projection::{apply_pose, Pose};

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Landmark(#[from] LandmarkError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type CommandResult<T> = Result<T, CommandError>;

/// `name.json` -> `name.<suffix>.json` next to it.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}.{suffix}.json"))
}

#[derive(Debug, Clone)]
pub struct EmbedArgs {
    pub mesh: PathBuf,
    pub dims: [usize; 3],
    pub kind: BasisKind,
    pub padding: f64,
    /// Parameterization file; the lattice goes to `<stem>.lattice.json`
    /// unless `lattice_out` is given.
    pub out: PathBuf,
    pub lattice_out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct EmbedSummary {
    pub vertices: usize,
    pub control_points: usize,
    pub max_residual: f64,
    pub box_diagonal: f64,
    pub parameterization: PathBuf,
    pub lattice: PathBuf,
}

impl fmt::Display for EmbedSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "vertices: {}", self.vertices)?;
        writeln!(f, "control points: {}", self.control_points)?;
        writeln!(
            f,
            "max reconstruction residual: {:.3e} ({:.3e} x box diagonal)",
            self.max_residual,
            self.max_residual / self.box_diagonal
        )?;
        writeln!(f, "parameterization: {}", self.parameterization.display())?;
        write!(f, "lattice: {}", self.lattice.display())
    }
}

pub fn cmd_embed(args: &EmbedArgs) -> CommandResult<EmbedSummary> {
    let mesh = load_mesh(&args.mesh)?;
    let grid = build_lattice(&mesh, args.dims, args.kind, args.padding)?;
    let pm = parameterize(&mesh, &grid, DEFAULT_TOLERANCE, DEFAULT_MAX_ITER)?;
    let lattice = args
        .lattice_out
        .clone()
        .unwrap_or_else(|| sibling(&args.out, "lattice"));
    save_parameterization(&pm, &args.out)?;
    save_lattice(pm.grid(), &lattice)?;
    Ok(EmbedSummary {
        vertices: pm.vertex_count(),
        control_points: pm.control_point_count(),
        max_residual: pm.max_residual(),
        box_diagonal: pm.box_diagonal(),
        parameterization: args.out.clone(),
        lattice,
    })
}

#[derive(Debug, Clone)]
pub struct DeformArgs {
    pub parameterization: PathBuf,
    /// Zero displacement when absent.
    pub delta: Option<PathBuf>,
    pub pose: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Debug, Clone)]
pub struct DeformSummary {
    pub out: PathBuf,
    pub mesh_hash: String,
    pub max_displacement: f64,
}

impl fmt::Display for DeformSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "wrote {}", self.out.display())?;
        writeln!(
            f,
            "max control-point displacement: {:.6e}",
            self.max_displacement
        )?;
        write!(f, "mesh hash: {}", self.mesh_hash)
    }
}

pub fn cmd_deform(args: &DeformArgs) -> CommandResult<DeformSummary> {
    let pm = load_parameterization(&args.parameterization)?;
    let field = match &args.delta {
        Some(p) => load_field(p)?,
        None => DeformationField::zeros(pm.control_point_count()),
    };
    let mut mesh = pm.deform(&field)?;
    if let Some(p) = &args.pose {
        mesh = apply_pose(&mesh, &load_pose(p)?);
    }
    save_mesh(&mesh, &args.out)?;
    Ok(DeformSummary {
        out: args.out.clone(),
        mesh_hash: mesh_hash(&mesh),
        max_displacement: field.max_abs(),
    })
}

#[derive(Debug, Clone)]
pub struct FitArgs {
    pub parameterization: PathBuf,
    /// A mesh with the reference topology, or a `{"landmarks": [...]}` file.
    pub target: PathBuf,
    pub scheme: PathBuf,
    pub weights: Option<PathBuf>,
    pub lambda: Option<f64>,
    pub rounds: Option<usize>,
    pub out_delta: PathBuf,
    pub out_pose: PathBuf,
    pub out_report: PathBuf,
    /// Posed, deformed reference mesh.
    pub out_mesh: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct FitSummary {
    pub report: FitReportDoc,
    pub report_path: PathBuf,
}

impl fmt::Display for FitSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = &self.report;
        writeln!(f, "target: {}", r.target)?;
        writeln!(
            f,
            "lambda: {:e}{}",
            r.lambda,
            if r.regularized {
                " (regularization active)"
            } else {
                ""
            }
        )?;
        if let Some(v) = r.loss.vertex {
            writeln!(f, "vertex loss: {v:.6e}")?;
        }
        for (name, v) in &r.loss.regions {
            writeln!(f, "  {name:<14} {v:.6e}")?;
        }
        writeln!(f, "total loss: {:.6e}", r.loss.total)?;
        writeln!(
            f,
            "rounds: {}, solver iterations: {}",
            r.rounds, r.solver_iterations
        )?;
        writeln!(
            f,
            "solver relative residual: {:.3e}",
            r.solver_relative_residual
        )?;
        writeln!(
            f,
            "observed rmse: {:.6e} (surface error {})",
            r.observed_rmse, r.surface_error
        )?;
        for n in &r.notes {
            writeln!(f, "note: {n}")?;
        }
        writeln!(f, "mesh hash: {}", r.mesh_hash)?;
        write!(f, "report: {}", self.report_path.display())
    }
}

fn load_landmark_target(path: &Path) -> Option<Vec<Point3<f64>>> {
    let text = fs::read_to_string(path).ok()?;
    let doc: LandmarkTargetDoc = serde_json::from_str(&text).ok()?;
    Some(doc.landmarks.iter().map(|&p| Point3::from(p)).collect())
}

pub fn cmd_fit(args: &FitArgs) -> CommandResult<FitSummary> {
    let pm = load_parameterization(&args.parameterization)?;
    let scheme = LandmarkScheme::load(&args.scheme)?;
    let weights = match &args.weights {
        Some(p) => load_weights(p)?,
        None => LossWeights::default(),
    };
    let mut cfg = FitConfig::default();
    if let Some(l) = args.lambda {
        cfg.lambda = l;
    }
    if let Some(r) = args.rounds {
        cfg.rounds = r;
    }

    let landmarks = load_landmark_target(&args.target);
    let target_mesh;
    let target = match &landmarks {
        Some(points) => {
            LandmarkTargetDoc::new(points).to_points()?;
            FitTarget::Landmarks(points)
        }
        None => {
            target_mesh = load_mesh(&args.target)?;
            FitTarget::Mesh(&target_mesh)
        }
    };
    let fit = crate::fitting::fit_pose_and_deformation(&pm, target, &scheme, &weights, &cfg)?;
    let fitted = apply_pose(&pm.deform(&fit.field)?, &fit.pose);

    save_field(&fit.field, &args.out_delta)?;
    save_pose(&fit.pose, &args.out_pose)?;
    if let Some(p) = &args.out_mesh {
        save_mesh(&fitted, p)?;
    }
    let report = FitReportDoc::from_fit(
        &fit,
        &weights,
        cfg.lambda,
        landmarks.is_some(),
        &fitted,
        &args.out_delta,
        &args.out_pose,
    );
    write_json(&report, &args.out_report)?;
    Ok(FitSummary {
        report,
        report_path: args.out_report.clone(),
    })
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub records: PathBuf,
    /// Balanced subsample size per yaw bin, drawn with `seed`.
    pub per_bin: Option<usize>,
    pub seed: u64,
    pub label: String,
    pub json_out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub table: NmeTable,
    pub text: String,
    pub json: String,
}

impl fmt::Display for EvalSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.text)
    }
}

pub fn cmd_eval(args: &EvalArgs) -> CommandResult<EvalSummary> {
    let text = fs::read_to_string(&args.records).map_err(|source| CommandError::Io {
        path: args.records.clone(),
        source,
    })?;
    let mut records = parse_records_jsonl(&text)?;
    if let Some(n) = args.per_bin {
        records = balanced_sample(&records, n, args.seed)?;
    }
    let table = bin_and_tabulate(&records)?;
    let json = table.to_json();
    if let Some(p) = &args.json_out {
        fs::write(p, &json).map_err(|source| CommandError::Io {
            path: p.clone(),
            source,
        })?;
    }
    Ok(EvalSummary {
        text: table.render(&args.label),
        table,
        json,
    })
}

#[derive(Debug, Clone)]
pub struct ExportArgs {
    pub parameterization: PathBuf,
    pub delta: Option<PathBuf>,
    pub pose: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Debug, Clone)]
pub struct ExportSummary {
    pub out: PathBuf,
    pub vertices: usize,
    pub control_points: usize,
    pub max_row_nnz: usize,
}

impl fmt::Display for ExportSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "wrote {}", self.out.display())?;
        write!(
            f,
            "{} vertices, {} control points, at most {} nonzeros per coefficient row",
            self.vertices, self.control_points, self.max_row_nnz
        )
    }
}

pub fn cmd_export_bundle(args: &ExportArgs) -> CommandResult<ExportSummary> {
    let pm = load_parameterization(&args.parameterization)?;
    let field = args.delta.as_ref().map(load_field).transpose()?;
    let pose: Option<Pose> = args.pose.as_ref().map(load_pose).transpose()?;
    let bundle = BundleDoc::build(&pm, field.as_ref(), pose)?;
    save_bundle(&bundle, &args.out)?;
    Ok(ExportSummary {
        out: args.out.clone(),
        vertices: pm.vertex_count(),
        control_points: pm.control_point_count(),
        max_row_nnz: pm.coeffs().max_row_nnz(),
    })
}
