use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ffd_face::basis::BasisKind;
use ffd_face::commands::{
    cmd_deform, cmd_embed, cmd_eval, cmd_export_bundle, cmd_fit, sibling, DeformArgs, EmbedArgs,
    EvalArgs, ExportArgs, FitArgs,
};
use ffd_face::lattice::DEFAULT_PADDING;
use ffd_face::sample::bundled_landmarks_path;

#[derive(Parser)]
#[command(name = "ffd", version, about = "Free-form deformation of face meshes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Bspline,
    Bernstein,
}

fn parse_dims(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected l,m,n, got {s:?}"));
    }
    let mut dims = [0; 3];
    for (d, p) in dims.iter_mut().zip(parts) {
        *d = p.trim().parse().map_err(|e| format!("{p:?}: {e}"))?;
    }
    Ok(dims)
}

#[derive(Subcommand)]
enum Command {
    /// Embed a mesh in a control lattice and write the parameterization.
    Embed {
        mesh: PathBuf,
        #[arg(long, value_parser = parse_dims, default_value = "6,19,4")]
        dims: [usize; 3],
        #[arg(long, value_enum, default_value = "bspline")]
        kind: Kind,
        #[arg(long, default_value_t = 3)]
        degree: usize,
        #[arg(long, default_value_t = DEFAULT_PADDING)]
        padding: f64,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long)]
        lattice_out: Option<PathBuf>,
    },
    /// Deform (and optionally pose) the reference mesh.
    Deform {
        parameterization: PathBuf,
        #[arg(long)]
        delta: Option<PathBuf>,
        #[arg(long)]
        pose: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Fit pose and control-point displacements to a mesh or 68 landmarks.
    Fit {
        parameterization: PathBuf,
        target: PathBuf,
        #[arg(long)]
        scheme: Option<PathBuf>,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        rounds: Option<usize>,
        /// Prefix for `<out>.delta.json`, `<out>.pose.json` and `<out>.report.json`.
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long)]
        mesh_out: Option<PathBuf>,
    },
    /// Tabulate NME by yaw bin from JSON-lines records.
    Eval {
        records: PathBuf,
        #[arg(long)]
        per_bin: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "NME %")]
        label: String,
        #[arg(long)]
        json_out: Option<PathBuf>,
    },
    /// Write the editor bundle.
    ExportBundle {
        parameterization: PathBuf,
        #[arg(long)]
        delta: Option<PathBuf>,
        #[arg(long)]
        pose: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<String, Box<dyn std::error::Error>> {
    let text = match cli.command {
        Command::Embed {
            mesh,
            dims,
            kind,
            degree,
            padding,
            out,
            lattice_out,
        } => {
            let kind = match kind {
                Kind::Bspline => BasisKind::BSpline { degree },
                Kind::Bernstein => BasisKind::Bernstein,
            };
            cmd_embed(&EmbedArgs {
                mesh,
                dims,
                kind,
                padding,
                out,
                lattice_out,
            })?
            .to_string()
        }
        Command::Deform {
            parameterization,
            delta,
            pose,
            out,
        } => cmd_deform(&DeformArgs {
            parameterization,
            delta,
            pose,
            out,
        })?
        .to_string(),
        Command::Fit {
            parameterization,
            target,
            scheme,
            weights,
            lambda,
            rounds,
            out,
            mesh_out,
        } => {
            let args = FitArgs {
                parameterization,
                target,
                scheme: scheme.unwrap_or_else(bundled_landmarks_path),
                weights,
                lambda,
                rounds,
                out_delta: sibling(&out, "delta"),
                out_pose: sibling(&out, "pose"),
                out_report: sibling(&out, "report"),
                out_mesh: mesh_out,
            };
            cmd_fit(&args)?.to_string()
        }
        Command::Eval {
            records,
            per_bin,
            seed,
            label,
            json_out,
        } => cmd_eval(&EvalArgs {
            records,
            per_bin,
            seed,
            label,
            json_out,
        })?
        .to_string(),
        Command::ExportBundle {
            parameterization,
            delta,
            pose,
            out,
        } => cmd_export_bundle(&ExportArgs {
            parameterization,
            delta,
            pose,
            out,
        })?
        .to_string(),
    };
    Ok(text)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(text) => {
            println!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
