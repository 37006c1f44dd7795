//! Command-line front end. Exit codes: 0 success, 1 bad configuration or
//! input, 2 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::export::{export_fields, write_atomic, ExportFormat};
use crate::fem::{ScalarField, SolverOptions};
use crate::metrics::{
    forward_stage, noise_sweep, reconstruct_stage, records_to_csv, records_to_text, table_gamma_sweep,
    table_mesh_sweep, ExperimentRecord, ExperimentSetup, ForwardStage, MeshPair, PreparedData, ReconStage,
    DATA_REL_TOL,
};
use crate::mesh::{build_disk_mesh, EdgeTag};

#[derive(Debug, Parser)]
#[command(name = "aet", version, about = "Conductivity reconstruction from power-density data on the unit disk")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Noise seed; overrides `noise.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Do not print tables to stdout.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize data, reconstruct and score one configuration.
    Run,
    /// Synthesize data and write it for a later `reconstruct`.
    Forward,
    /// Reconstruct from a directory written by `forward`.
    Reconstruct {
        #[arg(long)]
        data: PathBuf,
    },
    /// Arc-size sweep: cases 1 and 2 on the large, medium and small arcs.
    Table1,
    /// Mesh sweep: case 1 on the medium arc at three resolutions.
    Table2,
    /// Case 2 on the medium arc at three noise levels.
    NoiseSweep,
    /// Write the reconstruction mesh with its boundary tags.
    ExportMesh,
}

pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        2
    } else {
        1
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let out = cfg.output_dir.as_path();
    match &cli.command {
        Command::Run => {
            let stage = forward(&cfg)?;
            write_forward(&cfg, &stage)?;
            let recon = reconstruct_stage(&stage.prepared, &cfg.unwrap, &cfg.solver)?;
            write_recon(&cfg, &stage.prepared, &recon, cli.quiet)
        }
        Command::Forward => {
            let stage = forward(&cfg)?;
            write_forward(&cfg, &stage)?;
            if !cli.quiet {
                println!("wrote forward data for {} nodes to {}", stage.prepared.mesh.num_vertices(), out.display());
            }
            Ok(())
        }
        Command::Reconstruct { data } => {
            let prepared = PreparedData::read_dir(data)?;
            let recon = reconstruct_stage(&prepared, &cfg.unwrap, &cfg.solver)?;
            write_recon(&cfg, &prepared, &recon, cli.quiet)
        }
        Command::Table1 => write_table(out, "table1", &table_gamma_sweep(&cfg.sweep())?, cli.quiet),
        Command::Table2 => write_table(out, "table2", &table_mesh_sweep(&cfg.sweep())?, cli.quiet),
        Command::NoiseSweep => write_table(out, "noise_sweep", &noise_sweep(&cfg.sweep())?, cli.quiet),
        Command::ExportMesh => {
            let mut mesh = build_disk_mesh(cfg.target_h)?;
            for _ in 0..cfg.refinements {
                mesh = mesh.refine();
            }
            let mesh = mesh.tag_boundary(&cfg.gamma);
            let mut text = Vec::new();
            mesh.write_text(&mut text)?;
            write_atomic(&out.join("mesh.txt"), &text)?;
            let mut dirichlet = vec![0.0; mesh.num_vertices()];
            for e in mesh.boundary_edges().iter().filter(|e| e.tag == EdgeTag::Dirichlet) {
                for &v in &e.nodes {
                    dirichlet[v] = 1.0;
                }
            }
            let dirichlet = ScalarField::new(&mesh, dirichlet)?;
            export_fields(out, "mesh", &mesh, &[("dirichlet", &dirichlet)], ExportFormat::VtkLegacy)?;
            if !cli.quiet {
                println!(
                    "{} vertices, {} triangles, {} boundary edges",
                    mesh.num_vertices(),
                    mesh.num_triangles(),
                    mesh.boundary_edges().len()
                );
            }
            Ok(())
        }
    }
}

fn setup(cfg: &RunConfig) -> ExperimentSetup {
    ExperimentSetup {
        case: cfg.sigma,
        gamma_name: cfg.gamma_name.clone(),
        gamma: cfg.gamma.clone(),
        noise: cfg.noise,
        eps_d: cfg.eps_d,
        unwrap: cfg.unwrap.clone(),
        solver: cfg.solver,
        data_solver: SolverOptions { rel_tol: cfg.solver.rel_tol.min(DATA_REL_TOL), ..cfg.solver },
    }
}

fn forward(cfg: &RunConfig) -> Result<ForwardStage> {
    let pair = MeshPair::build(cfg.data_h, cfg.target_h, cfg.refinements)?;
    forward_stage(&pair, &setup(cfg))
}

fn write_forward(cfg: &RunConfig, stage: &ForwardStage) -> Result<()> {
    let out = cfg.output_dir.as_path();
    stage.prepared.write_dir(out)?;
    if cfg.write_fields {
        let f = &stage.forward;
        let columns = [
            ("sigma", &f.sigma),
            ("u1", &f.u1),
            ("u2", &f.u2),
            ("h11", &f.h.h11),
            ("h12", &f.h.h12),
            ("h22", &f.h.h22),
            ("theta", &f.theta.theta),
        ];
        for &format in &cfg.formats {
            export_fields(out, "data_fields", &stage.data_mesh, &columns, format)?;
        }
    }
    Ok(())
}

fn write_recon(cfg: &RunConfig, data: &PreparedData, recon: &ReconStage, quiet: bool) -> Result<()> {
    let out = cfg.output_dir.as_path();
    let records = std::slice::from_ref(&recon.record);
    write_atomic(&out.join("results.csv"), records_to_csv(records).as_bytes())?;
    write_atomic(&out.join("results.txt"), records_to_text(records).as_bytes())?;
    if cfg.write_fields {
        let r = &recon.result;
        let log_d = data.h.d.map(f64::ln);
        let columns = [
            ("theta_true", &data.theta_true),
            ("theta", &r.theta),
            ("sigma_true", &data.sigma_true),
            ("sigma", &r.sigma),
            ("log_d", &log_d),
        ];
        for &format in &cfg.formats {
            export_fields(out, "fields", &data.mesh, &columns, format)?;
        }
    }
    if !quiet {
        print!("{}", records_to_text(records));
        let d = &recon.result.diagnostics;
        let solve = |r: &crate::fem::SolveReport| {
            if r.direct {
                "direct".to_string()
            } else {
                format!("{} PCG iterations", r.iterations)
            }
        };
        println!(
            "theta solve: {}, sigma solve: {}, nodes with D at its floor: {}",
            solve(&d.theta_solve),
            solve(&d.sigma_solve),
            d.clamped_d
        );
    }
    Ok(())
}

fn write_table(out: &Path, stem: &str, records: &[ExperimentRecord], quiet: bool) -> Result<()> {
    write_atomic(&out.join(format!("{stem}.csv")), records_to_csv(records).as_bytes())?;
    let text = records_to_text(records);
    write_atomic(&out.join(format!("{stem}.txt")), text.as_bytes())?;
    if !quiet {
        print!("{text}");
    }
    Ok(())
}
