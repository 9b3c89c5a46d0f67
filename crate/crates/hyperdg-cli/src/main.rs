use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use hyperdg::dg::VectorField;
use hyperdg::mesh::{check_admissible, classify_facets, parse_mesh, FacetClass, Verdict};
use hyperdg_cli::config::StudyConfig;
use hyperdg_cli::rates::{fit_rate, ErrorColumn};
use hyperdg_cli::study::{
    read_convergence_csv, run_convergence, run_projector_study, write_convergence_csv,
    write_projector_csv,
};
use hyperdg_cli::HarnessError;

#[derive(Parser)]
#[command(
    name = "hyperdg",
    about = "Upwind DG solver and p-convergence study harness for steady advection-reaction problems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum WhichError {
    L2,
    Dg,
}

#[derive(Subcommand)]
enum Command {
    /// Classify facets and check the sweep assumptions for a mesh file.
    CheckMesh {
        #[arg(long)]
        mesh: PathBuf,
        /// Constant convection field as "bx,by".
        #[arg(long)]
        beta: String,
    },
    /// Solve the configured case at the first p of p_range and print errors.
    Solve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the configured p sweep and write the convergence CSV.
    Convergence {
        #[arg(long)]
        config: PathBuf,
        /// Output CSV (overrides the config's output field).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reference-triangle projector study CSV.
    ProjectorStudy {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a convergence rate from a CSV produced by `convergence`.
    Rates {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        which: WhichError,
        #[arg(long)]
        pmin: usize,
        #[arg(long)]
        pmax: usize,
    },
}

fn parse_beta(text: &str) -> Result<[f64; 2], HarnessError> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 2 {
        return Err(HarnessError::Config(format!(
            "--beta expects 'bx,by', got '{text}'"
        )));
    }
    let bx = parts[0]
        .trim()
        .parse()
        .map_err(|e| HarnessError::Config(format!("bad bx: {e}")))?;
    let by = parts[1]
        .trim()
        .parse()
        .map_err(|e| HarnessError::Config(format!("bad by: {e}")))?;
    Ok([bx, by])
}

fn load_config(path: &PathBuf) -> Result<StudyConfig, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    StudyConfig::parse(&text)
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::CheckMesh { mesh, beta } => {
            let text = std::fs::read_to_string(&mesh)?;
            let m = parse_mesh(&text)?;
            let b = parse_beta(&beta)?;
            let field = VectorField::Constant(b);
            let class = classify_facets(&m, &field);
            let report = check_admissible(&m, &field);
            println!(
                "mesh: {} vertices, {} elements, {} facets, h = {:.6}, sigma = {:.6}",
                m.vertices.len(),
                m.n_elements(),
                m.facets.len(),
                m.h,
                m.sigma
            );
            let mut counts = [0usize; 4];
            for e in 0..m.n_elements() {
                for k in 0..3 {
                    let idx = match class.classes[e][k] {
                        FacetClass::Outflow => 0,
                        FacetClass::Inflow => 1,
                        FacetClass::Characteristic => 2,
                        FacetClass::Mixed => 3,
                    };
                    counts[idx] += 1;
                }
            }
            println!(
                "facet sides: {} outflow, {} inflow, {} characteristic, {} mixed",
                counts[0], counts[1], counts[2], counts[3]
            );
            let a1_violations: Vec<usize> = report
                .a1_ok
                .iter()
                .enumerate()
                .filter(|(_, ok)| !**ok)
                .map(|(e, _)| e)
                .collect();
            if !a1_violations.is_empty() {
                println!("(A1) violated by elements {a1_violations:?}");
            }
            let a2_violations: Vec<usize> = report
                .a2
                .iter()
                .filter(|(_, ok)| !ok)
                .map(|(fid, _)| *fid)
                .collect();
            if !a2_violations.is_empty() {
                println!("(A2) violated on facets {a2_violations:?}");
            }
            match (&report.upwind_order, &report.cycle) {
                (Some(order), _) => println!("upwind order exists ({} elements)", order.len()),
                (None, Some(cycle)) => println!("upwind ordering cycle: {cycle:?}"),
                _ => {}
            }
            println!("verdict: {:?}", report.verdict);
            if report.verdict != Verdict::Admissible {
                return Err(HarnessError::Config(
                    "mesh is not admissible for the sweep solver".into(),
                ));
            }
            Ok(())
        }
        Command::Solve { config } => {
            let mut cfg = load_config(&config)?;
            cfg.p_range = [cfg.p_range[0], cfg.p_range[0]];
            cfg.output = None;
            let records = run_convergence(&cfg)?;
            let r = &records[0];
            println!(
                "p = {}: l2 error {:.6e}, dg error {:.6e}, dofs {}, solver {}, residual {:.3e}, {:.3}s",
                r.p, r.error_l2, r.error_dg, r.dofs, r.solver, r.residual, r.wall_time_s
            );
            Ok(())
        }
        Command::Convergence { config, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(out) = out {
                cfg.output = Some(out.to_string_lossy().into_owned());
            }
            if cfg.output.is_none() {
                return Err(HarnessError::Config(
                    "no output path: pass --out or set \"output\" in the config".into(),
                ));
            }
            let records = run_convergence(&cfg)?;
            let path = cfg.output.as_deref().unwrap();
            write_convergence_csv(&records, std::path::Path::new(path))?;
            println!("wrote {} rows to {}", records.len(), path);
            Ok(())
        }
        Command::ProjectorStudy { config, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(out) = out {
                cfg.output = Some(out.to_string_lossy().into_owned());
            }
            if cfg.output.is_none() {
                return Err(HarnessError::Config(
                    "no output path: pass --out or set \"output\" in the config".into(),
                ));
            }
            let rows = run_projector_study(&cfg)?;
            let path = cfg.output.as_deref().unwrap();
            write_projector_csv(&rows, std::path::Path::new(path))?;
            println!("wrote {} rows to {}", rows.len(), path);
            Ok(())
        }
        Command::Rates {
            input,
            which,
            pmin,
            pmax,
        } => {
            let text = std::fs::read_to_string(&input)?;
            let records = read_convergence_csv(&text)?;
            let column = match which {
                WhichError::L2 => ErrorColumn::L2,
                WhichError::Dg => ErrorColumn::Dg,
            };
            let fit = fit_rate(&records, column, pmin, pmax)?;
            println!(
                "slope = {:.6}, intercept = {:.6}, r^2 = {:.8}, window = [{}, {}]",
                fit.slope, fit.intercept, fit.r_squared, fit.window.0, fit.window.1
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
