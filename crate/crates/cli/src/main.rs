//! `coulomb-lab`: runs the experiments of `coulomb-core` and writes CSV/JSON
//! artifacts plus a `summary.json` of pass/fail checks.

mod commands;
mod config;
mod summary;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Flags, Settings, UsageError};
use summary::Summary;

#[derive(Debug, Parser)]
#[command(
    name = "coulomb-lab",
    version,
    about = "Experiments on sphere-valued fields over the unit disc"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Mesh statistics and node/triangle dump.
    MeshInfo,
    /// Enneper integrals against their closed forms.
    EnneperTable,
    /// Divergence-form decomposition of the Jacobian, Γ/ω bounds and Φ symmetries.
    Decompose,
    /// Coulomb frame by continuation and its residuals.
    Frame,
    /// Preimage census and the coarea identity.
    Coarea,
    /// Holography identity sweep over ε.
    Holography,
    /// Self-intersections of the Enneper surface.
    SelfIntersect,
    /// Refinement table and dual-norm growth.
    Convergence,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::MeshInfo => "mesh-info",
            Command::EnneperTable => "enneper-table",
            Command::Decompose => "decompose",
            Command::Frame => "frame",
            Command::Coarea => "coarea",
            Command::Holography => "holography",
            Command::SelfIntersect => "self-intersect",
            Command::Convergence => "convergence",
        }
    }
}

fn configure_threads() -> Result<(), UsageError> {
    let Ok(v) = std::env::var("COULOMB_LAB_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| UsageError(format!("COULOMB_LAB_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| UsageError(e.to_string()))
}

fn run(cli: Cli) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let name = cli.command.name();
    let settings = Settings::resolve(name, &cli.flags)?;
    configure_threads()?;
    std::fs::create_dir_all(&settings.out)?;
    let out = settings.out.as_path();
    let mut summary = Summary::default();
    let result = match cli.command {
        Command::MeshInfo => commands::mesh_info(&settings, out, &mut summary),
        Command::EnneperTable => commands::enneper_table(&settings, out, &mut summary),
        Command::Decompose => commands::decompose_cmd(&settings, out, &mut summary),
        Command::Frame => commands::frame(&settings, out, &mut summary),
        Command::Coarea => commands::coarea(&settings, out, &mut summary),
        Command::Holography => commands::holography(&settings, out, &mut summary),
        Command::SelfIntersect => commands::self_intersect(&settings, out, &mut summary),
        Command::Convergence => commands::convergence(&settings, out, &mut summary),
    };
    match result {
        Ok(()) => {}
        Err(e @ (coulomb_core::Error::Argument(_) | coulomb_core::Error::ResourceGuard { .. })) => {
            return Err(Box::new(UsageError(e.to_string())));
        }
        Err(e) => return Err(Box::new(e)),
    }
    summary.write(&settings, out)?;
    let failures = summary.failures();
    if failures.is_empty() {
        println!("{name}: all {} checks passed", summary.checks.len());
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("{name}: failed checks: {}", failures.join(", "));
        Ok(ExitCode::from(1))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("usage error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
