//! Entry point: parse arguments, resolve the configuration, pin the rayon
//! worker pool, dispatch to the requested driver, and map outcomes onto exit
//! codes: 0 all checks pass, 1 a check failed or the run errored, 2 the
//! configuration was rejected, 3 a resource cap refused the work.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nelab::Error;
use nelab_cli::config::{load_config, resolve};
use nelab_cli::run::{self, RunOutcome};

#[derive(Parser)]
#[command(
    name = "nelab",
    about = "Lattice laboratory for a particle coupled to a variable-coefficient field",
    version
)]
struct Cli {
    /// TOML configuration file; omit to run on built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Dotted override, e.g. --set sampler.paths=8192 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,

    /// Random seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Rayon worker threads (excluded from the config hash).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Output directory for artifacts (excluded from the config hash).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Diagonalize the particle and field operators and validate the ground state.
    Spectrum,
    /// Heat-kernel battery: Gaussian sandwich, Trotter, convexity, subordination.
    KernelCheck,
    /// Euler-Maruyama survival probabilities against the spectral semigroup.
    FkCheck,
    /// Sample the stationary lattice process and run the distributional checks.
    Paths,
    /// Tabulate the pair potential two ways and verify its laws.
    Pairpot,
    /// Estimate the overlap ratio gamma(T) with its consistency checks.
    Gamma,
    /// Cross-validate the path estimator against exact diagonalization.
    FockCheck,
    /// Run the massive and decaying-mass branches back to back.
    FullDichotomy,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Spectrum => "spectrum",
            Command::KernelCheck => "kernel-check",
            Command::FkCheck => "fk-check",
            Command::Paths => "paths",
            Command::Pairpot => "pairpot",
            Command::Gamma => "gamma",
            Command::FockCheck => "fock-check",
            Command::FullDichotomy => "full-dichotomy",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let out_str = cli.out.as_ref().map(|p| p.to_string_lossy().into_owned());
    // The dichotomy command supplies its own two branch presets; a run that
    // names none gets the massive branch as its nominal base configuration.
    let default_preset = match cli.command {
        Command::FullDichotomy => Some("gamma-massive"),
        _ => None,
    };
    let config = match load_config(
        cli.config.as_deref(),
        &cli.sets,
        cli.seed,
        cli.workers,
        out_str.as_deref(),
        default_preset,
    ) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let lab = match resolve(config) {
        Ok(l) => l,
        Err(e) => return fail(e),
    };

    let pool = match rayon::ThreadPoolBuilder::new().num_threads(lab.config.run.workers).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: failed to build worker pool: {e}");
            return ExitCode::from(2);
        }
    };

    eprintln!(
        "# {} | preset {} | config {} | seed {} | workers {}",
        env!("CARGO_PKG_VERSION"),
        lab.config
            .run
            .preset
            .clone()
            .or_else(|| lab.config.coeff.as_ref().map(|c| c.kind.clone()))
            .unwrap_or_else(|| "default".to_string()),
        lab.hash,
        lab.config.run.seed,
        lab.config.run.workers
    );

    let outcome: nelab::Result<RunOutcome> = pool.install(|| match cli.command {
        Command::Spectrum => run::spectrum(&lab),
        Command::KernelCheck => run::kernel_check(&lab),
        Command::FkCheck => run::fk_check(&lab),
        Command::Paths => run::paths(&lab),
        Command::Pairpot => run::pairpot(&lab),
        Command::Gamma => run::gamma(&lab),
        Command::FockCheck => run::fock_check(&lab),
        Command::FullDichotomy => run::full_dichotomy(&lab),
    });

    match outcome {
        Ok(outcome) => {
            for line in &outcome.lines {
                println!("{line}");
            }
            if outcome.passed {
                println!("OK {}", cli.command.name());
                ExitCode::SUCCESS
            } else {
                println!("FAILED {}", cli.command.name());
                ExitCode::from(1)
            }
        }
        Err(e) => fail(e),
    }
}

/// Map an error onto the documented exit codes.
fn fail(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    let code = match &e {
        Error::DenseCapExceeded { .. } => 3,
        Error::Config(_) | Error::Container(_) | Error::HashMismatch { .. } => 2,
        _ => 1,
    };
    ExitCode::from(code)
}
