//! Command-line front end: validate configurations, run pipelines, print
//! profile catalogues, and drive the acceptance suite.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use bblab::blowup::{catalogue_to_json, classify_profiles};
use bblab::cli::{Analysis, ExperimentConfig, RunStatus, StageSelect};
use bblab::state::{default_u_samples, validate_spec};
use bblab::suite;

#[derive(Parser)]
#[command(name = "bblab", about = "Bilinear control laboratory on the torus")]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps (fallback: BBLAB_THREADS, default 1).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a configuration and print the model registry clauses.
    Validate,
    /// Solve the state equation for the seeded control.
    Solve,
    /// Run the optimization pipeline with every configured analysis.
    Optimize,
    /// Optimize, then run only the Weiss profile analysis.
    Weiss,
    /// Print the angular profile catalogue for constant phase weights.
    Blowup {
        /// Phase weight on {η > 0}.
        #[arg(long)]
        f0: f64,
        /// Phase weight on {η ≤ 0}.
        #[arg(long)]
        g0: f64,
        /// Largest component count to search.
        #[arg(long, default_value_t = 12)]
        nmax: usize,
    },
    /// Optimize, then run only the free-boundary curve analysis.
    Boundary,
    /// Run the acceptance suite (one line per criterion).
    Suite,
}

fn main() {
    let cli = Cli::parse();
    std::process::exit(dispatch(cli));
}

fn dispatch(cli: Cli) -> i32 {
    let threads = cli
        .threads
        .or_else(|| std::env::var("BBLAB_THREADS").ok().and_then(|s| s.parse().ok()))
        .unwrap_or(1);

    match cli.command {
        Command::Blowup { f0, g0, nmax } => {
            let catalogue = match classify_profiles(f0, g0, nmax) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("catalogue failed: {e}");
                    return 4;
                }
            };
            let json = match catalogue_to_json(&catalogue) {
                Ok(j) => j,
                Err(e) => {
                    eprintln!("serialization failed: {e}");
                    return 4;
                }
            };
            if let Some(out) = cli.out {
                if let Err(e) = std::fs::write(&out, &json) {
                    eprintln!("write {}: {e}", out.display());
                    return 4;
                }
                println!("{} profiles -> {}", catalogue.len(), out.display());
            } else {
                println!("{json}");
            }
            0
        }
        Command::Suite => {
            let results = suite::run_all_with(|r| println!("{}", r.line()));
            let failed = results.iter().filter(|r| !r.passed).count();
            if failed == 0 {
                println!("all {} criteria passed", results.len());
                0
            } else {
                eprintln!("{failed} of {} criteria failed", results.len());
                4
            }
        }
        command => {
            let Some(path) = cli.config.as_ref() else {
                eprintln!("--config <path> is required for this subcommand");
                return 2;
            };
            let mut config = match ExperimentConfig::load(path) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("cannot load {}: {e}", path.display());
                    return 2;
                }
            };
            if let Some(seed) = cli.seed {
                config.seed = seed;
            }
            if let Some(out) = cli.out {
                config.output_dir = out;
            }
            match command {
                Command::Validate => validate(&config),
                Command::Solve => pipeline(&config, StageSelect::Solve, threads),
                Command::Optimize => pipeline(&config, StageSelect::Full, threads),
                Command::Weiss => pipeline(&config, StageSelect::Only(Analysis::Weiss), threads),
                Command::Boundary => {
                    pipeline(&config, StageSelect::Only(Analysis::Boundary), threads)
                }
                Command::Blowup { .. } | Command::Suite => unreachable!("handled above"),
            }
        }
    }
}

fn validate(config: &ExperimentConfig) -> i32 {
    if let Err(e) = config.validate() {
        eprintln!("configuration invalid: {e}");
        return 2;
    }
    let report = match validate_spec(&config.spec, &default_u_samples()) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("model validation failed: {e}");
            return 2;
        }
    };
    for clause in &report.clauses {
        println!(
            "{}  {} — {}",
            if clause.passed { "ok      " } else { "violated" },
            clause.name,
            clause.detail
        );
    }
    if report.passed {
        println!("configuration valid (u range [{:.2}, {:.2}])", report.u_min, report.u_max);
        0
    } else {
        eprintln!("model registry clauses violated");
        2
    }
}

fn pipeline(config: &ExperimentConfig, select: StageSelect, threads: usize) -> i32 {
    match bblab::cli::run(config, select, threads) {
        Ok((manifest, status)) => {
            for err in &manifest.errors {
                eprintln!("[{}] {}", err.stage, err.message);
            }
            println!(
                "{} artifacts in {}",
                manifest.artifacts.len(),
                config.output_dir.display()
            );
            if status == RunStatus::Success {
                println!("manifest.json written; run reproducible from config + seed");
            }
            status.exit_code()
        }
        Err(e) => {
            eprintln!("pipeline failed: {e}");
            3
        }
    }
}
