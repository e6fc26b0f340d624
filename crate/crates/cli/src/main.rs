use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use haar_ruelle::runner::{
    cmd_eigen, cmd_histogram, cmd_verify, exit_code_for_error, reproduce_example3, Experiment, ExperimentConfig,
    Outcome,
};
use haar_ruelle::Result;

#[derive(Parser)]
#[command(name = "haar-ruelle", version, about = "Transfer operators and quasi-invariant measures on the full shift")]
struct Cli {
    /// Worker threads for the parallel operator and verification loops.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Perron eigenpair for every beta.
    Eigen(Common),
    /// Ratio-iteration histograms against the eigenmeasure oracle.
    Histogram(Common),
    /// Quasi-invariance and Haar fixed-point checks.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Verify the unit mass on this cylinder instead of the eigenmeasures.
        #[arg(long, value_name = "CYLINDER")]
        point_mass: Option<String>,
    },
    /// The full binary example pipeline (beta 1, 10, 30; k = 5; n = 9).
    #[command(name = "reproduce-example3")]
    ReproduceExample3 {
        #[arg(long, default_value = "example3")]
        out: PathBuf,
        #[arg(long)]
        tolerance: Option<f64>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Verification tolerance; overrides the config.
    #[arg(long)]
    tolerance: Option<f64>,
}

fn prepare(common: &Common, point_mass: Option<&str>) -> Result<(Experiment, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(t) = common.tolerance {
        cfg.tolerances.verification = t;
    }
    if let Some(c) = point_mass {
        cfg.point_mass = Some(c.to_string());
    }
    let out = common.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    Ok((cfg.validate()?, out))
}

fn run(command: Command) -> Result<Outcome> {
    match command {
        Command::Eigen(c) => {
            let (exp, out) = prepare(&c, None)?;
            Ok(cmd_eigen(&exp, &out)?.0)
        }
        Command::Histogram(c) => {
            let (exp, out) = prepare(&c, None)?;
            Ok(cmd_histogram(&exp, &out)?.0)
        }
        Command::Verify { common, point_mass } => {
            let (exp, out) = prepare(&common, point_mass.as_deref())?;
            Ok(cmd_verify(&exp, &out)?.0)
        }
        Command::ReproduceExample3 { out, tolerance } => reproduce_example3(&out, tolerance),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            println!("{}", if outcome.passed { "PASS" } else { "FAIL" });
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for_error(&e) as u8)
        }
    }
}
