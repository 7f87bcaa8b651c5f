use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use snippet_smc::cli::{load_config, run_config, sonar_demo_config, verify::run_verification};

#[derive(Parser)]
#[command(name = "snippet-smc", version, about = "Integrator-snippet SMC samplers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        replications: Option<usize>,
    },
    /// Run the built-in oracle suite and print a pass/fail table.
    Verify,
    /// Adaptive-stepsize logistic regression on a Sonar CSV.
    SonarDemo {
        csv: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn init_threads() -> Result<(), String> {
    if let Ok(v) = std::env::var("SNIPPET_SMC_THREADS") {
        let n: usize = v.parse().map_err(|_| format!("SNIPPET_SMC_THREADS={v:?} is not a thread count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Run { config, seed, out, replications } => load_config(&config).and_then(|mut cfg| {
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(r) = replications {
                cfg.replications = r;
            }
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            let summaries = run_config(&cfg, &out)?;
            for s in &summaries {
                println!(
                    "replication {}: logZ = {:.6}, iterations = {}, gradient evaluations = {}",
                    s.replication, s.log_z, s.iterations, s.gradient_evaluations
                );
            }
            Ok(())
        }),
        Command::Verify => {
            let report = run_verification();
            print!("{report}");
            if report.all_passed() {
                Ok(())
            } else {
                return ExitCode::FAILURE;
            }
        }
        Command::SonarDemo { csv, out } => {
            let cfg = sonar_demo_config(&csv);
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            run_config(&cfg, &out).map(|s| {
                let s = &s[0];
                println!(
                    "logZ = {:.4}, iterations = {}, final theta = {:?}, gradient evaluations = {}",
                    s.log_z, s.iterations, s.final_theta, s.gradient_evaluations
                );
                println!("trace written to {}", s.trace.display());
            })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
