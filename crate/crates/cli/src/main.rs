use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use lipembed::experiment::{self, ExperimentConfig, ExperimentError, WitnessRequest, CONFIG_FILE};

#[derive(Parser)]
#[command(name = "lipembed", version, about = "Equivariant Lipschitz embeddings of flows: run, verify, witness, export")]
struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true, env = "LIPEMBED_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON configuration file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Bundled configuration (logistic, logistic_short, rotation).
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the embedding for a configuration and check it.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        delta0: Option<f64>,
        #[arg(long)]
        max_stages: Option<usize>,
        /// Output directory for the report and artifacts.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the JSON report instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Re-check the artifacts of a run without rebuilding the map.
    Verify {
        /// Run directory or samples file.
        artifact: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        json: bool,
    },
    /// Print an explicit generic family with its exact rank certificate.
    Witness {
        #[command(subcommand)]
        kind: WitnessKind,
        #[arg(long, global = true)]
        json: bool,
    },
    /// Write plot-ready CSV files for a run directory.
    Export {
        run_dir: PathBuf,
        /// Defaults to `<run_dir>/csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum WitnessKind {
    /// Staircase family: e, Du_1, ..., Du_m independent in R^l.
    #[command(name = "e_du", alias = "e-du")]
    EDu {
        #[arg(long)]
        l: usize,
        #[arg(long)]
        m: usize,
    },
    /// Two-spike family: restrictions to [1, l] and [alpha, alpha + l - 1] independent.
    Shifted {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        l: usize,
        #[arg(long)]
        m: usize,
        /// A single alpha; all admissible values when omitted.
        #[arg(long)]
        alpha: Option<usize>,
    },
}

fn load_config(args: &ConfigArgs, fallback: Option<&Path>) -> Result<ExperimentConfig, ExperimentError> {
    match (&args.config, &args.preset) {
        (Some(p), _) => ExperimentConfig::load(p),
        (None, Some(name)) => ExperimentConfig::preset(name),
        (None, None) => match fallback {
            Some(p) if p.is_file() => ExperimentConfig::load(p),
            _ => Err(ExperimentError::Usage("pass --config FILE or --preset NAME".into())),
        },
    }
}

fn print_report(report: &experiment::Report, json: bool) {
    if json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_text());
    }
}

fn execute(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Run { cfg, seed, delta0, max_stages, out, json } => {
            let mut config = load_config(&cfg, None)?;
            if let Some(s) = seed {
                config.seed = s;
            }
            if let Some(d) = delta0 {
                config.delta0 = d;
            }
            if max_stages.is_some() {
                config.schedule.max_stages = max_stages;
            }
            config.validate()?;
            let dir = out.or_else(|| config.output_dir.clone()).unwrap_or_else(|| PathBuf::from("lipembed-run"));
            let outcome = experiment::run(&config)?;
            outcome.write(&dir).with_context(|| format!("writing artifacts to {}", dir.display()))?;
            print_report(&outcome.report, json);
            if !json {
                println!("artifacts: {}", dir.display());
            }
            Ok(outcome.report.exit_code())
        }
        Command::Verify { artifact, cfg, json } => {
            let dir = if artifact.is_dir() { artifact.clone() } else { artifact.parent().map(Path::to_path_buf).unwrap_or_default() };
            let config = load_config(&cfg, Some(&dir.join(CONFIG_FILE)))?;
            let samples = experiment::load_samples(&artifact)?;
            let report = experiment::verify(&samples, &config)?;
            print_report(&report, json);
            Ok(report.exit_code())
        }
        Command::Witness { kind, json } => {
            let req = match kind {
                WitnessKind::EDu { l, m } => WitnessRequest::EDu { l, m },
                WitnessKind::Shifted { n, l, m, alpha } => WitnessRequest::Shifted { n, l, m, alpha },
            };
            let (report, families) = experiment::witness(req)?;
            if json {
                let fams: Vec<_> = families.iter().map(|f| serde_json::to_value(f).expect("family serializes")).collect();
                let doc = serde_json::json!({ "report": report, "families": fams });
                println!("{}", serde_json::to_string_pretty(&doc)?);
            } else {
                for f in &families {
                    for (i, v) in f.vectors.iter().enumerate() {
                        let row: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
                        println!("u{} = [{}]", i + 1, row.join(", "));
                    }
                }
                print!("{}", report.to_text());
            }
            Ok(report.exit_code())
        }
        Command::Export { run_dir, out } => {
            let out = out.unwrap_or_else(|| run_dir.join("csv"));
            for p in experiment::export(&run_dir, &out)? {
                println!("{}", p.display());
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<ExperimentError>().map_or(1, ExperimentError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
