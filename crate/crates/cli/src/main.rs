use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use yieldpaint::harness::report::read_report_csv;
use yieldpaint::harness::{
    export_pairs, run_experiment, DataConfig, ExperimentConfig, RunOutcome, Stage,
};
use yieldpaint::surface::save_csv;
use yieldpaint::synthetic::generate_synthetic;

/// Reconstruct sparse yield surfaces with TV inpainting, thin plate splines
/// and denoising autoencoders, and benchmark the three.
///
/// Seed precedence: `--seed`, then `YIELDPAINT_SEED`, then the config file.
#[derive(Parser, Debug)]
#[command(name = "yieldpaint", version, about)]
struct Cli {
    /// Experiment config (TOML, or JSON). Built-in defaults when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override the global seed.
    #[arg(short, long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic surface dataset to `<out>/surfaces.csv`.
    ///
    /// Here `--seed` seeds the generator rather than the experiment.
    Generate {
        /// Number of surfaces (default: the config's synthetic count).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Split and mask the dataset, writing `<out>/masks/<kind>.csv`.
    Mask,
    /// Train the configured autoencoders and write checkpoints.
    Train,
    /// Evaluate every method, loading autoencoders from checkpoints.
    Evaluate,
    /// Print the report table from `<out>/report.csv`.
    Report,
    /// Train and evaluate end to end.
    Run,
    /// Print the effective config as TOML.
    Config,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply_env()?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn generate(cfg: &ExperimentConfig, n: Option<usize>, seed: Option<u64>) -> Result<PathBuf> {
    let mut synth = cfg.synthetic.clone();
    if let Some(seed) = seed {
        synth.seed = seed;
    }
    let n = match (n, &cfg.data) {
        (Some(n), _) => n,
        (None, DataConfig::Synthetic { n_surfaces }) => *n_surfaces,
        (None, DataConfig::Csv { .. }) => bail!("--n is required when the config reads a CSV"),
    };
    let data = generate_synthetic(&synth, n)?;
    fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    let path = cfg.out_dir.join("surfaces.csv");
    save_csv(&data, &path).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn summarise(outcome: &RunOutcome, out: &Path) {
    for run in &outcome.manifest.runs {
        let mut line = format!(
            "{:<7} {:<8} {:>8.1}s",
            run.method, run.masking, run.wall_seconds
        );
        if let Some(l) = run.selected_lambda {
            line.push_str(&format!("  lambda={l}"));
        }
        if let (Some(best), Some(ran)) = (run.best_epoch, run.epochs_run) {
            line.push_str(&format!("  best_epoch={best}/{ran}"));
        }
        eprintln!("{line}");
    }
    eprintln!("wrote {}", out.join("manifest.json").display());
}

fn print_report(out: &Path) -> Result<()> {
    let path = out.join("report.csv");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let rows = read_report_csv(&text)?;
    println!(
        "{:<7} {:<8} {:>9} {:>9} {:>8} {:>8} {:>9}",
        "method", "masking", "mae_bps", "rmse_bps", "mae_%", "rmse_%", "mono_%"
    );
    for (method, masking, v) in rows {
        println!(
            "{method:<7} {masking:<8} {:>9} {:>9} {:>8} {:>8} {:>9}",
            v[0], v[1], v[2], v[3], v[4]
        );
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match cli.command {
        Command::Generate { n } => {
            let path = generate(
                &cfg,
                n,
                cli.seed
                    .or_else(|| std::env::var("YIELDPAINT_SEED").ok()?.parse().ok()),
            )?;
            eprintln!("wrote {}", path.display());
        }
        Command::Mask => {
            for path in export_pairs(&cfg)? {
                eprintln!("wrote {}", path.display());
            }
        }
        Command::Train => summarise(&run_experiment(&cfg, Stage::Train)?, &cfg.out_dir),
        Command::Evaluate => {
            summarise(&run_experiment(&cfg, Stage::Evaluate)?, &cfg.out_dir);
            print_report(&cfg.out_dir)?;
        }
        Command::Run => {
            summarise(&run_experiment(&cfg, Stage::Full)?, &cfg.out_dir);
            print_report(&cfg.out_dir)?;
        }
        Command::Report => print_report(&cfg.out_dir)?,
        Command::Config => print!("{}", cfg.to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
