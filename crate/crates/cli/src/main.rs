use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gated_vae::data::write_archive;
use gated_vae::experiment::{
    compare, evaluate_model, finetune, load_dataset, load_model, log_csv, reconstruction_bce, render_figures, train,
    write_eval_outputs, write_run_metadata, CompareConfig, ExperimentConfig, Preset,
};
use gated_vae::metrics::select_eval_rows;
use gated_vae::models::Variant;
use gated_vae::reporting::TraversalSpec;
use gated_vae::Error;

#[derive(Parser)]
#[command(name = "gvae", version, about = "Gated partitioned-latent VAEs on dSprites")]
struct Cli {
    /// JSON config; `compare` takes a comparison config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in settings used when no config is given.
    #[arg(long, global = true, value_enum, default_value = "desk")]
    preset: PresetArg,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Log per-epoch progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Paper,
    Desk,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Beta,
    Info,
    Dip2,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model, writing checkpoint.gvae and loss.csv.
    Train {
        /// Objective, when building the config from a preset.
        #[arg(long, value_enum, default_value = "beta")]
        variant: VariantArg,
        /// Train the plain baseline (target = input, no gate).
        #[arg(long)]
        ungated: bool,
    },
    /// Score a checkpoint with Lasso and random-forest regressors.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Retrain the decoder only, encoder frozen.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Render latent traversals and a reconstruction panel.
    Traverse {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Latent dimensions to sweep, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5,6,7")]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 9)]
        steps: usize,
        #[arg(long, default_value_t = 2.0)]
        range: f64,
    },
    /// Train and score every (variant, gated) cell over several seeds.
    Compare {
        /// Runs per cell, when building the config from a preset.
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Write the configured dataset as an NPZ archive.
    GenData,
}

fn preset(p: PresetArg) -> Preset {
    match p {
        PresetArg::Paper => Preset::Paper,
        PresetArg::Desk => Preset::Desk,
    }
}

fn experiment_config(cli: &Cli, variant: Option<(VariantArg, bool)>) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => {
            let (v, ungated) = variant.unwrap_or((VariantArg::Beta, false));
            let v = match v {
                VariantArg::Beta => Variant::BETA_DEFAULT,
                VariantArg::Info => Variant::INFO_DEFAULT,
                VariantArg::Dip2 => Variant::DIP2_DEFAULT,
            };
            ExperimentConfig {
                gated: !ungated,
                ..ExperimentConfig::preset(preset(cli.preset), v)
            }
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Train { variant, ungated } => {
            let cfg = experiment_config(cli, Some((*variant, *ungated)))?;
            let ds = load_dataset(&cfg.dataset)?;
            let outcome = train(&cfg, &ds, Some(&cfg.out_dir))?;
            let last = outcome.log.last().map_or(f64::NAN, |r| r.total);
            println!("trained {} steps, final loss {last:.3}", outcome.log.len());
            println!("checkpoint: {}", cfg.out_dir.join("checkpoint.gvae").display());
        }
        Command::Eval { checkpoint } => {
            let cfg = experiment_config(cli, None)?;
            let ds = load_dataset(&cfg.dataset)?;
            let mut model = load_model(&cfg, checkpoint)?;
            write_run_metadata(&cfg, &cfg.out_dir, "eval")?;
            let reports = evaluate_model(&cfg, &mut model, &ds)?;
            write_eval_outputs(&cfg, &reports, &cfg.out_dir)?;
            for r in &reports {
                println!(
                    "{:<6} disent {:.3}  complete {:.3}  nrmse {:.3}",
                    r.regressor.name(),
                    r.weighted_disentanglement,
                    r.mean_completeness,
                    r.mean_nrmse
                );
            }
        }
        Command::Finetune { checkpoint } => {
            let cfg = experiment_config(cli, None)?;
            let ds = load_dataset(&cfg.dataset)?;
            let mut model = load_model(&cfg, checkpoint)?;
            write_run_metadata(&cfg, &cfg.out_dir, "finetune")?;
            let rows = select_eval_rows(ds.len(), cfg.eval.size, cfg.seed);
            let before = reconstruction_bce(&mut model, &ds, &rows)?;
            let log = finetune(&cfg, &mut model, &ds)?;
            let after = reconstruction_bce(&mut model, &ds, &rows)?;
            let path = cfg.out_dir.join("checkpoint.gvae");
            model.to_checkpoint().save(&path)?;
            let log_path = cfg.out_dir.join("finetune.csv");
            std::fs::write(&log_path, log_csv(&log)).map_err(|e| Error::Io {
                path: log_path.clone(),
                source: e,
            })?;
            println!("reconstruction BCE {before:.3} -> {after:.3}");
            println!("checkpoint: {}", path.display());
        }
        Command::Traverse {
            checkpoint,
            dims,
            steps,
            range,
        } => {
            let cfg = experiment_config(cli, None)?;
            let ds = load_dataset(&cfg.dataset)?;
            let mut model = load_model(&cfg, checkpoint)?;
            let spec = TraversalSpec {
                dims: dims.clone(),
                range: *range,
                steps: *steps,
            };
            write_run_metadata(&cfg, &cfg.out_dir, "traverse")?;
            render_figures(&cfg, &mut model, &ds, &spec, &cfg.out_dir)?;
            println!("figures in {}", cfg.out_dir.display());
        }
        Command::Compare { runs } => {
            let mut cfg = match &cli.config {
                Some(path) => CompareConfig::load(path)?,
                None => CompareConfig::preset(preset(cli.preset)),
            };
            if let Some(runs) = runs {
                cfg.runs = *runs;
            }
            if let Some(seed) = cli.seed {
                cfg.base.seed = seed;
            }
            if let Some(out) = &cli.out {
                cfg.base.out_dir = out.clone();
            }
            let ds = load_dataset(&cfg.base.dataset)?;
            let outcome = compare(&cfg, &ds)?;
            let table = std::fs::read_to_string(cfg.base.out_dir.join("table.txt")).unwrap_or_default();
            print!("{table}");
            for f in &outcome.failures {
                eprintln!("failed: {} gated={} seed={}: {}", f.model, f.gated, f.seed, f.error);
            }
        }
        Command::GenData => {
            let cfg = experiment_config(cli, None)?;
            let ds = load_dataset(&cfg.dataset)?;
            let path = archive_path(&cfg.out_dir);
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| Error::Io {
                    path: parent.to_path_buf(),
                    source: e,
                })?;
            }
            write_archive(&ds, &path)?;
            println!("wrote {} images to {}", ds.len(), path.display());
        }
    }
    Ok(())
}

/// `--out` may name the archive itself or a directory to put it in.
fn archive_path(out: &Path) -> PathBuf {
    if out.extension().is_some_and(|e| e == "npz") {
        out.to_path_buf()
    } else {
        out.join("dataset.npz")
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Contract(_) | Error::Dimension(_) | Error::Sampling(_) => 2,
        Error::Io { .. } | Error::Format { .. } | Error::Domain(_) => 3,
        Error::Numeric(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
