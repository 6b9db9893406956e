//! `latentbench` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::{
    cell_seed, emit_table, encoder_seed, evaluate_classifier, load_checkpoint, load_classifier,
    parse_results_csv, prepare_data, resolve_layout, run_grid_with, save_checkpoint, train_classifier, train_encoder,
    AnyModel, EncoderKind, ExperimentConfig, TableFormat,
};
use crate::classifiers::ClassifierKind;
use crate::dataprep::{gen_synthetic, load_processed, save_processed, write_csv, ProcessedDataset, SynthSpec};
use crate::error::{Error, Result};
use crate::vae::vae_project;
use crate::vit::vit_project;

#[derive(Debug, Parser)]
#[command(
    name = "latentbench",
    version,
    about = "Latent-space encoders and downstream classifiers for netflow intrusion data",
    arg_required_else_help = true
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Master seed (overrides run.seed)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides run.out)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Runs per grid cell, reported as means (overrides grid.repeats)
    #[arg(long, global = true)]
    repeats: Option<usize>,
    /// Override any config key, e.g. --set vae.epochs=10
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load a CSV (or processed file), drop fields, split, standardize, and
    /// write train and test processed files
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        train_out: Option<PathBuf>,
        #[arg(long)]
        test_out: Option<PathBuf>,
    },
    /// Generate a Gaussian-cluster dataset (.csv output writes CSV)
    GenSynth {
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        per_class: Option<usize>,
        #[arg(long)]
        separation: Option<f64>,
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train a VAE or ViT encoder on a processed train file
    TrainEncoder {
        #[arg(long)]
        encoder: EncoderKind,
        #[arg(long)]
        latent_dim: usize,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Project a processed file through a trained encoder
    Project {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train one classifier on a projected train file
    TrainClassifier {
        #[arg(long)]
        model: ClassifierKind,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score a trained classifier on a projected test file
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Run the full encoder x latent dim x classifier grid
    Grid,
    /// Re-render a results.csv
    Emit {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: TableFormat,
    },
}

/// Parses `argv` (including the program name) and runs the command.
/// Returns the process exit status.
pub fn cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let parsed = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(parsed) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn config(global: &Global) -> Result<ExperimentConfig> {
    let mut cfg = match &global.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    for s in &global.sets {
        cfg.set_assignment(s)?;
    }
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &global.out {
        cfg.out = out.clone();
    }
    if let Some(n) = global.repeats {
        cfg.repeats = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_out(cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))
}

fn or_out(cfg: &ExperimentConfig, given: Option<PathBuf>, default: &str) -> Result<PathBuf> {
    match given {
        Some(p) => Ok(p),
        None => {
            ensure_out(cfg)?;
            Ok(cfg.out.join(default))
        }
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = config(&cli.global)?;
    match cli.command {
        Command::Preprocess {
            input,
            train_out,
            test_out,
        } => {
            let mut cfg = cfg;
            cfg.data_path = Some(input);
            let data = prepare_data(&cfg)?;
            let train_out = or_out(&cfg, train_out, "train.lbds")?;
            let test_out = or_out(&cfg, test_out, "test.lbds")?;
            for (ds, path) in [(&data.train, &train_out), (&data.test, &test_out)] {
                let p = ProcessedDataset {
                    dataset: ds.clone(),
                    layout: Some(data.layout),
                    scaler: data.scaler.clone(),
                };
                save_processed(&p, path)?;
            }
            println!(
                "{} features -> {}x{} image, {} patches of {}x{}; train {} rows -> {}; test {} rows -> {}",
                data.layout.input_dim,
                data.layout.rows,
                data.layout.cols,
                data.layout.num_patches(),
                data.layout.patch_rows,
                data.layout.patch_cols,
                data.train.n(),
                train_out.display(),
                data.test.n(),
                test_out.display()
            );
        }
        Command::GenSynth {
            classes,
            dim,
            per_class,
            separation,
            rank,
            output,
        } => {
            let base = cfg.synth;
            let dim = dim.unwrap_or(base.dim);
            let spec = SynthSpec {
                num_classes: classes.unwrap_or(base.num_classes),
                dim,
                per_class: per_class.unwrap_or(base.per_class),
                separation: separation.unwrap_or(base.separation),
                informative_rank: rank.unwrap_or(base.informative_rank.min(dim)),
                seed: cli.global.seed.unwrap_or(base.seed),
            };
            let ds = gen_synthetic(&spec)?;
            let path = or_out(&cfg, output, "synth.lbds")?;
            if is_csv(&path) {
                write_csv(&ds, &path, &cfg.label_column)?;
            } else {
                let layout = resolve_layout(&cfg, ds.d(), None).ok();
                save_processed(
                    &ProcessedDataset {
                        dataset: ds.clone(),
                        layout,
                        scaler: None,
                    },
                    &path,
                )?;
            }
            println!("{} rows x {} features, {} classes -> {}", ds.n(), ds.d(), ds.num_classes(), path.display());
        }
        Command::TrainEncoder {
            encoder,
            latent_dim,
            train,
            output,
        } => {
            let p = load_processed(&train)?;
            let layout = resolve_layout(&cfg, p.dataset.d(), p.layout)?;
            let seed = encoder_seed(cfg.seed, encoder, latent_dim, 0);
            let (model, curve) = train_encoder(&cfg, encoder, latent_dim, &p.dataset, layout, seed)?;
            let default = format!("enc-{}-{latent_dim}.lbck", encoder.name().to_ascii_lowercase());
            let path = or_out(&cfg, output, &default)?;
            save_checkpoint(&model.into_any(), seed, &path)?;
            println!("loss per epoch: {}", fmt_curve(&curve));
            println!("checkpoint -> {}", path.display());
        }
        Command::Project {
            checkpoint,
            data,
            output,
        } => {
            let p = load_processed(&data)?;
            let latent = match load_checkpoint(&checkpoint)?.model {
                AnyModel::Vae(m) => vae_project(&m, &p.dataset)?,
                AnyModel::Vit(m) => vit_project(&m, &p.dataset)?,
                AnyModel::Classifier(_) => {
                    return Err(Error::Tag {
                        expected: "vae or vit".into(),
                        found: "classifier".into(),
                    })
                }
            };
            save_processed(
                &ProcessedDataset {
                    dataset: latent.clone(),
                    layout: None,
                    scaler: None,
                },
                &output,
            )?;
            println!("{} rows -> {} latent dims -> {}", latent.n(), latent.d(), output.display());
        }
        Command::TrainClassifier { model, train, output } => {
            let p = load_processed(&train)?;
            // The encoder behind the file is unknown here, so the seed only
            // depends on the model kind and latent width.
            let seed = cell_seed(cfg.seed, &[0, p.dataset.d() as u64, model as u64]);
            let (m, curve) = train_classifier(&cfg, model, &p.dataset, seed)?;
            let default = format!("clf-{}-{}.lbck", model.name().to_ascii_lowercase(), p.dataset.d());
            let path = or_out(&cfg, output, &default)?;
            save_checkpoint(&m.into(), seed, &path)?;
            println!("loss per epoch: {}", fmt_curve(&curve));
            println!("checkpoint -> {}", path.display());
        }
        Command::Evaluate { checkpoint, data } => {
            let m = load_classifier(&checkpoint)?;
            let p = load_processed(&data)?;
            let q = evaluate_classifier(&m, &p.dataset)?;
            println!(
                "{}\tAcc {:.2}\tPrc {:.2}\tRec {:.2}\tF1 {:.2}",
                m.kind(),
                q.acc,
                q.prc,
                q.rec,
                q.f1
            );
        }
        Command::Grid => {
            let table = run_grid_with(&cfg, &|c| {
                let m = c
                    .metrics
                    .map_or_else(|| format!("failed: {}", c.error.as_deref().unwrap_or("")), |q| format!("acc {:.2}", q.acc));
                eprintln!("{} dim {} {}: {m}", c.encoder, c.dim, c.classifier);
            })?;
            print!("{}", emit_table(&table, TableFormat::Markdown)?);
            eprintln!("results -> {}", cfg.out.display());
        }
        Command::Emit { results, format } => {
            let text = std::fs::read_to_string(&results).map_err(|e| Error::io(&results, e))?;
            print!("{}", emit_table(&parse_results_csv(&text)?, format)?);
        }
    }
    Ok(())
}

fn fmt_curve(curve: &[f64]) -> String {
    curve.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" ")
}
