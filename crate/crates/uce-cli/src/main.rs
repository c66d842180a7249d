//! Experiment CLI: dataset generation, training, evaluation, and ablation
//! sweeps.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 diverged run.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use uce_core::data::{self, DatasetConfig, DatasetMeta};
use uce_core::error::Error;
use uce_core::harness::{
    self, apply_config_text, EvalOptions, IoPaths, LossMode, RunConfig, SweepAxis, SweepSpec,
};
use uce_core::metrics::MetricsReport;
use uce_core::network::SegNet;

#[derive(Parser)]
#[command(
    name = "uce",
    about = "Uncertainty-aware cross-entropy training laboratory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic segmentation dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        num_train: usize,
        #[arg(long, default_value_t = 50)]
        num_val: usize,
        /// Image size as HxW, e.g. 64x64.
        #[arg(long, default_value = "64x64")]
        size: String,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 0.1)]
        pixel_noise: f32,
        #[arg(long, default_value_t = 0.05)]
        label_noise: f32,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Train a segmentation network.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional key=value config file; explicit flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = ["ce", "uce"])]
        loss: Option<String>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<usize>,
        #[arg(long)]
        dropout: Option<f32>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint and render per-image maps.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = ["train", "val"], default_value = "val")]
        split: String,
        #[arg(long, default_value_t = 10)]
        eval_beta: usize,
        /// Directory for the rendered PGM maps (prediction, accuracy,
        /// uncertainty, confidence).
        #[arg(long)]
        render: Option<PathBuf>,
    },
    /// Grid ablation over one axis.
    Sweep {
        #[arg(long, value_parser = ["alpha", "beta", "dropout", "lr"])]
        axis: String,
        /// Comma-separated values, e.g. 0,1,10.
        #[arg(long)]
        values: String,
        /// Repetitions per value (seeds base.seed, base.seed+1, ...).
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        /// Base key=value config file; must name data_dir.
        #[arg(long)]
        base: PathBuf,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Precondition(_) => 2,
        Error::Data(_) | Error::Format(_) | Error::Io(_) => 3,
        Error::Diverged { .. } => 4,
        _ => 1,
    }
}

fn parse_size(size: &str) -> Result<(usize, usize), Error> {
    let (h, w) = size
        .split_once('x')
        .ok_or_else(|| Error::Config(format!("--size wants HxW, got {size:?}")))?;
    let h = h
        .parse()
        .map_err(|_| Error::Config(format!("bad height in {size:?}")))?;
    let w = w
        .parse()
        .map_err(|_| Error::Config(format!("bad width in {size:?}")))?;
    Ok((h, w))
}

fn read_config_file(path: &PathBuf, cfg: &mut RunConfig, paths: &mut IoPaths) -> Result<(), Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    apply_config_text(cfg, paths, &text)
}

fn print_report(report: &MetricsReport, classes: usize) {
    println!("{}", MetricsReport::csv_header(classes));
    println!("{}", report.csv_row());
}

fn run() -> Result<(), Error> {
    match Cli::parse().command {
        Command::GenData {
            out,
            num_train,
            num_val,
            size,
            classes,
            pixel_noise,
            label_noise,
            seed,
        } => {
            let (height, width) = parse_size(&size)?;
            let base = DatasetConfig {
                num_images: num_train + num_val,
                height,
                width,
                classes,
                pixel_noise_std: pixel_noise,
                boundary_label_noise: label_noise,
                seed,
                ..Default::default()
            };
            let samples = data::generate(&base)?;
            std::fs::create_dir_all(&out)?;
            data::save_split(&out, "train", &samples[..num_train])?;
            data::save_split(&out, "val", &samples[num_train..])?;
            data::write_manifest(
                &out,
                &DatasetMeta {
                    classes,
                    height,
                    width,
                    train: num_train,
                    val: num_val,
                },
            )?;
            println!(
                "wrote {num_train} train + {num_val} val images ({height}x{width}, {classes} classes) to {}",
                out.display()
            );
            Ok(())
        }
        Command::Train {
            data,
            out,
            config,
            loss,
            alpha,
            beta,
            dropout,
            epochs,
            batch,
            lr,
            seed,
        } => {
            let mut cfg = RunConfig::default();
            let mut paths = IoPaths::default();
            if let Some(path) = &config {
                read_config_file(path, &mut cfg, &mut paths)?;
            }
            if let Some(loss) = loss {
                cfg.train.loss_mode = LossMode::parse(&loss)?;
            }
            if let Some(alpha) = alpha {
                cfg.train.uce.alpha = alpha;
            }
            if let Some(beta) = beta {
                cfg.train.uce.beta = beta;
            }
            if let Some(dropout) = dropout {
                cfg.dropout_ratio = dropout;
            }
            if let Some(epochs) = epochs {
                cfg.train.epochs = epochs;
            }
            if let Some(batch) = batch {
                cfg.train.batch_size = batch;
            }
            if let Some(lr) = lr {
                cfg.train.lr_base = lr;
            }
            if let Some(seed) = seed {
                cfg.train.seed = seed;
            }
            cfg.validate()?;
            let outcome = harness::train(&cfg, &data, &out)?;
            println!("checkpoint: {}", out.join("model.ckpt").display());
            println!("run log:    {}", out.join("run.csv").display());
            if let Some(report) = &outcome.final_report {
                println!(
                    "final val: miou={:.4} ece={:.4} munc={:.4}",
                    report.miou, report.ece, report.munc
                );
            }
            Ok(())
        }
        Command::Eval {
            ckpt,
            data,
            split,
            eval_beta,
            render,
        } => {
            let mut net = SegNet::load(&ckpt)?;
            // dropout ratio is not stored in the checkpoint; recover it from
            // the config.txt the train command writes next to it
            if let Some(dir) = ckpt.parent() {
                let sidecar = dir.join("config.txt");
                if sidecar.is_file() {
                    let mut cfg = RunConfig::default();
                    let mut paths = IoPaths::default();
                    read_config_file(&sidecar, &mut cfg, &mut paths)?;
                    net.set_dropout_ratio(cfg.dropout_ratio)?;
                }
            }
            let (meta, samples) = data::load_split(&data, &split)?;
            if meta.classes != net.num_classes() {
                return Err(Error::Data(format!(
                    "checkpoint has {} classes, dataset {}",
                    net.num_classes(),
                    meta.classes
                )));
            }
            let opts = EvalOptions {
                eval_beta,
                ..Default::default()
            };
            let (report, artifacts) = harness::evaluate(&net, &samples, meta.classes, &opts)?;
            if let Some(render) = render {
                harness::write_eval_renders(&render, &artifacts)?;
                println!("renders under {}", render.display());
            }
            print_report(&report, meta.classes);
            Ok(())
        }
        Command::Sweep {
            axis,
            values,
            seeds,
            base,
        } => {
            let axis = SweepAxis::parse(&axis)?;
            let values = values
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad sweep value {v:?}")))
                })
                .collect::<Result<Vec<f64>, Error>>()?;
            let mut cfg = RunConfig::default();
            let mut paths = IoPaths::default();
            read_config_file(&base, &mut cfg, &mut paths)?;
            let data_dir = paths
                .data_dir
                .ok_or_else(|| Error::Config("sweep base config must set data_dir".into()))?;
            let (meta, train_samples) = data::load_split(&data_dir, "train")?;
            let (_, val_samples) = data::load_split(&data_dir, "val")?;
            let spec = SweepSpec {
                axis,
                values,
                repetitions: seeds,
                base: cfg,
            };
            let table = harness::sweep(&spec, meta.classes, &train_samples, &val_samples)?;
            let csv = table.to_csv();
            print!("{csv}");
            if let Some(out_dir) = paths.out_dir {
                std::fs::create_dir_all(&out_dir)?;
                std::fs::write(out_dir.join("sweep.csv"), &csv)?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
