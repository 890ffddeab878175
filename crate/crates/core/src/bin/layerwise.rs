//! Command-line front end.
//!
//! Exit codes: 0 success, 2 invalid configuration or usage, 3 unreadable or
//! malformed data, 4 any other runtime failure.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use layerwise::checkpoint::{Checkpoint, Model};
use layerwise::config::{ConfigBuilder, DATA_DIR_ENV};
use layerwise::error::{Error, Result};
use layerwise::metrics::{
    evaluate, export_error_curves, export_trace, idle_time_report, import_trace, speedup, total_non_busy,
    FinetuneRecord,
};
use layerwise::pipeline::{
    model_from_checkpoint, prepare_data, pretrained_checkpoint, run_end_to_end, run_finetune, run_pretrain,
    write_run, Algorithm,
};
use layerwise::{unfold, TrainingConfig};

const DEFAULT_DATA_DIR: &str = "data/mnist-subset";

#[derive(Parser)]
#[command(name = "layerwise", version, about = "Greedy and synchronized layer-wise pre-training of deep autoencoders")]
struct Cli {
    /// Directory that relative data paths are resolved against
    /// [default: $LAYERWISE_DATA_DIR, else data/mnist-subset]
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Configuration file (dotted keys, TOML syntax)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from a built-in preset: `paper` or `desk`
    #[arg(long)]
    preset: Option<String>,
    /// Override a single key, e.g. `--set train.seed=7` (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Name of the run directory under the output dir
    #[arg(long)]
    run_id: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train the layer stack and write checkpoints, trace and summary
    Pretrain {
        #[arg(long, default_value = "sync")]
        algo: String,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Validate the configuration and print the schedule without training
        #[arg(long)]
        dry_run: bool,
    },
    /// Fine-tune a checkpoint with backpropagation
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Epochs to run [default: train.finetune_epochs]
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Report reconstruction errors of a checkpoint on train/valid/test
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Write reconstructed test images as CSV rows
        #[arg(long)]
        dump_reconstructions: Option<PathBuf>,
        /// Number of test images to dump
        #[arg(long, default_value_t = 20)]
        dump_count: usize,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run greedy and synchronized pipelines end to end and compare them
    Compare {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Convert a trace into error curves and print the idle-time report
    TraceExport {
        #[arg(long)]
        trace: PathBuf,
        /// Output CSV of per-epoch errors
        #[arg(long)]
        curves: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::Data(_) => 3,
        _ => 4,
    }
}

fn data_dir(cli: &Option<PathBuf>) -> PathBuf {
    cli.clone()
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR))
}

fn load_config(args: &ConfigArgs, data_dir: &Path) -> Result<(TrainingConfig, String)> {
    let mut b = match &args.preset {
        Some(p) => ConfigBuilder::preset(p)?,
        None => ConfigBuilder::new(),
    };
    if let Some(path) = &args.config {
        b.merge_file(path)?;
    }
    for s in &args.overrides {
        b.set(s)?;
    }
    let cfg = b.build(Some(data_dir))?;
    Ok((cfg, b.echo()))
}

fn run_dir(cfg: &TrainingConfig, args: &ConfigArgs, default: String) -> PathBuf {
    cfg.output_dir.join(args.run_id.clone().unwrap_or(default))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run(cli: Cli) -> Result<()> {
    let data_dir = data_dir(&cli.data_dir);
    match cli.command {
        Command::Pretrain { algo, cfg, dry_run } => {
            let algorithm: Algorithm = algo.parse()?;
            let (config, echo) = load_config(&cfg, &data_dir)?;
            if dry_run {
                println!("algorithm {algorithm}, arch {:?}, seed {}", config.arch, config.seed);
                print!("{}", config.describe_schedule());
                return Ok(());
            }
            let data = prepare_data(&config.data)?;
            let pre = run_pretrain(&config, algorithm, &data.train.images, &data.valid.images)?;
            let dir = run_dir(&config, &cfg, format!("pretrain-{algorithm}-{}", config.hash()));
            pretrained_checkpoint(&config, &pre).save(&dir.join("checkpoints").join("pretrained.ckpt"))?;
            export_trace(&pre.trace, &dir.join("trace.csv"))?;
            export_error_curves(&pre.trace, &[], &dir.join("curves.csv"))?;
            write_file(&dir.join("config.toml"), &echo)?;
            let sae = unfold(&pre.layers)?;
            let summary = format!(
                "algorithm = \"{algorithm}\"\npretrain_wall_s = {}\nvalid_err = {}\nconfig_hash = \"{}\"\nseed = {}\n",
                pre.wall.as_secs_f64(),
                evaluate(&sae, &data.valid.images)?,
                config.hash(),
                config.seed
            );
            write_file(&dir.join("summary.toml"), &summary)?;
            println!("pre-training took {:.2}s; artefacts in {}", pre.wall.as_secs_f64(), dir.display());
            Ok(())
        }
        Command::Finetune { checkpoint, epochs, cfg } => {
            let (config, echo) = load_config(&cfg, &data_dir)?;
            let ck = Checkpoint::load(&checkpoint)?;
            let start = match ck.model {
                Model::RbmStack(_) => 0,
                Model::Autoencoder(_) => ck.epoch as usize,
            };
            let mut sae = model_from_checkpoint(&ck)?;
            let data = prepare_data(&config.data)?;
            let dir = run_dir(&config, &cfg, format!("finetune-{}", config.hash()));
            let ckpt_dir = dir.join("checkpoints");
            let epochs = epochs.unwrap_or(config.finetune_epochs);
            let records = run_finetune(
                &mut sae,
                &config,
                &data.train.images,
                &data.valid.images,
                start,
                epochs,
                |epoch, model| {
                    Checkpoint {
                        seed: config.seed,
                        epoch: epoch as u64,
                        model: Model::Autoencoder(model.clone()),
                    }
                    .save(&ckpt_dir.join(format!("finetune-{epoch:03}.ckpt")))
                },
            )?;
            let final_ck = Checkpoint {
                seed: config.seed,
                epoch: (start + epochs) as u64,
                model: Model::Autoencoder(sae.clone()),
            };
            final_ck.save(&ckpt_dir.join("final.ckpt"))?;
            write_file(&dir.join("config.toml"), &echo)?;
            write_finetune_log(&dir.join("finetune.csv"), &records)?;
            for r in &records {
                println!("epoch {:>3}  train {:.4}  valid {:.4}", r.epoch, r.train_err, r.valid_err);
            }
            println!("test error {:.4}; model in {}", evaluate(&sae, &data.test.images)?, ckpt_dir.display());
            Ok(())
        }
        Command::Eval {
            checkpoint,
            dump_reconstructions,
            dump_count,
            cfg,
        } => {
            let (config, _) = load_config(&cfg, &data_dir)?;
            let sae = model_from_checkpoint(&Checkpoint::load(&checkpoint)?)?;
            let data = prepare_data(&config.data)?;
            println!("train {:.4}", evaluate(&sae, &data.train.images)?);
            println!("valid {:.4}", evaluate(&sae, &data.valid.images)?);
            println!("test  {:.4}", evaluate(&sae, &data.test.images)?);
            if let Some(path) = dump_reconstructions {
                let n = dump_count.min(data.test.len());
                let head = data.test.images.head(n);
                let recon = sae.reconstruct(&head)?;
                let mut out = String::new();
                for i in 0..n {
                    let row: Vec<String> = recon.row(i).iter().map(|x| format!("{x:.4}")).collect();
                    out.push_str(&format!("{},{}\n", data.test.labels[i], row.join(",")));
                }
                write_file(&path, &out)?;
            }
            Ok(())
        }
        Command::Compare { cfg } => {
            let (config, echo) = load_config(&cfg, &data_dir)?;
            let data = prepare_data(&config.data)?;
            let base = run_dir(&config, &cfg, format!("compare-{}", config.hash()));
            let mut reports = Vec::new();
            for alg in [Algorithm::Greedy, Algorithm::Sync] {
                let out = run_end_to_end(&config, alg, &data)?;
                write_run(&base.join(alg.to_string()), &config, &echo, &out)?;
                let idle = total_non_busy(&idle_time_report(&out.pretrain.trace)?);
                reports.push((out.report, idle));
            }
            let s = speedup(&reports[0].0, &reports[1].0)?;
            let mut stdout = std::io::stdout().lock();
            let _ = writeln!(
                stdout,
                "{:<8} {:>10} {:>10} {:>10} {:>12} {:>12} {:>10} {:>10}",
                "algo", "train_err", "valid_err", "test_err", "pretrain_s", "finetune_s", "total_s", "idle_s"
            );
            for (r, idle) in &reports {
                let _ = writeln!(
                    stdout,
                    "{:<8} {:>10.4} {:>10.4} {:>10.4} {:>12.2} {:>12.2} {:>10.2} {:>10.2}",
                    r.algorithm,
                    r.train_err,
                    r.valid_err,
                    r.test_err,
                    r.pretrain_wall_s,
                    r.finetune_wall_s,
                    r.total_wall_s(),
                    idle.as_secs_f64()
                );
            }
            let _ = writeln!(
                stdout,
                "speedup (pre-training only) {:.2}%\nspeedup (total time)        {:.2}%",
                100.0 * s.pretrain,
                100.0 * s.total
            );
            let _ = writeln!(stdout, "artefacts in {}", base.display());
            Ok(())
        }
        Command::TraceExport { trace, curves } => {
            let events = import_trace(&trace)?;
            export_error_curves(&events, &[], &curves)?;
            println!("{:<7} {:>10} {:>10} {:>10}", "worker", "busy_s", "waiting_s", "idle_s");
            let report = idle_time_report(&events)?;
            for w in &report {
                println!(
                    "{:<7} {:>10.3} {:>10.3} {:>10.3}",
                    w.worker,
                    w.busy.as_secs_f64(),
                    w.waiting.as_secs_f64(),
                    w.idle.as_secs_f64()
                );
            }
            println!("total non-busy {:.3}s", total_non_busy(&report).as_secs_f64());
            Ok(())
        }
    }
}

fn write_finetune_log(path: &Path, records: &[FinetuneRecord]) -> Result<()> {
    let mut out = String::from("epoch,train_err,valid_err\n");
    for r in records {
        out.push_str(&format!("{},{},{}\n", r.epoch, r.train_err, r.valid_err));
    }
    write_file(path, &out)
}
