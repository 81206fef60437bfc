//! `mstgcn`: train, evaluate, fuse, inspect and probe skeleton action
//! recognition networks.
//!
//! Exit codes: 0 success, 1 invalid configuration or data, 2 I/O failure.

mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mstgcn::data::{generate_synthetic, load_dataset, save_dataset, Dataset, SyntheticSpec};
use mstgcn::graph::TopologyKind;
use mstgcn::network::{MstGcn, Preset, ProbeAxis};
use mstgcn::tensor::Real;
use mstgcn::train::{evaluate, fuse_scores, Metrics, ScoreFile, TrainState};
use serde::Serialize;

use config::{ConfigError, Precision, RunConfig};

#[derive(Parser)]
#[command(name = "mstgcn", version, about = "Multi-scale spatial temporal graph convolution networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and write its checkpoint, log and summary.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Training SKL1 file (overrides `data.train`).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Validation SKL1 file (overrides `data.val`).
        #[arg(long)]
        val: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a dataset with a trained checkpoint.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Where to write per-sample class probabilities.
        #[arg(long)]
        scores_out: Option<PathBuf>,
    },
    /// Average score files from independently trained streams.
    Fuse {
        /// Score files written by `eval --scores-out`.
        #[arg(num_args = 1.., required = true)]
        scores: Vec<PathBuf>,
        /// Where to write the fused scores.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parameter-count report.
    Inspect {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Receptive-field report from impulse probes.
    Probe {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = "temporal")]
        axis: ProbeAxis,
        /// Impulse joint (spatial) or frame (temporal); defaults to the
        /// center joint or the middle frame.
        #[arg(long)]
        source: Option<usize>,
        /// Probe sequence length.
        #[arg(long, default_value_t = 64)]
        frames: usize,
    },
    /// Write a synthetic SKL1 dataset.
    Gensynth {
        #[arg(long)]
        classes: usize,
        /// Samples per class.
        #[arg(long)]
        samples: usize,
        #[arg(long, default_value = "chain:9")]
        topology: TopologyKind,
        #[arg(long, default_value_t = 64)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Coordinate noise standard deviation.
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value_t = 1)]
        persons: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

/// A model given either by a config file or by a preset name.
#[derive(Args)]
struct ModelArgs {
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Preset such as `mstgcn-30c-4s`.
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long, default_value = "ntu25", requires = "preset")]
    topology: TopologyKind,
    #[arg(long, default_value_t = 60, requires = "preset")]
    classes: usize,
}

impl ModelArgs {
    fn run_config(&self) -> Result<RunConfig> {
        match (&self.config, self.preset) {
            (Some(path), _) => RunConfig::load(path),
            (None, Some(p)) => Ok(RunConfig::for_preset(p, self.topology, self.classes)),
            (None, None) => bail!("either --config or --preset is required"),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Caps the worker pool at `MSTGCN_THREADS` when set.
fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("MSTGCN_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| ConfigError(vec![format!("MSTGCN_THREADS must be a positive integer, got {value:?}")]))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("configuring the thread pool")
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<std::io::Error>() {
            return 2;
        }
        if let Some(err) = cause.downcast_ref::<mstgcn::Error>() {
            return match err {
                mstgcn::Error::Io(_) | mstgcn::Error::Format { .. } => 2,
                _ => 1,
            };
        }
    }
    1
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { config, data, val, out } => {
            let cfg = RunConfig::load(&config)?;
            let train = data.or_else(|| cfg.data.train.clone());
            let val = val.or_else(|| cfg.data.val.clone());
            let Some(train) = train else {
                return Err(ConfigError(vec!["no training data: pass --data or set data.train".into()]).into());
            };
            match cfg.precision {
                Precision::F32 => cmd_train::<f32>(&cfg, &train, val.as_deref(), &out),
                Precision::F64 => cmd_train::<f64>(&cfg, &train, val.as_deref(), &out),
            }
        }
        Command::Eval {
            config,
            checkpoint,
            data,
            scores_out,
        } => {
            let cfg = RunConfig::load(&config)?;
            match cfg.precision {
                Precision::F32 => cmd_eval::<f32>(&cfg, &checkpoint, &data, scores_out.as_deref()),
                Precision::F64 => cmd_eval::<f64>(&cfg, &checkpoint, &data, scores_out.as_deref()),
            }
        }
        Command::Fuse { scores, out } => cmd_fuse(&scores, out.as_deref()),
        Command::Inspect { model } => {
            let cfg = model.run_config()?;
            let net = build::<f32>(&cfg)?;
            print!("{}", net.count_parameters());
            Ok(())
        }
        Command::Probe {
            model,
            axis,
            source,
            frames,
        } => {
            let cfg = model.run_config()?;
            let net = build::<f64>(&cfg)?;
            let source = source.unwrap_or(match axis {
                ProbeAxis::Spatial => net.topology.center(),
                ProbeAxis::Temporal => frames / 2,
            });
            print!("{}", net.probe_receptive_field(axis, source, frames)?);
            Ok(())
        }
        Command::Gensynth {
            classes,
            samples,
            topology,
            frames,
            seed,
            noise,
            persons,
            out,
        } => {
            let spec = SyntheticSpec {
                num_classes: classes,
                samples_per_class: samples,
                topology,
                frames,
                seed,
                noise,
                persons,
            };
            let ds = generate_synthetic(&spec)?;
            save_dataset(&out, &ds).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {} samples ({classes} classes, {topology}) to {}", ds.len(), out.display());
            Ok(())
        }
    }
}

fn build<F: Real>(cfg: &RunConfig) -> Result<MstGcn<F>> {
    let (net_cfg, strict) = cfg.network()?;
    let net = if strict {
        MstGcn::build(&net_cfg)?
    } else {
        MstGcn::build_custom(&net_cfg)?
    };
    Ok(net)
}

fn load(path: &Path) -> Result<Dataset> {
    let (_, ds) = load_dataset(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ds)
}

/// `top1=.. top5=.. loss=.. samples=..` at full precision.
fn metrics_line(m: &Metrics) -> String {
    format!("top1={} top5={} loss={} samples={}", m.top1, m.top5, m.loss, m.samples)
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    epochs: usize,
    parameters: usize,
    seconds: f64,
    train: &'a Metrics,
    val: Option<&'a Metrics>,
    checkpoint: PathBuf,
    config: &'a RunConfig,
}

fn cmd_train<F: Real>(cfg: &RunConfig, train_path: &Path, val_path: Option<&Path>, out: &Path) -> Result<()> {
    let net = build::<F>(cfg)?;
    let train = load(train_path)?;
    let val = val_path.map(load).transpose()?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let log_path = out.join("metrics.log");
    let mut log = BufWriter::new(File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    let parameters = net.count_parameters().total;
    let mut state = TrainState::new(net, cfg.train.clone(), cfg.data.pipeline())?;
    let start = Instant::now();
    let mut io_result = Ok(());
    state.fit(&train, val.as_ref(), |entry| {
        let line = entry.line();
        println!("{line}");
        if io_result.is_ok() {
            io_result = writeln!(log, "{line}");
        }
    })?;
    io_result.and_then(|()| log.flush()).with_context(|| format!("writing {}", log_path.display()))?;

    let checkpoint = out.join("model.ckpt");
    state
        .net
        .save_checkpoint(&checkpoint)
        .with_context(|| format!("writing {}", checkpoint.display()))?;
    let last = state.history.last().context("training ran no epochs")?;
    let summary = TrainSummary {
        epochs: state.epoch,
        parameters,
        seconds: start.elapsed().as_secs_f64(),
        train: &last.train,
        val: last.eval.as_ref(),
        checkpoint: checkpoint.clone(),
        config: cfg,
    };
    let json = serde_json::to_string_pretty(&summary)?;
    let summary_path = out.join("summary.json");
    std::fs::write(&summary_path, &json).with_context(|| format!("writing {}", summary_path.display()))?;
    println!("{json}");
    Ok(())
}

fn cmd_eval<F: Real>(cfg: &RunConfig, checkpoint: &Path, data: &Path, scores_out: Option<&Path>) -> Result<()> {
    let mut net = build::<F>(cfg)?;
    net.load_checkpoint(checkpoint)
        .with_context(|| format!("loading {}", checkpoint.display()))?;
    let ds = load(data)?;
    let result = evaluate(&net, &ds, &cfg.data.pipeline(), cfg.train.batch_size)?;
    if let Some(path) = scores_out {
        ScoreFile::new(&result.scores, &result.labels)
            .save(path)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{}", metrics_line(&result.metrics));
    Ok(())
}

fn cmd_fuse(paths: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let mut matrices = Vec::with_capacity(paths.len());
    let mut labels: Option<Vec<usize>> = None;
    for path in paths {
        let file = ScoreFile::load(path).with_context(|| format!("reading {}", path.display()))?;
        match &labels {
            None => labels = Some(file.labels.clone()),
            Some(l) if *l != file.labels => {
                return Err(ConfigError(vec![format!("{} has different labels than {}", path.display(), paths[0].display())]).into())
            }
            Some(_) => {}
        }
        matrices.push(file.matrix()?);
    }
    let labels = labels.context("no score files given")?;
    let fused = fuse_scores(&matrices)?;
    let metrics = Metrics::from_scores(&fused, &labels)?;
    if let Some(path) = out {
        ScoreFile::new(&fused, &labels)
            .save(path)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{}", metrics_line(&metrics));
    Ok(())
}
