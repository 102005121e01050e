//! `semstereo` command-line tool.
//!
//! Exit status is 0 on success, 1 for usage or configuration errors and 2
//! for failures at run time.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;
use semstereo::data::us3d::{write_manifest, write_us3d_sample};
use semstereo::data::{synth_scene, ClassRemap, SynthConfig};
use semstereo::harness::dataset::load_directory;
use semstereo::harness::train::StopReason;
use semstereo::harness::{
    ablate, evaluate, predict_files, restore_model, AblationVariant, Checkpoint, EvalSettings, ModelPredictor,
    RunConfig, Trainer,
};
use semstereo::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "semstereo", version, about = "Joint disparity and semantic segmentation from rectified pairs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model from a TOML run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `optimizer.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on a directory of US3D-layout rasters.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Restrict evaluation to the ids listed in this file.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Predict disparity and classes for one image pair.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        right: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write synthetic scenes in US3D layout.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        count: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Take scene parameters from `data.synth` of this run configuration.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train and evaluate every module ablation.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn train(config: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(seed) = seed {
        cfg.optimizer.seed = seed;
    }
    let mut trainer = Trainer::new(cfg)?;
    let outcome = trainer.run()?;
    match &outcome.stop {
        StopReason::StepLimit => println!("trained {} steps", outcome.steps),
        StopReason::TargetsReached { report } => {
            println!("targets reached after {} steps (training EPE {:?})", outcome.steps, report.epe)
        }
    }
    println!("checkpoint: {}", outcome.checkpoint_path.display());
    println!("loss curve: {}", trainer.config.loss_curve_path().display());
    Ok(())
}

fn eval(checkpoint: &Path, data: &Path, report: &Path, manifest: Option<&Path>) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let (net, params) = restore_model(&ckpt.config, &ckpt.params)?;
    let samples = load_directory(&ckpt.config, data, manifest)?;
    info!("evaluating {} samples", samples.len());
    let settings = EvalSettings::new(&ckpt.config.model, ckpt.config.eval.tile, ckpt.config.eval.threshold);
    let result = evaluate(&ModelPredictor { net: &net, params: &params }, &samples, &settings)?;
    let text = result.to_text();
    if let Some(dir) = report.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(report, &text).map_err(|e| Error::io(report, e))?;
    print!("{text}");
    Ok(())
}

fn synth(out: &Path, count: u64, seed: u64, config: Option<&Path>) -> Result<()> {
    let synth_cfg = match config {
        Some(p) => RunConfig::load(p)?.data.synth,
        None => SynthConfig::default(),
    };
    synth_cfg.validate()?;
    let remap = ClassRemap::default();
    let mut ids = Vec::new();
    for i in 0..count {
        let sample = synth_scene(seed + i, &synth_cfg)?;
        write_us3d_sample(out, &sample, &remap)?;
        ids.push(sample.id);
    }
    write_manifest(&out.join("manifest.txt"), &ids)?;
    println!("wrote {count} scenes to {}", out.display());
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { config, seed } => train(&config, seed),
        Command::Eval { checkpoint, data, report, manifest } => eval(&checkpoint, &data, &report, manifest.as_deref()),
        Command::Predict { checkpoint, left, right, out } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let result = predict_files(&ckpt, &left, &right, &out)?;
            println!("wrote {}", result.files.disparity_raw.display());
            println!("wrote {}", result.files.classes_raw.display());
            println!("wrote {}", result.files.disparity_png.display());
            println!("wrote {}", result.files.classes_png.display());
            Ok(())
        }
        Command::Synth { out, count, seed, config } => synth(&out, count, seed, config.as_deref()),
        Command::Ablate { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let report = ablate(&cfg, &AblationVariant::ALL, &out)?;
            print!("{}", report.to_text());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
