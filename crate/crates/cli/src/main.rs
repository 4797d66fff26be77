use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fcot_core::harness::ablation::{drift_check, render_drift, Ablation, AblationConfig};
use fcot_core::harness::config::{config_hash, load};
use fcot_core::harness::dataset::{read_boxes, read_dataset, read_meta, write_dataset, write_results, RunMeta, GROUND_TRUTH_FILE};
use fcot_core::harness::metrics::{evaluate, Protocol};
use fcot_core::harness::run::{run_sequence, stage_timings};
use fcot_core::harness::selftest::run_all;
use fcot_core::harness::synth::{synth_sequence, SynthSpec};
use fcot_core::{FcotError, Result, TrackerConfig};

#[derive(Parser)]
#[command(name = "fcot", version, about = "Single-object tracker with anchor-free regression and online model updates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` config file
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config key (repeatable), e.g. `--set rmg.lambda_reg=0.4`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn load<T: serde::Serialize + serde::de::DeserializeOwned + Default>(&self) -> Result<T> {
        let text = match &self.config {
            Some(p) => Some(fs::read_to_string(p).map_err(|e| FcotError::Io(format!("{}: {e}", p.display())))?),
            None => None,
        };
        load(text.as_deref(), &self.sets)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TableArg {
    Online,
    Mechanism,
    Fusion,
    Half,
    Drift,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic sequence into a dataset directory
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output dataset directory
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Track a dataset from its first ground-truth box
    Track {
        dataset: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Results file; `meta.json` is written next to it
        #[arg(long, short)]
        out: PathBuf,
        /// Restart from ground truth five frames after each failure
        #[arg(long)]
        restarts: bool,
    },
    /// Score a results file against a dataset's ground truth
    Eval {
        results: PathBuf,
        dataset: PathBuf,
        #[arg(long, default_value = "otb")]
        protocol: String,
        /// Write the full report as JSON (`-` for stdout)
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run the ablation grids on seeded deforming sequences
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum, default_value = "all")]
        table: TableArg,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = 100)]
        frames: usize,
        #[arg(long)]
        no_restarts: bool,
        /// Write all tables as JSON
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run the optimizer, geometry and fusion oracle suites
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Per-stage timing on a dataset (default: the seed-0 synthetic sequence)
    Bench {
        dataset: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| FcotError::Io(e.to_string()))? + "\n";
    if path == Path::new("-") {
        std::io::stdout().write_all(text.as_bytes()).map_err(|e| FcotError::Io(format!("stdout: {e}")))
    } else {
        fs::write(path, text).map_err(|e| FcotError::Io(format!("{}: {e}", path.display())))
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Synth { cfg, out } => {
            let spec: SynthSpec = cfg.load()?;
            let seq = synth_sequence(&spec)?;
            write_dataset(&out, &seq)?;
            println!("wrote {} frames ({}x{}) to {}", seq.frames.len(), spec.width, spec.height, out.display());
        }
        Command::Track { dataset, cfg, out, restarts } => {
            let tcfg: TrackerConfig = cfg.load()?;
            let seq = read_dataset(&dataset)?;
            let run = run_sequence(&seq, &tcfg, restarts)?;
            let meta = RunMeta { config_hash: config_hash(&tcfg)?, seed: tcfg.seed, frames: run.frames, fps: run.fps() };
            write_results(&out, &run.boxes, &meta)?;
            println!("tracked {} frames at {:.1} fps -> {}", run.frames, meta.fps, out.display());
        }
        Command::Eval { results, dataset, protocol, json } => {
            let protocol: Protocol = protocol.parse()?;
            let preds = read_boxes(&results)?;
            let gt = read_boxes(&dataset.join(GROUND_TRUTH_FILE))?;
            let mut report = evaluate(&preds, &gt, protocol)?;
            report.fps = read_meta(&results).ok().map(|m| m.fps);
            print!("{}", report.summary());
            if let Some(p) = json {
                write_json(&p, &report)?;
            }
        }
        Command::Ablate { cfg, table, seeds, frames, no_restarts, json } => {
            let base: TrackerConfig = cfg.load()?;
            let acfg = AblationConfig { seeds: (0..seeds).collect(), frames, restarts: !no_restarts };
            let mut ab = Ablation::new(base.clone(), acfg.clone())?;
            let mut tables = Vec::new();
            let want = |t: TableArg| matches!(table, TableArg::All) || std::mem::discriminant(&t) == std::mem::discriminant(&table);
            if want(TableArg::Online) {
                tables.push(ab.online_regression()?);
            }
            if want(TableArg::Mechanism) {
                tables.push(ab.update_mechanism()?);
            }
            if want(TableArg::Fusion) {
                tables.push(ab.fusion_sweep()?);
            }
            if want(TableArg::Half) {
                tables.push(ab.half_update()?);
            }
            for t in &tables {
                println!("{}", t.render());
            }
            let drift = if want(TableArg::Drift) {
                let rows = drift_check(&base, &acfg.seeds, 0.3)?;
                println!("{}", render_drift(&rows, 0.3));
                rows
            } else {
                Vec::new()
            };
            if let Some(p) = json {
                write_json(&p, &serde_json::json!({ "config": acfg, "tables": tables, "drift": drift }))?;
            }
        }
        Command::Selftest { seed } => {
            let reports = run_all(seed)?;
            for r in &reports {
                println!("{}", r.line());
            }
            return Ok(reports.iter().all(|r| r.passed));
        }
        Command::Bench { dataset, cfg } => {
            let tcfg: TrackerConfig = cfg.load()?;
            let seq = match dataset {
                Some(d) => read_dataset(&d)?,
                None => synth_sequence(&SynthSpec::translation(0))?,
            };
            println!("{:<12} {:>6} {:>10}", "stage", "calls", "mean ms");
            for s in stage_timings(&seq, &tcfg)? {
                println!("{:<12} {:>6} {:>10.3}", s.stage, s.calls, s.mean_ms());
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
