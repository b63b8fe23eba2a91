//! Command line: `synth`, `train`, `translate`, `eval`, `attn`, `gradcheck`.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use mutualgan_core::gradcheck;

use crate::checkpoint;
use crate::config::TrainConfig;
use crate::dataset::{self, Manifest};
use crate::eval::{self, Direction, FolderSummary};
use crate::train;
use crate::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "mutualgan", version, about = "Unpaired image translation with a mutual-information constraint")]
struct Cli {
    /// Configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `train.out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the procedural two-domain dataset.
    Synth {
        /// Number of scenes.
        #[arg(long)]
        n: usize,
        /// Square image side length.
        #[arg(long, default_value_t = 32)]
        size: usize,
    },
    /// Train from scratch or resume from a checkpoint.
    Train {
        /// Training manifest; overrides `data.dataset`.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Checkpoint to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Translate every .ppm in a directory.
    Translate {
        /// Checkpoint holding the networks.
        #[arg(long)]
        ckpt: PathBuf,
        /// Directory of input images.
        #[arg(long)]
        input: PathBuf,
        /// AB or BA.
        #[arg(long, default_value = "BA")]
        direction: Direction,
    },
    /// Content-preservation report on a validation manifest.
    Eval {
        /// Checkpoint holding the networks.
        #[arg(long)]
        ckpt: PathBuf,
        /// Validation manifest.
        #[arg(long)]
        manifest: PathBuf,
        /// Manifest the colour classifier is fitted on; defaults to train.txt beside the validation manifest.
        #[arg(long)]
        fit_manifest: Option<PathBuf>,
    },
    /// Export encoder attention maps.
    Attn {
        /// Checkpoint holding the networks.
        #[arg(long)]
        ckpt: PathBuf,
        /// Directory of domain-B images.
        #[arg(long)]
        input: PathBuf,
    },
    /// Finite-difference check of every differentiable kernel.
    Gradcheck {
        /// Random instances per kernel.
        #[arg(long, default_value_t = 20)]
        cases: u64,
    },
}

/// Parses `args` (including the program name), runs, prints, and returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() { EXIT_USAGE } else { EXIT_RUNTIME }
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig, Error> {
    match path {
        None => Ok(TrainConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Usage(format!("{}: {e}", p.display())))?;
            Ok(TrainConfig::from_text(&text)?)
        }
    }
}

fn require_out(out: Option<PathBuf>, what: &str) -> Result<PathBuf, Error> {
    out.ok_or_else(|| Error::Usage(format!("{what} needs --out <dir>")))
}

fn report_folder(s: &FolderSummary, what: &str) -> i32 {
    for (p, why) in &s.failed {
        eprintln!("skipped {}: {why}", p.display());
    }
    println!("{what}: {} written, {} skipped", s.written.len(), s.failed.len());
    if s.failed.is_empty() { EXIT_OK } else { EXIT_RUNTIME }
}

fn run(cli: Cli) -> Result<i32, Error> {
    let mut cfg = load_config(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match cli.command {
        Command::Synth { n, size } => {
            let out = require_out(cli.out, "synth")?;
            let made = dataset::synth_dataset(n, cfg.seed, &out, size, size)?;
            let per = |m: &Manifest| m.pool(dataset::Pool::A).len();
            println!(
                "wrote {n} scenes to {}: {} train / {} val per domain",
                out.display(),
                per(&made.train),
                per(&made.val)
            );
        }
        Command::Train { dataset, resume } => {
            if let Some(d) = dataset {
                cfg.dataset = Some(d);
            }
            if let Some(o) = cli.out {
                cfg.out_dir = o;
            }
            let summary = train::train_loop(&cfg, resume.as_deref(), |state, report| {
                if state.step % 100 == 0 {
                    println!("step {} total {:.4}", state.step, report.total);
                }
            })?;
            println!(
                "trained steps {}..{}; checkpoint {}; log {}",
                summary.first_step,
                summary.last_step,
                summary.final_checkpoint.display(),
                summary.metrics.display()
            );
        }
        Command::Translate { ckpt, input, direction } => {
            let out = require_out(cli.out, "translate")?;
            let state = checkpoint::load(&ckpt)?;
            let s = eval::translate_dir(&state.nets, &input, direction, &out)?;
            return Ok(report_folder(&s, "translated"));
        }
        Command::Eval { ckpt, manifest, fit_manifest } => {
            let out = require_out(cli.out, "eval")?;
            let state = checkpoint::load(&ckpt)?;
            let val = Manifest::load(&manifest)?;
            let fit_path = fit_manifest.unwrap_or_else(|| val.root.join(dataset::TRAIN_MANIFEST));
            let classifier = eval::fit_classifier(&Manifest::load(&fit_path)?)?;
            let report = eval::content_preservation_eval(&state.nets, &val, &classifier)?;
            report.write(&out)?;
            print!("{}", report.table());
        }
        Command::Attn { ckpt, input } => {
            let out = require_out(cli.out, "attn")?;
            let state = checkpoint::load(&ckpt)?;
            let s = eval::export_attention(&state.nets, &input, &out)?;
            return Ok(report_folder(&s, "attention files"));
        }
        Command::Gradcheck { cases } => {
            if cases == 0 {
                return Err(Error::Usage("--cases must be >= 1".into()));
            }
            let results = gradcheck::check_all(cases, cfg.seed)?;
            let mut failed = 0;
            for k in gradcheck::Kernel::ALL {
                let mine: Vec<_> = results.iter().filter(|r| r.kernel == k).collect();
                let worst = mine.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
                let bad = mine.iter().filter(|r| !r.passed).count();
                failed += bad;
                let verdict = if bad == 0 { "ok" } else { "FAIL" };
                println!("{:<18} {:>3} cases  max rel err {worst:.2e}  {verdict}", k.name(), mine.len());
            }
            if failed > 0 {
                println!("{failed} case(s) above tolerance {:e}", gradcheck::TOLERANCE);
                return Ok(EXIT_RUNTIME);
            }
        }
    }
    Ok(EXIT_OK)
}
