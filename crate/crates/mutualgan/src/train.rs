//! Epoch loop around the core train step: data order, checkpoints, metrics log.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use mutualgan_core::losses::LossReport;
use mutualgan_core::training::{train_step, StepConfig, TrainState};
use rand::RngCore;

use crate::checkpoint;
use crate::config::TrainConfig;
use crate::dataset::{ImagePool, Manifest, Pool};
use crate::Error;

pub const METRICS_FILE: &str = "metrics.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// One metrics log line: step and the eight report fields.
pub fn metrics_line(step: u64, r: &LossReport) -> String {
    let mut s = step.to_string();
    for v in r.values() {
        s.push_str(&format!(",{v:.6}"));
    }
    s
}

pub fn checkpoint_path(out_dir: &Path, step: u64) -> PathBuf {
    out_dir.join(CHECKPOINT_DIR).join(format!("step_{step:08}.ckpt"))
}

/// Learning rate for `epoch`: constant, or with `lr_decay` linear to zero over
/// the second half of the run.
pub fn learning_rate(cfg: &TrainConfig, epoch: u64) -> f64 {
    let base = cfg.adam.lr;
    if !cfg.lr_decay {
        return base;
    }
    let hold = cfg.epochs / 2;
    if epoch < hold {
        return base;
    }
    let span = (cfg.epochs - hold) as f64;
    base * (1.0 - (epoch - hold) as f64 / span).max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub first_step: u64,
    pub last_step: u64,
    pub final_checkpoint: PathBuf,
    pub metrics: PathBuf,
}

/// Keeps only log lines with step `<= step`, so a resumed run appends cleanly.
fn truncate_log(path: &Path, step: u64) -> Result<(), Error> {
    let io = |source| Error::Io { path: path.display().to_string(), source };
    if !path.exists() {
        return Ok(());
    }
    let mut keep = Vec::new();
    for line in BufReader::new(File::open(path).map_err(io)?).lines() {
        let line = line.map_err(io)?;
        let s: Option<u64> = line.split(',').next().and_then(|s| s.parse().ok());
        if s.is_some_and(|s| s <= step) {
            keep.push(line);
        }
    }
    let mut text = keep.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    fs::write(path, text).map_err(io)
}

/// Runs `cfg.epochs` epochs, or what is left of them when resuming.
///
/// `on_step` sees the state after every completed step.
pub fn train_loop(
    cfg: &TrainConfig,
    resume: Option<&Path>,
    mut on_step: impl FnMut(&TrainState, &LossReport),
) -> Result<RunSummary, Error> {
    cfg.validate()?;
    let manifest = Manifest::load(cfg.dataset.as_deref().expect("validated"))?;
    if let Some(s) = cfg.image_size {
        if (manifest.height, manifest.width) != (s, s) {
            return Err(Error::Config(crate::config::ConfigError::Value {
                key: "data.image_size".into(),
                msg: format!("{s} does not match the manifest size {}x{}", manifest.height, manifest.width),
            }));
        }
    }
    let pool_a = ImagePool::load(&manifest, Pool::A)?;
    let pool_b = ImagePool::load(&manifest, Pool::B)?;

    let mut state = match resume {
        Some(p) => {
            let s = checkpoint::load(p)?;
            if *s.nets.arch() != cfg.arch {
                return Err(Error::Usage(format!("{}: model descriptors differ from the config", p.display())));
            }
            s
        }
        None => TrainState::new(cfg.arch, cfg.seed)?,
    };
    let first_step = state.step;

    let out = &cfg.out_dir;
    let ckpt_dir = out.join(CHECKPOINT_DIR);
    fs::create_dir_all(&ckpt_dir).map_err(|source| Error::Io { path: ckpt_dir.display().to_string(), source })?;
    let metrics = out.join(METRICS_FILE);
    truncate_log(&metrics, state.step)?;
    let io = |source| Error::Io { path: metrics.display().to_string(), source };
    let mut log = BufWriter::new(OpenOptions::new().create(true).append(true).open(&metrics).map_err(io)?);

    let mut step_cfg = StepConfig { adam: cfg.adam, weights: cfg.weights };
    while state.epoch < cfg.epochs {
        let plan = state.epoch_plan(state.epoch, pool_a.len(), pool_b.len(), cfg.batch_size)?;
        step_cfg.adam.lr = learning_rate(cfg, state.epoch);
        let done_before = state.epoch * plan.steps as u64;
        let start = state.step.checked_sub(done_before).filter(|&k| k < plan.steps as u64).ok_or_else(|| {
            Error::Usage(format!(
                "checkpoint step {} does not fall in epoch {} with {} steps per epoch; was the dataset or batch size changed?",
                state.step, state.epoch, plan.steps
            ))
        })?;
        for k in start as usize..plan.steps {
            let (ia, ib) = plan.batch_indices(k);
            let (a, b) = if cfg.flip {
                let rng: &mut dyn RngCore = &mut state.rng;
                let a = pool_a.batch(ia, Some(&mut *rng))?;
                (a, pool_b.batch(ib, Some(rng))?)
            } else {
                (pool_a.batch(ia, None)?, pool_b.batch(ib, None)?)
            };
            let report = train_step(&mut state, &a, &b, &step_cfg)?;
            if k + 1 == plan.steps {
                state.epoch += 1;
            }
            writeln!(log, "{}", metrics_line(state.step, &report)).map_err(io)?;
            on_step(&state, &report);
            if cfg.checkpoint_interval > 0 && state.step % cfg.checkpoint_interval == 0 {
                log.flush().map_err(io)?;
                checkpoint::save(&checkpoint_path(out, state.step), &state)?;
            }
        }
    }
    log.flush().map_err(io)?;
    let final_checkpoint = out.join(FINAL_CHECKPOINT);
    checkpoint::save(&final_checkpoint, &state)?;
    Ok(RunSummary { first_step, last_step: state.step, final_checkpoint, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_format() {
        let r = LossReport { adv_a: 0.5, adv_b: 0.25, cyc: 0.1, dis_ab: 0.0, dis_ba: 1.0, mi_ab: 2.0, mi_ba: 3.0, total: 7.0 };
        assert_eq!(metrics_line(3, &r), "3,0.500000,0.250000,0.100000,0.000000,1.000000,2.000000,3.000000,7.000000");
    }

    #[test]
    fn decay_schedule() {
        let mut cfg = TrainConfig { epochs: 10, ..Default::default() };
        assert_eq!(learning_rate(&cfg, 9), cfg.adam.lr);
        cfg.lr_decay = true;
        assert_eq!(learning_rate(&cfg, 4), cfg.adam.lr);
        assert_eq!(learning_rate(&cfg, 5), cfg.adam.lr);
        assert!((learning_rate(&cfg, 9) - cfg.adam.lr * 0.2).abs() < 1e-15);
    }

    #[test]
    fn log_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        fs::write(&p, "1,a\n2,b\n3,c\n").unwrap();
        truncate_log(&p, 2).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "1,a\n2,b\n");
    }
}
