//! Run configuration: a TOML file of `key = value` lines under `[section]` headers.

use std::path::PathBuf;

use mutualgan_core::losses::LossWeights;
use mutualgan_core::networks::ModelArch;
use mutualgan_core::optim::AdamConfig;
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    /// Syntax errors and unknown keys; the parser's message lists the accepted keys.
    #[error("{0}")]
    Parse(String),
    #[error("`{key}`: {msg}")]
    Value { key: String, msg: String },
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    data: RawData,
    #[serde(default)]
    train: RawTrain,
    #[serde(default)]
    loss: RawLoss,
    #[serde(default)]
    model: RawModel,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    dataset: Option<PathBuf>,
    image_size: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrain {
    epochs: Option<u64>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    beta1: Option<f64>,
    beta2: Option<f64>,
    eps: Option<f64>,
    seed: Option<u64>,
    checkpoint_interval: Option<u64>,
    lr_decay: Option<bool>,
    flip: Option<bool>,
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLoss {
    alpha: Option<f64>,
    w_dis: Option<f64>,
    w_mi: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    gen_channels: Option<usize>,
    gen_stages: Option<usize>,
    gen_res_blocks: Option<usize>,
    disc_channels: Option<usize>,
    disc_stages: Option<usize>,
    enc_channels: Option<usize>,
    enc_stages: Option<usize>,
    latent_channels: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Training manifest.
    pub dataset: Option<PathBuf>,
    pub image_size: Option<usize>,
    pub epochs: u64,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_interval: u64,
    /// Linear decay to zero over the second half of the epochs.
    pub lr_decay: bool,
    pub flip: bool,
    pub out_dir: PathBuf,
    pub weights: LossWeights,
    pub arch: ModelArch,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            image_size: None,
            epochs: 200,
            batch_size: 4,
            adam: AdamConfig::default(),
            seed: 0,
            checkpoint_interval: 500,
            lr_decay: false,
            flip: false,
            out_dir: PathBuf::from("run"),
            weights: LossWeights::default(),
            arch: ModelArch::default(),
        }
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl TrainConfig {
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut c = Self {
            dataset: raw.data.dataset.filter(|p| !p.as_os_str().is_empty()),
            image_size: raw.data.image_size,
            ..Self::default()
        };
        let t = raw.train;
        set(&mut c.epochs, t.epochs);
        set(&mut c.batch_size, t.batch_size);
        set(&mut c.adam.lr, t.lr);
        set(&mut c.adam.beta1, t.beta1);
        set(&mut c.adam.beta2, t.beta2);
        set(&mut c.adam.eps, t.eps);
        set(&mut c.seed, t.seed);
        set(&mut c.checkpoint_interval, t.checkpoint_interval);
        set(&mut c.lr_decay, t.lr_decay);
        set(&mut c.flip, t.flip);
        set(&mut c.out_dir, t.out_dir);
        set(&mut c.weights.alpha, raw.loss.alpha);
        set(&mut c.weights.w_dis, raw.loss.w_dis);
        set(&mut c.weights.w_mi, raw.loss.w_mi);
        let (m, a) = (raw.model, &mut c.arch);
        set(&mut a.generator.base_channels, m.gen_channels);
        set(&mut a.generator.stages, m.gen_stages);
        set(&mut a.generator.res_blocks, m.gen_res_blocks);
        set(&mut a.discriminator.base_channels, m.disc_channels);
        set(&mut a.discriminator.stages, m.disc_stages);
        for enc in [&mut a.encoder_a, &mut a.encoder_b] {
            set(&mut enc.base_channels, m.enc_channels);
            set(&mut enc.stages, m.enc_stages);
            set(&mut enc.latent_channels, m.latent_channels);
        }
        Ok(c)
    }

    /// Checks ranges; the dataset must be set before training.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |key: &str, msg: String| Err(ConfigError::Value { key: key.into(), msg });
        if self.dataset.is_none() {
            return err("data.dataset", "required: path to the training manifest".into());
        }
        if self.epochs == 0 {
            return err("train.epochs", "must be >= 1".into());
        }
        if self.batch_size == 0 {
            return err("train.batch_size", "must be >= 1".into());
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return err("train.lr", format!("must be positive, got {}", self.adam.lr));
        }
        for (k, b) in [("train.beta1", self.adam.beta1), ("train.beta2", self.adam.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return err(k, format!("must lie in [0, 1), got {b}"));
            }
        }
        if self.adam.eps.is_nan() || self.adam.eps <= 0.0 {
            return err("train.eps", "must be positive".into());
        }
        if let Err(e) = self.weights.validate() {
            return err("loss", e.to_string());
        }
        if let Err(e) = self.arch.validate() {
            return err("model", e.to_string());
        }
        if let Some(s) = self.image_size {
            let f = self.arch.spatial_factor();
            if s == 0 || s % f != 0 {
                return err("data.image_size", format!("{s} is not a positive multiple of {f}"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_comments() {
        let text = "# run\n[data]\ndataset = \"d/train.txt\" # manifest\nimage_size=32\n\n[loss]\nw_mi = 0.0\n[train]\nlr_decay = true\n";
        let cfg = TrainConfig::from_text(text).unwrap();
        assert_eq!(cfg.dataset, Some(PathBuf::from("d/train.txt")));
        assert_eq!(cfg.image_size, Some(32));
        assert_eq!(cfg.weights.w_mi, 0.0);
        assert!(cfg.lr_decay);
        assert_eq!(cfg.epochs, 200);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_key_lists_accepted() {
        let msg = TrainConfig::from_text("[train]\nepoch = 3\n").unwrap_err().to_string();
        assert!(msg.contains("epoch") && msg.contains("epochs") && msg.contains("batch_size"), "{msg}");
        let msg = TrainConfig::from_text("[optim]\nlr = 1.0\n").unwrap_err().to_string();
        assert!(msg.contains("optim") && msg.contains("train") && msg.contains("model"), "{msg}");
    }

    #[test]
    fn syntax_errors() {
        for text in ["[train\n", "nonsense\n", "[data]\ndataset = \"x\n", "[train]\nepochs = \"many\"\n"] {
            assert!(matches!(TrainConfig::from_text(text), Err(ConfigError::Parse(_))), "{text:?}");
        }
    }

    #[test]
    fn missing_dataset_names_the_key() {
        let e = TrainConfig::from_text("[train]\nepochs = 1\n").unwrap().validate().unwrap_err();
        assert!(e.to_string().contains("data.dataset"), "{e}");
    }

    #[test]
    fn range_checks() {
        let ok = TrainConfig { dataset: Some("x".into()), image_size: Some(32), ..Default::default() };
        ok.validate().unwrap();
        let mut bad = vec![ok.clone(); 5];
        bad[0].epochs = 0;
        bad[1].adam.lr = 0.0;
        bad[2].batch_size = 0;
        bad[3].weights.alpha = -1.0;
        bad[4].image_size = Some(18);
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn encoder_keys_apply_to_both_encoders() {
        let cfg = TrainConfig::from_text("[model]\nlatent_channels = 8\nenc_stages = 3\n").unwrap();
        assert_eq!(cfg.arch.encoder_a, cfg.arch.encoder_b);
        assert_eq!(cfg.arch.encoder_a.latent_channels, 8);
    }
}
