#![allow(dead_code)]

use std::path::{Path, PathBuf};

use mutualgan::config::TrainConfig;
use mutualgan::core::networks::{ArchDescriptor, ModelArch};

pub fn tiny_arch() -> ModelArch {
    ModelArch {
        generator: ArchDescriptor::new(4, 1, 1, 0),
        discriminator: ArchDescriptor::new(4, 2, 0, 0),
        encoder_a: ArchDescriptor::new(4, 1, 0, 4),
        encoder_b: ArchDescriptor::new(4, 1, 0, 4),
    }
}

pub const TINY_MODEL: &str = "[model]
gen_channels = 4
gen_stages = 1
gen_res_blocks = 1
disc_channels = 4
disc_stages = 2
enc_channels = 4
enc_stages = 1
latent_channels = 4
";

pub fn tiny_config(dataset: &Path, out: &Path, epochs: u64, batch: usize) -> TrainConfig {
    TrainConfig {
        dataset: Some(dataset.to_owned()),
        epochs,
        batch_size: batch,
        out_dir: out.to_owned(),
        arch: tiny_arch(),
        ..Default::default()
    }
}

pub fn files_in(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}
