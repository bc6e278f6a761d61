#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use bargrain::preprocess::{generate_synthetic, pearson_correlation, synthetic_block, Dataset};
use bargrain::train::TrainConfig;

pub const ACCEPT_SUBJECTS: usize = 80;
pub const ACCEPT_ROIS: usize = 16;
pub const ACCEPT_STEPS: usize = 64;
pub const ACCEPT_SEED: u64 = 3;

pub fn acceptance_dataset() -> Dataset {
    generate_synthetic(ACCEPT_SUBJECTS, ACCEPT_ROIS, ACCEPT_STEPS, ACCEPT_SEED).unwrap()
}

/// Paper learning rate with layer widths scaled to 16 ROIs.
pub fn acceptance_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-4,
        hidden_h: 32,
        out_f: 16,
        classifier_h_c: 32,
        d_h: 16,
        seed: ACCEPT_SEED,
        ..TrainConfig::default()
    }
}

pub fn config_json(cfg: &TrainConfig) -> String {
    serde_json::to_string_pretty(cfg).unwrap()
}

/// Mean correlation over ROI pairs that share class 0's first block.
pub fn block_zero_feature(dataset: &Dataset, k: usize) -> f64 {
    let subject = &dataset.subjects[k];
    let v = pearson_correlation(subject).unwrap();
    let n = subject.n_rois();
    let members: Vec<usize> = (0..n).filter(|&r| synthetic_block(r, n, 0) == 0).collect();
    let mut sum = 0.0;
    let mut count = 0;
    for (a, &i) in members.iter().enumerate() {
        for &j in &members[a + 1..] {
            sum += v.values()[(i, j)];
            count += 1;
        }
    }
    sum / count as f64
}

/// Best accuracy of a single-threshold rule on the block-zero feature.
pub fn stump_accuracy(dataset: &Dataset) -> f64 {
    let xs: Vec<f64> = (0..dataset.len()).map(|k| block_zero_feature(dataset, k)).collect();
    let ys = dataset.labels();
    let mut best = 0.0f64;
    for &t in &xs {
        for dir in [true, false] {
            let correct = xs
                .iter()
                .zip(&ys)
                .filter(|(&x, &y)| ((x >= t) == dir) == (y == 0))
                .count();
            best = best.max(correct as f64 / xs.len() as f64);
        }
    }
    best
}

pub fn bargrain(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bargrain"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}
