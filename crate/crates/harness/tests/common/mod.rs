#![allow(dead_code)]

use std::path::{Path, PathBuf};

use bytetr_core::{AbiSpec, PosixKb};
use bytetr_ggnn::{Aggregation, EdgeWeighting, GgnnConfig};
use bytetr_harness::dataset::{build_dataset, discover, write_dataset, Dataset, DatasetOptions};
use bytetr_harness::synth::{generate, write_corpus, SynthSpec};
use bytetr_harness::train::TrainOptions;

/// Fresh scratch directory under the target dir.
pub fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// A model small enough to train in seconds.
pub fn small_model(seed: u64) -> GgnnConfig {
    GgnnConfig {
        d_in: 16,
        hidden: 32,
        steps: 4,
        aggregation: Aggregation::Sum,
        mlp_hidden: 32,
        edge_weighting: EdgeWeighting::Scalar,
        seed,
        ..GgnnConfig::default()
    }
}

pub fn small_training(epochs: usize, seed: u64) -> TrainOptions {
    TrainOptions {
        epochs,
        batch_size: 32,
        lr: 5e-3,
        patience: None,
        model: small_model(seed),
    }
}

pub fn write_synthetic(dir: &Path, spec: &SynthSpec) {
    let modules = generate(spec).unwrap();
    write_corpus(dir, &modules).unwrap();
}

pub fn build(raw: &Path, out: &Path, opts: &DatasetOptions) -> Dataset {
    let inputs = discover(raw).unwrap();
    let ds = build_dataset(
        raw,
        &inputs,
        opts,
        &AbiSpec::sysv_x86_64(),
        &PosixKb::bundled(),
    )
    .unwrap();
    write_dataset(out, &ds).unwrap();
    ds
}

pub fn files_equal(a: &Path, b: &Path) -> bool {
    std::fs::read(a).unwrap() == std::fs::read(b).unwrap()
}
