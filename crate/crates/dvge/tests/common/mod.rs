#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dvge::config::{ExperimentConfig, MethodGrid};
use dvge_core::synth::SyntheticSpec;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn credit_file() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/german_credit.txt")
}

/// Synthetic experiment small enough to run in about a second.
pub fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::synthetic_default();
    cfg.experiment = "tiny".into();
    cfg.dataset = dvge::config::DatasetSource::Synthetic {
        spec: SyntheticSpec {
            n: 600,
            seed: 4,
            ..Default::default()
        },
    };
    cfg.encoder.latent_dim = 4;
    cfg.encoder.hidden_widths = vec![16];
    cfg.encoder.disc_hidden_widths = vec![16];
    cfg.encoder.epochs = 5;
    cfg.sensitive_classifier.hidden_widths = vec![8];
    cfg.sensitive_classifier.epochs = 10;
    cfg.task.hidden_widths = vec![8, 8];
    cfg.task.epochs = 10;
    cfg.methods = vec![
        MethodGrid::Plain,
        MethodGrid::Dvge {
            eta1: vec![0.0, 1.0],
            eta2: vec![0.5],
            max_points: 0,
        },
        MethodGrid::Adt { lambda: vec![1.0] },
        MethodGrid::DimRemoval { k: vec![1] },
    ];
    cfg.ablation.eta1 = vec![0.5, 1.0];
    cfg
}

pub fn write_config(dir: &Path, cfg: &ExperimentConfig) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, cfg.to_json()).unwrap();
    p
}

pub fn dvge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dvge"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}
