//! Experiment configuration (JSON, versioned) and its reproducible hash.

use std::path::{Path, PathBuf};

use dvge_core::baselines::{default_eta1_grid, ClassifierSpec};
use dvge_core::data::BinaryRule;
use dvge_core::nn::{Activation, AdamConfig, TrainConfig};
use dvge_core::rng::{permutation, rng_from_seed};
use dvge_core::synth::{SyntheticSpec, LABEL, SENSITIVE};
use dvge_core::vae::VaeConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Seed of the fixed subsample drawn from a large η grid.
const GRID_SUBSAMPLE_SEED: u64 = 0x5eed_e7a5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Prefix of every emitted CSV, e.g. `experiment4`.
    pub experiment: String,
    pub dataset: DatasetSource,
    /// Sensitive group is the conjunction of these attributes.
    pub sensitive: Vec<AttributeRule>,
    pub label: AttributeRule,
    /// Columns kept out of the encoder input besides the label.
    #[serde(default)]
    pub drop_columns: Vec<String>,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    pub encoder: EncoderConfig,
    pub sensitive_classifier: ClassifierConfig,
    pub task: ClassifierConfig,
    #[serde(default = "default_eps_ratio")]
    pub eps_ratio: f64,
    pub methods: Vec<MethodGrid>,
    #[serde(default)]
    pub ablation: AblationConfig,
    pub seeds: Vec<u64>,
    /// Write wall-clock seconds into result rows. Off by default so result
    /// files are byte-reproducible.
    #[serde(default)]
    pub record_timing: bool,
}

fn default_train_fraction() -> f64 {
    0.8
}

fn default_eps_ratio() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic {
        #[serde(flatten)]
        spec: SyntheticSpec,
    },
    Credit {
        path: PathBuf,
        #[serde(default)]
        delimiter: Option<char>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeRule {
    pub column: String,
    #[serde(flatten)]
    pub rule: BinaryRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Vanilla,
    Factor,
}

impl EncoderKind {
    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::Vanilla => "vanilla",
            EncoderKind::Factor => "factor",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    #[serde(default)]
    pub gamma: f64,
    pub latent_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub recon_weight: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub betas: (f64, f64),
    pub disc_lr: f64,
    pub disc_betas: (f64, f64),
    pub disc_hidden_widths: Vec<usize>,
}

impl EncoderConfig {
    pub fn vae_config(&self, kind: EncoderKind, seed: u64) -> VaeConfig {
        VaeConfig {
            latent_dim: self.latent_dim,
            hidden_widths: self.hidden_widths.clone(),
            activation: Activation::LEAKY,
            gamma: if kind == EncoderKind::Factor {
                self.gamma
            } else {
                0.0
            },
            recon_weight: self.recon_weight,
            vae_adam: AdamConfig::new(self.lr, self.betas.0, self.betas.1),
            disc_adam: AdamConfig::new(self.disc_lr, self.disc_betas.0, self.disc_betas.1),
            disc_hidden_widths: self.disc_hidden_widths.clone(),
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub hidden_widths: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub betas: (f64, f64),
}

impl ClassifierConfig {
    pub fn spec(&self) -> ClassifierSpec {
        ClassifierSpec {
            hidden_widths: self.hidden_widths.clone(),
            activation: Activation::LEAKY,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: AdamConfig::new(self.lr, self.betas.0, self.betas.1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodGrid {
    Plain,
    /// Cross product of `eta1 × eta2`, subsampled to `max_points` pairs with
    /// a fixed seed when larger (0 keeps everything).
    Dvge {
        eta1: Vec<f64>,
        eta2: Vec<f64>,
        #[serde(default)]
        max_points: usize,
    },
    /// The shared encoder takes all but the last task hidden layer; the
    /// last one is the feature width.
    Adt {
        lambda: Vec<f64>,
    },
    DimRemoval {
        k: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub eta1: Vec<f64>,
    /// Number of latent dimensions dropped for the removal column.
    pub removed_dims: usize,
    pub encoders: Vec<EncoderKind>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            eta1: default_eta1_grid(),
            removed_dims: 1,
            encoders: vec![EncoderKind::Vanilla, EncoderKind::Factor],
        }
    }
}

/// One trainable configuration of one method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Plain,
    Dvge { eta1: f64, eta2: f64 },
    Adt { lambda: f64 },
    DimRemoval { k: usize },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Plain => "plain",
            Method::Dvge { .. } => "dvge",
            Method::Adt { .. } => "adt",
            Method::DimRemoval { .. } => "dim_removal",
        }
    }

    /// `(eta1, eta2, lambda)` as written to result rows; `lambda` carries the
    /// removed-dimension count for dimension removal.
    pub fn columns(&self) -> (f64, f64, f64) {
        match *self {
            Method::Plain => (0.0, 0.0, 0.0),
            Method::Dvge { eta1, eta2 } => (eta1, eta2, 0.0),
            Method::Adt { lambda } => (0.0, 0.0, lambda),
            Method::DimRemoval { k } => (0.0, 0.0, k as f64),
        }
    }
}

impl MethodGrid {
    pub fn points(&self) -> Vec<Method> {
        match self {
            MethodGrid::Plain => vec![Method::Plain],
            MethodGrid::Dvge {
                eta1,
                eta2,
                max_points,
            } => {
                let mut all: Vec<Method> = eta1
                    .iter()
                    .flat_map(|&a| eta2.iter().map(move |&b| Method::Dvge { eta1: a, eta2: b }))
                    .collect();
                if *max_points > 0 && all.len() > *max_points {
                    let mut keep = permutation(&mut rng_from_seed(GRID_SUBSAMPLE_SEED), all.len());
                    keep.truncate(*max_points);
                    keep.sort_unstable();
                    all = keep.into_iter().map(|i| all[i]).collect();
                }
                all
            }
            MethodGrid::Adt { lambda } => {
                lambda.iter().map(|&l| Method::Adt { lambda: l }).collect()
            }
            MethodGrid::DimRemoval { k } => k.iter().map(|&k| Method::DimRemoval { k }).collect(),
        }
    }
}

/// `0.1, 0.2, …, 2.0`.
pub fn eta_sweep_values() -> Vec<f64> {
    (1..=20).map(|i| i as f64 / 10.0).collect()
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {})",
                self.schema_version, SCHEMA_VERSION
            )));
        }
        if self.experiment.is_empty() || self.experiment.contains(['/', '\\']) {
            return Err(Error::Config(format!(
                "experiment name '{}' is not a file prefix",
                self.experiment
            )));
        }
        if self.sensitive.is_empty() {
            return Err(Error::Config(
                "at least one sensitive attribute is required".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction {} not in (0, 1)",
                self.train_fraction
            )));
        }
        if !(self.eps_ratio >= 0.0) {
            return Err(Error::Config(format!(
                "eps_ratio {} must be >= 0",
                self.eps_ratio
            )));
        }
        if self.encoder.latent_dim == 0 || !(self.encoder.gamma >= 0.0) {
            return Err(Error::Config(
                "encoder needs latent_dim > 0 and gamma >= 0".into(),
            ));
        }
        self.sensitive_classifier.train().validate()?;
        self.task.train().validate()?;
        for m in &self.methods {
            for p in m.points() {
                match p {
                    Method::Dvge { eta1, eta2 } if !(eta1 >= 0.0 && eta2 >= 0.0) => {
                        return Err(Error::Config(format!(
                            "negative eta in ({}, {})",
                            eta1, eta2
                        )))
                    }
                    Method::Adt { lambda, .. } if !(lambda >= 0.0) => {
                        return Err(Error::Config(format!("negative lambda {}", lambda)))
                    }
                    Method::DimRemoval { k } if k >= self.encoder.latent_dim => {
                        return Err(Error::Config(format!(
                            "cannot remove {} of {} latent dimensions",
                            k, self.encoder.latent_dim
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        hash_json(&serde_json::to_value(self).expect("config serialises"))
    }

    /// All grid points in declaration order.
    pub fn grid(&self) -> Vec<Method> {
        self.methods.iter().flat_map(MethodGrid::points).collect()
    }

    /// Small synthetic experiment that runs in seconds.
    pub fn synthetic_default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            experiment: "synthetic".into(),
            dataset: DatasetSource::Synthetic {
                spec: SyntheticSpec::default(),
            },
            sensitive: vec![AttributeRule {
                column: SENSITIVE.into(),
                rule: BinaryRule::Identity,
            }],
            label: AttributeRule {
                column: LABEL.into(),
                rule: BinaryRule::Identity,
            },
            drop_columns: Vec::new(),
            train_fraction: default_train_fraction(),
            encoder: EncoderConfig {
                kind: EncoderKind::Vanilla,
                gamma: 2.0,
                latent_dim: 10,
                hidden_widths: vec![64, 64],
                recon_weight: 50.0,
                epochs: 30,
                batch_size: 64,
                lr: 1e-3,
                betas: (0.9, 0.999),
                disc_lr: 1e-4,
                disc_betas: (0.5, 0.9),
                disc_hidden_widths: vec![64, 64],
            },
            sensitive_classifier: ClassifierConfig {
                hidden_widths: vec![32, 32],
                epochs: 20,
                batch_size: 64,
                lr: 1e-3,
                betas: (0.5, 0.9),
            },
            task: ClassifierConfig {
                hidden_widths: vec![32, 32],
                epochs: 20,
                batch_size: 64,
                lr: 1e-3,
                betas: (0.5, 0.9),
            },
            eps_ratio: default_eps_ratio(),
            methods: vec![
                MethodGrid::Plain,
                MethodGrid::Dvge {
                    eta1: vec![0.0, 0.5, 1.0, 2.0],
                    eta2: vec![0.5],
                    max_points: 0,
                },
                MethodGrid::Adt {
                    lambda: vec![0.5, 1.0],
                },
                MethodGrid::DimRemoval { k: vec![1, 2] },
            ],
            ablation: AblationConfig::default(),
            seeds: vec![0],
            record_timing: false,
        }
    }

    /// Credit data, sensitive attribute `age >= 25`, label `credit_risk`, and a
    /// 40-point η sweep.
    pub fn credit_default(path: PathBuf) -> Self {
        let base = ExperimentConfig::synthetic_default();
        ExperimentConfig {
            experiment: "experiment4".into(),
            dataset: DatasetSource::Credit {
                path,
                delimiter: None,
            },
            sensitive: vec![AttributeRule {
                column: "age".into(),
                rule: BinaryRule::Threshold { at: 25.0 },
            }],
            label: AttributeRule {
                column: "credit_risk".into(),
                rule: BinaryRule::Identity,
            },
            encoder: EncoderConfig {
                epochs: 200,
                ..base.encoder.clone()
            },
            sensitive_classifier: ClassifierConfig {
                epochs: 60,
                ..base.sensitive_classifier.clone()
            },
            task: ClassifierConfig {
                epochs: 50,
                ..base.task.clone()
            },
            methods: vec![
                MethodGrid::Plain,
                MethodGrid::Dvge {
                    eta1: eta_sweep_values(),
                    eta2: eta_sweep_values(),
                    max_points: 40,
                },
                MethodGrid::DimRemoval {
                    k: (1..10).collect(),
                },
            ],
            seeds: vec![0, 1, 2],
            ..base
        }
    }
}

pub fn hash_json(value: &serde_json::Value) -> String {
    let digest = Sha256::digest(value.to_string().as_bytes());
    digest[..8].iter().map(|b| format!("{:02x}", b)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        for cfg in [
            ExperimentConfig::synthetic_default(),
            ExperimentConfig::credit_default("data/german_credit.txt".into()),
        ] {
            cfg.validate().unwrap();
            let back: ExperimentConfig = serde_json::from_str(&cfg.to_json()).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.hash(), cfg.hash());
        }
    }

    #[test]
    fn hash_changes_with_content() {
        let a = ExperimentConfig::synthetic_default();
        let mut b = a.clone();
        b.eps_ratio = 0.2;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn eta_grid_is_subsampled_deterministically() {
        let g = MethodGrid::Dvge {
            eta1: eta_sweep_values(),
            eta2: eta_sweep_values(),
            max_points: 40,
        };
        let p = g.points();
        assert_eq!(p.len(), 40);
        assert_eq!(p, g.points());
        let full = MethodGrid::Dvge {
            eta1: eta_sweep_values(),
            eta2: eta_sweep_values(),
            max_points: 0,
        };
        assert_eq!(full.points().len(), 400);
    }

    #[test]
    fn rejects_bad_versions_and_values() {
        let mut c = ExperimentConfig::synthetic_default();
        c.schema_version = 2;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::synthetic_default();
        c.methods = vec![MethodGrid::DimRemoval { k: vec![10] }];
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::synthetic_default();
        c.seeds.clear();
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v = serde_json::to_value(ExperimentConfig::synthetic_default()).unwrap();
        v["surprise"] = serde_json::json!(1);
        assert!(serde_json::from_value::<ExperimentConfig>(v).is_err());
    }
}
