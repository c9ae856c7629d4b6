//! Seeded experiment stages: dataset → encoder → sensitive classifier →
//! downstream model → held-out fairness report. Trained encoders and
//! sensitive classifiers are cached on disk by a hash of everything that
//! determines them.

use std::path::{Path, PathBuf};
use std::time::Instant;

use dvge_core::baselines::{
    remove_dims, select_sensitive_dims, train_adt, train_sensitive_classifier, AdtConfig, AdtModel,
    SensitiveClassifier,
};
use dvge_core::data::{binarize, bools_to_labels, conjunction, normalize, split, Table};
use dvge_core::debias::{infer, train_dvge, train_plain, PerturbationConfig};
use dvge_core::fairness::{EvalBatch, FairnessReport};
use dvge_core::nn::{Activation, Mlp};
use dvge_core::rng::{derive_seed, stage_rng};
use dvge_core::synth::generate;
use dvge_core::tensor::Tensor;
use dvge_core::vae::{train_factor_vae, train_vanilla_vae, VaeModel};
use serde::Serialize;
use serde_json::json;

use crate::checkpoint;
use crate::config::{hash_json, DatasetSource, EncoderKind, ExperimentConfig, Method};
use crate::credit::load_credit;
use crate::error::Result;
use crate::io::ResultRow;

/// Raw table plus everything derived from it that does not depend on a seed.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub raw: Table,
    pub normalized: Table,
    /// Encoder input: normalised columns minus label and dropped columns.
    pub features: Tensor,
    pub feature_names: Vec<String>,
    pub labels: Vec<usize>,
    pub groups: Vec<usize>,
}

pub fn load_table(source: &DatasetSource) -> Result<Table> {
    Ok(match source {
        DatasetSource::Synthetic { spec } => generate(spec)?,
        DatasetSource::Credit { path, delimiter } => load_credit(path, *delimiter)?,
    })
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let raw = load_table(&cfg.dataset)?;
    let labels = bools_to_labels(&binarize(&raw, &cfg.label.column, &cfg.label.rule)?);
    let attrs = cfg
        .sensitive
        .iter()
        .map(|a| binarize(&raw, &a.column, &a.rule))
        .collect::<dvge_core::Result<Vec<_>>>()?;
    let groups = bools_to_labels(&conjunction(&attrs)?);
    let normalized = normalize(&raw)?;
    let mut exclude: Vec<&str> = vec![cfg.label.column.as_str()];
    exclude.extend(cfg.drop_columns.iter().map(String::as_str));
    let features = normalized.features(&exclude)?;
    let feature_names = normalized
        .names()
        .into_iter()
        .filter(|n| !exclude.contains(n))
        .map(str::to_string)
        .collect();
    Ok(Dataset {
        raw,
        normalized,
        features,
        feature_names,
        labels,
        groups,
    })
}

/// Where cached stage outputs live; `None` disables caching.
#[derive(Debug, Clone, Default)]
pub struct Cache {
    pub dir: Option<PathBuf>,
}

impl Cache {
    pub fn at(dir: &Path) -> Self {
        Cache {
            dir: Some(dir.join("cache")),
        }
    }

    fn path(&self, stage: &str, key: &str) -> Option<PathBuf> {
        self.dir
            .as_ref()
            .map(|d| d.join(format!("{}-{}.json", stage, key)))
    }
}

/// Frozen models and codes for one (seed, encoder kind).
#[derive(Debug, Clone)]
pub struct SeedContext {
    pub seed: u64,
    pub kind: EncoderKind,
    pub gamma: f64,
    pub vae: VaeModel,
    pub sensitive: SensitiveClassifier,
    pub train_codes: Tensor,
    pub test_codes: Tensor,
    pub y_train: Vec<usize>,
    pub y_test: Vec<usize>,
    pub s_train: Vec<usize>,
    pub s_test: Vec<usize>,
    pub record: StageRecord,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageRecord {
    pub seed: u64,
    pub encoder: EncoderKind,
    pub vae_key: String,
    pub vae_checkpoint: Option<PathBuf>,
    pub vae_cache_hit: bool,
    pub vae_losses: Vec<f64>,
    pub sensitive_key: String,
    pub sensitive_checkpoint: Option<PathBuf>,
    pub sensitive_cache_hit: bool,
    pub sensitive_best_accuracy: f64,
    pub sensitive_best_epoch: usize,
}

pub fn vae_key(cfg: &ExperimentConfig, kind: EncoderKind, seed: u64) -> String {
    hash_json(&json!({
        "stage": "vae",
        "dataset": cfg.dataset,
        "label": cfg.label,
        "drop_columns": cfg.drop_columns,
        "train_fraction": cfg.train_fraction,
        "encoder": cfg.encoder,
        "kind": kind,
        "seed": seed,
    }))
}

fn sensitive_key(cfg: &ExperimentConfig, vae_key: &str) -> String {
    hash_json(&json!({
        "stage": "sensitive",
        "vae": vae_key,
        "sensitive": cfg.sensitive,
        "classifier": cfg.sensitive_classifier,
    }))
}

fn pick(v: &[usize], idx: &[usize]) -> Vec<usize> {
    idx.iter().map(|&i| v[i]).collect()
}

/// Trains (or loads) the encoder for `(kind, seed)` on the training split.
/// Returns the model, its per-epoch losses (empty on a cache hit) and the
/// checkpoint path.
pub fn encoder_stage(
    cfg: &ExperimentConfig,
    data: &Dataset,
    train_idx: &[usize],
    kind: EncoderKind,
    seed: u64,
    cache: &Cache,
) -> Result<(VaeModel, Vec<f64>, Option<PathBuf>, bool)> {
    let key = vae_key(cfg, kind, seed);
    let path = cache.path("vae", &key);
    if let Some(p) = path.as_ref().filter(|p| p.exists()) {
        return Ok((checkpoint::load_vae(p)?, Vec::new(), path, true));
    }
    let vcfg = cfg.encoder.vae_config(kind, derive_seed(seed, "encoder"));
    let x = data.features.select_rows(train_idx);
    let run = match kind {
        EncoderKind::Vanilla => train_vanilla_vae(&x, &vcfg)?,
        EncoderKind::Factor => train_factor_vae(&x, &vcfg)?,
    };
    if let Some(p) = &path {
        checkpoint::save_vae(p, &key, &run.model)?;
    }
    Ok((run.model, run.losses, path, false))
}

pub fn prepare_seed(
    cfg: &ExperimentConfig,
    data: &Dataset,
    kind: EncoderKind,
    seed: u64,
    cache: &Cache,
) -> Result<SeedContext> {
    let (train_idx, test_idx) = split(
        data.features.rows(),
        cfg.train_fraction,
        derive_seed(seed, "split"),
    )?;
    let (vae, vae_losses, vae_checkpoint, vae_cache_hit) =
        encoder_stage(cfg, data, &train_idx, kind, seed, cache)?;
    let codes = vae.encode_mean(&data.features)?;
    let train_codes = codes.select_rows(&train_idx);
    let test_codes = codes.select_rows(&test_idx);
    let s_train = pick(&data.groups, &train_idx);
    let s_test = pick(&data.groups, &test_idx);

    let vkey = vae_key(cfg, kind, seed);
    let skey = sensitive_key(cfg, &vkey);
    let spath = cache.path("sensitive", &skey);
    let (sensitive, sensitive_cache_hit) = match spath.as_ref().filter(|p| p.exists()) {
        Some(p) => (checkpoint::load_sensitive(p)?, true),
        None => {
            let mut rng = stage_rng(seed, "sensitive_classifier");
            let d = train_sensitive_classifier(
                &train_codes,
                &s_train,
                &test_codes,
                &s_test,
                &cfg.sensitive_classifier.spec(),
                &cfg.sensitive_classifier.train(),
                &mut rng,
            )?;
            if let Some(p) = &spath {
                checkpoint::save_sensitive(p, &skey, &d)?;
            }
            (d, false)
        }
    };
    let record = StageRecord {
        seed,
        encoder: kind,
        vae_key: vkey,
        vae_checkpoint,
        vae_cache_hit,
        vae_losses,
        sensitive_key: skey,
        sensitive_checkpoint: spath,
        sensitive_cache_hit,
        sensitive_best_accuracy: sensitive.best_accuracy,
        sensitive_best_epoch: sensitive.best_epoch,
    };
    Ok(SeedContext {
        seed,
        kind,
        gamma: if kind == EncoderKind::Factor {
            cfg.encoder.gamma
        } else {
            0.0
        },
        vae,
        sensitive,
        train_codes,
        test_codes,
        y_train: pick(&data.labels, &train_idx),
        y_test: pick(&data.labels, &test_idx),
        s_train,
        s_test,
        record,
    })
}

/// A trained downstream model of any method.
#[derive(Debug, Clone)]
pub enum TaskModel {
    Mlp(Mlp),
    Reduced { model: Mlp, removed: Vec<usize> },
    Adt(AdtModel),
}

impl TaskModel {
    pub fn predict(&self, codes: &Tensor) -> Result<Vec<usize>> {
        Ok(match self {
            TaskModel::Mlp(m) => infer(m, codes)?,
            TaskModel::Reduced { model, removed } => infer(model, &remove_dims(codes, removed)?)?,
            TaskModel::Adt(m) => m.predict(codes)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct PointOutcome {
    pub model: TaskModel,
    pub losses: Vec<f64>,
    pub report: FairnessReport,
    pub seconds: f64,
}

pub fn evaluate(pred: &[usize], labels: &[usize], groups: &[usize]) -> Result<FairnessReport> {
    let p: Vec<bool> = pred.iter().map(|&v| v == 1).collect();
    let y: Vec<bool> = labels.iter().map(|&v| v == 1).collect();
    let s: Vec<bool> = groups.iter().map(|&v| v == 1).collect();
    Ok(FairnessReport::evaluate(&EvalBatch::new(&p, &y, &s)?)?)
}

/// Trains one downstream model for `method` and evaluates it on the test split.
pub fn run_point(
    cfg: &ExperimentConfig,
    ctx: &SeedContext,
    method: &Method,
) -> Result<PointOutcome> {
    let start = Instant::now();
    let mut rng = stage_rng(ctx.seed, "task");
    let train = cfg.task.train();
    let spec = cfg.task.spec();
    let width = ctx.train_codes.cols();
    let (model, losses) = match *method {
        Method::Plain => {
            let mut g = Mlp::new(spec.mlp(width), &mut rng)?;
            let losses = train_plain(&mut g, &ctx.train_codes, &ctx.y_train, &train, &mut rng)?;
            (TaskModel::Mlp(g), losses)
        }
        Method::Dvge { eta1, eta2 } => {
            let mut g = Mlp::new(spec.mlp(width), &mut rng)?;
            let p = PerturbationConfig {
                eta1,
                eta2,
                eps_ratio: cfg.eps_ratio,
            };
            let losses = train_dvge(
                &mut g,
                &ctx.sensitive.model,
                &ctx.train_codes,
                &ctx.y_train,
                &p,
                &train,
                &mut rng,
            )?;
            (TaskModel::Mlp(g), losses)
        }
        Method::DimRemoval { k } => {
            let removed = select_sensitive_dims(&ctx.train_codes, &ctx.s_train, k)?;
            let reduced = remove_dims(&ctx.train_codes, &removed)?;
            let mut g = Mlp::new(spec.mlp(reduced.cols()), &mut rng)?;
            let losses = train_plain(&mut g, &reduced, &ctx.y_train, &train, &mut rng)?;
            (TaskModel::Reduced { model: g, removed }, losses)
        }
        Method::Adt { lambda } => {
            let mut hidden = spec.hidden_widths.clone();
            let feature_width = hidden.pop().unwrap_or(width);
            let acfg = AdtConfig {
                encoder_hidden: hidden,
                feature_width,
                branch_hidden: Vec::new(),
                activation: Activation::LEAKY,
                lambda,
            };
            let m = train_adt(
                &ctx.train_codes,
                &ctx.y_train,
                &ctx.s_train,
                &acfg,
                &train,
                &mut rng,
            )?;
            (TaskModel::Adt(m), Vec::new())
        }
    };
    let pred = model.predict(&ctx.test_codes)?;
    let report = evaluate(&pred, &ctx.y_test, &ctx.s_test)?;
    Ok(PointOutcome {
        model,
        losses,
        report,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn run_id(config_hash: &str, point: usize, kind: EncoderKind, seed: u64) -> String {
    format!(
        "{}-{}-p{:03}-s{}",
        &config_hash[..8],
        kind.name(),
        point,
        seed
    )
}

/// Result row for a finished point; failed points carry NaN metrics.
pub fn result_row(
    cfg: &ExperimentConfig,
    config_hash: &str,
    point: usize,
    method: &Method,
    ctx_seed: u64,
    kind: EncoderKind,
    outcome: Option<&PointOutcome>,
) -> ResultRow {
    let (eta1, eta2, lambda) = method.columns();
    let nan = f64::NAN;
    ResultRow {
        run_id: run_id(config_hash, point, kind, ctx_seed),
        config_hash: config_hash.to_string(),
        method: method.name().to_string(),
        eta1,
        eta2,
        gamma: if kind == EncoderKind::Factor {
            cfg.encoder.gamma
        } else {
            0.0
        },
        lambda,
        seed: ctx_seed,
        accuracy: outcome.map_or(nan, |o| o.report.accuracy),
        delta_dp: outcome.map_or(nan, |o| o.report.delta_dp),
        delta_eo: outcome.map_or(nan, |o| o.report.delta_eo),
        seconds: match outcome {
            Some(o) if cfg.record_timing => o.seconds,
            _ => 0.0,
        },
    }
}
