//! The CLI subcommands as library functions. Each writes its outputs under
//! `out` and a `<experiment>_<command>_manifest.json` describing the run.

use std::path::{Path, PathBuf};

use dvge_core::baselines::{
    ablation_fixed, ablation_retrained, select_sensitive_dims, AblationInput, AblationRow,
};
use dvge_core::explain::{explanation_map, focus, map_entries, Psi};
use dvge_core::fairness::FairnessReport;
use serde::Serialize;

use crate::checkpoint;
use crate::config::{EncoderKind, ExperimentConfig, Method};
use crate::error::{Error, Result};
use crate::io::{self, ResultRow};
use crate::pipeline::{self, Cache, Dataset, SeedContext, StageRecord, TaskModel};
use crate::pool::parallel_map;
use crate::report::{fronts, seed_means};

#[derive(Debug, Serialize)]
pub struct RunRecord {
    pub run_id: String,
    pub method: String,
    pub seed: u64,
    pub losses: Vec<f64>,
    pub report: Option<FairnessReport>,
    pub error: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub experiment: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub stages: Vec<StageRecord>,
    pub runs: Vec<RunRecord>,
    pub outputs: Vec<PathBuf>,
    pub failures: Vec<String>,
}

impl Manifest {
    fn new(command: &str, cfg: &ExperimentConfig) -> Self {
        Manifest {
            command: command.into(),
            experiment: cfg.experiment.clone(),
            config_hash: cfg.hash(),
            config: cfg.clone(),
            seeds: cfg.seeds.clone(),
            stages: Vec::new(),
            runs: Vec::new(),
            outputs: Vec::new(),
            failures: Vec::new(),
        }
    }

    fn write(&mut self, out: &Path) -> Result<PathBuf> {
        let path = out.join(format!(
            "{}_{}_manifest.json",
            self.experiment, self.command
        ));
        io::write_json(&path, self)?;
        Ok(path)
    }
}

fn contexts(
    cfg: &ExperimentConfig,
    data: &Dataset,
    kinds: &[EncoderKind],
    cache: &Cache,
    jobs: usize,
) -> Result<Vec<SeedContext>> {
    let cells: Vec<(EncoderKind, u64)> = kinds
        .iter()
        .flat_map(|&k| cfg.seeds.iter().map(move |&s| (k, s)))
        .collect();
    parallel_map(&cells, jobs, |_, &(k, s)| {
        pipeline::prepare_seed(cfg, data, k, s, cache)
    })
    .into_iter()
    .collect()
}

/// Trains (or loads from cache) the encoder of every seed.
pub fn train_vae(cfg: &ExperimentConfig, out: &Path, jobs: usize) -> Result<Manifest> {
    let data = pipeline::load_dataset(cfg)?;
    let cache = Cache::at(out);
    let mut m = Manifest::new("train-vae", cfg);
    let n = data.features.rows();
    let results = parallel_map(&cfg.seeds, jobs, |_, &seed| -> Result<StageRecord> {
        let (train_idx, _) = dvge_core::data::split(
            n,
            cfg.train_fraction,
            dvge_core::rng::derive_seed(seed, "split"),
        )?;
        let (_, losses, path, hit) =
            pipeline::encoder_stage(cfg, &data, &train_idx, cfg.encoder.kind, seed, &cache)?;
        Ok(StageRecord {
            seed,
            encoder: cfg.encoder.kind,
            vae_key: pipeline::vae_key(cfg, cfg.encoder.kind, seed),
            vae_checkpoint: path,
            vae_cache_hit: hit,
            vae_losses: losses,
            sensitive_key: String::new(),
            sensitive_checkpoint: None,
            sensitive_cache_hit: false,
            sensitive_best_accuracy: f64::NAN,
            sensitive_best_epoch: 0,
        })
    });
    for r in results {
        let r = r?;
        m.outputs.extend(r.vae_checkpoint.clone());
        m.stages.push(r);
    }
    m.write(out)?;
    Ok(m)
}

/// Encoder plus sensitive classifier for every seed.
pub fn train_sensitive(cfg: &ExperimentConfig, out: &Path, jobs: usize) -> Result<Manifest> {
    let data = pipeline::load_dataset(cfg)?;
    let cache = Cache::at(out);
    let mut m = Manifest::new("train-sensitive", cfg);
    for ctx in contexts(cfg, &data, &[cfg.encoder.kind], &cache, jobs)? {
        m.outputs.extend(ctx.record.vae_checkpoint.clone());
        m.outputs.extend(ctx.record.sensitive_checkpoint.clone());
        m.stages.push(ctx.record);
    }
    m.write(out)?;
    Ok(m)
}

/// Trains one method setting per seed, saves the models and optionally dumps
/// sensitive-focus explanation maps of the test split.
pub fn train_task(
    cfg: &ExperimentConfig,
    method: Method,
    out: &Path,
    jobs: usize,
    explain: Option<Psi>,
) -> Result<(Manifest, Vec<ResultRow>)> {
    let data = pipeline::load_dataset(cfg)?;
    let cache = Cache::at(out);
    let hash = cfg.hash();
    let mut m = Manifest::new("train-task", cfg);
    let ctxs = contexts(cfg, &data, &[cfg.encoder.kind], &cache, jobs)?;
    let outcomes = parallel_map(&ctxs, jobs, |_, ctx| pipeline::run_point(cfg, ctx, &method));
    let mut rows = Vec::new();
    for (ctx, outcome) in ctxs.iter().zip(outcomes) {
        let outcome = outcome?;
        let row = pipeline::result_row(cfg, &hash, 0, &method, ctx.seed, ctx.kind, Some(&outcome));
        let path = out
            .join("checkpoints")
            .join(format!("task-{}.json", row.run_id));
        match &outcome.model {
            TaskModel::Mlp(g) => checkpoint::save_task(&path, &row.run_id, g)?,
            TaskModel::Reduced { model, .. } => checkpoint::save_task(&path, &row.run_id, model)?,
            TaskModel::Adt(a) => checkpoint::save_adt(&path, &row.run_id, a)?,
        }
        m.outputs.push(path);
        if let Some(psi) = explain {
            let f = focus(&ctx.sensitive.model, &ctx.test_codes)?;
            let map = explanation_map(&f, &ctx.test_codes, psi)?;
            let p = out.join(format!("{}_explanations_s{}.csv", cfg.experiment, ctx.seed));
            io::write_explanations(&p, &map_entries(&map))?;
            m.outputs.push(p);
        }
        m.runs.push(RunRecord {
            run_id: row.run_id.clone(),
            method: row.method.clone(),
            seed: ctx.seed,
            losses: outcome.losses,
            report: Some(outcome.report),
            error: None,
        });
        rows.push(row);
    }
    m.stages = ctxs.into_iter().map(|c| c.record).collect();
    let results = out.join(format!("{}_task_results.csv", cfg.experiment));
    io::write_results(&results, &rows)?;
    m.outputs.push(results);
    m.write(out)?;
    Ok((m, rows))
}

/// Every grid point for every seed. A failing point is recorded and the
/// sweep continues.
pub fn sweep(
    cfg: &ExperimentConfig,
    out: &Path,
    jobs: usize,
) -> Result<(Manifest, Vec<ResultRow>)> {
    let data = pipeline::load_dataset(cfg)?;
    let cache = Cache::at(out);
    let hash = cfg.hash();
    let grid = cfg.grid();
    let mut m = Manifest::new("sweep", cfg);
    let ctxs = contexts(cfg, &data, &[cfg.encoder.kind], &cache, jobs)?;
    let cells: Vec<(usize, usize)> = (0..ctxs.len())
        .flat_map(|c| (0..grid.len()).map(move |p| (c, p)))
        .collect();
    let outcomes = parallel_map(&cells, jobs, |_, &(c, p)| {
        pipeline::run_point(cfg, &ctxs[c], &grid[p])
    });
    let mut rows = Vec::with_capacity(cells.len());
    for (&(c, p), outcome) in cells.iter().zip(outcomes) {
        let ctx = &ctxs[c];
        let row = pipeline::result_row(
            cfg,
            &hash,
            p,
            &grid[p],
            ctx.seed,
            ctx.kind,
            outcome.as_ref().ok(),
        );
        let (losses, report, error) = match outcome {
            Ok(o) => (o.losses, Some(o.report), None),
            Err(e) => {
                m.failures.push(format!("{}: {}", row.run_id, e));
                (Vec::new(), None, Some(e.to_string()))
            }
        };
        m.runs.push(RunRecord {
            run_id: row.run_id.clone(),
            method: row.method.clone(),
            seed: ctx.seed,
            losses,
            report,
            error,
        });
        rows.push(row);
    }
    m.stages = ctxs.into_iter().map(|c| c.record).collect();
    let results = out.join(format!("{}_results.csv", cfg.experiment));
    io::write_results(&results, &rows)?;
    let points = seed_means(&rows);
    let mut front_rows = fronts(&points, "dp");
    front_rows.extend(fronts(&points, "eo"));
    let pareto = out.join(format!("{}_pareto.csv", cfg.experiment));
    io::write_fronts(&pareto, &front_rows)?;
    m.outputs.extend([results, pareto]);
    m.write(out)?;
    Ok((m, rows))
}

/// Both ablations for one frozen context.
pub fn ablation_cell(
    cfg: &ExperimentConfig,
    ctx: &SeedContext,
) -> Result<(AblationRow, AblationRow)> {
    let dims = select_sensitive_dims(&ctx.train_codes, &ctx.s_train, cfg.ablation.removed_dims)?;
    let input = AblationInput {
        train_codes: &ctx.train_codes,
        train_s: &ctx.s_train,
        test_codes: &ctx.test_codes,
        test_s: &ctx.s_test,
        sensitive: &ctx.sensitive.model,
        eta1_grid: &cfg.ablation.eta1,
        eps_ratio: cfg.eps_ratio,
        removed_dims: &dims,
    };
    let retrained = ablation_retrained(
        &input,
        &cfg.sensitive_classifier.spec(),
        &cfg.sensitive_classifier.train(),
        ctx.seed,
    )?;
    Ok((retrained, ablation_fixed(&input)?))
}

fn mean_rows(rows: &[AblationRow]) -> AblationRow {
    let n = rows.len() as f64;
    let first = &rows[0];
    AblationRow {
        no_removal: rows.iter().map(|r| r.no_removal).sum::<f64>() / n,
        removed: rows.iter().map(|r| r.removed).sum::<f64>() / n,
        eta1: first.eta1.clone(),
        accuracy: (0..first.accuracy.len())
            .map(|j| rows.iter().map(|r| r.accuracy[j]).sum::<f64>() / n)
            .collect(),
    }
}

#[derive(Debug, Clone, Serialize)]
struct AblationRunRow {
    encoder: String,
    protocol: String,
    seed: u64,
    column: String,
    accuracy: f64,
}

/// Seed-mean ablation tables per encoder kind.
#[derive(Debug, Clone)]
pub struct AblationOutput {
    pub retrained: Vec<(String, AblationRow)>,
    pub fixed: Vec<(String, AblationRow)>,
    /// Per-seed rows: `(encoder, seed, retrained, fixed)`.
    pub per_seed: Vec<(EncoderKind, u64, AblationRow, AblationRow)>,
}

pub fn ablation(
    cfg: &ExperimentConfig,
    out: &Path,
    jobs: usize,
) -> Result<(Manifest, AblationOutput)> {
    let data = pipeline::load_dataset(cfg)?;
    let cache = Cache::at(out);
    let mut m = Manifest::new("ablation", cfg);
    let ctxs = contexts(cfg, &data, &cfg.ablation.encoders, &cache, jobs)?;
    let cells = parallel_map(&ctxs, jobs, |_, ctx| ablation_cell(cfg, ctx));
    let mut per_seed = Vec::new();
    for (ctx, cell) in ctxs.iter().zip(cells) {
        let (r, f) = cell?;
        per_seed.push((ctx.kind, ctx.seed, r, f));
    }
    let mut output = AblationOutput {
        retrained: Vec::new(),
        fixed: Vec::new(),
        per_seed,
    };
    let mut runs = Vec::new();
    for &kind in &cfg.ablation.encoders {
        let mine: Vec<&(EncoderKind, u64, AblationRow, AblationRow)> =
            output.per_seed.iter().filter(|c| c.0 == kind).collect();
        let r: Vec<AblationRow> = mine.iter().map(|c| c.2.clone()).collect();
        let f: Vec<AblationRow> = mine.iter().map(|c| c.3.clone()).collect();
        output
            .retrained
            .push((kind.name().to_string(), mean_rows(&r)));
        output.fixed.push((kind.name().to_string(), mean_rows(&f)));
        for (kind, seed, r, f) in mine {
            for (protocol, row) in [("retrained", r), ("fixed", f)] {
                let mut cols = vec![
                    ("no_removal".to_string(), row.no_removal),
                    ("removed".to_string(), row.removed),
                ];
                cols.extend(
                    row.eta1
                        .iter()
                        .zip(&row.accuracy)
                        .map(|(e, a)| (format!("eta1_{}", e), *a)),
                );
                for (column, accuracy) in cols {
                    runs.push(AblationRunRow {
                        encoder: kind.name().into(),
                        protocol: protocol.into(),
                        seed: *seed,
                        column,
                        accuracy,
                    });
                }
            }
        }
    }
    let prefix = &cfg.experiment;
    let retrained = out.join(format!("{}_ablation_retrained.csv", prefix));
    let fixed = out.join(format!("{}_ablation_fixed.csv", prefix));
    let runs_path = out.join(format!("{}_ablation_runs.csv", prefix));
    io::write_ablation(&retrained, &output.retrained)?;
    io::write_ablation(&fixed, &output.fixed)?;
    io::write_rows(
        &runs_path,
        &runs,
        &["encoder", "protocol", "seed", "column", "accuracy"],
    )?;
    m.stages = ctxs.into_iter().map(|c| c.record).collect();
    m.outputs.extend([retrained, fixed, runs_path]);
    m.write(out)?;
    Ok((m, output))
}

/// Writes the configured dataset, normalised, as `<experiment>_data.csv`.
pub fn synth_data(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    let raw = pipeline::load_table(&cfg.dataset)?;
    let table = dvge_core::data::normalize(&raw)?;
    let path = out.join(format!("{}_data.csv", cfg.experiment));
    io::write_table(&path, &table)?;
    Ok(path)
}

pub fn report(dir: &Path, out: &Path) -> Result<String> {
    let text = crate::report::report(dir, out)?;
    std::fs::write(out.join("summary.txt"), &text).map_err(|e| Error::io(out, e))?;
    Ok(text)
}
