//! Command surface: train, eval, ablate, gradcheck and dump.

pub mod artifacts;
pub mod checkpoint;
pub mod config;
pub mod pca;

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::htpc::DepthStrategy;
use crate::tensor::{finite_difference_report, no_grad, Tensor};
use crate::training::ablation::{ablation_run, AblationRow, Grid};
use crate::training::{
    evaluate, generate_holdout, generate_synthetic_dataset, ClipBatch, DuseModel, Experiment, Metrics, TrainReport,
};

pub use checkpoint::Checkpoint;
pub use config::{parse_config, GridChoice, Profile, RunConfig};

/// Finite-difference step used by `gradcheck`.
pub const GRADCHECK_STEP: f64 = 1e-5;
/// `gradcheck` passes iff the max relative error is below this.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

fn prepare_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Config(format!("paths.out: cannot create {}: {e}", dir.display())))
}

pub fn checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.checkpoint.clone().unwrap_or_else(|| cfg.out.join("checkpoint.bin"))
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub checkpoint: PathBuf,
}

/// Trains, then writes `metrics.csv`, `metrics.json`, `confusion.csv` and the checkpoint.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    prepare_out(&cfg.out)?;
    let header = cfg.header();
    let exp_cfg = cfg.experiment();
    let mut exp = Experiment::prepare(&exp_cfg)?;
    let report = exp.train(&exp_cfg.train, |r| {
        println!("epoch {:>3}  loss {:.6}  uar {:.4}  war {:.4}", r.epoch, r.loss, r.uar, r.war);
    })?;
    artifacts::metrics_csv(&cfg.out.join("metrics.csv"), &header, &report.history)?;
    artifacts::metrics_json(&cfg.out.join("metrics.json"), &header, &report.history, &report.final_metrics)?;
    artifacts::confusion_csv(&cfg.out.join("confusion.csv"), &header, &report.final_metrics)?;
    let path = checkpoint_path(cfg);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        prepare_out(parent)?;
    }
    Checkpoint::from_model(&exp.model, cfg).save(&path)?;
    println!("checkpoint {}", path.display());
    Ok(TrainOutcome { report, checkpoint: path })
}

/// Loads a checkpoint and its stored configuration (plus `overrides`).
pub fn load_checkpoint(path: &Path, overrides: &[String]) -> Result<(RunConfig, DuseModel)> {
    let ck = Checkpoint::load(path)?;
    let cfg = ck.run_config(overrides)?;
    cfg.validate()?;
    let model = ck.restore(&cfg)?;
    Ok((cfg, model))
}

fn eval_set(cfg: &RunConfig) -> Result<(Vec<ClipBatch>, crate::training::ClassTexts)> {
    let exp = cfg.experiment();
    let texts = generate_synthetic_dataset(&crate::training::SyntheticSpec { clips_per_class: 1, ..exp.data.clone() })?.texts;
    Ok((generate_holdout(&exp.data, exp.eval_clips_per_class)?, texts))
}

/// Evaluates a checkpoint on the held-out clips of its configuration.
pub fn cmd_eval(path: &Path, overrides: &[String]) -> Result<Metrics> {
    let (cfg, model) = load_checkpoint(path, overrides)?;
    let (clips, texts) = eval_set(&cfg)?;
    let metrics = evaluate(&model, &clips, &texts)?;
    println!("uar {:?}  war {:?}", metrics.uar, metrics.war);
    for (k, r) in metrics.per_class_recall.iter().enumerate() {
        match r {
            Some(r) => println!("class {k}  recall {r:?}"),
            None => println!("class {k}  absent"),
        }
    }
    Ok(metrics)
}

/// Runs the configured grid(s) and writes `ablation.csv`.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    prepare_out(&cfg.out)?;
    let grids: Vec<Grid> = match cfg.grid {
        GridChoice::All => Grid::ALL.to_vec(),
        GridChoice::One(g) => vec![g],
    };
    let variants: Vec<_> = grids.iter().flat_map(|g| g.variants()).collect();
    let rows = ablation_run(&cfg.experiment(), &variants)?;
    for r in &rows {
        println!("{:<24} uar {:.4}  war {:.4}", r.variant, r.metrics.uar, r.metrics.war);
    }
    artifacts::ablation_csv(&cfg.out.join("ablation.csv"), &cfg.header(), &rows)?;
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct GradcheckOutcome {
    pub max_rel_error: f64,
    pub entries: usize,
    pub passed: bool,
    /// Entries at or above the tolerance.
    pub failing: usize,
    /// Largest |analytic gradient| among the failing entries.
    pub failing_max_grad: f64,
    /// Largest finite-difference resolution over both runs.
    pub resolution: f64,
    /// Failing entries whose mismatch also exceeds that resolution.
    pub unresolved: usize,
}

/// Tiny pipeline configuration for the gradient oracle.
pub fn gradcheck_config(seed: u64) -> RunConfig {
    RunConfig {
        layers: 2,
        model_dim: 16,
        attention_heads: 2,
        ff_dim: 32,
        embed_dim: 8,
        max_seq_len: 16,
        prompt_tokens: 2,
        strategy: DepthStrategy::Deep,
        mapper_hidden: 16,
        semantic_heads: 2,
        frames: 2,
        classes: 3,
        clips_per_class: 1,
        seed,
        ..RunConfig::default()
    }
}

/// Central finite differences over every trainable tensor of the full
/// pipeline (prompts → towers → aggregator → loss), with raw and normalized
/// similarities.
pub fn cmd_gradcheck(seed: u64) -> Result<GradcheckOutcome> {
    let mut worst: f64 = 0.0;
    let mut entries = 0;
    let mut failing = 0;
    let mut failing_max_grad: f64 = 0.0;
    let mut resolution: f64 = 0.0;
    let mut unresolved = 0;
    for normalize in [false, true] {
        let cfg = RunConfig { normalize, ..gradcheck_config(seed) };
        cfg.validate()?;
        let ds = generate_synthetic_dataset(&cfg.experiment().data)?;
        let model = DuseModel::new(cfg.model_config())?;
        let named = model.trainable_named();
        let params: Vec<Tensor> = named.iter().map(|(_, t)| (*t).clone()).collect();
        let clips: Vec<&ClipBatch> = ds.clips.iter().collect();
        let report = finite_difference_report(
            |p| model.with_trainable(p)?.batch_loss(&clips, &ds.texts),
            &params,
            GRADCHECK_STEP,
        )?;
        for ((name, _), err) in named.iter().zip(&report.per_param) {
            log::info!("gradcheck normalize={normalize} {name}: {err:e}");
        }
        for e in report.details.iter().filter(|e| e.rel_error >= GRADCHECK_TOLERANCE) {
            log::info!(
                "gradcheck normalize={normalize} {}[{}]: analytic {:e} numeric {:e} rel {:e}",
                named[e.param].0,
                e.index,
                e.analytic,
                e.numeric,
                e.rel_error
            );
            failing += 1;
            failing_max_grad = failing_max_grad.max(e.analytic.abs());
        }
        worst = worst.max(report.max_rel_error);
        entries += report.entries;
        resolution = resolution.max(report.resolution(GRADCHECK_STEP));
        unresolved += report.unresolved(GRADCHECK_STEP, GRADCHECK_TOLERANCE).len();
    }
    let passed = worst < GRADCHECK_TOLERANCE;
    println!("max relative error {worst:e} over {entries} entries ({})", if passed { "pass" } else { "FAIL" });
    if !passed {
        println!(
            "{failing} entries at or above {GRADCHECK_TOLERANCE:e}; largest |gradient| among them {failing_max_grad:e}; \
             {unresolved} of them exceed the finite-difference resolution {resolution:e}"
        );
    }
    Ok(GradcheckOutcome { max_rel_error: worst, entries, passed, failing, failing_max_grad, resolution, unresolved })
}

#[derive(Debug)]
pub struct DumpOutcome {
    pub clips: usize,
    pub trace_written: bool,
}

/// Writes `trace.csv` (pooling weights and per-head α) and `embed.csv`
/// (2-D PCA of the pooled video embeddings) for the held-out clips.
pub fn cmd_dump(cfg: &RunConfig, checkpoint: &Path) -> Result<DumpOutcome> {
    let overrides = vec![format!("paths.out={}", cfg.out.display())];
    let (ck_cfg, model) = load_checkpoint(checkpoint, &overrides)?;
    prepare_out(&ck_cfg.out)?;
    let header = ck_cfg.header();
    let (clips, texts) = eval_set(&ck_cfg)?;
    let outputs = no_grad(|| -> Result<Vec<_>> {
        let mut all = Vec::with_capacity(clips.len());
        for chunk in clips.chunks(32) {
            let refs: Vec<&ClipBatch> = chunk.iter().collect();
            all.extend(model.forward(&refs, &texts)?);
        }
        Ok(all)
    })?;
    let traces: Vec<_> = clips
        .iter()
        .zip(&outputs)
        .filter_map(|(c, o)| o.aggregate.as_ref().map(|a| (c.clip_id, a.trace())))
        .collect();
    let trace_written = !traces.is_empty();
    if trace_written {
        artifacts::trace_csv(&ck_cfg.out.join("trace.csv"), &header, &traces)?;
    } else {
        log::warn!("aggregator disabled; trace.csv not written");
    }
    let embeddings: Vec<Vec<f64>> = outputs.iter().map(|o| o.embedding.to_vec()).collect();
    let (coords, _) = pca::pca(&embeddings, 2)?;
    let rows: Vec<_> = clips
        .iter()
        .zip(&coords)
        .map(|(c, xy)| (c.clip_id, c.label, xy[0], xy[1]))
        .collect();
    artifacts::embed_csv(&ck_cfg.out.join("embed.csv"), &header, &rows)?;
    println!("dumped {} clips to {}", clips.len(), ck_cfg.out.display());
    Ok(DumpOutcome { clips: clips.len(), trace_written })
}
