//! Training loop, evaluation and the experiment harness.

pub mod ablation;
pub mod adam;
pub mod data;
pub mod loss;
pub mod metrics;
pub mod model;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init;

pub use adam::{adam_step, OptimizerState};
pub use data::{generate_holdout, generate_synthetic_dataset, ClassTexts, ClipBatch, SyntheticDataset, SyntheticSpec};
pub use loss::contrastive_loss;
pub use metrics::Metrics;
pub use model::{DuseModel, ModelConfig};

const SHUFFLE_STREAM: u64 = 0x7368_7566;
const EVAL_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Stop after this many optimizer steps, mid-epoch if needed.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { lr: 0.001, batch_size: 16, epochs: 30, seed: 7, max_steps: None }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be finite and ≥ 0, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epoch count must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the clips seen this epoch.
    pub loss: f64,
    pub uar: f64,
    pub war: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub final_metrics: Metrics,
    pub steps: usize,
    pub optimizer: OptimizerState,
}

pub fn evaluate(model: &DuseModel, clips: &[ClipBatch], texts: &ClassTexts) -> Result<Metrics> {
    if clips.is_empty() {
        return Err(Error::Contract("cannot evaluate an empty clip set".into()));
    }
    let mut predicted = Vec::with_capacity(clips.len());
    for chunk in clips.chunks(EVAL_CHUNK) {
        let refs: Vec<&ClipBatch> = chunk.iter().collect();
        predicted.extend(model.predict(&refs, texts)?);
    }
    let actual: Vec<usize> = clips.iter().map(|c| c.label).collect();
    Metrics::from_predictions(&predicted, &actual, texts.len())
}

/// Seeded mini-batch Adam on the contrastive loss. After every epoch the
/// model is evaluated on `eval_clips` and `on_epoch` is called with the record.
pub fn train(
    model: &mut DuseModel,
    train_clips: &[ClipBatch],
    eval_clips: &[ClipBatch],
    texts: &ClassTexts,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    config.validate()?;
    if train_clips.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    let mut rng = init::rng(config.seed ^ SHUFFLE_STREAM);
    let mut optimizer = OptimizerState::new(config.lr);
    let mut order: Vec<usize> = (0..train_clips.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut steps = 0;
    let mut final_metrics = None;

    'epochs: for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            if config.max_steps.is_some_and(|max| steps >= max) {
                break;
            }
            let batch: Vec<&ClipBatch> = idx.iter().map(|&i| &train_clips[i]).collect();
            let loss = model.batch_loss(&batch, texts)?;
            let value = loss.item()?;
            if !value.is_finite() {
                let ids: Vec<usize> = batch.iter().map(|c| c.clip_id).collect();
                log::error!("non-finite loss at epoch {epoch}, batch {b}; clips {ids:?}");
                for (name, t) in model.trainable_named() {
                    let norm = t.data().iter().map(|v| v * v).sum::<f64>().sqrt();
                    log::error!("  {name}: norm {norm:e}, finite {}", t.all_finite());
                }
                return Err(Error::Diverged { epoch, batch: b, loss: value });
            }
            loss.backward()?;
            adam_step(&mut model.trainable_mut(), &mut optimizer)?;
            loss_sum += value * batch.len() as f64;
            seen += batch.len();
            steps += 1;
        }
        if seen == 0 {
            break 'epochs;
        }
        let metrics = evaluate(model, eval_clips, texts)?;
        let record = EpochRecord { epoch, loss: loss_sum / seen as f64, uar: metrics.uar, war: metrics.war };
        log::info!("epoch {epoch}: loss {:.6} uar {:.4} war {:.4}", record.loss, record.uar, record.war);
        on_epoch(&record);
        history.push(record);
        final_metrics = Some(metrics);
    }
    let final_metrics = match final_metrics {
        Some(m) => m,
        None => evaluate(model, eval_clips, texts)?,
    };
    Ok(TrainReport { history, final_metrics, steps, optimizer })
}

/// Everything needed for one seeded run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: SyntheticSpec,
    pub eval_clips_per_class: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: SyntheticSpec::default(),
            eval_clips_per_class: 10,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.data.validate()?;
        if self.data.channels != self.model.channels {
            return Err(Error::Config(format!(
                "dataset has {} channels, model expects {}",
                self.data.channels, self.model.channels
            )));
        }
        if self.eval_clips_per_class == 0 {
            return Err(Error::Config("evaluation needs at least one clip per class".into()));
        }
        Ok(())
    }
}

/// Model plus generated data, ready to train.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub model: DuseModel,
    pub train_clips: Vec<ClipBatch>,
    pub eval_clips: Vec<ClipBatch>,
    pub texts: ClassTexts,
}

impl Experiment {
    pub fn prepare(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let dataset = generate_synthetic_dataset(&config.data)?;
        let eval_clips = generate_holdout(&config.data, config.eval_clips_per_class)?;
        Ok(Experiment {
            model: DuseModel::new(config.model.clone())?,
            train_clips: dataset.clips,
            eval_clips,
            texts: dataset.texts,
        })
    }

    pub fn train(&mut self, config: &TrainConfig, on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainReport> {
        train(&mut self.model, &self.train_clips, &self.eval_clips, &self.texts, config, on_epoch)
    }

    pub fn evaluate(&self) -> Result<Metrics> {
        evaluate(&self.model, &self.eval_clips, &self.texts)
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<(Experiment, TrainReport)> {
    let mut exp = Experiment::prepare(config)?;
    let report = exp.train(&config.train, |_| {})?;
    Ok((exp, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            model: ModelConfig {
                layers: 2,
                model_dim: 16,
                attention_heads: 2,
                ff_dim: 32,
                output_dim: 8,
                max_seq_len: 20,
                prompt_tokens: 2,
                mapper_hidden: 16,
                semantic_heads: 2,
                ..ModelConfig::default()
            },
            train: TrainConfig { epochs: 2, batch_size: 4, ..TrainConfig::default() },
            data: SyntheticSpec { classes: 3, clips_per_class: 4, frames: 2, ..SyntheticSpec::default() },
            eval_clips_per_class: 2,
        }
    }

    #[test]
    fn zero_learning_rate_keeps_the_loss_constant() {
        let mut cfg = tiny();
        cfg.train.lr = 0.0;
        cfg.train.epochs = 3;
        let (_, report) = run_experiment(&cfg).unwrap();
        let first = report.history[0].loss;
        assert!(report.history.iter().all(|r| (r.loss - first).abs() < 1e-12));
    }

    #[test]
    fn same_config_same_history() {
        let (_, a) = run_experiment(&tiny()).unwrap();
        let (_, b) = run_experiment(&tiny()).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.final_metrics, b.final_metrics);
    }

    #[test]
    fn max_steps_stops_mid_epoch() {
        let mut cfg = tiny();
        cfg.train.max_steps = Some(4);
        let (_, report) = run_experiment(&cfg).unwrap();
        assert_eq!(report.steps, 4);
        assert_eq!(report.optimizer.step, 4);
        assert_eq!(report.history.len(), 2);
    }

    #[test]
    fn final_metrics_match_a_fresh_evaluation() {
        let (exp, report) = run_experiment(&tiny()).unwrap();
        let again = exp.evaluate().unwrap();
        assert_eq!(again, report.final_metrics);
        assert_eq!(report.history.last().unwrap().war, again.war);
    }

    #[test]
    fn empty_evaluation_is_a_contract_error() {
        let exp = Experiment::prepare(&tiny()).unwrap();
        assert!(matches!(evaluate(&exp.model, &[], &exp.texts), Err(Error::Contract(_))));
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let mut cfg = tiny();
        cfg.data.channels = 3;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
