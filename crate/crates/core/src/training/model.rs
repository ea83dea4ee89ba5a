//! The full dual-stream model: frozen towers, prompt cluster, mapper and
//! aggregator, with the trainable set exposed for the optimizer.

use serde::{Deserialize, Serialize};

use crate::encoder::{split_frames, EncoderConfig, NoPrompts, PromptSource, TextTower, Tokenizer, VisionTower};
use crate::error::{Error, Result};
use crate::htpc::{self, DepthStrategy, PromptCluster, PromptMapper};
use crate::lsea::{self, Aggregate, LseaParams};
use crate::tensor::{no_grad, Tensor};

use super::data::{ClassTexts, ClipBatch};
use super::loss;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Encoder depth `K`, shared by both towers.
    pub layers: usize,
    pub model_dim: usize,
    pub attention_heads: usize,
    pub ff_dim: usize,
    /// Shared embedding width `d`.
    pub output_dim: usize,
    pub max_seq_len: usize,
    pub channels: usize,
    pub patch: usize,
    /// Seed of the frozen tower weights.
    pub encoder_seed: u64,
    /// With HTPC off, only a single learnable text stream at layer 1 remains
    /// and the vision tower runs prompt-free.
    pub htpc: bool,
    pub prompt_tokens: usize,
    pub strategy: DepthStrategy,
    pub temporal_pe: bool,
    pub mapper_hidden: usize,
    /// With LSEA off, frame features are mean-pooled and compared to the raw
    /// class features.
    pub lsea: bool,
    pub semantic_heads: usize,
    /// 0 selects `d / 𝒩`.
    pub head_dim: usize,
    pub beta: f64,
    pub normalize: bool,
    pub temperature: f64,
    /// Seed of the learnable parameters.
    pub param_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 6,
            model_dim: 64,
            attention_heads: 4,
            ff_dim: 128,
            output_dim: 32,
            max_seq_len: 24,
            channels: 1,
            patch: 8,
            encoder_seed: 2024,
            htpc: true,
            prompt_tokens: 4,
            strategy: DepthStrategy::Normal,
            temporal_pe: true,
            mapper_hidden: 64,
            lsea: true,
            semantic_heads: lsea::DEFAULT_HEADS,
            head_dim: 0,
            beta: lsea::DEFAULT_BETA,
            normalize: false,
            temperature: 1.0,
            param_seed: 7,
        }
    }
}

impl ModelConfig {
    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            num_layers: self.layers,
            model_dim: self.model_dim,
            num_heads: self.attention_heads,
            ff_dim: self.ff_dim,
            max_seq_len: self.max_seq_len,
            output_dim: self.output_dim,
        }
    }

    pub fn prompt_depth(&self) -> Result<usize> {
        if self.htpc {
            htpc::resolve_prompt_depth(self.strategy, self.layers)
        } else {
            Ok(1)
        }
    }

    pub fn resolved_head_dim(&self) -> usize {
        if self.head_dim == 0 {
            lsea::default_head_dim(self.output_dim, self.semantic_heads)
        } else {
            self.head_dim
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder_config().validate()?;
        if self.channels == 0 || self.patch == 0 || self.prompt_tokens == 0 || self.mapper_hidden == 0 {
            return Err(Error::Config("channels, patch, prompt tokens and mapper width must be at least 1".into()));
        }
        if self.semantic_heads == 0 {
            return Err(Error::Config("semantic head count must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!("fusion weight β must lie in [0, 1], got {}", self.beta)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.htpc && self.temporal_pe && !self.model_dim.is_multiple_of(2) {
            return Err(Error::Config("temporal encoding needs an even model_dim".into()));
        }
        Ok(())
    }
}

/// Per-clip forward result.
#[derive(Debug, Clone)]
pub struct ClipOutput {
    /// Similarity logits `[c]`.
    pub logits: Tensor,
    /// Frame features `F_V [t × d]`.
    pub frame_features: Tensor,
    /// Pooled video embedding compared against the class side.
    pub embedding: Tensor,
    pub aggregate: Option<Aggregate>,
}

#[derive(Debug, Clone)]
pub struct DuseModel {
    config: ModelConfig,
    pub text: TextTower,
    pub vision: VisionTower,
    pub cluster: PromptCluster,
    pub mapper: Option<PromptMapper>,
    pub lsea: Option<LseaParams>,
}

impl DuseModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let enc = config.encoder_config();
        let vocab = Tokenizer::default().vocab_size();
        let text = TextTower::new(enc.clone(), vocab, config.encoder_seed, true)?;
        let vision = VisionTower::new(enc, config.channels, config.patch, config.encoder_seed.wrapping_add(1), true)?;
        let seed = config.param_seed;
        let cluster = PromptCluster::new(config.prompt_depth()?, config.prompt_tokens, config.model_dim, seed)?;
        let mapper = if config.htpc {
            Some(PromptMapper::new(config.model_dim, config.mapper_hidden, config.model_dim, seed.wrapping_add(1))?)
        } else {
            None
        };
        let lsea = if config.lsea {
            Some(LseaParams::new(
                config.output_dim,
                config.semantic_heads,
                config.resolved_head_dim(),
                config.beta,
                seed.wrapping_add(2),
            )?)
        } else {
            None
        };
        Ok(DuseModel { config, text, vision, cluster, mapper, lsea })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Class features `F_T [c × d]`.
    pub fn text_features(&self, texts: &ClassTexts) -> Result<Tensor> {
        let schedule = htpc::build_text_schedule(&self.cluster)?;
        self.text.encode_texts(&texts.tokens, &schedule)
    }

    /// Frame features `[t × d]` for every clip. All frames of all clips are
    /// encoded as one stacked pass.
    pub fn frame_features(&self, clips: &[&ClipBatch]) -> Result<Vec<Tensor>> {
        if clips.is_empty() {
            return Err(Error::Contract("no clips to encode".into()));
        }
        let t_max = clips.iter().map(|c| c.frame_count()).max().unwrap_or(0);
        let mut frames = Vec::new();
        let mut index = Vec::new();
        for clip in clips {
            let split = split_frames(&clip.frames)?;
            index.extend(0..split.len());
            frames.extend(split);
        }
        let schedule = match &self.mapper {
            Some(mapper) => Some(htpc::build_visual_schedule(&self.cluster, mapper, t_max, self.config.temporal_pe)?),
            None => None,
        };
        let prompts: &dyn PromptSource = match &schedule {
            Some(s) => s,
            None => &NoPrompts,
        };
        let all = self.vision.encode_frames(&frames, &index, prompts)?;
        let mut out = Vec::with_capacity(clips.len());
        let mut start = 0;
        for clip in clips {
            let t = clip.frame_count();
            out.push(if clips.len() == 1 { all.clone() } else { all.narrow(0, start, t)? });
            start += t;
        }
        Ok(out)
    }

    /// Aggregation and logits for one clip.
    pub fn clip_output(&self, f_v: Tensor, f_t: &Tensor) -> Result<ClipOutput> {
        let (embedding, class_side, aggregate) = match &self.lsea {
            Some(p) => {
                let agg = lsea::aggregate(&f_v, f_t, p)?;
                (agg.fusion.v_g.clone(), agg.fusion.text.clone(), Some(agg))
            }
            None => (f_v.mean(0)?, f_t.clone(), None),
        };
        let logits = loss::similarity_logits(&embedding, &class_side, self.config.temperature, self.config.normalize)?;
        Ok(ClipOutput { logits, frame_features: f_v, embedding, aggregate })
    }

    pub fn forward(&self, clips: &[&ClipBatch], texts: &ClassTexts) -> Result<Vec<ClipOutput>> {
        let f_t = self.text_features(texts)?;
        self.frame_features(clips)?
            .into_iter()
            .map(|f_v| self.clip_output(f_v, &f_t))
            .collect()
    }

    /// Mean contrastive loss over `clips`.
    pub fn batch_loss(&self, clips: &[&ClipBatch], texts: &ClassTexts) -> Result<Tensor> {
        let outputs = self.forward(clips, texts)?;
        let losses = outputs
            .iter()
            .zip(clips)
            .map(|(o, clip)| loss::cross_entropy(&o.logits, clip.label))
            .collect::<Result<Vec<_>>>()?;
        loss::mean_loss(&losses)
    }

    /// Arg-max class per clip, without building a graph.
    pub fn predict(&self, clips: &[&ClipBatch], texts: &ClassTexts) -> Result<Vec<usize>> {
        no_grad(|| {
            let outputs = self.forward(clips, texts)?;
            Ok(outputs.iter().map(|o| argmax(o.logits.data())).collect())
        })
    }

    /// Every parameter the optimizer updates, in a fixed order.
    pub fn trainable_named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("htpc.cluster.tokens".to_string(), &self.cluster.tokens)];
        if let Some(m) = &self.mapper {
            out.extend(m.named());
        }
        if let Some(l) = &self.lsea {
            out.extend(l.named());
        }
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.cluster.tokens];
        if let Some(m) = &mut self.mapper {
            out.extend(m.named_mut().into_iter().map(|(_, t)| t));
        }
        if let Some(l) = &mut self.lsea {
            out.extend(l.named_mut().into_iter().map(|(_, t)| t));
        }
        out
    }

    /// A copy whose trainable tensors are replaced by `params`, in
    /// [`Self::trainable_named`] order. Frozen weights are shared.
    pub fn with_trainable(&self, params: &[Tensor]) -> Result<DuseModel> {
        let mut model = self.clone();
        let slots = model.trainable_mut();
        if slots.len() != params.len() {
            return Err(Error::Contract(format!("{} trainable tensors, got {}", slots.len(), params.len())));
        }
        for (slot, p) in slots.into_iter().zip(params) {
            if slot.shape() != p.shape() {
                return Err(Error::dim("with_trainable", slot.shape(), p.shape()));
            }
            *slot = p.clone();
        }
        Ok(model)
    }

    /// Frozen tower weights.
    pub fn frozen_named(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.text.named();
        out.extend(self.vision.named());
        out
    }

    /// All tensors, frozen first, under stable names.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.frozen_named();
        out.extend(self.trainable_named());
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.text.named_mut();
        out.extend(self.vision.named_mut());
        out.push(("htpc.cluster.tokens".to_string(), &mut self.cluster.tokens));
        if let Some(m) = &mut self.mapper {
            out.extend(m.named_mut());
        }
        if let Some(l) = &mut self.lsea {
            out.extend(l.named_mut());
        }
        out
    }

    /// Overwrites every tensor from `(name, shape, data)` entries. Names and
    /// shapes must match the model exactly.
    pub fn load_tensors(&mut self, entries: &[(String, Vec<usize>, Vec<f64>)]) -> Result<()> {
        let mut slots = self.named_mut();
        if slots.len() != entries.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, model has {}",
                entries.len(),
                slots.len()
            )));
        }
        for (name, shape, data) in entries {
            let (_, slot) = slots
                .iter_mut()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown tensor {name}")))?;
            if slot.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {shape:?}, model expects {:?}",
                    slot.shape()
                )));
            }
            **slot = Tensor::leaf(shape, data.clone(), slot.requires_grad())?;
        }
        Ok(())
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}
