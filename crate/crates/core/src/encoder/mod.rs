//! Frozen transformer towers with per-layer prompt injection.
//!
//! Both towers share [`Encoder`], a stack of pre-norm residual blocks. At each
//! of the first `M` layers the current token rows are extended with that
//! layer's prompt rows; after the layer runs, the prompt-position outputs are
//! dropped and the next affected layer receives fresh prompts. Layers past
//! `M` see only the token rows.
//!
//! Several sequences of equal length can be run together as one stacked
//! `[B·s × D]` matrix: row-wise work (norms, projections, feed-forward) is
//! done once on the stack and attention runs per sequence.

pub mod tokenizer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init;
use crate::tensor::Tensor;

pub use tokenizer::Tokenizer;

pub const LN_EPS: f64 = 1e-5;

/// Tower hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub model_dim: usize,
    pub num_heads: usize,
    pub ff_dim: usize,
    pub max_seq_len: usize,
    pub output_dim: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("num_layers", self.num_layers),
            ("model_dim", self.model_dim),
            ("num_heads", self.num_heads),
            ("ff_dim", self.ff_dim),
            ("max_seq_len", self.max_seq_len),
            ("output_dim", self.output_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("encoder {name} must be at least 1")));
        }
        if !self.model_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "model_dim {} is not divisible by num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }
}

/// Prompt rows appended at the input of a layer.
pub trait PromptSource {
    /// Number of affected layers `M`.
    fn depth(&self) -> usize;

    /// Rows `[n × model_dim]` for `layer` (0-based). `frame` selects a
    /// frame-specific variant where one exists and is ignored otherwise.
    fn prompts(&self, layer: usize, frame: usize) -> Option<&Tensor>;
}

/// Prompt-free schedule.
pub struct NoPrompts;

impl PromptSource for NoPrompts {
    fn depth(&self) -> usize {
        0
    }

    fn prompts(&self, _layer: usize, _frame: usize) -> Option<&Tensor> {
        None
    }
}

macro_rules! named {
    ($self:ident, $prefix:expr, [$($field:ident),* $(,)?]) => {
        vec![$((format!("{}{}", $prefix, stringify!($field)), &$self.$field)),*]
    };
    (mut $self:ident, $prefix:expr, [$($field:ident),* $(,)?]) => {
        vec![$((format!("{}{}", $prefix, stringify!($field)), &mut $self.$field)),*]
    };
}
pub(crate) use named;

#[derive(Debug, Clone)]
pub struct LayerWeights {
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub qkv_weight: Tensor,
    pub qkv_bias: Tensor,
    pub out_weight: Tensor,
    pub out_bias: Tensor,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
    pub ff1_weight: Tensor,
    pub ff1_bias: Tensor,
    pub ff2_weight: Tensor,
    pub ff2_bias: Tensor,
}

impl LayerWeights {
    fn init(cfg: &EncoderConfig, rng: &mut init::Rng, trainable: bool) -> Self {
        let (d, f) = (cfg.model_dim, cfg.ff_dim);
        let std_d = 1.0 / (d as f64).sqrt();
        let std_f = 1.0 / (f as f64).sqrt();
        LayerWeights {
            ln1_gamma: init::constant(&[d], 1.0, trainable),
            ln1_beta: init::constant(&[d], 0.0, trainable),
            qkv_weight: init::normal(rng, &[d, 3 * d], std_d, trainable),
            qkv_bias: init::constant(&[3 * d], 0.0, trainable),
            out_weight: init::normal(rng, &[d, d], std_d, trainable),
            out_bias: init::constant(&[d], 0.0, trainable),
            ln2_gamma: init::constant(&[d], 1.0, trainable),
            ln2_beta: init::constant(&[d], 0.0, trainable),
            ff1_weight: init::normal(rng, &[d, f], std_d, trainable),
            ff1_bias: init::constant(&[f], 0.0, trainable),
            ff2_weight: init::normal(rng, &[f, d], std_f, trainable),
            ff2_bias: init::constant(&[d], 0.0, trainable),
        }
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        named!(self, prefix, [
            ln1_gamma, ln1_beta, qkv_weight, qkv_bias, out_weight, out_bias,
            ln2_gamma, ln2_beta, ff1_weight, ff1_bias, ff2_weight, ff2_bias,
        ])
    }

    pub fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        named!(mut self, prefix, [
            ln1_gamma, ln1_beta, qkv_weight, qkv_bias, out_weight, out_bias,
            ln2_gamma, ln2_beta, ff1_weight, ff1_bias, ff2_weight, ff2_bias,
        ])
    }
}

/// `softmax(Q Kᵀ / √d_k)`, one row per query.
pub fn attention_weights(q: &Tensor, k: &Tensor) -> Result<Tensor> {
    if q.rank() != 2 || k.rank() != 2 || q.shape()[1] != k.shape()[1] {
        return Err(Error::dim("attention", q.shape(), k.shape()));
    }
    let scale = 1.0 / (q.shape()[1] as f64).sqrt();
    q.matmul(&k.t()?)?.scale(scale).softmax(1)
}

/// `softmax(Q Kᵀ / √d_k) V`.
pub fn scaled_dot_product_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    if v.rank() != 2 || k.shape()[0] != v.shape()[0] {
        return Err(Error::dim("attention", k.shape(), v.shape()));
    }
    attention_weights(q, k)?.matmul(v)
}

/// A stack of pre-norm transformer blocks plus the output head
/// (final layer norm and projection to the shared embedding width).
#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    pub layers: Vec<LayerWeights>,
    pub post_ln_gamma: Tensor,
    pub post_ln_beta: Tensor,
    pub projection: Tensor,
    frozen: bool,
}

impl Encoder {
    pub fn new(config: EncoderConfig, rng: &mut init::Rng, frozen: bool) -> Result<Self> {
        config.validate()?;
        let trainable = !frozen;
        let layers = (0..config.num_layers)
            .map(|_| LayerWeights::init(&config, rng, trainable))
            .collect();
        let d = config.model_dim;
        Ok(Encoder {
            post_ln_gamma: init::constant(&[d], 1.0, trainable),
            post_ln_beta: init::constant(&[d], 0.0, trainable),
            projection: init::normal(rng, &[d, config.output_dim], 1.0 / (d as f64).sqrt(), trainable),
            layers,
            config,
            frozen,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// One residual block on a single sequence `x [s × model_dim]`.
    pub fn encoder_layer_forward(&self, layer: usize, x: &Tensor) -> Result<Tensor> {
        let rows = x.shape().first().copied().unwrap_or(0);
        self.layer_forward(layer, x, rows)
    }

    /// One residual block over stacked sequences of length `seq_len`:
    /// `x + MHA(LN(x))`, then `+ FFN(LN(·))`.
    pub fn layer_forward(&self, layer: usize, x: &Tensor, seq_len: usize) -> Result<Tensor> {
        let w = self.layers.get(layer).ok_or_else(|| {
            Error::Contract(format!("layer {layer} out of range for {} layers", self.layers.len()))
        })?;
        let d = self.config.model_dim;
        if x.rank() != 2 || x.shape()[1] != d || seq_len == 0 || !x.shape()[0].is_multiple_of(seq_len) {
            return Err(Error::dim("encoder layer", x.shape(), &[seq_len, d]));
        }
        let h = x.layer_norm(&w.ln1_gamma, &w.ln1_beta, LN_EPS)?;
        let attn = h
            .matmul(&w.qkv_weight)?
            .add_row(&w.qkv_bias)?
            .multi_head_attention(seq_len, self.config.num_heads)?;
        let x = x.add(&attn.matmul(&w.out_weight)?.add_row(&w.out_bias)?)?;

        let h = x.layer_norm(&w.ln2_gamma, &w.ln2_beta, LN_EPS)?;
        let ff = h
            .matmul(&w.ff1_weight)?
            .add_row(&w.ff1_bias)?
            .gelu()
            .matmul(&w.ff2_weight)?
            .add_row(&w.ff2_bias)?;
        x.add(&ff)
    }

    /// Runs all layers over `num_seqs` stacked sequences of `base_len` rows
    /// each, injecting prompts at the first `prompts.depth()` layers, and
    /// returns the projected row at `class_pos` of every sequence,
    /// `[num_seqs × output_dim]`. `frames[b]` is the frame index of sequence `b`.
    pub fn run(
        &self,
        x: Tensor,
        base_len: usize,
        frames: &[usize],
        prompts: &dyn PromptSource,
        class_pos: usize,
    ) -> Result<Tensor> {
        let k = self.config.num_layers;
        let depth = prompts.depth();
        if depth > k {
            return Err(Error::Config(format!(
                "prompt schedule covers {depth} layers but the encoder has {k}"
            )));
        }
        let num_seqs = frames.len();
        if x.shape() != [num_seqs * base_len, self.config.model_dim] {
            return Err(Error::dim("encoder input", x.shape(), &[num_seqs * base_len, self.config.model_dim]));
        }
        if base_len > self.config.max_seq_len {
            return Err(Error::Capacity(format!(
                "sequence of {base_len} tokens exceeds max_seq_len {}",
                self.config.max_seq_len
            )));
        }
        let mut x = x;
        for layer in 0..k {
            let injected: Vec<&Tensor> = if layer < depth {
                frames.iter().filter_map(|&f| prompts.prompts(layer, f)).collect()
            } else {
                Vec::new()
            };
            let n = match injected.first() {
                None => 0,
                Some(p) => {
                    if injected.len() != num_seqs
                        || injected.iter().any(|q| q.shape() != [p.shape()[0], self.config.model_dim])
                    {
                        return Err(Error::dim("prompt injection", p.shape(), &[num_seqs, self.config.model_dim]));
                    }
                    p.shape()[0]
                }
            };
            let seq_len = base_len + n;
            if seq_len > self.config.max_seq_len {
                return Err(Error::Capacity(format!(
                    "{base_len} tokens + {n} prompts exceed max_seq_len {}",
                    self.config.max_seq_len
                )));
            }
            if n > 0 {
                // Rows of x, then every sequence's prompt rows; one gather
                // interleaves them as [tokens_b, prompts_b] per sequence.
                let mut pieces = Vec::with_capacity(1 + num_seqs);
                pieces.push(x);
                pieces.extend(injected.iter().map(|p| (*p).clone()));
                let pool = Tensor::concat(&pieces, 0)?;
                let prompt_base = num_seqs * base_len;
                let order: Vec<usize> = (0..num_seqs)
                    .flat_map(|b| (b * base_len..(b + 1) * base_len).chain(prompt_base + b * n..prompt_base + (b + 1) * n))
                    .collect();
                x = pool.gather_rows(&order)?;
            }
            x = self.layer_forward(layer, &x, seq_len)?;
            if n > 0 {
                let kept: Vec<usize> = (0..num_seqs).flat_map(|b| b * seq_len..b * seq_len + base_len).collect();
                x = x.gather_rows(&kept)?;
            }
        }
        let class_rows: Vec<usize> = (0..num_seqs).map(|b| b * base_len + class_pos).collect();
        x.gather_rows(&class_rows)?
            .layer_norm(&self.post_ln_gamma, &self.post_ln_beta, LN_EPS)?
            .matmul(&self.projection)
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.extend(l.named(&format!("{prefix}layers.{i}.")));
        }
        out.extend(named!(self, prefix, [post_ln_gamma, post_ln_beta, projection]));
        out
    }

    pub fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.extend(l.named_mut(&format!("{prefix}layers.{i}.")));
        }
        out.extend(named!(mut self, prefix, [post_ln_gamma, post_ln_beta, projection]));
        out
    }
}

/// Text tower: token and position embeddings in front of an [`Encoder`].
/// The representation is read at the final token (`<eot>`).
#[derive(Debug, Clone)]
pub struct TextTower {
    pub encoder: Encoder,
    pub token_embedding: Tensor,
    pub position_embedding: Tensor,
}

impl TextTower {
    pub fn new(config: EncoderConfig, vocab_size: usize, seed: u64, frozen: bool) -> Result<Self> {
        let mut rng = init::rng(seed);
        let d = config.model_dim;
        let max = config.max_seq_len;
        let encoder = Encoder::new(config, &mut rng, frozen)?;
        Ok(TextTower {
            token_embedding: init::normal(&mut rng, &[vocab_size, d], 1.0, !frozen),
            position_embedding: init::normal(&mut rng, &[max, d], 0.1, !frozen),
            encoder,
        })
    }

    fn embed(&self, tokens: &[usize]) -> Result<Tensor> {
        let len = tokens.len();
        if len == 0 {
            return Err(Error::Contract("empty token sequence".into()));
        }
        if len > self.encoder.config().max_seq_len {
            return Err(Error::Capacity(format!(
                "{len} tokens exceed max_seq_len {}",
                self.encoder.config().max_seq_len
            )));
        }
        self.token_embedding
            .gather_rows(tokens)?
            .add(&self.position_embedding.narrow(0, 0, len)?)
    }

    /// Encodes one token sequence to `[output_dim]`.
    pub fn encode_text_with_prompts(&self, tokens: &[usize], prompts: &dyn PromptSource) -> Result<Tensor> {
        let x = self.embed(tokens)?;
        let out = self.encoder.run(x, tokens.len(), &[0], prompts, tokens.len() - 1)?;
        out.reshape(&[self.encoder.config().output_dim])
    }

    /// Encodes every sequence, `[c × output_dim]`.
    pub fn encode_texts(&self, texts: &[Vec<usize>], prompts: &dyn PromptSource) -> Result<Tensor> {
        let rows = texts
            .iter()
            .map(|t| self.encode_text_with_prompts(t, prompts))
            .collect::<Result<Vec<_>>>()?;
        Tensor::stack(&rows)
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.encoder.named("text.");
        out.extend(named!(self, "text.", [token_embedding, position_embedding]));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.encoder.named_mut("text.");
        out.extend(named!(mut self, "text.", [token_embedding, position_embedding]));
        out
    }
}

/// Vision tower: patch embedding with a prepended class token in front of an
/// [`Encoder`]. The representation is read at the class token.
#[derive(Debug, Clone)]
pub struct VisionTower {
    pub encoder: Encoder,
    patch: usize,
    channels: usize,
    pub patch_embedding: Tensor,
    pub class_embedding: Tensor,
    pub position_embedding: Tensor,
}

impl VisionTower {
    pub fn new(config: EncoderConfig, channels: usize, patch: usize, seed: u64, frozen: bool) -> Result<Self> {
        if channels == 0 || patch == 0 {
            return Err(Error::Config("channels and patch size must be at least 1".into()));
        }
        let mut rng = init::rng(seed);
        let d = config.model_dim;
        let max = config.max_seq_len;
        let encoder = Encoder::new(config, &mut rng, frozen)?;
        let patch_dim = channels * patch * patch;
        Ok(VisionTower {
            patch_embedding: init::normal(&mut rng, &[patch_dim, d], 1.0 / (patch_dim as f64).sqrt(), !frozen),
            class_embedding: init::normal(&mut rng, &[d], 0.5, !frozen),
            position_embedding: init::normal(&mut rng, &[max, d], 0.1, !frozen),
            encoder,
            patch,
            channels,
        })
    }

    pub fn patch_size(&self) -> usize {
        self.patch
    }

    /// Token count for an `h × w` frame: class token plus one per patch.
    pub fn base_len(&self, h: usize, w: usize) -> Result<usize> {
        if !h.is_multiple_of(self.patch) || !w.is_multiple_of(self.patch) {
            return Err(Error::Config(format!(
                "frame {h}×{w} is not divisible into {p}×{p} patches",
                p = self.patch
            )));
        }
        Ok(1 + (h / self.patch) * (w / self.patch))
    }

    /// Embeds a `[C × H × W]` frame as `[base_len × model_dim]`: class token,
    /// then patches in row-major grid order, plus position embeddings.
    pub fn patchify(&self, frame: &Tensor) -> Result<Tensor> {
        let s = frame.shape();
        if s.len() != 3 || s[0] != self.channels {
            return Err(Error::dim("patchify", s, &[self.channels, 0, 0]));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let base_len = self.base_len(h, w)?;
        if base_len > self.encoder.config().max_seq_len {
            return Err(Error::Capacity(format!(
                "{base_len} patch tokens exceed max_seq_len {}",
                self.encoder.config().max_seq_len
            )));
        }
        let p = self.patch;
        let (gh, gw) = (h / p, w / p);
        let px = frame.data();
        let mut patches = Vec::with_capacity(gh * gw * c * p * p);
        for gy in 0..gh {
            for gx in 0..gw {
                for ch in 0..c {
                    for dy in 0..p {
                        let row = (ch * h + gy * p + dy) * w + gx * p;
                        patches.extend_from_slice(&px[row..row + p]);
                    }
                }
            }
        }
        let patches = Tensor::new(&[gh * gw, c * p * p], patches)?;
        let d = self.encoder.config().model_dim;
        let tokens = Tensor::concat(
            &[self.class_embedding.reshape(&[1, d])?, patches.matmul(&self.patch_embedding)?],
            0,
        )?;
        tokens.add(&self.position_embedding.narrow(0, 0, base_len)?)
    }

    /// Encodes frames independently; `frame_index[b]` picks the
    /// frame-specific layer-1 prompts. Returns `[N × output_dim]`.
    pub fn encode_frames(&self, frames: &[Tensor], frame_index: &[usize], prompts: &dyn PromptSource) -> Result<Tensor> {
        if frames.is_empty() || frames.len() != frame_index.len() {
            return Err(Error::Contract("frames and frame indices must be non-empty and aligned".into()));
        }
        let embedded = frames.iter().map(|f| self.patchify(f)).collect::<Result<Vec<_>>>()?;
        let base_len = embedded[0].shape()[0];
        if embedded.iter().any(|e| e.shape()[0] != base_len) {
            return Err(Error::Contract("frames differ in size".into()));
        }
        let x = if embedded.len() == 1 { embedded[0].clone() } else { Tensor::concat(&embedded, 0)? };
        self.encoder.run(x, base_len, frame_index, prompts, 0)
    }

    /// Encodes a `[t × C × H × W]` clip to `[t × output_dim]`.
    pub fn encode_video_with_prompts(&self, clip: &Tensor, prompts: &dyn PromptSource) -> Result<Tensor> {
        let frames = split_frames(clip)?;
        let index: Vec<usize> = (0..frames.len()).collect();
        self.encode_frames(&frames, &index, prompts)
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.encoder.named("vision.");
        out.extend(named!(self, "vision.", [patch_embedding, class_embedding, position_embedding]));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.encoder.named_mut("vision.");
        out.extend(named!(mut self, "vision.", [patch_embedding, class_embedding, position_embedding]));
        out
    }
}

/// Splits `[t × C × H × W]` into `t` constant `[C × H × W]` frames.
pub fn split_frames(clip: &Tensor) -> Result<Vec<Tensor>> {
    let s = clip.shape();
    if s.len() != 4 {
        return Err(Error::Contract(format!("clip must be [t×C×H×W], got {s:?}")));
    }
    let per = s[1] * s[2] * s[3];
    clip.data()
        .chunks(per)
        .map(|chunk| Tensor::new(&s[1..], chunk.to_vec()))
        .collect()
}

#[cfg(test)]
mod tests;
