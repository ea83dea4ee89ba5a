//! Hierarchical temporal prompt cluster.
//!
//! Learnable text prompts for the first `M` encoder layers, a shared
//! two-stage mapper that turns every text prompt token into a visual prompt
//! token, and a fixed sinusoidal frame encoding added to the first layer of
//! visual prompts (the same vector on each of the `n` tokens of a frame).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::{named, PromptSource};
use crate::error::{Error, Result};
use crate::init;
use crate::tensor::Tensor;

/// Std of the initial prompt tokens.
pub const PROMPT_INIT_STD: f64 = 0.02;

/// How many encoder layers receive prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DepthStrategy {
    /// Input layer only.
    Shallow,
    /// One third of the layers, rounded up.
    Normal,
    /// Two thirds of the layers, rounded up.
    Deep,
}

impl DepthStrategy {
    pub const ALL: [DepthStrategy; 3] = [DepthStrategy::Shallow, DepthStrategy::Normal, DepthStrategy::Deep];
}

impl fmt::Display for DepthStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DepthStrategy::Shallow => "Shallow",
            DepthStrategy::Normal => "Normal",
            DepthStrategy::Deep => "Deep",
        };
        f.write_str(s)
    }
}

impl FromStr for DepthStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "shallow" => Ok(DepthStrategy::Shallow),
            "normal" => Ok(DepthStrategy::Normal),
            "deep" => Ok(DepthStrategy::Deep),
            _ => Err(Error::Config(format!("unknown prompt depth strategy {s:?}"))),
        }
    }
}

/// Number of affected layers `M` for a `k`-layer encoder.
pub fn resolve_prompt_depth(strategy: DepthStrategy, k: usize) -> Result<usize> {
    if k < 1 {
        return Err(Error::Config("encoder must have at least one layer".into()));
    }
    Ok(match strategy {
        DepthStrategy::Shallow => 1,
        DepthStrategy::Normal => k.div_ceil(3),
        DepthStrategy::Deep => (2 * k).div_ceil(3),
    })
}

/// `M` prompt streams of `n` learnable text tokens, stored as one
/// `[M × n × d_T]` parameter.
#[derive(Debug, Clone)]
pub struct PromptCluster {
    pub tokens: Tensor,
    seed: u64,
}

impl PromptCluster {
    pub fn new(depth: usize, n: usize, width: usize, seed: u64) -> Result<Self> {
        if depth == 0 || n == 0 || width == 0 {
            return Err(Error::Config(format!(
                "prompt cluster needs M ≥ 1, n ≥ 1 and width ≥ 1 (got {depth}, {n}, {width})"
            )));
        }
        let mut rng = init::rng(seed);
        Ok(PromptCluster {
            tokens: init::normal(&mut rng, &[depth, n, width], PROMPT_INIT_STD, true),
            seed,
        })
    }

    pub fn depth(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn tokens_per_stream(&self) -> usize {
        self.tokens.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.tokens.shape()[2]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Stream `i` as `[n × d_T]`, still attached to the cluster parameter.
    pub fn stream(&self, i: usize) -> Result<Tensor> {
        self.tokens
            .narrow(0, i, 1)?
            .reshape(&[self.tokens_per_stream(), self.width()])
    }
}

/// Shared text→visual prompt mapper: `relu(x W1 + b1) W2 + b2`, applied to
/// every token independently. Weights are stored input-major (`x · W`).
#[derive(Debug, Clone)]
pub struct PromptMapper {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl PromptMapper {
    pub fn new(text_dim: usize, hidden: usize, visual_dim: usize, seed: u64) -> Result<Self> {
        if text_dim == 0 || hidden == 0 || visual_dim == 0 {
            return Err(Error::Config("prompt mapper widths must be at least 1".into()));
        }
        let mut rng = init::rng(seed);
        Ok(PromptMapper {
            w1: init::normal(&mut rng, &[text_dim, hidden], 1.0 / (text_dim as f64).sqrt(), true),
            b1: init::constant(&[hidden], 0.0, true),
            w2: init::normal(&mut rng, &[hidden, visual_dim], 1.0 / (hidden as f64).sqrt(), true),
            b2: init::constant(&[visual_dim], 0.0, true),
        })
    }

    pub fn output_dim(&self) -> usize {
        self.b2.numel()
    }

    /// Maps `[r × d_T]` token rows to `[r × d_V]`.
    pub fn map(&self, tokens: &Tensor) -> Result<Tensor> {
        tokens
            .matmul(&self.w1)?
            .add_row(&self.b1)?
            .relu()
            .matmul(&self.w2)?
            .add_row(&self.b2)
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        named!(self, "htpc.mapper.", [w1, b1, w2, b2])
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        named!(mut self, "htpc.mapper.", [w1, b1, w2, b2])
    }
}

/// Visual prompts `[M × n × d_V]` from the whole cluster through one mapper.
pub fn map_text_prompts_to_visual(cluster: &PromptCluster, mapper: &PromptMapper) -> Result<Tensor> {
    let (m, n, w) = (cluster.depth(), cluster.tokens_per_stream(), cluster.width());
    let flat = cluster.tokens.reshape(&[m * n, w])?;
    mapper.map(&flat)?.reshape(&[m, n, mapper.output_dim()])
}

/// Sinusoidal frame encoding `[t × d]`:
/// `PE[f, 2k] = sin(f / 10000^(2k/d))`, `PE[f, 2k+1] = cos(·)`.
pub fn temporal_position_encoding(t: usize, d: usize) -> Result<Tensor> {
    if t == 0 {
        return Err(Error::Config("frame count must be at least 1".into()));
    }
    if d == 0 || !d.is_multiple_of(2) {
        return Err(Error::Config(format!("temporal encoding width must be even, got {d}")));
    }
    let mut data = Vec::with_capacity(t * d);
    for f in 0..t {
        for k in 0..d / 2 {
            let angle = f as f64 / 10000f64.powf(2.0 * k as f64 / d as f64);
            data.push(angle.sin());
            data.push(angle.cos());
        }
    }
    Tensor::new(&[t, d], data)
}

/// Text prompts per affected layer.
#[derive(Debug, Clone)]
pub struct TextPromptSchedule {
    pub layers: Vec<Tensor>,
}

impl PromptSource for TextPromptSchedule {
    fn depth(&self) -> usize {
        self.layers.len()
    }

    fn prompts(&self, layer: usize, _frame: usize) -> Option<&Tensor> {
        self.layers.get(layer)
    }
}

/// Visual prompts: frame-specific at layer 1, shared across frames above.
#[derive(Debug, Clone)]
pub struct VisualPromptSchedule {
    pub first_layer: Vec<Tensor>,
    pub deeper: Vec<Tensor>,
}

impl PromptSource for VisualPromptSchedule {
    fn depth(&self) -> usize {
        1 + self.deeper.len()
    }

    fn prompts(&self, layer: usize, frame: usize) -> Option<&Tensor> {
        match layer {
            0 => self.first_layer.get(frame),
            l => self.deeper.get(l - 1),
        }
    }
}

/// Layer `i` (0-based, `i < M`) receives stream `i`.
pub fn build_text_schedule(cluster: &PromptCluster) -> Result<TextPromptSchedule> {
    let layers = (0..cluster.depth()).map(|i| cluster.stream(i)).collect::<Result<_>>()?;
    Ok(TextPromptSchedule { layers })
}

/// Maps the cluster, then adds `PE[f]` to every layer-1 token of frame `f`.
/// With `temporal_pe == false` all frames share the plain layer-1 prompts.
pub fn build_visual_schedule(
    cluster: &PromptCluster,
    mapper: &PromptMapper,
    t: usize,
    temporal_pe: bool,
) -> Result<VisualPromptSchedule> {
    let visual = map_text_prompts_to_visual(cluster, mapper)?;
    let (m, n, dv) = (visual.shape()[0], visual.shape()[1], visual.shape()[2]);
    let stream = |i: usize| visual.narrow(0, i, 1)?.reshape(&[n, dv]);
    let first = stream(0)?;
    let first_layer = if temporal_pe {
        let pe = temporal_position_encoding(t, dv)?;
        (0..t)
            .map(|f| {
                let row = pe.narrow(0, f, 1)?.reshape(&[dv])?;
                first.add_row(&row)
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        vec![first; t]
    };
    let deeper = (1..m).map(stream).collect::<Result<Vec<_>>>()?;
    Ok(VisualPromptSchedule { first_layer, deeper })
}
