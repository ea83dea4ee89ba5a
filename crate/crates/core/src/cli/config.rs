//! Flat `key = value` run configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::encoder::Tokenizer;
use crate::error::{Error, Result};
use crate::htpc::{self, DepthStrategy};
use crate::training::ablation::Grid;
use crate::training::data::{ClassTexts, MAX_CLASSES};
use crate::training::{ExperimentConfig, ModelConfig, SyntheticSpec, TrainConfig};

/// Size class of the encoder profile. Only `Large` changes behaviour: Deep
/// prompting is refused for it unless forced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Small,
    Base,
    Large,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Small => "small",
            Profile::Base => "base",
            Profile::Large => "large",
        })
    }
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "small" => Ok(Profile::Small),
            "base" => Ok(Profile::Base),
            "large" => Ok(Profile::Large),
            _ => Err(format!("expected small, base or large, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridChoice {
    All,
    One(Grid),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub profile: Profile,
    pub layers: usize,
    pub model_dim: usize,
    pub attention_heads: usize,
    pub ff_dim: usize,
    pub embed_dim: usize,
    pub max_seq_len: usize,
    pub patch: usize,
    pub encoder_seed: u64,

    pub htpc: bool,
    pub prompt_tokens: usize,
    pub strategy: DepthStrategy,
    pub temporal_pe: bool,
    pub mapper_hidden: usize,

    pub lsea: bool,
    pub semantic_heads: usize,
    pub head_dim: usize,
    pub beta: f64,
    pub normalize: bool,

    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_steps: usize,
    pub frames: usize,
    pub classes: usize,
    pub clips_per_class: usize,
    pub eval_clips_per_class: usize,
    pub sigma: f64,
    pub seed: u64,
    pub temperature: f64,
    pub channels: usize,
    pub height: usize,
    pub width: usize,

    pub grid: GridChoice,

    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
    /// Command-line only; never read from a file.
    pub force_deep: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        let d = SyntheticSpec::default();
        RunConfig {
            profile: Profile::Small,
            layers: m.layers,
            model_dim: m.model_dim,
            attention_heads: m.attention_heads,
            ff_dim: m.ff_dim,
            embed_dim: m.output_dim,
            max_seq_len: m.max_seq_len,
            patch: m.patch,
            encoder_seed: m.encoder_seed,
            htpc: m.htpc,
            prompt_tokens: m.prompt_tokens,
            strategy: m.strategy,
            temporal_pe: m.temporal_pe,
            mapper_hidden: m.mapper_hidden,
            lsea: m.lsea,
            semantic_heads: m.semantic_heads,
            head_dim: m.head_dim,
            beta: m.beta,
            normalize: m.normalize,
            lr: t.lr,
            batch_size: t.batch_size,
            epochs: t.epochs,
            max_steps: 0,
            frames: d.frames,
            classes: d.classes,
            clips_per_class: d.clips_per_class,
            eval_clips_per_class: ExperimentConfig::default().eval_clips_per_class,
            sigma: d.sigma,
            seed: d.seed,
            temperature: m.temperature,
            channels: d.channels,
            height: d.height,
            width: d.width,
            grid: GridChoice::All,
            out: PathBuf::from("runs"),
            checkpoint: None,
            force_deep: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse `{value}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got `{value}`"))),
    }
}

fn on_off(v: bool) -> String {
    if v { "on" } else { "off" }.to_string()
}

impl RunConfig {
    /// Assigns one key. Unknown keys and unparsable values are errors naming the key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "encoder.profile" => self.profile = parse(key, v)?,
            "encoder.layers" => self.layers = parse(key, v)?,
            "encoder.model_dim" => self.model_dim = parse(key, v)?,
            "encoder.heads" => self.attention_heads = parse(key, v)?,
            "encoder.ff_dim" => self.ff_dim = parse(key, v)?,
            "encoder.embed_dim" => self.embed_dim = parse(key, v)?,
            "encoder.max_seq_len" => self.max_seq_len = parse(key, v)?,
            "encoder.patch" => self.patch = parse(key, v)?,
            "encoder.seed" => self.encoder_seed = parse(key, v)?,
            "htpc.enabled" => self.htpc = parse_bool(key, v)?,
            "htpc.n" => self.prompt_tokens = parse(key, v)?,
            "htpc.strategy" => self.strategy = v.parse().map_err(|e: Error| Error::Config(format!("{key}: {e}")))?,
            "htpc.temporal_pe" => self.temporal_pe = parse_bool(key, v)?,
            "htpc.mapper_hidden" => self.mapper_hidden = parse(key, v)?,
            "lsea.enabled" => self.lsea = parse_bool(key, v)?,
            "lsea.heads" => self.semantic_heads = parse(key, v)?,
            "lsea.head_dim" => self.head_dim = parse(key, v)?,
            "lsea.beta" => self.beta = parse(key, v)?,
            "lsea.normalize" => self.normalize = parse_bool(key, v)?,
            "train.lr" => self.lr = parse(key, v)?,
            "train.batch" => self.batch_size = parse(key, v)?,
            "train.epochs" => self.epochs = parse(key, v)?,
            "train.max_steps" => self.max_steps = parse(key, v)?,
            "train.frames" => self.frames = parse(key, v)?,
            "train.classes" => self.classes = parse(key, v)?,
            "train.clips_per_class" => self.clips_per_class = parse(key, v)?,
            "train.eval_clips_per_class" => self.eval_clips_per_class = parse(key, v)?,
            "train.sigma" => self.sigma = parse(key, v)?,
            "train.seed" => self.seed = parse(key, v)?,
            "train.temperature" => self.temperature = parse(key, v)?,
            "data.channels" => self.channels = parse(key, v)?,
            "data.height" => self.height = parse(key, v)?,
            "data.width" => self.width = parse(key, v)?,
            "ablate.grid" => {
                self.grid = if v.eq_ignore_ascii_case("all") {
                    GridChoice::All
                } else {
                    GridChoice::One(v.parse().map_err(|e: Error| Error::Config(format!("{key}: {e}")))?)
                }
            }
            "paths.out" => self.out = PathBuf::from(v),
            "paths.checkpoint" => self.checkpoint = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Every key that shapes a run, in canonical order. Paths are excluded.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let grid = match self.grid {
            GridChoice::All => "all".to_string(),
            GridChoice::One(g) => format!("{g:?}").to_ascii_lowercase(),
        };
        vec![
            ("encoder.profile", self.profile.to_string()),
            ("encoder.layers", self.layers.to_string()),
            ("encoder.model_dim", self.model_dim.to_string()),
            ("encoder.heads", self.attention_heads.to_string()),
            ("encoder.ff_dim", self.ff_dim.to_string()),
            ("encoder.embed_dim", self.embed_dim.to_string()),
            ("encoder.max_seq_len", self.max_seq_len.to_string()),
            ("encoder.patch", self.patch.to_string()),
            ("encoder.seed", self.encoder_seed.to_string()),
            ("htpc.enabled", on_off(self.htpc)),
            ("htpc.n", self.prompt_tokens.to_string()),
            ("htpc.strategy", self.strategy.to_string()),
            ("htpc.temporal_pe", on_off(self.temporal_pe)),
            ("htpc.mapper_hidden", self.mapper_hidden.to_string()),
            ("lsea.enabled", on_off(self.lsea)),
            ("lsea.heads", self.semantic_heads.to_string()),
            ("lsea.head_dim", self.head_dim.to_string()),
            ("lsea.beta", format!("{:?}", self.beta)),
            ("lsea.normalize", on_off(self.normalize)),
            ("train.lr", format!("{:?}", self.lr)),
            ("train.batch", self.batch_size.to_string()),
            ("train.epochs", self.epochs.to_string()),
            ("train.max_steps", self.max_steps.to_string()),
            ("train.frames", self.frames.to_string()),
            ("train.classes", self.classes.to_string()),
            ("train.clips_per_class", self.clips_per_class.to_string()),
            ("train.eval_clips_per_class", self.eval_clips_per_class.to_string()),
            ("train.sigma", format!("{:?}", self.sigma)),
            ("train.seed", self.seed.to_string()),
            ("train.temperature", format!("{:?}", self.temperature)),
            ("data.channels", self.channels.to_string()),
            ("data.height", self.height.to_string()),
            ("data.width", self.width.to_string()),
            ("ablate.grid", grid),
        ]
    }

    /// Canonical text form; parses back to the same configuration.
    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Applies `key = value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got `{line}`", no + 1)))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        self.set(key, value)
    }

    /// First 16 hex digits of SHA-256 over the canonical text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// First line of every artifact.
    pub fn header(&self) -> String {
        format!("# duse config={} seed={}", self.hash(), self.seed)
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            layers: self.layers,
            model_dim: self.model_dim,
            attention_heads: self.attention_heads,
            ff_dim: self.ff_dim,
            output_dim: self.embed_dim,
            max_seq_len: self.max_seq_len,
            channels: self.channels,
            patch: self.patch,
            encoder_seed: self.encoder_seed,
            htpc: self.htpc,
            prompt_tokens: self.prompt_tokens,
            strategy: self.strategy,
            temporal_pe: self.temporal_pe,
            mapper_hidden: self.mapper_hidden,
            lsea: self.lsea,
            semantic_heads: self.semantic_heads,
            head_dim: self.head_dim,
            beta: self.beta,
            normalize: self.normalize,
            temperature: self.temperature,
            param_seed: self.seed,
        }
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            model: self.model_config(),
            train: TrainConfig {
                lr: self.lr,
                batch_size: self.batch_size,
                epochs: self.epochs,
                seed: self.seed,
                max_steps: (self.max_steps > 0).then_some(self.max_steps),
            },
            data: SyntheticSpec {
                classes: self.classes,
                clips_per_class: self.clips_per_class,
                frames: self.frames,
                channels: self.channels,
                height: self.height,
                width: self.width,
                sigma: self.sigma,
                seed: self.seed,
            },
            eval_clips_per_class: self.eval_clips_per_class,
        }
    }

    /// Checks every field before any compute. Errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::Config(format!("{key}: {msg}")));
        let positive = [
            ("encoder.layers", self.layers),
            ("encoder.model_dim", self.model_dim),
            ("encoder.heads", self.attention_heads),
            ("encoder.ff_dim", self.ff_dim),
            ("encoder.embed_dim", self.embed_dim),
            ("encoder.max_seq_len", self.max_seq_len),
            ("encoder.patch", self.patch),
            ("htpc.n", self.prompt_tokens),
            ("htpc.mapper_hidden", self.mapper_hidden),
            ("lsea.heads", self.semantic_heads),
            ("train.batch", self.batch_size),
            ("train.epochs", self.epochs),
            ("train.frames", self.frames),
            ("train.clips_per_class", self.clips_per_class),
            ("train.eval_clips_per_class", self.eval_clips_per_class),
            ("data.channels", self.channels),
            ("data.height", self.height),
            ("data.width", self.width),
        ];
        for (key, v) in positive {
            if v == 0 {
                return bad(key, "must be at least 1".into());
            }
        }
        if !self.model_dim.is_multiple_of(self.attention_heads) {
            return bad("encoder.heads", format!("{} does not divide model_dim {}", self.attention_heads, self.model_dim));
        }
        if self.htpc && self.temporal_pe && !self.model_dim.is_multiple_of(2) {
            return bad("encoder.model_dim", "temporal encoding needs an even width".into());
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad("lsea.beta", format!("{} is outside [0, 1]", self.beta));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("train.lr", format!("{} must be finite and ≥ 0", self.lr));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("train.sigma", format!("{} must be finite and ≥ 0", self.sigma));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("train.temperature", format!("{} must be positive", self.temperature));
        }
        if !(2..=MAX_CLASSES).contains(&self.classes) {
            return bad("train.classes", format!("{} is outside 2..={MAX_CLASSES}", self.classes));
        }
        if !self.height.is_multiple_of(self.patch) || !self.width.is_multiple_of(self.patch) {
            return bad("encoder.patch", format!("{} does not tile {}×{} frames", self.patch, self.height, self.width));
        }
        if self.htpc && self.strategy == DepthStrategy::Deep && self.profile == Profile::Large && !self.force_deep {
            return bad(
                "htpc.strategy",
                "Deep prompting is excluded for the large profile (ViT-L/14 scale); pass --force-deep to override".into(),
            );
        }
        let depth = if self.htpc { htpc::resolve_prompt_depth(self.strategy, self.layers)? } else { 1 };
        if depth > self.layers {
            return bad("htpc.strategy", format!("resolves to {depth} layers, encoder has {}", self.layers));
        }
        let vision_rows = 1 + (self.height / self.patch) * (self.width / self.patch) + if self.htpc { self.prompt_tokens } else { 0 };
        if vision_rows > self.max_seq_len {
            return bad("encoder.max_seq_len", format!("{} is below the {vision_rows} vision rows", self.max_seq_len));
        }
        let texts = ClassTexts::emotions(self.classes, &Tokenizer::default())?;
        let text_rows = texts.tokens.iter().map(Vec::len).max().unwrap_or(0) + self.prompt_tokens;
        if text_rows > self.max_seq_len {
            return bad("encoder.max_seq_len", format!("{} is below the {text_rows} text rows", self.max_seq_len));
        }
        self.experiment().validate()
    }
}

/// Defaults, then the file (if any), then `--set` overrides, then
/// `DUSE_SEED`; validated.
pub fn parse_config(path: Option<&Path>, overrides: &[String], env_seed: Option<&str>, force_deep: bool) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    for o in overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = env_seed {
        cfg.seed = parse("DUSE_SEED", seed)?;
    }
    cfg.force_deep = force_deep;
    cfg.validate()?;
    Ok(cfg)
}
