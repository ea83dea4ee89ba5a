//! Ablation grids: module on/off, prompt depth, head count and fusion weight.
//!
//! A variant is a `+`-joined list of `key=value` overrides, e.g.
//! `htpc=off+lsea=off` or `beta=0.3`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::htpc::DepthStrategy;

use super::{generate_holdout, generate_synthetic_dataset, train, DuseModel, ExperimentConfig, Metrics, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Override {
    Htpc(bool),
    Lsea(bool),
    Strategy(DepthStrategy),
    Heads(usize),
    Beta(f64),
}

impl Override {
    fn apply(&self, m: &mut ModelConfig) {
        match *self {
            Override::Htpc(on) => m.htpc = on,
            Override::Lsea(on) => m.lsea = on,
            Override::Strategy(s) => m.strategy = s,
            Override::Heads(h) => m.semantic_heads = h,
            Override::Beta(b) => m.beta = b,
        }
    }
}

impl fmt::Display for Override {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let on_off = |on: bool| if on { "on" } else { "off" };
        match self {
            Override::Htpc(on) => write!(f, "htpc={}", on_off(*on)),
            Override::Lsea(on) => write!(f, "lsea={}", on_off(*on)),
            Override::Strategy(s) => write!(f, "strategy={s}"),
            Override::Heads(h) => write!(f, "heads={h}"),
            Override::Beta(b) => write!(f, "beta={b}"),
        }
    }
}

impl FromStr for Override {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (key, value) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("variant override `{s}` is not key=value")))?;
        let (key, value) = (key.trim(), value.trim());
        let flag = || match value.to_ascii_lowercase().as_str() {
            "on" | "true" => Ok(true),
            "off" | "false" => Ok(false),
            _ => Err(Error::Config(format!("variant key {key}: expected on/off, got `{value}`"))),
        };
        let bad = |e: &dyn fmt::Display| Error::Config(format!("variant key {key}: {e}"));
        match key {
            "htpc" => Ok(Override::Htpc(flag()?)),
            "lsea" => Ok(Override::Lsea(flag()?)),
            "strategy" => Ok(Override::Strategy(value.parse()?)),
            "heads" => match value.parse::<usize>().map_err(|e| bad(&e))? {
                0 => Err(Error::Config("variant key heads: must be at least 1".into())),
                h => Ok(Override::Heads(h)),
            },
            "beta" => {
                let b: f64 = value.parse().map_err(|e| bad(&e))?;
                if !(0.0..=1.0).contains(&b) {
                    return Err(Error::Config(format!("variant key beta: {b} not in [0, 1]")));
                }
                Ok(Override::Beta(b))
            }
            _ => Err(Error::Config(format!("unknown variant key `{key}`"))),
        }
    }
}

/// A named set of overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub overrides: Vec<Override>,
}

impl Variant {
    pub fn new(name: impl Into<String>, overrides: Vec<Override>) -> Self {
        Variant { name: name.into(), overrides }
    }

    pub fn apply(&self, base: &ModelConfig) -> ModelConfig {
        let mut m = base.clone();
        for o in &self.overrides {
            o.apply(&mut m);
        }
        m
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Err(Error::Config("empty variant".into()));
        }
        if s == "full" {
            return Ok(Variant::new("full", Vec::new()));
        }
        if s == "baseline" {
            return Ok(Variant::new("baseline", vec![Override::Htpc(false), Override::Lsea(false)]));
        }
        let overrides = s.split('+').map(str::parse).collect::<Result<Vec<_>>>()?;
        Ok(Variant::new(s, overrides))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Grid {
    /// HTPC and LSEA on/off.
    Modules,
    /// Shallow, Normal, Deep.
    Depth,
    /// 𝒩 ∈ {2, 4, 6}.
    Heads,
    /// β ∈ {0.3, 0.5, 0.7, 0.9}.
    Beta,
}

impl Grid {
    pub const ALL: [Grid; 4] = [Grid::Modules, Grid::Depth, Grid::Heads, Grid::Beta];

    pub fn variants(self) -> Vec<Variant> {
        match self {
            Grid::Modules => vec![
                Variant::new("baseline", vec![Override::Htpc(false), Override::Lsea(false)]),
                Variant::new("htpc", vec![Override::Htpc(true), Override::Lsea(false)]),
                Variant::new("lsea", vec![Override::Htpc(false), Override::Lsea(true)]),
                Variant::new("htpc+lsea", vec![Override::Htpc(true), Override::Lsea(true)]),
            ],
            Grid::Depth => DepthStrategy::ALL
                .iter()
                .map(|&s| Variant::new(format!("strategy={s}"), vec![Override::Strategy(s)]))
                .collect(),
            Grid::Heads => [2, 4, 6]
                .iter()
                .map(|&h| Variant::new(format!("heads={h}"), vec![Override::Heads(h)]))
                .collect(),
            Grid::Beta => [0.3, 0.5, 0.7, 0.9]
                .iter()
                .map(|&b| Variant::new(format!("beta={b}"), vec![Override::Beta(b)]))
                .collect(),
        }
    }
}

impl FromStr for Grid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "modules" => Ok(Grid::Modules),
            "depth" | "strategy" => Ok(Grid::Depth),
            "heads" => Ok(Grid::Heads),
            "beta" => Ok(Grid::Beta),
            other => Err(Error::Config(format!("unknown ablation grid `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub metrics: Metrics,
    pub final_loss: f64,
}

/// Trains every variant from scratch on the same data, seeds and budget.
pub fn ablation_run(base: &ExperimentConfig, variants: &[Variant]) -> Result<Vec<AblationRow>> {
    base.validate()?;
    let dataset = generate_synthetic_dataset(&base.data)?;
    let eval_clips = generate_holdout(&base.data, base.eval_clips_per_class)?;
    let mut rows = Vec::with_capacity(variants.len());
    for variant in variants {
        let config = variant.apply(&base.model);
        let mut model = DuseModel::new(config)?;
        log::info!("ablation variant {}", variant.name);
        let report = train(&mut model, &dataset.clips, &eval_clips, &dataset.texts, &base.train, |_| {})?;
        rows.push(AblationRow {
            variant: variant.name.clone(),
            final_loss: report.history.last().map_or(f64::NAN, |r| r.loss),
            metrics: report.final_metrics,
        });
    }
    Ok(rows)
}
