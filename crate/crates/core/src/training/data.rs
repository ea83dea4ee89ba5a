//! Synthetic expression clips.
//!
//! Every class owns an oriented sinusoidal grating (the spatial prototype)
//! whose contrast drifts over the clip at a class-specific frequency (the
//! temporal prototype). Clips are the prototype plus Gaussian pixel noise,
//! clamped to `[0, 1]`. Prototypes depend only on the seed, so a holdout set
//! drawn with a different noise stream shares them with the training set.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encoder::Tokenizer;
use crate::error::{Error, Result};
use crate::init;
use crate::tensor::Tensor;

const EMOTIONS: [(&str, &str); 7] = [
    ("happy", "with raised cheeks and smiling mouth"),
    ("sad", "with drooping mouth corners and lowered brows"),
    ("neutral", "with relaxed mouth and calm steady gaze"),
    ("angry", "with furrowed brows and pressed lips"),
    ("surprise", "with raised eyebrows and wide open mouth"),
    ("disgust", "with wrinkled nose and curled upper lip"),
    ("fear", "with wide eyes and stretched lips"),
];

pub const MAX_CLASSES: usize = EMOTIONS.len();

const TRAIN_STREAM: u64 = 0x7472_6169_6e00;
const HOLDOUT_STREAM: u64 = 0x686f_6c64_6f75;

/// One labelled clip, `frames: [t × C × H × W]`.
#[derive(Debug, Clone)]
pub struct ClipBatch {
    pub frames: Tensor,
    pub label: usize,
    pub clip_id: usize,
}

impl ClipBatch {
    pub fn frame_count(&self) -> usize {
        self.frames.shape()[0]
    }
}

/// One description per class, with its token ids.
#[derive(Debug, Clone)]
pub struct ClassTexts {
    pub descriptions: Vec<String>,
    pub tokens: Vec<Vec<usize>>,
}

impl ClassTexts {
    /// Label word plus attribute words for the first `classes` emotions.
    pub fn emotions(classes: usize, tokenizer: &Tokenizer) -> Result<Self> {
        if !(2..=MAX_CLASSES).contains(&classes) {
            return Err(Error::Config(format!("class count must be in 2..={MAX_CLASSES}, got {classes}")));
        }
        let descriptions: Vec<String> = EMOTIONS[..classes]
            .iter()
            .map(|(label, attrs)| format!("a {label} face {attrs}"))
            .collect();
        let tokens = descriptions.iter().map(|d| tokenizer.encode(d)).collect();
        Ok(ClassTexts { descriptions, tokens })
    }

    pub fn len(&self) -> usize {
        self.descriptions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub clips_per_class: usize,
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Pixel noise std.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 4,
            clips_per_class: 50,
            frames: 8,
            channels: 1,
            height: 16,
            width: 16,
            sigma: 0.05,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if !(2..=MAX_CLASSES).contains(&self.classes) {
            return Err(Error::Config(format!("class count must be in 2..={MAX_CLASSES}, got {}", self.classes)));
        }
        if self.clips_per_class == 0 || self.frames == 0 || self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Config("dataset extents must all be at least 1".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("noise σ must be finite and ≥ 0, got {}", self.sigma)));
        }
        Ok(())
    }

    fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }
}

struct Prototype {
    orientation: f64,
    spatial_freq: f64,
    phase: f64,
    temporal_freq: f64,
    temporal_phase: f64,
}

fn prototypes(spec: &SyntheticSpec) -> Vec<Prototype> {
    let mut rng = init::rng(spec.seed);
    (0..spec.classes)
        .map(|k| Prototype {
            orientation: PI * k as f64 / spec.classes as f64 + rng.random_range(-0.1..0.1),
            spatial_freq: rng.random_range(1.0..2.0),
            phase: rng.random_range(0.0..2.0 * PI),
            temporal_freq: 0.5 + 0.5 * k as f64,
            temporal_phase: rng.random_range(0.0..2.0 * PI),
        })
        .collect()
}

fn render(spec: &SyntheticSpec, p: &Prototype) -> Vec<f64> {
    let (t, c, h, w) = (spec.frames, spec.channels, spec.height, spec.width);
    let (cos, sin) = (p.orientation.cos(), p.orientation.sin());
    let mut out = Vec::with_capacity(t * spec.frame_len());
    for f in 0..t {
        let contrast = 0.75 + 0.25 * (2.0 * PI * p.temporal_freq * f as f64 / t as f64 + p.temporal_phase).sin();
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let u = (x as f64 / w as f64) * cos + (y as f64 / h as f64) * sin;
                    let wave = (2.0 * PI * p.spatial_freq * u + p.phase + ch as f64).sin();
                    out.push(0.5 + 0.3 * wave * contrast);
                }
            }
        }
    }
    out
}

/// Noiseless clip of every class, flattened `[t·C·H·W]`.
pub fn class_prototypes(spec: &SyntheticSpec) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    Ok(prototypes(spec).iter().map(|p| render(spec, p)).collect())
}

fn sample_clips(spec: &SyntheticSpec, per_class: usize, stream: u64, first_id: usize) -> Result<Vec<ClipBatch>> {
    let protos = class_prototypes(spec)?;
    let mut rng = init::rng(spec.seed ^ stream);
    let noise = Normal::new(0.0, spec.sigma).map_err(|e| Error::Config(e.to_string()))?;
    let shape = [spec.frames, spec.channels, spec.height, spec.width];
    let mut clips = Vec::with_capacity(per_class * spec.classes);
    for i in 0..per_class {
        for (label, proto) in protos.iter().enumerate() {
            let data = proto
                .iter()
                .map(|&v| {
                    let n = if spec.sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    (v + n).clamp(0.0, 1.0)
                })
                .collect();
            clips.push(ClipBatch {
                frames: Tensor::new(&shape, data)?,
                label,
                clip_id: first_id + i * spec.classes + label,
            });
        }
    }
    Ok(clips)
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub clips: Vec<ClipBatch>,
    pub texts: ClassTexts,
}

/// Training clips (`clips_per_class` per class) and the class texts.
/// Fully determined by `spec`.
pub fn generate_synthetic_dataset(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    let clips = sample_clips(spec, spec.clips_per_class, TRAIN_STREAM, 0)?;
    let texts = ClassTexts::emotions(spec.classes, &Tokenizer::default())?;
    Ok(SyntheticDataset { clips, texts })
}

/// Held-out clips sharing the prototypes of `spec` but drawn from an
/// independent noise stream. Ids continue after the training set.
pub fn generate_holdout(spec: &SyntheticSpec, per_class: usize) -> Result<Vec<ClipBatch>> {
    if per_class == 0 {
        return Err(Error::Config("holdout needs at least one clip per class".into()));
    }
    sample_clips(spec, per_class, HOLDOUT_STREAM, spec.clips_per_class * spec.classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(sigma: f64) -> SyntheticSpec {
        SyntheticSpec { clips_per_class: 6, sigma, ..SyntheticSpec::default() }
    }

    #[test]
    fn noiseless_clips_of_a_class_are_identical() {
        let ds = generate_synthetic_dataset(&spec(0.0)).unwrap();
        for k in 0..4 {
            let of_class: Vec<&ClipBatch> = ds.clips.iter().filter(|c| c.label == k).collect();
            assert_eq!(of_class.len(), 6);
            assert!(of_class.iter().all(|c| c.frames.bit_eq(&of_class[0].frames)));
        }
    }

    #[test]
    fn same_seed_same_bits() {
        let a = generate_synthetic_dataset(&spec(0.05)).unwrap();
        let b = generate_synthetic_dataset(&spec(0.05)).unwrap();
        assert!(a.clips.iter().zip(&b.clips).all(|(x, y)| x.frames.bit_eq(&y.frames) && x.label == y.label));
        let other = generate_synthetic_dataset(&SyntheticSpec { seed: 8, ..spec(0.05) }).unwrap();
        assert!(!a.clips[0].frames.bit_eq(&other.clips[0].frames));
    }

    #[test]
    fn pixels_stay_in_unit_range_and_shapes_match() {
        let ds = generate_synthetic_dataset(&spec(0.5)).unwrap();
        for c in &ds.clips {
            assert_eq!(c.frames.shape(), &[8, 1, 16, 16]);
            assert!(c.frames.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn nearest_prototype_separates_classes() {
        let s = spec(0.05);
        let protos = class_prototypes(&s).unwrap();
        let mut clips = generate_synthetic_dataset(&s).unwrap().clips;
        clips.extend(generate_holdout(&s, 6).unwrap());
        for clip in &clips {
            let dist = |p: &Vec<f64>| -> f64 { p.iter().zip(clip.frames.data()).map(|(a, b)| (a - b) * (a - b)).sum() };
            let nearest = (0..protos.len()).min_by(|&a, &b| dist(&protos[a]).total_cmp(&dist(&protos[b]))).unwrap();
            assert_eq!(nearest, clip.label);
        }
    }

    #[test]
    fn holdout_uses_fresh_noise_and_ids() {
        let s = spec(0.05);
        let train = generate_synthetic_dataset(&s).unwrap().clips;
        let hold = generate_holdout(&s, 2).unwrap();
        assert_eq!(hold.len(), 8);
        assert!(hold.iter().all(|c| c.clip_id >= train.len()));
        assert!(!hold[0].frames.bit_eq(&train[0].frames));
    }

    #[test]
    fn texts_are_distinct_and_bounded() {
        let tok = Tokenizer::default();
        let texts = ClassTexts::emotions(7, &tok).unwrap();
        for a in 0..7 {
            for b in a + 1..7 {
                assert_ne!(texts.descriptions[a], texts.descriptions[b]);
                assert_ne!(texts.tokens[a], texts.tokens[b]);
            }
        }
        assert!(texts.tokens.iter().flatten().all(|&id| id != crate::encoder::tokenizer::OOV));
        assert!(ClassTexts::emotions(1, &tok).is_err());
        assert!(ClassTexts::emotions(8, &tok).is_err());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(SyntheticSpec { sigma: -1.0, ..spec(0.0) }.validate().is_err());
        assert!(SyntheticSpec { frames: 0, ..spec(0.0) }.validate().is_err());
    }
}
