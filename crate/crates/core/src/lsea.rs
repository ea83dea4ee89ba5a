//! Latent semantic emotion aggregator.
//!
//! Frame features `[t × d]` go through single-head temporal self-attention
//! and a linear layer, are pooled over time by a learned scorer, and are
//! then fused with the class text features by `𝒩` semantic attention heads:
//! each head projects both sides to width `d_h`, weights the class rows by a
//! softmax over cosine similarity, and mixes the result with the projected
//! visual vector through `β`. Head outputs are averaged.

use serde::{Deserialize, Serialize};

use crate::encoder::{attention_weights, named};
use crate::error::{Error, Result};
use crate::init;
use crate::tensor::Tensor;

/// Default fusion weight.
pub const DEFAULT_BETA: f64 = 0.7;
/// Default number of semantic heads.
pub const DEFAULT_HEADS: usize = 4;

#[derive(Debug, Clone)]
pub struct LseaParams {
    pub w_query: Tensor,
    pub w_key: Tensor,
    pub w_value: Tensor,
    pub w_out: Tensor,
    pub b_out: Tensor,
    /// `[d × 1]` pooling scorer. No bias: softmax is blind to it.
    pub scorer: Tensor,
    /// `[d × 𝒩·d_h]`, head `i` in columns `i·d_h..(i+1)·d_h`.
    pub head_visual: Tensor,
    pub head_visual_bias: Tensor,
    pub head_text: Tensor,
    pub head_text_bias: Tensor,
    beta: f64,
    heads: usize,
    head_dim: usize,
}

/// Default head width: `d / 𝒩`, at least 1.
pub fn default_head_dim(d: usize, heads: usize) -> usize {
    (d / heads.max(1)).max(1)
}

impl LseaParams {
    pub fn new(d: usize, heads: usize, head_dim: usize, beta: f64, seed: u64) -> Result<Self> {
        validate_beta(beta)?;
        if d == 0 || heads == 0 || head_dim == 0 {
            return Err(Error::Config(format!(
                "aggregator needs d, heads and head width ≥ 1 (got {d}, {heads}, {head_dim})"
            )));
        }
        let mut rng = init::rng(seed);
        let std = 1.0 / (d as f64).sqrt();
        let width = heads * head_dim;
        Ok(LseaParams {
            w_query: init::normal(&mut rng, &[d, d], std, true),
            w_key: init::normal(&mut rng, &[d, d], std, true),
            w_value: init::normal(&mut rng, &[d, d], std, true),
            w_out: init::normal(&mut rng, &[d, d], std, true),
            b_out: init::constant(&[d], 0.0, true),
            scorer: init::normal(&mut rng, &[d, 1], std, true),
            head_visual: init::normal(&mut rng, &[d, width], std, true),
            head_visual_bias: init::constant(&[width], 0.0, true),
            head_text: init::normal(&mut rng, &[d, width], std, true),
            head_text_bias: init::constant(&[width], 0.0, true),
            beta,
            heads,
            head_dim,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn set_beta(&mut self, beta: f64) -> Result<()> {
        validate_beta(beta)?;
        self.beta = beta;
        Ok(())
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        named!(self, "lsea.", [
            w_query, w_key, w_value, w_out, b_out, scorer,
            head_visual, head_visual_bias, head_text, head_text_bias,
        ])
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        named!(mut self, "lsea.", [
            w_query, w_key, w_value, w_out, b_out, scorer,
            head_visual, head_visual_bias, head_text, head_text_bias,
        ])
    }
}

fn validate_beta(beta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Config(format!("fusion weight β must lie in [0, 1], got {beta}")));
    }
    Ok(())
}

/// Temporal attention matrix `[t × t]` over frame features.
pub fn temporal_attention_weights(f_v: &Tensor, p: &LseaParams) -> Result<Tensor> {
    attention_weights(&f_v.matmul(&p.w_query)?, &f_v.matmul(&p.w_key)?)
}

/// `V_m = Linear(Attention(F_V W_Q, F_V W_K, F_V W_V))`, shape `[t × d]`.
pub fn temporal_self_attention(f_v: &Tensor, p: &LseaParams) -> Result<Tensor> {
    let weights = temporal_attention_weights(f_v, p)?;
    weights
        .matmul(&f_v.matmul(&p.w_value)?)?
        .matmul(&p.w_out)?
        .add_row(&p.b_out)
}

/// Softmax over time of `V_m · scorer`; returns `(Σ w_i V_m⁽ⁱ⁾ [d], w [t])`.
pub fn attention_pool(v_m: &Tensor, scorer: &Tensor) -> Result<(Tensor, Tensor)> {
    if v_m.rank() != 2 {
        return Err(Error::Contract(format!("pooling input must be [t×d], got {:?}", v_m.shape())));
    }
    let (t, d) = (v_m.shape()[0], v_m.shape()[1]);
    let w = v_m.matmul(scorer)?.reshape(&[t])?.softmax(0)?;
    let pooled = w.reshape(&[1, t])?.matmul(v_m)?.reshape(&[d])?;
    Ok((pooled, w))
}

/// One semantic head: `α = softmax_c(cos(Ṽ_o, F̃_T rows))`, `T̃_o = αᵀ F̃_T`.
/// Returns `(T̃_o [d_h], α [c])`.
pub fn semantic_attention_head(v_o: &Tensor, f_t: &Tensor) -> Result<(Tensor, Tensor)> {
    if v_o.rank() != 1 || f_t.rank() != 2 || f_t.shape()[1] != v_o.shape()[0] {
        return Err(Error::dim("semantic attention", v_o.shape(), f_t.shape()));
    }
    let (c, dh) = (f_t.shape()[0], f_t.shape()[1]);
    let query = v_o.l2_normalize(0)?.reshape(&[dh, 1])?;
    let alpha = f_t.l2_normalize(1)?.matmul(&query)?.reshape(&[c])?.softmax(0)?;
    let semantic = alpha.reshape(&[1, c])?.matmul(f_t)?.reshape(&[dh])?;
    Ok((semantic, alpha))
}

/// Result of multi-head fusion.
#[derive(Debug, Clone)]
pub struct Fusion {
    /// `V_g [d_h]`.
    pub v_g: Tensor,
    /// Head-mean of projected class features `[c × d_h]`; the text side of
    /// the contrastive objective.
    pub text: Tensor,
    pub head_visual: Vec<Tensor>,
    pub head_semantic: Vec<Tensor>,
    pub alphas: Vec<Tensor>,
}

/// `V_g = (1/𝒩) Σ_i (β Ṽ_o⁽ⁱ⁾ + (1−β) T̃_o⁽ⁱ⁾)`.
pub fn fuse(v_o: &Tensor, f_t: &Tensor, p: &LseaParams) -> Result<Fusion> {
    validate_beta(p.beta)?;
    let d = v_o.numel();
    if f_t.rank() != 2 || f_t.shape()[1] != d {
        return Err(Error::dim("fuse", v_o.shape(), f_t.shape()));
    }
    let (heads, dh) = (p.heads, p.head_dim);
    let visual_all = v_o
        .reshape(&[1, d])?
        .matmul(&p.head_visual)?
        .add_row(&p.head_visual_bias)?;
    let text_all = f_t.matmul(&p.head_text)?.add_row(&p.head_text_bias)?;

    let mut head_visual = Vec::with_capacity(heads);
    let mut head_semantic = Vec::with_capacity(heads);
    let mut head_text = Vec::with_capacity(heads);
    let mut alphas = Vec::with_capacity(heads);
    let mut mixed = Vec::with_capacity(heads);
    for i in 0..heads {
        let v = visual_all.narrow(1, i * dh, dh)?.reshape(&[dh])?;
        let t = text_all.narrow(1, i * dh, dh)?;
        let (sem, alpha) = semantic_attention_head(&v, &t)?;
        mixed.push(v.scale(p.beta).add(&sem.scale(1.0 - p.beta))?);
        head_visual.push(v);
        head_semantic.push(sem);
        head_text.push(t);
        alphas.push(alpha);
    }
    Ok(Fusion {
        v_g: Tensor::stack(&mixed)?.mean(0)?,
        text: Tensor::stack(&head_text)?.mean(0)?,
        head_visual,
        head_semantic,
        alphas,
    })
}

/// Diagnostics for one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionTrace {
    pub v_m: Vec<Vec<f64>>,
    pub v_o: Vec<f64>,
    pub pool_weights: Vec<f64>,
    pub head_semantic: Vec<Vec<f64>>,
    pub alphas: Vec<Vec<f64>>,
    pub v_g: Vec<f64>,
}

/// Full aggregator output for one clip.
#[derive(Debug, Clone)]
pub struct Aggregate {
    pub fusion: Fusion,
    pub v_m: Tensor,
    pub v_o: Tensor,
    pub pool_weights: Tensor,
}

impl Aggregate {
    pub fn trace(&self) -> FusionTrace {
        let d = self.v_m.shape()[1];
        FusionTrace {
            v_m: self.v_m.data().chunks(d).map(<[f64]>::to_vec).collect(),
            v_o: self.v_o.to_vec(),
            pool_weights: self.pool_weights.to_vec(),
            head_semantic: self.fusion.head_semantic.iter().map(Tensor::to_vec).collect(),
            alphas: self.fusion.alphas.iter().map(Tensor::to_vec).collect(),
            v_g: self.fusion.v_g.to_vec(),
        }
    }
}

/// `[t × d]` frame features and `[c × d]` class features → fused `V_g`.
pub fn aggregate(f_v: &Tensor, f_t: &Tensor, p: &LseaParams) -> Result<Aggregate> {
    if f_v.rank() != 2 || f_v.shape()[0] == 0 {
        return Err(Error::Contract(format!("frame features must be [t×d], got {:?}", f_v.shape())));
    }
    let v_m = temporal_self_attention(f_v, p)?;
    let (v_o, pool_weights) = attention_pool(&v_m, &p.scorer)?;
    let fusion = fuse(&v_o, f_t, p)?;
    Ok(Aggregate { fusion, v_m, v_o, pool_weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_difference_check;

    fn random(rng: &mut init::Rng, shape: &[usize]) -> Tensor {
        init::normal(rng, shape, 1.0, false)
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn single_frame_attention_is_value_then_linear() {
        let p = LseaParams::new(4, 2, 2, 0.7, 1).unwrap();
        let f = random(&mut init::rng(2), &[1, 4]);
        let v_m = temporal_self_attention(&f, &p).unwrap();
        let expected = f.matmul(&p.w_value).unwrap().matmul(&p.w_out).unwrap().add_row(&p.b_out).unwrap();
        assert!(v_m.bit_eq(&expected));
    }

    #[test]
    fn identical_frames_give_identical_rows() {
        let p = LseaParams::new(4, 2, 2, 0.7, 3).unwrap();
        let row = random(&mut init::rng(4), &[1, 4]);
        let f = Tensor::concat(&[row.clone(), row.clone(), row], 0).unwrap();
        let v_m = temporal_self_attention(&f, &p).unwrap();
        for r in 1..3 {
            for c in 0..4 {
                assert_eq!(v_m.at2(r, c), v_m.at2(0, c));
            }
        }
    }

    #[test]
    fn temporal_attention_rows_sum_to_one() {
        let p = LseaParams::new(6, 2, 3, 0.7, 5).unwrap();
        let mut rng = init::rng(6);
        for t in 1..8 {
            let w = temporal_attention_weights(&random(&mut rng, &[t, 6]), &p).unwrap();
            for row in w.data().chunks(t) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn zero_scorer_pools_to_frame_mean() {
        let v_m = random(&mut init::rng(7), &[5, 3]);
        let (pooled, w) = attention_pool(&v_m, &Tensor::zeros(&[3, 1]).unwrap()).unwrap();
        assert!(close(w.data(), &[0.2; 5], 1e-15));
        assert!(close(pooled.data(), v_m.mean(0).unwrap().data(), 1e-14));
    }

    #[test]
    fn single_frame_pool_returns_the_row() {
        let v_m = random(&mut init::rng(8), &[1, 4]);
        let scorer = random(&mut init::rng(9), &[4, 1]);
        let (pooled, w) = attention_pool(&v_m, &scorer).unwrap();
        assert_eq!(w.data(), &[1.0]);
        assert_eq!(pooled.data(), v_m.data());
    }

    #[test]
    fn saturated_score_selects_one_frame() {
        // scorer picks column 0; frame 2 scores 20 above the rest
        let rows = vec![vec![0.0, 1.0, -2.0], vec![0.0, 3.0, 0.5], vec![20.0, -1.0, 2.0], vec![0.0, 0.0, 1.0]];
        let v_m = Tensor::from_rows(&rows).unwrap();
        let scorer = Tensor::new(&[3, 1], vec![1.0, 0.0, 0.0]).unwrap();
        let (pooled, w) = attention_pool(&v_m, &scorer).unwrap();
        // brute force: w_2 = 1 / (1 + 3 e^-20)
        let expected_w2 = 1.0 / (1.0 + 3.0 * (-20f64).exp());
        assert!((w.data()[2] - expected_w2).abs() < 1e-15);
        assert!(close(pooled.data(), &rows[2], 1e-6));
    }

    #[test]
    fn single_class_head_returns_class_row() {
        let v = random(&mut init::rng(10), &[3]);
        let t = random(&mut init::rng(11), &[1, 3]);
        let (sem, alpha) = semantic_attention_head(&v, &t).unwrap();
        assert_eq!(alpha.data(), &[1.0]);
        assert_eq!(sem.data(), t.data());
    }

    #[test]
    fn orthogonal_query_averages_class_rows() {
        let v = Tensor::new(&[3], vec![0.0, 0.0, 2.0]).unwrap();
        let t = Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 5.0, 0.0], vec![3.0, -4.0, 0.0]]).unwrap();
        let (sem, alpha) = semantic_attention_head(&v, &t).unwrap();
        assert!(close(alpha.data(), &[1.0 / 3.0; 3], 1e-15));
        assert!(close(sem.data(), &[4.0 / 3.0, 1.0 / 3.0, 0.0], 1e-14));
    }

    #[test]
    fn parallel_query_wins_the_argmax() {
        let mut rng = init::rng(12);
        for _ in 0..50 {
            let t = random(&mut rng, &[4, 8]);
            let target = 2;
            let v = t.narrow(0, target, 1).unwrap().reshape(&[8]).unwrap().scale(3.7);
            let (_, alpha) = semantic_attention_head(&v, &t).unwrap();
            // brute force: cosine of every row against v, pick the max
            let cos = |r: usize| {
                let row = &t.data()[r * 8..(r + 1) * 8];
                let dot: f64 = row.iter().zip(v.data()).map(|(a, b)| a * b).sum();
                let na = row.iter().map(|a| a * a).sum::<f64>().sqrt();
                let nb = v.data().iter().map(|a| a * a).sum::<f64>().sqrt();
                dot / (na * nb)
            };
            let brute = (0..4).max_by(|&a, &b| cos(a).total_cmp(&cos(b))).unwrap();
            let got = (0..4).max_by(|&a, &b| alpha.data()[a].total_cmp(&alpha.data()[b])).unwrap();
            assert_eq!(brute, target);
            assert_eq!(got, target);
        }
    }

    #[test]
    fn beta_endpoints() {
        let mut p = LseaParams::new(6, 3, 2, 1.0, 13).unwrap();
        let mut rng = init::rng(14);
        let v_o = random(&mut rng, &[6]);
        let f_t = random(&mut rng, &[4, 6]);

        let out = fuse(&v_o, &f_t, &p).unwrap();
        let visual_mean = Tensor::stack(&out.head_visual).unwrap().mean(0).unwrap();
        assert!(close(out.v_g.data(), visual_mean.data(), 1e-12));

        p.set_beta(0.0).unwrap();
        let out = fuse(&v_o, &f_t, &p).unwrap();
        let semantic_mean = Tensor::stack(&out.head_semantic).unwrap().mean(0).unwrap();
        assert!(close(out.v_g.data(), semantic_mean.data(), 1e-12));
    }

    #[test]
    fn beta_out_of_range_is_a_config_error() {
        assert!(matches!(LseaParams::new(4, 2, 2, 1.5, 1), Err(Error::Config(_))));
        let mut p = LseaParams::new(4, 2, 2, 0.5, 1).unwrap();
        assert!(p.set_beta(-0.1).is_err());
    }

    #[test]
    fn end_to_end_shapes() {
        let mut rng = init::rng(15);
        for (t, c, heads) in [(1, 1, 1), (3, 2, 2), (8, 7, 4), (2, 5, 6)] {
            let d = 12;
            let dh = default_head_dim(d, heads);
            let p = LseaParams::new(d, heads, dh, 0.7, 16).unwrap();
            let agg = aggregate(&random(&mut rng, &[t, d]), &random(&mut rng, &[c, d]), &p).unwrap();
            assert_eq!(agg.fusion.v_g.shape(), &[dh]);
            assert_eq!(agg.fusion.text.shape(), &[c, dh]);
            let trace = agg.trace();
            assert_eq!(trace.pool_weights.len(), t);
            assert_eq!(trace.alphas.len(), heads);
            assert!(trace.alphas.iter().all(|a| a.len() == c));
        }
    }

    #[test]
    fn head_dim_default_rounds_down_with_floor_of_one() {
        assert_eq!(default_head_dim(32, 4), 8);
        assert_eq!(default_head_dim(32, 6), 5);
        assert_eq!(default_head_dim(2, 4), 1);
    }

    #[test]
    fn gradients_of_every_parameter_match_finite_differences() {
        let p = LseaParams::new(6, 2, 3, 0.7, 17).unwrap();
        let mut rng = init::rng(18);
        let f_v = random(&mut rng, &[3, 6]);
        let f_t = random(&mut rng, &[4, 6]);
        let probe = random(&mut rng, &[3]);
        let params: Vec<Tensor> = p.named().into_iter().map(|(_, t)| t.clone()).collect();
        let f = |ps: &[Tensor]| {
            let mut q = p.clone();
            for ((_, slot), v) in q.named_mut().into_iter().zip(ps) {
                *slot = v.clone();
            }
            aggregate(&f_v, &f_t, &q)?.fusion.v_g.mul(&probe).map(|t| t.sum_all())
        };
        let err = finite_difference_check(f, &params, 1e-5).unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
