use super::*;
use crate::tensor::finite_difference_check;

fn tiny(layers: usize) -> EncoderConfig {
    EncoderConfig {
        num_layers: layers,
        model_dim: 8,
        num_heads: 2,
        ff_dim: 16,
        max_seq_len: 12,
        output_dim: 4,
    }
}

fn random(rng: &mut init::Rng, shape: &[usize]) -> Tensor {
    init::normal(rng, shape, 1.0, false)
}

struct Fixed(Vec<Tensor>);

impl PromptSource for Fixed {
    fn depth(&self) -> usize {
        self.0.len()
    }
    fn prompts(&self, layer: usize, _frame: usize) -> Option<&Tensor> {
        self.0.get(layer)
    }
}

struct Empty(usize);

impl PromptSource for Empty {
    fn depth(&self) -> usize {
        self.0
    }
    fn prompts(&self, _layer: usize, _frame: usize) -> Option<&Tensor> {
        None
    }
}

#[test]
fn attention_single_key_returns_value_row() {
    let mut rng = init::rng(1);
    let q = random(&mut rng, &[1, 4]);
    let k = random(&mut rng, &[1, 4]);
    let v = random(&mut rng, &[1, 3]);
    let out = scaled_dot_product_attention(&q, &k, &v).unwrap();
    assert_eq!(out.data(), v.data());
}

#[test]
fn orthogonal_query_gives_column_mean() {
    let q = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
    let k = Tensor::from_rows(&[vec![0.0, 2.0], vec![0.0, -1.0], vec![0.0, 5.0]]).unwrap();
    let v = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![8.0, 0.0]]).unwrap();
    let out = scaled_dot_product_attention(&q, &k, &v).unwrap();
    assert!((out.data()[0] - 4.0).abs() < 1e-15);
    assert!((out.data()[1] - 2.0).abs() < 1e-15);
}

#[test]
fn attention_rows_are_distributions() {
    let mut rng = init::rng(2);
    for _ in 0..20 {
        let q = random(&mut rng, &[3, 4]);
        let k = random(&mut rng, &[3, 4]);
        let w = attention_weights(&q, &k).unwrap();
        for row in w.data().chunks(3) {
            let total: f64 = row.iter().sum();
            assert!((total - 1.0).abs() <= 1e-12);
            assert!(row.iter().all(|&x| x > 0.0));
        }
        // each output row is a convex combination of V rows
        let v = random(&mut rng, &[3, 2]);
        let out = scaled_dot_product_attention(&q, &k, &v).unwrap();
        for col in 0..2 {
            let lo = (0..3).map(|r| v.at2(r, col)).fold(f64::INFINITY, f64::min);
            let hi = (0..3).map(|r| v.at2(r, col)).fold(f64::NEG_INFINITY, f64::max);
            for r in 0..3 {
                assert!(out.at2(r, col) >= lo - 1e-12 && out.at2(r, col) <= hi + 1e-12);
            }
        }
    }
}

#[test]
fn attention_shape_mismatch() {
    let a = Tensor::zeros(&[2, 3]).unwrap();
    let b = Tensor::zeros(&[2, 4]).unwrap();
    assert!(matches!(scaled_dot_product_attention(&a, &b, &b), Err(Error::Dimension { .. })));
    let v = Tensor::zeros(&[3, 4]).unwrap();
    assert!(scaled_dot_product_attention(&a, &a, &v).is_err());
}

#[test]
fn fused_attention_matches_per_head_composition() {
    let mut rng = init::rng(21);
    let (s, d, heads) = (5, 8, 2);
    let hd = d / heads;
    let qkv = random(&mut rng, &[2 * s, 3 * d]);
    let fused = qkv.multi_head_attention(s, heads).unwrap();
    for b in 0..2 {
        let rows = qkv.narrow(0, b * s, s).unwrap();
        for h in 0..heads {
            let q = rows.narrow(1, h * hd, hd).unwrap();
            let k = rows.narrow(1, d + h * hd, hd).unwrap();
            let v = rows.narrow(1, 2 * d + h * hd, hd).unwrap();
            let expected = scaled_dot_product_attention(&q, &k, &v).unwrap();
            let got = fused.narrow(0, b * s, s).unwrap().narrow(1, h * hd, hd).unwrap();
            let diff = expected.data().iter().zip(got.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-12, "{diff}");
        }
    }
}

#[test]
fn config_validation() {
    let mut cfg = tiny(2);
    assert!(cfg.validate().is_ok());
    cfg.num_heads = 3;
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    cfg.num_heads = 2;
    cfg.num_layers = 0;
    assert!(cfg.validate().is_err());
}

#[test]
fn layer_preserves_shape() {
    let mut rng = init::rng(3);
    let enc = Encoder::new(tiny(2), &mut rng, true).unwrap();
    for s in 1..=12 {
        let x = random(&mut rng, &[s, 8]);
        assert_eq!(enc.encoder_layer_forward(0, &x).unwrap().shape(), &[s, 8]);
    }
}

#[test]
fn zero_weights_leave_the_residual_stream_unchanged() {
    let mut rng = init::rng(4);
    let mut enc = Encoder::new(tiny(1), &mut rng, true).unwrap();
    for (_, w) in enc.layers[0].named_mut("") {
        *w = Tensor::zeros(w.shape()).unwrap();
    }
    let x = random(&mut rng, &[5, 8]);
    let y = enc.encoder_layer_forward(0, &x).unwrap();
    assert!(y.bit_eq(&x));
}

#[test]
fn layer_gradient_wrt_prompt_rows_matches_finite_differences() {
    let mut rng = init::rng(5);
    let enc = Encoder::new(tiny(1), &mut rng, true).unwrap();
    let tokens = random(&mut rng, &[3, 8]);
    let prompts = init::normal(&mut rng, &[2, 8], 0.5, true);
    let probe = random(&mut rng, &[5, 8]);
    let f = |p: &[Tensor]| {
        let x = Tensor::concat(&[tokens.clone(), p[0].clone()], 0)?;
        enc.encoder_layer_forward(0, &x)?.mul(&probe).map(|t| t.sum_all())
    };
    let err = finite_difference_check(f, &[prompts], 1e-5).unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn stacked_sequences_match_individual_runs() {
    let mut rng = init::rng(6);
    let enc = Encoder::new(tiny(1), &mut rng, true).unwrap();
    let a = random(&mut rng, &[4, 8]);
    let b = random(&mut rng, &[4, 8]);
    let stacked = enc.layer_forward(0, &Tensor::concat(&[a.clone(), b.clone()], 0).unwrap(), 4).unwrap();
    let ya = enc.encoder_layer_forward(0, &a).unwrap();
    let yb = enc.encoder_layer_forward(0, &b).unwrap();
    let expected = Tensor::concat(&[ya, yb], 0).unwrap();
    for (x, y) in stacked.data().iter().zip(expected.data()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn run_matches_manual_layer_recursion_with_discarded_prompt_rows() {
    let mut rng = init::rng(7);
    let enc = Encoder::new(tiny(3), &mut rng, true).unwrap();
    let x0 = random(&mut rng, &[4, 8]);
    let p0 = random(&mut rng, &[2, 8]);
    let p1 = random(&mut rng, &[2, 8]);
    let out = enc.run(x0.clone(), 4, &[0], &Fixed(vec![p0.clone(), p1.clone()]), 0).unwrap();

    let mut e = x0;
    for (layer, p) in [(0, Some(&p0)), (1, Some(&p1)), (2, None)] {
        let input = match p {
            Some(p) => Tensor::concat(&[e.clone(), p.clone()], 0).unwrap(),
            None => e.clone(),
        };
        e = enc.encoder_layer_forward(layer, &input).unwrap().narrow(0, 0, 4).unwrap();
    }
    let manual = e
        .narrow(0, 0, 1)
        .unwrap()
        .layer_norm(&enc.post_ln_gamma, &enc.post_ln_beta, LN_EPS)
        .unwrap()
        .matmul(&enc.projection)
        .unwrap();
    assert!(out.bit_eq(&manual));
}

#[test]
fn schedule_deeper_than_encoder_is_rejected() {
    let mut rng = init::rng(8);
    let enc = Encoder::new(tiny(2), &mut rng, true).unwrap();
    let x = random(&mut rng, &[3, 8]);
    let p = random(&mut rng, &[1, 8]);
    let res = enc.run(x, 3, &[0], &Fixed(vec![p.clone(), p.clone(), p]), 0);
    assert!(matches!(res, Err(Error::Config(_))));
}

#[test]
fn prompt_overflow_is_a_capacity_error() {
    let mut rng = init::rng(9);
    let enc = Encoder::new(tiny(2), &mut rng, true).unwrap();
    let x = random(&mut rng, &[10, 8]);
    let p = random(&mut rng, &[3, 8]);
    assert!(matches!(enc.run(x, 10, &[0], &Fixed(vec![p]), 0), Err(Error::Capacity(_))));
}

#[test]
fn text_with_empty_prompt_slots_equals_prompt_free_pass() {
    let tok = Tokenizer::default();
    let tower = TextTower::new(tiny(3), tok.vocab_size(), 11, true).unwrap();
    let ids = tok.encode("a happy face");
    let plain = tower.encode_text_with_prompts(&ids, &NoPrompts).unwrap();
    let empty = tower.encode_text_with_prompts(&ids, &Empty(2)).unwrap();
    assert_eq!(plain.shape(), &[4]);
    assert!(plain.bit_eq(&empty));
}

#[test]
fn text_overflow_is_a_capacity_error() {
    let tok = Tokenizer::default();
    let tower = TextTower::new(tiny(1), tok.vocab_size(), 11, true).unwrap();
    let ids = tok.encode("a happy face with raised cheeks and smiling mouth and bright eyes");
    assert!(ids.len() > 12);
    assert!(matches!(tower.encode_text_with_prompts(&ids, &NoPrompts), Err(Error::Capacity(_))));
}

#[test]
fn patchify_sizes() {
    let tower = VisionTower::new(tiny(1), 1, 8, 12, true).unwrap();
    let frame = Tensor::full(&[1, 16, 16], 0.5).unwrap();
    assert_eq!(tower.patchify(&frame).unwrap().shape(), &[5, 8]);
    let odd = VisionTower::new(tiny(1), 1, 5, 12, true).unwrap();
    assert!(matches!(odd.patchify(&frame), Err(Error::Config(_))));
}

#[test]
fn zero_frame_embeds_to_class_token_plus_positions() {
    let tower = VisionTower::new(tiny(1), 1, 8, 13, true).unwrap();
    let frame = Tensor::zeros(&[1, 16, 16]).unwrap();
    let emb = tower.patchify(&frame).unwrap();
    let pos = tower.position_embedding.narrow(0, 0, 5).unwrap();
    for r in 0..5 {
        for c in 0..8 {
            let class = if r == 0 { tower.class_embedding.data()[c] } else { 0.0 };
            assert_eq!(emb.at2(r, c), class + pos.at2(r, c));
        }
    }
}

#[test]
fn patch_order_is_row_major_over_the_grid() {
    let mut tower = VisionTower::new(tiny(1), 1, 2, 14, true).unwrap();
    // embedding that sums each patch into column 0
    let mut w = vec![0.0; 4 * 8];
    for r in 0..4 {
        w[r * 8] = 1.0;
    }
    tower.patch_embedding = Tensor::new(&[4, 8], w).unwrap();
    tower.position_embedding = Tensor::zeros(&[12, 8]).unwrap();
    let mut px = vec![0.0; 16];
    px[2] = 1.0; // row 0, col 2 → patch (0, 1)
    px[8] = 3.0; // row 2, col 0 → patch (1, 0)
    let emb = tower.patchify(&Tensor::new(&[1, 4, 4], px).unwrap()).unwrap();
    let col0: Vec<f64> = (1..5).map(|r| emb.at2(r, 0)).collect();
    assert_eq!(col0, vec![0.0, 1.0, 3.0, 0.0]);
}

#[test]
fn single_frame_video_equals_single_image_encoding() {
    let tower = VisionTower::new(tiny(2), 1, 8, 15, true).unwrap();
    let mut rng = init::rng(16);
    let frame = random(&mut rng, &[1, 16, 16]);
    let clip = frame.reshape(&[1, 1, 16, 16]).unwrap();
    let video = tower.encode_video_with_prompts(&clip, &NoPrompts).unwrap();
    let image = tower.encode_frames(&[frame], &[0], &NoPrompts).unwrap();
    assert_eq!(video.shape(), &[1, 4]);
    assert!(video.bit_eq(&image));
}

#[test]
fn frame_encoding_is_permutation_equivariant() {
    let tower = VisionTower::new(tiny(2), 1, 8, 17, true).unwrap();
    let mut rng = init::rng(18);
    let frames: Vec<Tensor> = (0..3).map(|_| random(&mut rng, &[1, 16, 16])).collect();
    let p = random(&mut rng, &[2, 8]);
    let prompts = Fixed(vec![p]);
    let out = tower.encode_frames(&frames, &[0, 1, 2], &prompts).unwrap();
    let perm = [2, 0, 1];
    let permuted: Vec<Tensor> = perm.iter().map(|&i| frames[i].clone()).collect();
    let out_p = tower.encode_frames(&permuted, &[0, 1, 2], &prompts).unwrap();
    for (row, &src) in perm.iter().enumerate() {
        for c in 0..4 {
            assert!((out_p.at2(row, c) - out.at2(src, c)).abs() < 1e-12);
        }
    }
}

#[test]
fn frozen_weights_receive_no_gradient() {
    let tower = VisionTower::new(tiny(2), 1, 8, 19, true).unwrap();
    let mut rng = init::rng(20);
    let frame = random(&mut rng, &[1, 16, 16]);
    let p = init::normal(&mut rng, &[2, 8], 0.1, true);
    let out = tower.encode_frames(&[frame], &[0], &Fixed(vec![p.clone()])).unwrap();
    out.sum_all().backward().unwrap();
    assert!(p.grad().is_some());
    for (name, w) in tower.named() {
        assert!(!w.requires_grad(), "{name}");
        assert!(w.grad().is_none(), "{name}");
    }
}

#[test]
fn outputs_stay_finite_with_every_layer_prompted() {
    let tower = VisionTower::new(tiny(3), 1, 8, 21, true).unwrap();
    let mut rng = init::rng(22);
    for _ in 0..1000 {
        let frame = random(&mut rng, &[1, 16, 16]);
        let schedule = Fixed((0..3).map(|_| random(&mut rng, &[2, 8])).collect());
        let out = tower.encode_frames(&[frame], &[0], &schedule).unwrap();
        assert!(out.all_finite());
    }
}
