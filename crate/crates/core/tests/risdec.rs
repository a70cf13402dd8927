mod common;

use bridgeseg::ndgrad::{DiffArray, Graph};
use bridgeseg::risdec::{coord_map, dynamic_conv, sine_pe};
use bridgeseg::{Error, Etris, ModelConfig};
use common::*;
use rand::Rng;

#[test]
fn coordinate_map_spans_unit_square() {
    let (h, w) = (5, 7);
    let c = coord_map(h, w);
    let at = |ch: usize, y: usize, x: usize| c[ch * h * w + y * w + x];
    assert_eq!((at(0, 0, 0), at(1, 0, 0)), (-1.0, -1.0));
    assert_eq!((at(0, 0, w - 1), at(1, 0, w - 1)), (1.0, -1.0));
    assert_eq!((at(0, h - 1, 0), at(1, h - 1, 0)), (-1.0, 1.0));
    assert_eq!((at(0, h - 1, w - 1), at(1, h - 1, w - 1)), (1.0, 1.0));
    assert_eq!(at(1, 2, 3), 0.0);
    assert!((at(0, 0, 1) - (-2.0 / 3.0)).abs() < 1e-15);
    assert_eq!(coord_map(1, 1), vec![0.0, 0.0]);
}

#[test]
fn sine_encoding_matches_hand_values() {
    let d = 8;
    let pe = sine_pe(3, 4, d);
    let row = |y: usize, x: usize| &pe[(y * 4 + x) * d..(y * 4 + x + 1) * d];
    assert_eq!(row(0, 0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    // d = 8: four channels per axis, frequencies 1 and 10000^(-1/2).
    let r = row(2, 3);
    let w1: f64 = 0.01;
    let expect = [2f64.sin(), 2f64.cos(), (2.0 * w1).sin(), (2.0 * w1).cos(), 3f64.sin(), 3f64.cos(), (3.0 * w1).sin(), (3.0 * w1).cos()];
    for (a, b) in r.iter().zip(expect) {
        assert!((a - b).abs() < 1e-14, "{a} vs {b}");
    }
}

#[test]
fn dynamic_convolution_matches_sliding_window() {
    let mut r = rng(11);
    for case in 0..100 {
        let d = r.gen_range(1..=4);
        let h = r.gen_range(2..=7);
        let w = r.gen_range(2..=7);
        let k = [1, 3, 5][r.gen_range(0..3)];
        let z: Vec<f64> = (0..d * h * w).map(|_| r.gen_range(-1.0..1.0)).collect();
        let kern: Vec<f64> = (0..k * k * d + 1).map(|_| r.gen_range(-1.0..1.0)).collect();
        let mut g = Graph::no_grad();
        let zc = g.constant(&DiffArray::new(&[d, h, w], z.clone()).unwrap());
        let zt = g.constant(&DiffArray::new(&[k * k * d + 1], kern.clone()).unwrap());
        let y = dynamic_conv(&mut g, zc, zt, k).unwrap();
        assert_eq!(g.shape(y), [h, w]);
        let want = conv_oracle(&z, d, h, w, &kern, k);
        let err = g.value(y).iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "case {case}: d={d} h={h} w={w} k={k} err={err}");
    }
}

#[test]
fn delta_kernel_selects_a_channel() {
    let (d, h, w, k) = (3, 4, 5, 3);
    let mut r = rng(12);
    let z: Vec<f64> = (0..d * h * w).map(|_| r.gen_range(-1.0..1.0)).collect();
    let mut kern = vec![0.0; k * k * d + 1];
    kern[(k + 1) * k + 1] = 1.0;
    kern[k * k * d] = 0.25;
    let mut g = Graph::no_grad();
    let zc = g.constant(&DiffArray::new(&[d, h, w], z.clone()).unwrap());
    let zt = g.constant(&DiffArray::new(&[k * k * d + 1], kern).unwrap());
    let y = dynamic_conv(&mut g, zc, zt, k).unwrap();
    for (i, v) in g.value(y).iter().enumerate() {
        assert!((v - (z[h * w + i] + 0.25)).abs() < 1e-15);
    }
}

#[test]
fn kernel_of_wrong_width_is_rejected() {
    let mut g = Graph::no_grad();
    let zc = g.constant(&DiffArray::zeros(&[2, 3, 3]));
    let zt = g.constant(&DiffArray::zeros(&[2 * 9]));
    assert!(matches!(dynamic_conv(&mut g, zc, zt, 3), Err(Error::Config(_))));
}

#[test]
fn logits_are_quarter_resolution() {
    for cfg in [toy(), toy_vit(), ModelConfig::default()] {
        let model = Etris::new(&cfg).unwrap();
        let h = model.image_size();
        let ids = bridgeseg::harness::vocab::Vocab::standard().tokenize("the red circle", cfg.backbone.max_len).unwrap();
        let logits = model.predict(&random_image(h, 1), &ids).unwrap();
        assert_eq!(logits.len(), (h / 4) * (h / 4));
        assert_eq!(model.logit_size(), h / 4);
        assert!(logits.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn hierarchical_alignment_produces_a_sixteenth_grid() {
    let cfg = ModelConfig::default();
    assert_eq!(cfg.backbone.image_size, 64);
    let model = Etris::new(&cfg).unwrap();
    let mut g = Graph::no_grad();
    let x = g.constant(&random_image(64, 2));
    let ids = bridgeseg::harness::vocab::Vocab::standard().tokenize("the circle", cfg.backbone.max_len).unwrap();
    let f = model.backbone.encode_image(&mut g, &model.store, x).unwrap();
    let t = model.backbone.encode_text(&mut g, &model.store, &ids).unwrap();
    let d = g.shape(t.sentence)[0];
    let s = g.reshape(t.sentence, &[1, d]).unwrap();
    let s = model.decoder.sentence_proj.forward(&mut g, &model.store, s).unwrap();
    let fused = model.decoder.ha.forward(&mut g, &model.store, &f.features, s).unwrap();
    assert_eq!(g.shape(fused), [cfg.decoder.dim, 4, 4]);
    let short = &f.features[..1];
    assert!(matches!(model.decoder.ha.forward(&mut g, &model.store, short, s), Err(Error::Config(_))));
}

#[test]
fn decoder_parameters_carry_the_decoder_prefix() {
    let model = Etris::new(&toy()).unwrap();
    let names: Vec<&str> = model.store.iter().map(|(_, p)| p.name.as_str()).filter(|n| n.starts_with("decoder.")).collect();
    for part in ["decoder.ha.", "decoder.ga.", "decoder.projector.", "decoder.sentence_proj."] {
        assert!(names.iter().any(|n| n.starts_with(part)), "{part}");
    }
    let txt = values(&model.store, "decoder.projector.txt.weight");
    let k = toy().decoder.kernel_k;
    assert_eq!(txt.len(), toy().backbone.sentence_dim * (k * k * toy().decoder.dim + 1));
}
