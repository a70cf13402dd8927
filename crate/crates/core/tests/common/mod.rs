//! Helpers shared by the integration tests: plain-loop reference math and
//! small model fixtures.
#![allow(dead_code)]

use bridgeseg::bridger::{self, bridged_forward};
use bridgeseg::config::{ImageVariant, ZoomVariant};
use bridgeseg::harness::dataset::{self, Dataset};
use bridgeseg::harness::vocab::Vocab;
use bridgeseg::ndgrad::{gelu, DiffArray, Graph, ParamStore};
use bridgeseg::petzoo::{adapter_numel, lora_numel};
use bridgeseg::{Etris, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub v: Vec<f64>,
}

impl Mat {
    pub fn new(rows: usize, cols: usize, v: Vec<f64>) -> Self {
        assert_eq!(v.len(), rows * cols);
        Mat { rows, cols, v }
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.v[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.v[r * self.cols..(r + 1) * self.cols]
    }

    pub fn add(&self, o: &Mat) -> Mat {
        Mat::new(self.rows, self.cols, self.v.iter().zip(&o.v).map(|(a, b)| a + b).collect())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat::new(self.rows, self.cols, self.v.iter().map(|&x| f(x)).collect())
    }

    pub fn max_abs_diff(&self, o: &[f64]) -> f64 {
        self.v.iter().zip(o).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

pub fn values(store: &ParamStore, name: &str) -> Vec<f64> {
    store.by_name(name).unwrap_or_else(|| panic!("missing parameter {name}")).array.values().to_vec()
}

/// `x Wᵀ + b` with `W` stored `[out, in]` under `{prefix}.weight`.
pub fn linear(store: &ParamStore, prefix: &str, x: &Mat) -> Mat {
    let w = values(store, &format!("{prefix}.weight"));
    let out = w.len() / x.cols;
    let b = store.by_name(&format!("{prefix}.bias")).map(|p| p.array.values().to_vec());
    let mut y = vec![0.0; x.rows * out];
    for r in 0..x.rows {
        for o in 0..out {
            let mut s = b.as_ref().map_or(0.0, |b| b[o]);
            for i in 0..x.cols {
                s += x.at(r, i) * w[o * x.cols + i];
            }
            y[r * out + o] = s;
        }
    }
    Mat::new(x.rows, out, y)
}

pub fn layer_norm(store: &ParamStore, prefix: &str, x: &Mat) -> Mat {
    let g = values(store, &format!("{prefix}.gamma"));
    let b = values(store, &format!("{prefix}.beta"));
    let mut y = Vec::with_capacity(x.v.len());
    for r in 0..x.rows {
        let row = x.row(r);
        let n = row.len() as f64;
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        for (c, v) in row.iter().enumerate() {
            y.push((v - mean) / (var + 1e-5).sqrt() * g[c] + b[c]);
        }
    }
    Mat::new(x.rows, x.cols, y)
}

/// Multi-head attention with projections `{prefix}.{q,k,v,o}`; keys with a
/// `false` entry in `valid` are ignored.
pub fn attention(store: &ParamStore, prefix: &str, heads: usize, q: &Mat, kv: &Mat, valid: Option<&[bool]>) -> Mat {
    let qp = linear(store, &format!("{prefix}.q"), q);
    let kp = linear(store, &format!("{prefix}.k"), kv);
    let vp = linear(store, &format!("{prefix}.v"), kv);
    let d = qp.cols;
    let dh = d / heads;
    let mut out = vec![0.0; q.rows * d];
    for h in 0..heads {
        for i in 0..q.rows {
            let mut scores: Vec<Option<f64>> = (0..kv.rows)
                .map(|j| {
                    if valid.map_or(true, |m| m[j]) {
                        Some((0..dh).map(|c| qp.at(i, h * dh + c) * kp.at(j, h * dh + c)).sum::<f64>() / (dh as f64).sqrt())
                    } else {
                        None
                    }
                })
                .collect();
            let m = scores.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for s in scores.iter_mut().flatten() {
                *s = (*s - m).exp();
                z += *s;
            }
            for (j, s) in scores.iter().enumerate() {
                if let Some(s) = s {
                    for c in 0..dh {
                        out[i * d + h * dh + c] += s / z * vp.at(j, h * dh + c);
                    }
                }
            }
        }
    }
    linear(store, &format!("{prefix}.o"), &Mat::new(q.rows, d, out))
}

pub fn mlp(store: &ParamStore, prefix: &str, x: &Mat) -> Mat {
    let h = linear(store, &format!("{prefix}.fc1"), x).map(gelu);
    linear(store, &format!("{prefix}.fc2"), &h)
}

/// Adds Gaussian noise to every trainable parameter.
pub fn perturb(store: &mut ParamStore, std: f64, seed: u64) {
    let mut r = rng(seed);
    let n = Normal::new(0.0, std).unwrap();
    for id in store.trainable_ids() {
        let mut v = store.get(id).array.values().to_vec();
        v.iter_mut().for_each(|x| *x += n.sample(&mut r));
        store.set_values(id, &v).unwrap();
    }
}

/// Adds Gaussian noise to every parameter whose name starts with `prefix`.
pub fn perturb_prefix(store: &mut ParamStore, prefix: &str, std: f64, seed: u64) {
    let mut r = rng(seed);
    let n = Normal::new(0.0, std).unwrap();
    let ids: Vec<_> = store.iter().filter(|(_, p)| p.name.starts_with(prefix)).map(|(id, _)| id).collect();
    assert!(!ids.is_empty(), "no parameters under {prefix}");
    for id in ids {
        let mut v = store.get(id).array.values().to_vec();
        v.iter_mut().for_each(|x| *x += n.sample(&mut r));
        store.set_values(id, &v).unwrap();
    }
}

pub fn toy() -> ModelConfig {
    ModelConfig::gradcheck_toy()
}

pub fn toy_vit() -> ModelConfig {
    let mut c = toy();
    c.backbone.image_variant = ImageVariant::Vit;
    c
}

pub fn random_image(size: usize, seed: u64) -> DiffArray {
    DiffArray::uniform(&[3, size, size], 1.0, &mut rng(seed))
}

pub fn small_dataset(n: usize, seed: u64, size: usize) -> Dataset {
    let recs = dataset::generate(n, seed, size, 17).unwrap();
    Dataset::from_records(&recs, seed, size, 17)
}

pub fn ids(cfg: &ModelConfig, text: &str) -> Vec<usize> {
    Vocab::standard().tokenize(text, cfg.backbone.max_len).unwrap()
}

/// Stage features, per-block text features and the sentence vector from the
/// plain towers, then the same from the bridged forward pass.
pub fn plain_and_bridged(model: &Etris, store: &ParamStore, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let size = model.image_size();
    let img = random_image(size, seed);
    let tok = ids(&model.config, "the small red circle on the left");
    let mut g = Graph::no_grad();
    let x = g.constant(&img);
    let fi = model.backbone.encode_image(&mut g, store, x).unwrap();
    let ft = model.backbone.encode_text(&mut g, store, &tok).unwrap();
    let mut plain: Vec<Vec<f64>> = fi.features.iter().map(|&v| g.value(v).to_vec()).collect();
    plain.extend(ft.per_block.iter().map(|&v| g.value(v).to_vec()));
    plain.push(g.value(ft.sentence).to_vec());
    let b = bridged_forward(&mut g, store, &model.backbone, &model.bridgers, x, &tok).unwrap();
    let mut bridged: Vec<Vec<f64>> = b.image.features.iter().map(|&v| g.value(v).to_vec()).collect();
    bridged.extend(b.text.per_block.iter().map(|&v| g.value(v).to_vec()));
    bridged.push(g.value(b.text.sentence).to_vec());
    (plain, bridged)
}

pub fn zoom_in_count(v: ZoomVariant, c: usize, d: usize, steps: usize) -> usize {
    match v {
        ZoomVariant::ConvDeconv => c * d + d + steps * (4 * d * d + d),
        ZoomVariant::Linear => c * d + d,
        ZoomVariant::ConvInterpolate => 9 * c * d + d,
        ZoomVariant::Mlp => c * d + d + d * d + d,
    }
}

pub fn zoom_out_count(v: ZoomVariant, d: usize, c: usize, steps: usize) -> usize {
    match v {
        ZoomVariant::ConvDeconv => steps * (4 * d * d + d) + d * c + c,
        ZoomVariant::Linear => d * c + c,
        ZoomVariant::ConvInterpolate => 9 * d * c + c,
        ZoomVariant::Mlp => d * d + d + d * c + c,
    }
}

pub fn interactor_count(d: usize, ffn: usize) -> usize {
    let ln = 2 * d;
    let mha = 4 * d * d + 3 * d;
    let mlp = d * ffn + ffn + ffn * d + d;
    2 * (3 * ln + 2 * mha + mlp)
}

pub fn log2_ratio(a: usize, b: usize) -> usize {
    (a.max(b) / a.min(b)).trailing_zeros() as usize
}

/// Trainable Bridger parameters of `model`, counted by hand from its config.
pub fn expected_bridger(model: &Etris) -> usize {
    let cfg = &model.config;
    let bc = &cfg.backbone;
    let variant = cfg.bridger.zoom_variant;
    let d = cfg.bridger.hidden_dim;
    let h_ref = bridger::reference_hw(&model.backbone);
    let mut expected = 0;
    for stage in cfg.bridger.stages(bc.num_taps).unwrap() {
        let [c_in, h_in, _] = bc.stage_shape(stage);
        let [c_out, h_out, _] = bc.stage_shape((stage + 1).min(bc.num_taps));
        expected += zoom_in_count(variant, c_in, d, log2_ratio(h_in, h_ref));
        expected += bc.text_width * d + d;
        expected += interactor_count(d, cfg.bridger.ffn);
        expected += zoom_out_count(variant, d, c_out, log2_ratio(h_ref, h_out));
        expected += d * bc.text_width + bc.text_width;
    }
    expected
}

pub fn expected_adapter(cfg: &ModelConfig) -> usize {
    let r = cfg.pet.reduction_factor;
    let b = &cfg.backbone;
    let mut n = 2 * b.text_layers * adapter_numel(b.text_width, r);
    match b.image_variant {
        ImageVariant::Cnn => n += b.widths.iter().map(|&w| 2 * adapter_numel(w, r)).sum::<usize>(),
        ImageVariant::Vit => n += 2 * b.vit_layers * adapter_numel(b.vit_width, r),
    }
    n
}

pub fn expected_lora(cfg: &ModelConfig) -> usize {
    let r = cfg.pet.lora_rank;
    let b = &cfg.backbone;
    let mut n = 2 * b.text_layers * lora_numel(b.text_width, b.text_width, r);
    if b.image_variant == ImageVariant::Vit {
        n += 2 * b.vit_layers * lora_numel(b.vit_width, b.vit_width, r);
    }
    n
}


/// Zero-padded same-size sliding-window convolution of `z: [d, h, w]` with
/// a `k×k×d` kernel followed by one bias entry.
pub fn conv_oracle(z: &[f64], d: usize, h: usize, w: usize, kern: &[f64], k: usize) -> Vec<f64> {
    let p = (k / 2) as isize;
    let bias = kern[k * k * d];
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut s = bias;
            for c in 0..d {
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = y as isize + ky as isize - p;
                        let ix = x as isize + kx as isize - p;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            continue;
                        }
                        s += kern[(c * k + ky) * k + kx] * z[(c * h + iy as usize) * w + ix as usize];
                    }
                }
            }
            out[y * w + x] = s;
        }
    }
    out
}

/// Packs up to 32 mask pixels into the bits of a word.
pub fn bits(mask: &[bool]) -> u32 {
    mask.iter().enumerate().fold(0, |acc, (i, &b)| acc | ((b as u32) << i))
}
