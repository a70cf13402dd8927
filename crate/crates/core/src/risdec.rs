//! Alignment decoder: fuses the multi-level visual features with the
//! sentence vector, runs a small cross-modal transformer over the fused
//! grid, and predicts mask logits with a convolution whose kernel is
//! generated from the sentence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{BackboneConfig, DecoderConfig};
use crate::error::{Error, Result};
use crate::ndgrad::layers::{map_to_tokens, tokens_to_map, Conv2d, LayerNorm, Linear, Mlp};
use crate::ndgrad::{AttnMask, DiffArray, Graph, MhaParams, Padding, ParamId, ParamStore, Var};

/// Two-channel normalized coordinates `[2, h, w]`: channel 0 is x, channel
/// 1 is y, both spanning `[-1, 1]` from the first pixel to the last.
pub fn coord_map(h: usize, w: usize) -> Vec<f64> {
    let lin = |i: usize, n: usize| if n == 1 { 0.0 } else { -1.0 + 2.0 * i as f64 / (n - 1) as f64 };
    let mut out = vec![0.0; 2 * h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = lin(x, w);
            out[h * w + y * w + x] = lin(y, h);
        }
    }
    out
}

/// Fixed 2-D sine positional encoding `[h·w, d]`. The first half of the
/// channels encodes the row, the second half the column; within a half,
/// channel `2k` is `sin(p·ω_k)` and `2k+1` is `cos(p·ω_k)` with
/// `ω_k = 10000^(-2k / (d/2))`.
pub fn sine_pe(h: usize, w: usize, d: usize) -> Vec<f64> {
    let half = d / 2;
    let mut out = vec![0.0; h * w * d];
    for y in 0..h {
        for x in 0..w {
            let row = &mut out[(y * w + x) * d..(y * w + x + 1) * d];
            for (offset, pos) in [(0, y as f64), (half, x as f64)] {
                for k in 0..half / 2 {
                    let omega = 10000f64.powf(-(2.0 * k as f64) / half as f64);
                    row[offset + 2 * k] = (pos * omega).sin();
                    row[offset + 2 * k + 1] = (pos * omega).cos();
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct HierarchicalAlign {
    pub stage_proj: Vec<Conv2d>,
    pub stage_attn: Vec<MhaParams>,
    pub fuse: Conv2d,
    pub coord: Conv2d,
    pub grid: usize,
}

impl HierarchicalAlign {
    /// `[C_dec, g, g]` fused map with coordinates folded in.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, stages: &[Var], sentence: Var) -> Result<Var> {
        if stages.len() != self.stage_proj.len() {
            return Err(Error::config(format!(
                "decoder expects {} stage features, got {}",
                self.stage_proj.len(),
                stages.len()
            )));
        }
        let gsz = self.grid;
        let mut maps = Vec::with_capacity(stages.len());
        for ((&f, proj), attn) in stages.iter().zip(&self.stage_proj).zip(&self.stage_attn) {
            let m = proj.forward(g, store, f)?;
            let m = g.resize_bilinear(m, gsz, gsz)?;
            let t = map_to_tokens(g, m)?;
            let a = g.multi_head_attention(store, attn, t, sentence, sentence, &AttnMask::none())?;
            let t = g.add(t, a)?;
            maps.push(tokens_to_map(g, t, gsz, gsz)?);
        }
        let cat = g.concat(&maps)?;
        let fused = self.fuse.forward(g, store, cat)?;
        let coords = g.constant_from(&[2, gsz, gsz], coord_map(gsz, gsz))?;
        let with_coords = g.concat(&[fused, coords])?;
        self.coord.forward(g, store, with_coords)
    }
}

#[derive(Clone, Debug)]
pub struct GlobalLayer {
    pub self_attn: MhaParams,
    pub ln1: LayerNorm,
    pub cross_attn: MhaParams,
    pub ln2: LayerNorm,
    pub ffn: Mlp,
    pub ln3: LayerNorm,
}

#[derive(Clone, Debug)]
pub struct GlobalAlign {
    pub layers: Vec<GlobalLayer>,
    /// Learned offset added to the sentence token, which has no 2-D position.
    pub sentence_pos: ParamId,
    pub grid: usize,
    pub dim: usize,
}

impl GlobalAlign {
    /// `[g·g, C_dec]` tokens in, same shape out.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, tokens: Var, sentence: Var) -> Result<Var> {
        let pe = g.constant_from(&[self.grid * self.grid, self.dim], sine_pe(self.grid, self.grid, self.dim))?;
        let sp = g.param(store, self.sentence_pos);
        let s = g.add(sentence, sp)?;
        let mut x = tokens;
        for l in &self.layers {
            let q = g.add(x, pe)?;
            let a = g.multi_head_attention(store, &l.self_attn, q, q, x, &AttnMask::none())?;
            let y = g.add(x, a)?;
            x = l.ln1.forward(g, store, y)?;
            let q = g.add(x, pe)?;
            let c = g.multi_head_attention(store, &l.cross_attn, q, s, s, &AttnMask::none())?;
            let y = g.add(x, c)?;
            x = l.ln2.forward(g, store, y)?;
            let f = l.ffn.forward(g, store, x)?;
            let y = g.add(x, f)?;
            x = l.ln3.forward(g, store, y)?;
        }
        Ok(x)
    }
}

/// Sentence-generated kernel: `K·K·D` weights then one scalar bias.
#[derive(Clone, Copy, Debug)]
pub struct DynamicKernel {
    pub weights: Var,
    pub bias: Var,
}

impl DynamicKernel {
    pub fn split(g: &mut Graph, z_t: Var, d: usize, k: usize) -> Result<Self> {
        let width = k * k * d + 1;
        if g.shape(z_t) != [width] {
            return Err(Error::config(format!(
                "kernel vector {:?} does not have width K·K·D+1 = {width}",
                g.shape(z_t)
            )));
        }
        let w = g.slice(z_t, 0, width - 1)?;
        let weights = g.reshape(w, &[1, d, k, k])?;
        let bias = g.slice(z_t, width - 1, width)?;
        Ok(DynamicKernel { weights, bias })
    }
}

/// Single-channel convolution of `z_c: [D, h, w]` with the kernel carried
/// by `z_t`, same-size padding. Returns `[h, w]` logits.
pub fn dynamic_conv(g: &mut Graph, z_c: Var, z_t: Var, k: usize) -> Result<Var> {
    let s = g.shape(z_c).to_vec();
    let kern = DynamicKernel::split(g, z_t, s[0], k)?;
    let y = g.conv2d(z_c, kern.weights, Some(kern.bias), 1, k / 2)?;
    g.reshape(y, &[s[1], s[2]])
}

#[derive(Clone, Debug)]
pub struct Projector {
    pub up1: Conv2d,
    pub up2: Conv2d,
    pub out: Conv2d,
    pub txt: Linear,
    pub kernel_k: usize,
    pub grid: usize,
}

impl Projector {
    /// `Z_c`: 4× upsampled visual map with `D` channels.
    pub fn visual(&self, g: &mut Graph, store: &ParamStore, tokens: Var) -> Result<Var> {
        let m = tokens_to_map(g, tokens, self.grid, self.grid)?;
        let m = g.resize_bilinear(m, 2 * self.grid, 2 * self.grid)?;
        let m = self.up1.forward(g, store, m)?;
        let m = g.gelu(m)?;
        let m = g.resize_bilinear(m, 4 * self.grid, 4 * self.grid)?;
        let m = self.up2.forward(g, store, m)?;
        let m = g.gelu(m)?;
        self.out.forward(g, store, m)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, tokens: Var, sentence: Var) -> Result<Var> {
        let z_c = self.visual(g, store, tokens)?;
        let z_t = self.txt.forward(g, store, sentence)?;
        dynamic_conv(g, z_c, z_t, self.kernel_k)
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub sentence_proj: Linear,
    pub ha: HierarchicalAlign,
    pub ga: GlobalAlign,
    pub projector: Projector,
}

impl Decoder {
    pub fn new(store: &mut ParamStore, bb: &BackboneConfig, cfg: &DecoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(3);
        let rng = &mut rng;
        let c = cfg.dim;
        let grid = bb.image_size / 16;
        let p0 = Padding::uniform(0);
        let p1 = Padding::uniform(1);
        let taps: Vec<usize> = (2..=bb.num_taps).collect();
        let stage_proj = taps
            .iter()
            .enumerate()
            .map(|(j, &i)| Conv2d::new(store, &format!("decoder.ha.proj.{j}"), bb.stage_shape(i)[0], c, 1, 1, p0, rng))
            .collect::<Result<Vec<_>>>()?;
        let stage_attn = (0..taps.len())
            .map(|j| MhaParams::new(store, &format!("decoder.ha.attn.{j}"), c, c, cfg.heads, false, rng))
            .collect::<Result<Vec<_>>>()?;
        let ha = HierarchicalAlign {
            stage_proj,
            stage_attn,
            fuse: Conv2d::new(store, "decoder.ha.fuse", taps.len() * c, c, 1, 1, p0, rng)?,
            coord: Conv2d::new(store, "decoder.ha.coord", c + 2, c, 3, 1, p1, rng)?,
            grid,
        };
        let layers = (0..cfg.layers)
            .map(|l| {
                let n = format!("decoder.ga.layers.{l}");
                Ok(GlobalLayer {
                    self_attn: MhaParams::new(store, &format!("{n}.self_attn"), c, c, cfg.heads, false, rng)?,
                    ln1: LayerNorm::new(store, &format!("{n}.ln1"), c)?,
                    cross_attn: MhaParams::new(store, &format!("{n}.cross_attn"), c, c, cfg.heads, false, rng)?,
                    ln2: LayerNorm::new(store, &format!("{n}.ln2"), c)?,
                    ffn: Mlp::new(store, &format!("{n}.ffn"), c, cfg.ffn, c, false, rng)?,
                    ln3: LayerNorm::new(store, &format!("{n}.ln3"), c)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ga = GlobalAlign {
            layers,
            sentence_pos: store.register("decoder.ga.sentence_pos", DiffArray::zeros(&[1, c]))?,
            grid,
            dim: c,
        };
        let k = cfg.kernel_k;
        let projector = Projector {
            up1: Conv2d::new(store, "decoder.projector.up1", c, c, 3, 1, p1, rng)?,
            up2: Conv2d::new(store, "decoder.projector.up2", c, c, 3, 1, p1, rng)?,
            out: Conv2d::new(store, "decoder.projector.out", c, c, 1, 1, p0, rng)?,
            txt: Linear::new(store, "decoder.projector.txt", bb.sentence_dim, k * k * c + 1, true, rng)?,
            kernel_k: k,
            grid,
        };
        Ok(Decoder {
            sentence_proj: Linear::new(store, "decoder.sentence_proj", bb.sentence_dim, c, true, rng)?,
            ha,
            ga,
            projector,
        })
    }

    /// Mask logits `[H/4, W/4]` from the enhanced stage features and `F_s`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, stages: &[Var], sentence: Var) -> Result<Var> {
        let d = g.shape(sentence)[0];
        let s_row = g.reshape(sentence, &[1, d])?;
        let s = self.sentence_proj.forward(g, store, s_row)?;
        let fused = self.ha.forward(g, store, stages, s)?;
        let tokens = map_to_tokens(g, fused)?;
        let f_c = self.ga.forward(g, store, tokens, s)?;
        self.projector.forward(g, store, f_c, sentence)
    }
}
