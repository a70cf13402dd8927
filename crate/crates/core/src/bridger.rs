//! Cross-modal adapter interleaved between frozen encoder stages. Each
//! Bridger zooms the stage features to a shared grid, lets the two
//! modalities attend to each other, and writes a residual back into the
//! next stage of both towers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::Backbone;
use crate::config::{BridgerConfig, ZeroInit, ZoomVariant};
use crate::error::{Error, Result};
use crate::ndgrad::layers::{map_to_tokens, tokens_to_map, Conv2d, ConvTranspose2d, LayerNorm, Linear, Mlp};
use crate::ndgrad::{AttnMask, DiffArray, Graph, MhaParams, Padding, ParamStore, Var};

/// One step of a zoom pipeline over `[C, h, w]` maps.
#[derive(Clone, Debug)]
pub enum ZoomOp {
    Conv(Conv2d),
    Deconv(ConvTranspose2d),
    Gelu,
    Resize(usize, usize),
}

#[derive(Clone, Debug)]
pub struct Zoom {
    pub ops: Vec<ZoomOp>,
}

impl Zoom {
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let mut x = x;
        for op in &self.ops {
            x = match op {
                ZoomOp::Conv(c) => c.forward(g, store, x)?,
                ZoomOp::Deconv(c) => c.forward(g, store, x)?,
                ZoomOp::Gelu => g.gelu(x)?,
                ZoomOp::Resize(h, w) => g.resize_bilinear(x, *h, *w)?,
            };
        }
        Ok(x)
    }

    /// Zoom-in from a `[c_in, h_in, h_in]` stage map to `[d, h_ref, h_ref]`.
    pub fn zoom_in<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        variant: ZoomVariant,
        (c_in, h_in): (usize, usize),
        (d, h_ref): (usize, usize),
        rng: &mut R,
    ) -> Result<Self> {
        let conv = |store: &mut ParamStore, tag: &str, ci, co, k, rng: &mut R| {
            Conv2d::new(store, &format!("{name}.{tag}"), ci, co, k, 1, Padding::uniform(k / 2), rng).map(ZoomOp::Conv)
        };
        let ops = match variant {
            ZoomVariant::ConvDeconv => {
                let mut ops = vec![conv(store, "proj", c_in, d, 1, rng)?];
                ops.extend(resample_chain(store, name, d, h_in, h_ref, rng)?);
                ops
            }
            ZoomVariant::Linear => vec![conv(store, "proj", c_in, d, 1, rng)?, ZoomOp::Resize(h_ref, h_ref)],
            ZoomVariant::ConvInterpolate => vec![conv(store, "proj", c_in, d, 3, rng)?, ZoomOp::Resize(h_ref, h_ref)],
            ZoomVariant::Mlp => vec![
                conv(store, "fc1", c_in, d, 1, rng)?,
                ZoomOp::Gelu,
                conv(store, "fc2", d, d, 1, rng)?,
                ZoomOp::Resize(h_ref, h_ref),
            ],
        };
        Ok(Zoom { ops })
    }

    /// Zoom-out from `[d, h_ref, h_ref]` back to a `[c_out, h_out, h_out]`
    /// stage map. The last layer starts at zero when `zero_final` is set.
    #[allow(clippy::too_many_arguments)]
    pub fn zoom_out<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        variant: ZoomVariant,
        (d, h_ref): (usize, usize),
        (c_out, h_out): (usize, usize),
        zero_final: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let last = |store: &mut ParamStore, ci, co, k, rng: &mut R| {
            let n = format!("{name}.proj");
            let p = Padding::uniform(k / 2);
            if zero_final {
                Conv2d::zeros(store, &n, ci, co, k, 1, p)
            } else {
                Conv2d::new(store, &n, ci, co, k, 1, p, rng)
            }
            .map(ZoomOp::Conv)
        };
        let mut ops = match variant {
            ZoomVariant::ConvDeconv => resample_chain(store, name, d, h_ref, h_out, rng)?,
            _ => vec![ZoomOp::Resize(h_out, h_out)],
        };
        match variant {
            ZoomVariant::ConvDeconv | ZoomVariant::Linear => ops.push(last(store, d, c_out, 1, rng)?),
            ZoomVariant::ConvInterpolate => ops.push(last(store, d, c_out, 3, rng)?),
            ZoomVariant::Mlp => {
                let fc1 = Conv2d::new(store, &format!("{name}.fc1"), d, d, 1, 1, Padding::uniform(0), rng)?;
                ops.push(ZoomOp::Conv(fc1));
                ops.push(ZoomOp::Gelu);
                ops.push(last(store, d, c_out, 1, rng)?);
            }
        }
        Ok(Zoom { ops })
    }
}

/// Strided 2×2 convolutions to shrink or 2×2 transposed convolutions to
/// grow a `c`-channel map by a power-of-two factor.
fn resample_chain<R: Rng>(
    store: &mut ParamStore,
    name: &str,
    c: usize,
    h_from: usize,
    h_to: usize,
    rng: &mut R,
) -> Result<Vec<ZoomOp>> {
    let (big, small) = (h_from.max(h_to), h_from.min(h_to));
    if small == 0 || big % small != 0 || !(big / small).is_power_of_two() {
        return Err(Error::config(format!("zoom between {h_from} and {h_to} is not a power-of-two ratio")));
    }
    let steps = (big / small).trailing_zeros() as usize;
    (0..steps)
        .map(|s| {
            Ok(if h_from > h_to {
                ZoomOp::Conv(Conv2d::new(store, &format!("{name}.conv{s}"), c, c, 2, 2, Padding::uniform(0), rng)?)
            } else {
                ZoomOp::Deconv(ConvTranspose2d::new(store, &format!("{name}.deconv{s}"), c, c, 2, rng)?)
            })
        })
        .collect()
}

/// Hidden cross-modal state threaded from one Bridger to the next.
#[derive(Clone, Copy, Debug)]
pub struct BridgerCarry {
    /// `[h'·w', d]` visual tokens.
    pub visual: Var,
    /// `[L, d]` text tokens.
    pub textual: Var,
}

impl BridgerCarry {
    pub fn zeros(g: &mut Graph, grid: usize, len: usize, d: usize) -> Self {
        BridgerCarry { visual: g.constant(&DiffArray::zeros(&[grid * grid, d])), textual: g.constant(&DiffArray::zeros(&[len, d])) }
    }
}

#[derive(Clone, Debug)]
struct Stream {
    ln_self: Option<LayerNorm>,
    self_attn: MhaParams,
    ln_cross: Option<LayerNorm>,
    cross_attn: MhaParams,
    ln_ffn: Option<LayerNorm>,
    ffn: Mlp,
}

impl Stream {
    fn new<R: Rng>(store: &mut ParamStore, name: &str, cfg: &BridgerConfig, rng: &mut R) -> Result<Self> {
        let d = cfg.hidden_dim;
        let zero = cfg.zero_init == ZeroInit::All;
        let ln = |store: &mut ParamStore, tag: &str| -> Result<Option<LayerNorm>> {
            if cfg.pre_norm {
                LayerNorm::new(store, &format!("{name}.{tag}"), d).map(Some)
            } else {
                Ok(None)
            }
        };
        Ok(Stream {
            ln_self: ln(store, "ln_self")?,
            self_attn: MhaParams::new(store, &format!("{name}.self_attn"), d, d, cfg.heads, zero, rng)?,
            ln_cross: ln(store, "ln_cross")?,
            cross_attn: MhaParams::new(store, &format!("{name}.cross_attn"), d, d, cfg.heads, zero, rng)?,
            ln_ffn: ln(store, "ln_ffn")?,
            ffn: Mlp::new(store, &format!("{name}.ffn"), d, cfg.ffn, d, zero, rng)?,
        })
    }
}

fn norm(g: &mut Graph, store: &ParamStore, ln: &Option<LayerNorm>, x: Var) -> Result<Var> {
    match ln {
        Some(ln) => ln.forward(g, store, x),
        None => Ok(x),
    }
}

/// Per-modality self-attention, bidirectional cross-attention computed
/// from the pre-cross values of both streams, then a per-stream FFN.
#[derive(Clone, Debug)]
pub struct Interactor {
    visual: Stream,
    textual: Stream,
}

impl Interactor {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, cfg: &BridgerConfig, rng: &mut R) -> Result<Self> {
        Ok(Interactor {
            visual: Stream::new(store, &format!("{name}.visual"), cfg, rng)?,
            textual: Stream::new(store, &format!("{name}.textual"), cfg, rng)?,
        })
    }

    /// Inputs and outputs are token matrices: visual `[h'w', d]`, text
    /// `[L, d]`. `text_valid` masks padding after the end token.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        carry: &BridgerCarry,
        zoomed_v: Var,
        zoomed_t: Var,
        text_valid: &[bool],
    ) -> Result<BridgerCarry> {
        let (sv, st) = (&self.visual, &self.textual);
        let text_keys = AttnMask::keys(text_valid.to_vec());

        let v = g.add(carry.visual, zoomed_v)?;
        let t = g.add(carry.textual, zoomed_t)?;
        let hv = norm(g, store, &sv.ln_self, v)?;
        let av = g.multi_head_attention(store, &sv.self_attn, hv, hv, hv, &AttnMask::none())?;
        let v = g.add(v, av)?;
        let ht = norm(g, store, &st.ln_self, t)?;
        let at = g.multi_head_attention(store, &st.self_attn, ht, ht, ht, &text_keys)?;
        let t = g.add(t, at)?;

        let hv = norm(g, store, &sv.ln_cross, v)?;
        let ht = norm(g, store, &st.ln_cross, t)?;
        let cv = g.multi_head_attention(store, &sv.cross_attn, hv, ht, ht, &text_keys)?;
        let ct = g.multi_head_attention(store, &st.cross_attn, ht, hv, hv, &AttnMask::none())?;
        let v = g.add(v, cv)?;
        let t = g.add(t, ct)?;

        let hv = norm(g, store, &sv.ln_ffn, v)?;
        let fv = sv.ffn.forward(g, store, hv)?;
        let ht = norm(g, store, &st.ln_ffn, t)?;
        let ft = st.ffn.forward(g, store, ht)?;
        Ok(BridgerCarry { visual: g.add(v, fv)?, textual: g.add(t, ft)? })
    }
}

/// Residuals a Bridger writes into the backbone.
#[derive(Clone, Copy, Debug)]
pub struct Injection {
    pub visual: Var,
    pub textual: Var,
}

#[derive(Clone, Debug)]
pub struct Bridger {
    /// Tapped stage (1-based) this Bridger reads from.
    pub stage: usize,
    /// Stage whose features receive the residual.
    pub target: usize,
    pub grid: usize,
    pub zoom_in_v: Zoom,
    pub zoom_in_t: Linear,
    pub interactor: Interactor,
    pub zoom_out_v: Zoom,
    pub zoom_out_t: Linear,
}

impl Bridger {
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        carry: &BridgerCarry,
        f_v: Var,
        f_t: Var,
        text_valid: &[bool],
    ) -> Result<(BridgerCarry, Injection)> {
        let zv = self.zoom_in_v.forward(g, store, f_v)?;
        let zv = map_to_tokens(g, zv)?;
        let zt = self.zoom_in_t.forward(g, store, f_t)?;
        let carry = self.interactor.forward(g, store, carry, zv, zt, text_valid)?;
        let m = tokens_to_map(g, carry.visual, self.grid, self.grid)?;
        let visual = self.zoom_out_v.forward(g, store, m)?;
        let textual = self.zoom_out_t.forward(g, store, carry.textual)?;
        Ok((carry, Injection { visual, textual }))
    }
}

/// The shared interaction grid: the middle tapped stage's spatial size.
pub fn reference_hw(backbone: &Backbone) -> usize {
    let n = backbone.num_taps();
    backbone.config.stage_shape(2 + (n - 1) / 2)[1]
}

/// Builds the Bridgers selected by `cfg.scope`/`cfg.count`.
pub fn build(store: &mut ParamStore, backbone: &Backbone, cfg: &BridgerConfig, seed: u64) -> Result<Vec<Bridger>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let n = backbone.num_taps();
    let bc = &backbone.config;
    let h_ref = reference_hw(backbone);
    let d = cfg.hidden_dim;
    let zero_out = true;
    cfg.stages(n)?
        .into_iter()
        .enumerate()
        .map(|(k, stage)| {
            let name = format!("bridger.{k}");
            let [c_in, h_in, _] = bc.stage_shape(stage);
            let target = (stage + 1).min(n);
            let [c_out, h_out, _] = bc.stage_shape(target);
            let zoom_in_v =
                Zoom::zoom_in(store, &format!("{name}.zoom_in.visual"), cfg.zoom_variant, (c_in, h_in), (d, h_ref), &mut rng)?;
            let zoom_in_t = Linear::new(store, &format!("{name}.zoom_in.text"), bc.text_width, d, true, &mut rng)?;
            let interactor = Interactor::new(store, &format!("{name}.interactor"), cfg, &mut rng)?;
            let zoom_out_v = Zoom::zoom_out(
                store,
                &format!("{name}.zoom_out.visual"),
                cfg.zoom_variant,
                (d, h_ref),
                (c_out, h_out),
                zero_out,
                &mut rng,
            )?;
            let zoom_out_t = Linear::zeros(store, &format!("{name}.zoom_out.text"), d, bc.text_width, true)?;
            Ok(Bridger { stage, target, grid: h_ref, zoom_in_v, zoom_in_t, interactor, zoom_out_v, zoom_out_t })
        })
        .collect()
}

/// Enhanced multi-level features handed to the decoder.
#[derive(Clone, Debug)]
pub struct BridgedFeatures {
    pub image: crate::backbone::ImageStageFeatures,
    pub text: crate::backbone::TextFeatures,
}

/// Runs both towers stage by stage, invoking each Bridger after its stage
/// and adding its residual to the following stage's output. The Bridger
/// on the last tap writes into the last tap itself.
pub fn bridged_forward(
    g: &mut Graph,
    store: &ParamStore,
    backbone: &Backbone,
    bridgers: &[Bridger],
    image: Var,
    ids: &[usize],
) -> Result<BridgedFeatures> {
    let n = backbone.num_taps();
    if let Some(b) = bridgers.iter().find(|b| b.stage < 2 || b.stage > n) {
        return Err(Error::config(format!("bridger placed at stage {} of a {n}-stage backbone", b.stage)));
    }
    let mut img = backbone.image_start(g, store, image)?;
    let mut txt = backbone.text_start(g, store, ids)?;
    let d = bridgers.first().map(|b| g_width(store, b)).unwrap_or(0);
    let mut carry: Option<BridgerCarry> = None;
    let mut pending: Option<Injection> = None;
    let mut features = Vec::new();
    let mut per_block = Vec::new();
    for i in 1..=n {
        backbone.image_stage(g, store, &mut img, i)?;
        backbone.text_block(g, store, &mut txt, i)?;
        if let Some(inj) = pending.take() {
            backbone.image_inject(g, &mut img, inj.visual)?;
            backbone.text_inject(g, &mut txt, inj.textual)?;
        }
        for b in bridgers.iter().filter(|b| b.stage == i) {
            let f_v = backbone.image_tap(g, &img)?;
            let c = match carry {
                Some(c) => c,
                None => BridgerCarry::zeros(g, b.grid, backbone.config.max_len, d),
            };
            let (c, inj) = b.forward(g, store, &c, f_v, txt.x, &txt.valid)?;
            carry = Some(c);
            if b.target == i {
                backbone.image_inject(g, &mut img, inj.visual)?;
                backbone.text_inject(g, &mut txt, inj.textual)?;
            } else {
                pending = Some(inj);
            }
        }
        if i >= 2 {
            features.push(backbone.image_tap(g, &img)?);
            per_block.push(txt.x);
        }
    }
    let sentence = backbone.text_sentence(g, store, &txt)?;
    Ok(BridgedFeatures {
        image: crate::backbone::ImageStageFeatures { features },
        text: crate::backbone::TextFeatures { per_block, sentence, eos: txt.eos, valid: txt.valid },
    })
}

fn g_width(store: &ParamStore, b: &Bridger) -> usize {
    store.get(b.zoom_in_t.weight).array.shape()[0]
}
