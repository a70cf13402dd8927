//! Pre-norm transformer layer shared by the text encoder and the ViT.
//! Projections carry optional low-rank deltas and each sublayer an
//! optional bottleneck adapter, so the PET baselines can hook in without
//! a second copy of the layer.

use rand::Rng;

use crate::error::Result;
use crate::ndgrad::layers::{LayerNorm, Linear, Mlp};
use crate::ndgrad::{AttnMask, Graph, ParamStore, Var};
use crate::petzoo::{Adapter, Lora};

/// A linear map that may carry a low-rank delta.
#[derive(Clone, Debug)]
pub struct Proj {
    pub linear: Linear,
    pub lora: Option<Lora>,
}

impl Proj {
    fn new<R: Rng>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, bias: bool, rng: &mut R) -> Result<Self> {
        Ok(Proj { linear: Linear::new(store, name, fan_in, fan_out, bias, rng)?, lora: None })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let y = self.linear.forward(g, store, x)?;
        match &self.lora {
            Some(l) => {
                let d = l.delta(g, store, x)?;
                g.add(y, d)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub q: Proj,
    pub k: Proj,
    pub v: Proj,
    pub o: Proj,
    pub heads: usize,
}

#[derive(Clone, Debug)]
pub struct TransformerLayer {
    pub name: String,
    pub width: usize,
    pub ln1: LayerNorm,
    pub attn: SelfAttention,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
    pub adapter_attn: Option<Adapter>,
    pub adapter_mlp: Option<Adapter>,
}

impl TransformerLayer {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, width: usize, heads: usize, rng: &mut R) -> Result<Self> {
        let attn = SelfAttention {
            q: Proj::new(store, &format!("{name}.attn.q"), width, width, true, rng)?,
            k: Proj::new(store, &format!("{name}.attn.k"), width, width, false, rng)?,
            v: Proj::new(store, &format!("{name}.attn.v"), width, width, true, rng)?,
            o: Proj::new(store, &format!("{name}.attn.o"), width, width, true, rng)?,
            heads,
        };
        Ok(TransformerLayer {
            name: name.to_string(),
            width,
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), width)?,
            attn,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), width)?,
            mlp: Mlp::new(store, &format!("{name}.mlp"), width, 4 * width, width, false, rng)?,
            adapter_attn: None,
            adapter_mlp: None,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, mask: &AttnMask) -> Result<Var> {
        let h = self.ln1.forward(g, store, x)?;
        let q = self.attn.q.forward(g, store, h)?;
        let k = self.attn.k.forward(g, store, h)?;
        let v = self.attn.v.forward(g, store, h)?;
        let a = g.scaled_dot_attention(q, k, v, self.attn.heads, mask)?;
        let mut a = self.attn.o.forward(g, store, a)?;
        if let Some(ad) = &self.adapter_attn {
            a = ad.forward(g, store, a)?;
        }
        let x = g.add(x, a)?;
        let h = self.ln2.forward(g, store, x)?;
        let mut m = self.mlp.forward(g, store, h)?;
        if let Some(ad) = &self.adapter_mlp {
            m = ad.forward(g, store, m)?;
        }
        g.add(x, m)
    }

    pub fn projections_mut(&mut self) -> [&mut Proj; 4] {
        let a = &mut self.attn;
        [&mut a.q, &mut a.k, &mut a.v, &mut a.o]
    }
}
