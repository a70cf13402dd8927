use rand::Rng;

use crate::error::Result;
use crate::ndgrad::layers::{Conv2d, LayerNorm};
use crate::ndgrad::{Graph, Padding, ParamStore, Var};
use crate::petzoo::Adapter;

/// One stride-2 stage: downsampling conv, channel norm, GELU, then a
/// same-size conv, norm and GELU. Stage 1 is preceded by a stride-2 stem so
/// that stage `i` sits at `H / 2^(i+1)`.
#[derive(Clone, Debug)]
pub struct CnnStage {
    pub stem: Option<Conv2d>,
    pub down: Conv2d,
    pub norm1: LayerNorm,
    pub conv: Conv2d,
    pub norm2: LayerNorm,
    /// Adapters after the downsampling block and after the same-size block.
    pub adapter_down: Option<Adapter>,
    pub adapter_conv: Option<Adapter>,
    pub width: usize,
}

impl CnnStage {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, c_in: usize, width: usize, stem: bool, rng: &mut R) -> Result<Self> {
        let (stem, c_in) = if stem {
            (Some(Conv2d::new(store, &format!("{name}.stem"), c_in, width, 3, 2, Padding::uniform(1), rng)?), width)
        } else {
            (None, c_in)
        };
        Ok(CnnStage {
            stem,
            down: Conv2d::new(store, &format!("{name}.down"), c_in, width, 3, 2, Padding::uniform(1), rng)?,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), width)?,
            conv: Conv2d::new(store, &format!("{name}.conv"), width, width, 3, 1, Padding::uniform(1), rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), width)?,
            adapter_down: None,
            adapter_conv: None,
            width,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let mut x = x;
        if let Some(stem) = &self.stem {
            x = stem.forward(g, store, x)?;
            x = g.gelu(x)?;
        }
        let x = self.down.forward(g, store, x)?;
        let x = self.norm1.forward_chw(g, store, x)?;
        let x = g.gelu(x)?;
        let x = match &self.adapter_down {
            Some(ad) => ad.forward_chw(g, store, x)?,
            None => x,
        };
        let x = self.conv.forward(g, store, x)?;
        let x = self.norm2.forward_chw(g, store, x)?;
        let x = g.gelu(x)?;
        match &self.adapter_conv {
            Some(ad) => ad.forward_chw(g, store, x),
            None => Ok(x),
        }
    }
}
