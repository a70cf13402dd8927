use rand::Rng;

use super::transformer::TransformerLayer;
use crate::error::Result;
use crate::ndgrad::layers::{map_to_tokens, tokens_to_map, Conv2d, LayerNorm};
use crate::ndgrad::{AttnMask, DiffArray, Graph, Padding, ParamId, ParamStore, Var};

#[derive(Clone, Debug)]
pub struct VitEncoder {
    pub patch: Conv2d,
    pub cls: ParamId,
    pub pos: ParamId,
    pub ln_pre: LayerNorm,
    pub layers: Vec<TransformerLayer>,
    pub grid: usize,
    pub width: usize,
}

impl VitEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        image_size: usize,
        patch: usize,
        width: usize,
        layers: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let grid = image_size / patch;
        let patch_conv = Conv2d::new(store, &format!("{name}.patch"), 3, width, patch, patch, Padding::uniform(0), rng)?;
        let cls = store.register(format!("{name}.cls"), DiffArray::randn(&[1, width], 0.5, rng))?;
        let pos = store.register(format!("{name}.pos"), DiffArray::randn(&[grid * grid + 1, width], 0.5, rng))?;
        let ln_pre = LayerNorm::new(store, &format!("{name}.ln_pre"), width)?;
        let layers = (0..layers)
            .map(|i| TransformerLayer::new(store, &format!("{name}.layers.{i}"), width, heads, rng))
            .collect::<Result<_>>()?;
        Ok(VitEncoder { patch: patch_conv, cls, pos, ln_pre, layers, grid, width })
    }

    /// Patch embedding plus class token and positions: `[1 + P, C]`.
    pub fn embed(&self, g: &mut Graph, store: &ParamStore, image: Var) -> Result<Var> {
        let p = self.patch.forward(g, store, image)?;
        let tokens = map_to_tokens(g, p)?;
        let cls = g.param(store, self.cls);
        let x = g.concat(&[cls, tokens])?;
        let pos = g.param(store, self.pos);
        let x = g.add(x, pos)?;
        self.ln_pre.forward(g, store, x)
    }

    pub fn run_layers(&self, g: &mut Graph, store: &ParamStore, x: Var, range: std::ops::Range<usize>) -> Result<Var> {
        let mut x = x;
        for layer in &self.layers[range] {
            x = layer.forward(g, store, x, &AttnMask::none())?;
        }
        Ok(x)
    }

    /// Drops the class token and folds the patch tokens into `[C, g, g]`.
    pub fn tokens_to_grid(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let n = g.shape(x)[0];
        let patches = g.slice(x, 1, n)?;
        tokens_to_map(g, patches, self.grid, self.grid)
    }

    /// Adds a `[C, g, g]` map to the patch tokens, leaving the class token.
    pub fn add_to_grid(&self, g: &mut Graph, x: Var, delta: Var) -> Result<Var> {
        let n = g.shape(x)[0];
        let cls = g.slice(x, 0, 1)?;
        let patches = g.slice(x, 1, n)?;
        let d = map_to_tokens(g, delta)?;
        let patches = g.add(patches, d)?;
        g.concat(&[cls, patches])
    }
}
