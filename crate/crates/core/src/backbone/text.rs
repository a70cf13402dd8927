use rand::Rng;

use super::transformer::TransformerLayer;
use crate::error::Result;
use crate::ndgrad::layers::{LayerNorm, Linear};
use crate::ndgrad::{AttnMask, DiffArray, Graph, ParamId, ParamStore, Var};

/// Causal text transformer in the style of CLIP's text tower.
#[derive(Clone, Debug)]
pub struct TextEncoder {
    pub token_emb: ParamId,
    pub pos: ParamId,
    pub layers: Vec<TransformerLayer>,
    pub ln_final: LayerNorm,
    pub proj: Linear,
    pub max_len: usize,
    pub width: usize,
}

impl TextEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        vocab: usize,
        max_len: usize,
        width: usize,
        layers: usize,
        heads: usize,
        sentence_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let token_emb = store.register(format!("{name}.token_emb"), DiffArray::randn(&[vocab, width], 1.0, rng))?;
        let pos = store.register(format!("{name}.pos"), DiffArray::randn(&[max_len, width], 0.5, rng))?;
        let layers = (0..layers)
            .map(|i| TransformerLayer::new(store, &format!("{name}.layers.{i}"), width, heads, rng))
            .collect::<Result<_>>()?;
        Ok(TextEncoder {
            token_emb,
            pos,
            layers,
            ln_final: LayerNorm::new(store, &format!("{name}.ln_final"), width)?,
            proj: Linear::new(store, &format!("{name}.proj"), width, sentence_dim, false, rng)?,
            max_len,
            width,
        })
    }

    pub fn embed(&self, g: &mut Graph, store: &ParamStore, ids: &[usize]) -> Result<Var> {
        let table = g.param(store, self.token_emb);
        let x = g.gather_rows(table, ids)?;
        let pos = g.param(store, self.pos);
        g.add(x, pos)
    }

    pub fn run_layers(&self, g: &mut Graph, store: &ParamStore, x: Var, range: std::ops::Range<usize>) -> Result<Var> {
        let mut x = x;
        for layer in &self.layers[range] {
            x = layer.forward(g, store, x, &AttnMask::causal())?;
        }
        Ok(x)
    }

    /// Projection of the final-layer activation at the end token: `[C']`.
    pub fn sentence(&self, g: &mut Graph, store: &ParamStore, x: Var, eos: usize) -> Result<Var> {
        let row = g.gather_rows(x, &[eos])?;
        let row = self.ln_final.forward(g, store, row)?;
        let s = self.proj.forward(g, store, row)?;
        let d = g.shape(s)[1];
        g.reshape(s, &[d])
    }
}
