//! The assembled model: frozen dual encoder, optional Bridgers or PET
//! baseline, and the alignment decoder.

use crate::backbone::{self, Backbone};
use crate::bridger::{self, Bridger};
use crate::config::{ModelConfig, PetMethod};
use crate::error::{Error, Result};
use crate::ndgrad::{DiffArray, Graph, ParamStore, Var};
use crate::objective::{contrastive_loss, downsample_mask};
use crate::petzoo;
use crate::risdec::Decoder;

#[derive(Clone, Debug)]
pub struct Etris {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub backbone: Backbone,
    pub bridgers: Vec<Bridger>,
    pub decoder: Decoder,
}

impl Etris {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;
        let mut store = ParamStore::new();
        let mut bb = Backbone::new(&mut store, &config.backbone, seed)?;
        backbone::freeze(&mut store)?;
        match config.pet.method {
            PetMethod::None => {}
            PetMethod::Adapter => petzoo::attach_adapter(&mut bb, &mut store, config.pet.reduction_factor, seed)?,
            PetMethod::Lora => petzoo::attach_lora(&mut bb, &mut store, config.pet.lora_rank, config.pet.lora_alpha, seed)?,
        }
        let bridgers = if config.bridger.count > 0 { bridger::build(&mut store, &bb, &config.bridger, seed)? } else { Vec::new() };
        let decoder = Decoder::new(&mut store, &config.backbone, &config.decoder, seed)?;
        Ok(Etris { config: config.clone(), store, backbone: bb, bridgers, decoder })
    }

    pub fn image_size(&self) -> usize {
        self.config.backbone.image_size
    }

    /// Side of the square logit map, `H/4`.
    pub fn logit_size(&self) -> usize {
        self.image_size() / 4
    }

    /// Mask logits `[H/4, W/4]` computed against an explicit parameter store.
    pub fn forward_with(&self, g: &mut Graph, store: &ParamStore, image: Var, ids: &[usize]) -> Result<Var> {
        let f = bridger::bridged_forward(g, store, &self.backbone, &self.bridgers, image, ids)?;
        self.decoder.forward(g, store, &f.image.features, f.text.sentence)
    }

    /// Loss against a full-resolution `H×W` mask, plus the logits.
    pub fn loss_with(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        image: &DiffArray,
        ids: &[usize],
        mask: &[bool],
    ) -> Result<(Var, Var)> {
        let h = self.image_size();
        if mask.len() != h * h {
            return Err(Error::input(format!("mask has {} pixels, expected {}", mask.len(), h * h)));
        }
        let x = g.constant(image);
        let logits = self.forward_with(g, store, x, ids)?;
        let gt = downsample_mask(mask, h, h, 4);
        let loss = contrastive_loss(g, logits, &gt)?;
        Ok((loss, logits))
    }

    /// Inference-only logits.
    pub fn predict(&self, image: &DiffArray, ids: &[usize]) -> Result<Vec<f64>> {
        let mut g = Graph::no_grad();
        let x = g.constant(image);
        let y = self.forward_with(&mut g, &self.store, x, ids)?;
        Ok(g.value(y).to_vec())
    }
}
