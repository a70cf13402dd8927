//! Frozen toy dual encoder: a staged CNN or blocked ViT for images and a
//! causal transformer for text. Both towers can be driven one stage at a
//! time so that Bridgers can read and write features between stages.

pub mod cnn;
pub mod text;
pub mod transformer;
pub mod vit;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{BackboneConfig, ImageVariant};
use crate::error::{Error, Result};
use crate::harness::vocab::{eos_position, PAD};
use crate::ndgrad::{Graph, ParamStore, Var};
use crate::petzoo::{count_params, ParamPartition};
use cnn::CnnStage;
use text::TextEncoder;
use vit::VitEncoder;

pub const PREFIX: &str = "backbone.";

#[derive(Clone, Debug)]
pub enum ImageEncoder {
    Cnn(Vec<CnnStage>),
    Vit(VitEncoder),
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub image: ImageEncoder,
    pub text: TextEncoder,
}

/// `F_v^i` for `i ∈ 2..=N`, each `[C_i, h_i, w_i]`.
#[derive(Clone, Debug)]
pub struct ImageStageFeatures {
    pub features: Vec<Var>,
}

/// `F_t^i ∈ [L, C]` for `i ∈ 2..=N` and the sentence vector `F_s ∈ [C']`.
#[derive(Clone, Debug)]
pub struct TextFeatures {
    pub per_block: Vec<Var>,
    pub sentence: Var,
    pub eos: usize,
    /// Positions up to and including the end token.
    pub valid: Vec<bool>,
}

/// Running state of the image tower between stages.
#[derive(Clone, Copy, Debug)]
pub struct ImageState(Var);

/// Running state of the text tower between blocks.
#[derive(Clone, Debug)]
pub struct TextState {
    pub x: Var,
    pub eos: usize,
    pub valid: Vec<bool>,
}

impl Backbone {
    /// Builds the towers from the config's seed stream and registers every
    /// parameter under `backbone.`.
    pub fn new(store: &mut ParamStore, config: &BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let image = match config.image_variant {
            ImageVariant::Cnn => {
                let mut stages = Vec::new();
                let mut c_in = 3;
                for (i, &w) in config.widths.iter().enumerate() {
                    stages.push(CnnStage::new(store, &format!("backbone.image.stages.{i}"), c_in, w, i == 0, &mut rng)?);
                    c_in = w;
                }
                ImageEncoder::Cnn(stages)
            }
            ImageVariant::Vit => ImageEncoder::Vit(VitEncoder::new(
                store,
                "backbone.image",
                config.image_size,
                config.patch_size,
                config.vit_width,
                config.vit_layers,
                config.vit_heads,
                &mut rng,
            )?),
        };
        let text = TextEncoder::new(
            store,
            "backbone.text",
            config.vocab_size,
            config.max_len,
            config.text_width,
            config.text_layers,
            config.text_heads,
            config.sentence_dim,
            &mut rng,
        )?;
        Ok(Backbone { config: config.clone(), image, text })
    }

    pub fn num_taps(&self) -> usize {
        self.config.num_taps
    }

    pub fn image_start(&self, g: &mut Graph, store: &ParamStore, image: Var) -> Result<ImageState> {
        let h = self.config.image_size;
        if g.shape(image) != [3, h, h] {
            return Err(Error::config(format!("image must be [3, {h}, {h}], got {:?}", g.shape(image))));
        }
        Ok(ImageState(match &self.image {
            ImageEncoder::Cnn(_) => image,
            ImageEncoder::Vit(v) => v.embed(g, store, image)?,
        }))
    }

    /// Advances the image tower through stage/block `i` (1-based).
    pub fn image_stage(&self, g: &mut Graph, store: &ParamStore, st: &mut ImageState, i: usize) -> Result<()> {
        st.0 = match &self.image {
            ImageEncoder::Cnn(stages) => stages[i - 1].forward(g, store, st.0)?,
            ImageEncoder::Vit(v) => {
                let k = self.config.vit_layers / self.config.num_taps;
                v.run_layers(g, store, st.0, (i - 1) * k..i * k)?
            }
        };
        Ok(())
    }

    /// The current stage output as a `[C, h, w]` map.
    pub fn image_tap(&self, g: &mut Graph, st: &ImageState) -> Result<Var> {
        match &self.image {
            ImageEncoder::Cnn(_) => Ok(st.0),
            ImageEncoder::Vit(v) => v.tokens_to_grid(g, st.0),
        }
    }

    pub fn image_inject(&self, g: &mut Graph, st: &mut ImageState, delta: Var) -> Result<()> {
        st.0 = match &self.image {
            ImageEncoder::Cnn(_) => g.add(st.0, delta)?,
            ImageEncoder::Vit(v) => v.add_to_grid(g, st.0, delta)?,
        };
        Ok(())
    }

    /// Validates and pads `ids` to `L`, then embeds them.
    pub fn text_start(&self, g: &mut Graph, store: &ParamStore, ids: &[usize]) -> Result<TextState> {
        let l = self.config.max_len;
        if ids.len() > l {
            return Err(Error::input(format!("token sequence of length {} exceeds the limit of {l}", ids.len())));
        }
        if let Some(&bad) = ids.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::input(format!("token id {bad} outside the vocabulary of {}", self.config.vocab_size)));
        }
        let mut padded = ids.to_vec();
        padded.resize(l, PAD);
        let eos = eos_position(&padded)?;
        let x = self.text.embed(g, store, &padded)?;
        Ok(TextState { x, eos, valid: (0..l).map(|p| p <= eos).collect() })
    }

    pub fn text_block(&self, g: &mut Graph, store: &ParamStore, st: &mut TextState, i: usize) -> Result<()> {
        let k = self.config.text_layers / self.config.num_taps;
        st.x = self.text.run_layers(g, store, st.x, (i - 1) * k..i * k)?;
        Ok(())
    }

    pub fn text_inject(&self, g: &mut Graph, st: &mut TextState, delta: Var) -> Result<()> {
        st.x = g.add(st.x, delta)?;
        Ok(())
    }

    pub fn text_sentence(&self, g: &mut Graph, store: &ParamStore, st: &TextState) -> Result<Var> {
        self.text.sentence(g, store, st.x, st.eos)
    }

    /// Plain frozen forward of the image tower: the outputs of stages `2..=N`.
    pub fn encode_image(&self, g: &mut Graph, store: &ParamStore, image: Var) -> Result<ImageStageFeatures> {
        let mut st = self.image_start(g, store, image)?;
        let mut features = Vec::new();
        for i in 1..=self.num_taps() {
            self.image_stage(g, store, &mut st, i)?;
            if i >= 2 {
                features.push(self.image_tap(g, &st)?);
            }
        }
        Ok(ImageStageFeatures { features })
    }

    /// Plain frozen forward of the text tower.
    pub fn encode_text(&self, g: &mut Graph, store: &ParamStore, ids: &[usize]) -> Result<TextFeatures> {
        let mut st = self.text_start(g, store, ids)?;
        let mut per_block = Vec::new();
        for i in 1..=self.num_taps() {
            self.text_block(g, store, &mut st, i)?;
            if i >= 2 {
                per_block.push(st.x);
            }
        }
        let sentence = self.text_sentence(g, store, &st)?;
        Ok(TextFeatures { per_block, sentence, eos: st.eos, valid: st.valid })
    }
}

/// Marks every backbone parameter frozen and returns the resulting ledger.
pub fn freeze(store: &mut ParamStore) -> Result<ParamPartition> {
    store.set_trainable_prefix(PREFIX, false);
    count_params(store)
}

/// SHA-256 over the names and bytes of every backbone parameter that is
/// not a PET addition.
pub fn checksum(store: &ParamStore) -> String {
    store.checksum(|p| p.name.starts_with(PREFIX) && crate::petzoo::pet_kind(&p.name).is_none())
}
