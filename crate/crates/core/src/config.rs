//! Flat JSON configuration. Every key is a dotted lowercase path such as
//! `bridger.hidden_dim`; missing keys take desk-scale defaults and unknown
//! keys are rejected so typos surface immediately.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde_json::{Map, Value};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageVariant {
    Cnn,
    Vit,
}

/// Which tapped stages receive a Bridger.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    /// Every tap from the second stage to the last.
    Full,
    /// The later half of the taps.
    Late,
    /// Only the last tap.
    Single,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ZoomVariant {
    Linear,
    ConvInterpolate,
    Mlp,
    ConvDeconv,
}

/// Which Bridger output layers start at zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ZeroInit {
    /// Only the zoom-out projections that write back into the backbone.
    ZoomOut,
    /// Zoom-out projections plus interactor attention outputs and FFN
    /// second layers.
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PetMethod {
    None,
    Adapter,
    Lora,
}

macro_rules! string_enum {
    ($ty:ident, $what:literal, { $($text:literal => $variant:ident),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($ty::$variant),)+
                    _ => Err(Error::config(format!(
                        concat!("unknown ", $what, " {:?}; expected one of {}"),
                        s,
                        [$($text),+].join(", ")
                    ))),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $text,)+ })
            }
        }
    };
}

string_enum!(ImageVariant, "image variant", { "cnn" => Cnn, "vit" => Vit });
string_enum!(Scope, "bridger scope", { "full" => Full, "late" => Late, "single" => Single });
string_enum!(ZoomVariant, "zoom variant", {
    "linear" => Linear,
    "conv_interpolate" => ConvInterpolate,
    "mlp" => Mlp,
    "conv_deconv" => ConvDeconv,
});
string_enum!(ZeroInit, "zero-init policy", { "zoom_out" => ZoomOut, "all" => All });
string_enum!(PetMethod, "PET method", { "none" => None, "adapter" => Adapter, "lora" => Lora });

impl ZoomVariant {
    pub const ALL: [ZoomVariant; 4] =
        [ZoomVariant::Linear, ZoomVariant::ConvInterpolate, ZoomVariant::Mlp, ZoomVariant::ConvDeconv];
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    pub image_variant: ImageVariant,
    /// Number of tapped stages (CNN) or blocks (ViT and text), `N`.
    pub num_taps: usize,
    pub image_size: usize,
    /// CNN stage widths, one per stage.
    pub widths: Vec<usize>,
    pub patch_size: usize,
    pub vit_width: usize,
    pub vit_layers: usize,
    pub vit_heads: usize,
    pub text_width: usize,
    pub text_layers: usize,
    pub text_heads: usize,
    pub max_len: usize,
    pub sentence_dim: usize,
    pub vocab_size: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            image_variant: ImageVariant::Cnn,
            num_taps: 4,
            image_size: 64,
            widths: vec![32, 64, 128, 256],
            patch_size: 8,
            vit_width: 64,
            vit_layers: 8,
            vit_heads: 4,
            text_width: 64,
            text_layers: 4,
            text_heads: 4,
            max_len: 17,
            sentence_dim: 64,
            vocab_size: crate::harness::vocab::Vocab::standard().len(),
        }
    }
}

impl BackboneConfig {
    /// Shape `[C, h, w]` of tapped stage `i` (1-based, `1..=N`).
    pub fn stage_shape(&self, i: usize) -> [usize; 3] {
        match self.image_variant {
            ImageVariant::Cnn => {
                let s = self.image_size >> (i + 1);
                [self.widths[i - 1], s, s]
            }
            ImageVariant::Vit => {
                let s = self.image_size / self.patch_size;
                [self.vit_width, s, s]
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_taps;
        if n < 2 {
            return Err(Error::config("backbone.num_taps must be at least 2"));
        }
        if self.image_size == 0 || self.image_size % 16 != 0 {
            return Err(Error::config(format!("backbone.image_size {} is not divisible by 16", self.image_size)));
        }
        match self.image_variant {
            ImageVariant::Cnn => {
                if self.widths.len() != n {
                    return Err(Error::config(format!(
                        "backbone.widths has {} entries for {n} stages",
                        self.widths.len()
                    )));
                }
                if self.widths.iter().any(|&w| w == 0) {
                    return Err(Error::config("backbone.widths must be positive"));
                }
                if self.image_size >> (n + 1) == 0 || self.image_size % (1 << (n + 1)) != 0 {
                    return Err(Error::config(format!(
                        "image size {} cannot be halved {} times",
                        self.image_size,
                        n + 1
                    )));
                }
            }
            ImageVariant::Vit => {
                if self.patch_size == 0 || self.image_size % self.patch_size != 0 {
                    return Err(Error::config("backbone.patch_size must divide backbone.image_size"));
                }
                if self.vit_layers == 0 || self.vit_layers % n != 0 {
                    return Err(Error::config(format!(
                        "backbone.vit_layers {} cannot be split evenly into {n} blocks",
                        self.vit_layers
                    )));
                }
                if self.vit_width % self.vit_heads.max(1) != 0 || self.vit_heads == 0 {
                    return Err(Error::config("backbone.vit_width must be divisible by backbone.vit_heads"));
                }
            }
        }
        if self.text_layers == 0 || self.text_layers % n != 0 {
            return Err(Error::config(format!(
                "backbone.text_layers {} cannot be split evenly into {n} blocks",
                self.text_layers
            )));
        }
        if self.text_heads == 0 || self.text_width % self.text_heads != 0 {
            return Err(Error::config("backbone.text_width must be divisible by backbone.text_heads"));
        }
        if self.max_len < 2 {
            return Err(Error::config("backbone.max_len must leave room for the start and end tokens"));
        }
        if self.vocab_size < 3 || self.sentence_dim == 0 {
            return Err(Error::config("backbone.vocab_size and backbone.sentence_dim must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BridgerConfig {
    pub hidden_dim: usize,
    pub count: usize,
    pub scope: Scope,
    pub zoom_variant: ZoomVariant,
    pub heads: usize,
    pub ffn: usize,
    pub pre_norm: bool,
    pub zero_init: ZeroInit,
}

impl Default for BridgerConfig {
    fn default() -> Self {
        BridgerConfig {
            hidden_dim: 16,
            count: 3,
            scope: Scope::Full,
            zoom_variant: ZoomVariant::ConvDeconv,
            heads: 2,
            ffn: 64,
            pre_norm: true,
            zero_init: ZeroInit::ZoomOut,
        }
    }
}

pub const SUPPORTED_HIDDEN_DIMS: [usize; 5] = [8, 16, 32, 64, 128];

impl BridgerConfig {
    /// Tapped stage indices (1-based) that host a Bridger.
    pub fn stages(&self, num_taps: usize) -> Result<Vec<usize>> {
        if self.count == 0 {
            return Ok(Vec::new());
        }
        let n = num_taps;
        let first = match self.scope {
            Scope::Full => 2,
            Scope::Late => n / 2 + 1,
            Scope::Single => n,
        };
        let points: Vec<usize> = (first.max(2)..=n).collect();
        if self.count > points.len() {
            return Err(Error::config(format!(
                "bridger.count {} exceeds the {} interaction points of scope {}",
                self.count,
                points.len(),
                self.scope
            )));
        }
        Ok(points[points.len() - self.count..].to_vec())
    }

    pub fn validate(&self, num_taps: usize) -> Result<()> {
        if !SUPPORTED_HIDDEN_DIMS.contains(&self.hidden_dim) {
            return Err(Error::config(format!(
                "bridger.hidden_dim {} is not one of {:?}",
                self.hidden_dim, SUPPORTED_HIDDEN_DIMS
            )));
        }
        if self.heads == 0 || self.hidden_dim % self.heads != 0 {
            return Err(Error::config("bridger.hidden_dim must be divisible by bridger.heads"));
        }
        if self.ffn == 0 {
            return Err(Error::config("bridger.ffn must be positive"));
        }
        self.stages(num_taps).map(|_| ())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub kernel_k: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig { dim: 32, layers: 3, heads: 8, ffn: 512, kernel_k: 3 }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim % 4 != 0 {
            return Err(Error::config("decoder.dim must be a positive multiple of 4"));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::config("decoder.dim must be divisible by decoder.heads"));
        }
        if self.kernel_k % 2 == 0 {
            return Err(Error::config("decoder.kernel_k must be odd"));
        }
        if self.ffn == 0 {
            return Err(Error::config("decoder.ffn must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PetConfig {
    pub method: PetMethod,
    pub reduction_factor: usize,
    pub lora_rank: usize,
    pub lora_alpha: f64,
}

impl Default for PetConfig {
    fn default() -> Self {
        PetConfig { method: PetMethod::None, reduction_factor: 4, lora_rank: 2, lora_alpha: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ModelConfig {
    pub seed: u64,
    pub backbone: BackboneConfig,
    pub bridger: BridgerConfig,
    pub decoder: DecoderConfig,
    pub pet: PetConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.bridger.count > 0 {
            self.bridger.validate(self.backbone.num_taps)?;
        }
        self.decoder.validate()?;
        if self.bridger.count > 0 && self.pet.method != PetMethod::None {
            return Err(Error::config("combining a Bridger with pet.method adapter/lora is not supported"));
        }
        if self.pet.reduction_factor == 0 || self.pet.lora_rank == 0 {
            return Err(Error::config("pet.reduction_factor and pet.lora_rank must be positive"));
        }
        Ok(())
    }

    /// The smallest full model, for finite-difference checks that probe
    /// every trainable entry.
    pub fn gradcheck_toy() -> Self {
        ModelConfig {
            seed: 7,
            backbone: BackboneConfig {
                image_size: 32,
                widths: vec![4, 4, 8, 8],
                vit_width: 8,
                vit_layers: 4,
                vit_heads: 2,
                text_width: 8,
                text_layers: 4,
                text_heads: 2,
                sentence_dim: 8,
                ..BackboneConfig::default()
            },
            bridger: BridgerConfig { hidden_dim: 8, heads: 2, ffn: 8, ..BridgerConfig::default() },
            decoder: DecoderConfig { dim: 8, layers: 1, heads: 2, ffn: 8, kernel_k: 3 },
            pet: PetConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub bridger_lr: f64,
    pub epochs: usize,
    pub decay_epoch: usize,
    pub batch_size: usize,
    /// Fraction of the dataset held out for the per-epoch metric. Zero
    /// means the metric is computed on the training samples.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { lr: 1e-3, bridger_lr: 1e-3, epochs: 60, decay_epoch: 42, batch_size: 8, val_fraction: 0.0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size must be at least 1"));
        }
        if self.epochs > 0 && self.decay_epoch >= self.epochs {
            return Err(Error::config(format!(
                "train.decay_epoch {} must be below train.epochs {}",
                self.decay_epoch, self.epochs
            )));
        }
        if !(self.lr >= 0.0 && self.bridger_lr >= 0.0 && self.lr.is_finite() && self.bridger_lr.is_finite()) {
            return Err(Error::config("learning rates must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::config("train.val_fraction must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// A whole configuration file.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

struct Reader {
    map: Map<String, Value>,
    used: BTreeSet<String>,
}

impl Reader {
    fn take(&mut self, key: &str) -> Option<&Value> {
        self.used.insert(key.to_string());
        self.map.get(key)
    }

    fn usize(&mut self, key: &str, slot: &mut usize) -> Result<()> {
        if let Some(v) = self.take(key) {
            *slot = v
                .as_u64()
                .ok_or_else(|| Error::config(format!("{key} must be a non-negative integer, got {v}")))?
                as usize;
        }
        Ok(())
    }

    fn u64(&mut self, key: &str, slot: &mut u64) -> Result<()> {
        if let Some(v) = self.take(key) {
            *slot = v.as_u64().ok_or_else(|| Error::config(format!("{key} must be a non-negative integer, got {v}")))?;
        }
        Ok(())
    }

    fn f64(&mut self, key: &str, slot: &mut f64) -> Result<()> {
        if let Some(v) = self.take(key) {
            *slot = v.as_f64().ok_or_else(|| Error::config(format!("{key} must be a number, got {v}")))?;
        }
        Ok(())
    }

    fn bool(&mut self, key: &str, slot: &mut bool) -> Result<()> {
        if let Some(v) = self.take(key) {
            *slot = v.as_bool().ok_or_else(|| Error::config(format!("{key} must be true or false, got {v}")))?;
        }
        Ok(())
    }

    fn parse<T: FromStr<Err = Error>>(&mut self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.take(key) {
            let s = v.as_str().ok_or_else(|| Error::config(format!("{key} must be a string, got {v}")))?;
            *slot = s.parse()?;
        }
        Ok(())
    }

    fn usize_list(&mut self, key: &str, slot: &mut Vec<usize>) -> Result<()> {
        if let Some(v) = self.take(key) {
            let bad = || Error::config(format!("{key} must be a list of non-negative integers, got {v}"));
            *slot = v
                .as_array()
                .ok_or_else(bad)?
                .iter()
                .map(|x| x.as_u64().map(|x| x as usize).ok_or_else(bad))
                .collect::<Result<_>>()?;
        }
        Ok(())
    }
}

impl Config {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::config(format!("config is not JSON: {e}")))?;
        Self::from_value(&value)
    }

    pub fn from_value(value: &Value) -> Result<Self> {
        let map = value.as_object().ok_or_else(|| Error::config("config must be a flat JSON object"))?.clone();
        let mut r = Reader { map, used: BTreeSet::new() };
        let mut c = Config::default();
        let m = &mut c.model;
        r.u64("seed", &mut m.seed)?;
        let b = &mut m.backbone;
        r.parse("backbone.image_variant", &mut b.image_variant)?;
        r.usize("backbone.num_taps", &mut b.num_taps)?;
        r.usize("backbone.image_size", &mut b.image_size)?;
        r.usize_list("backbone.widths", &mut b.widths)?;
        r.usize("backbone.patch_size", &mut b.patch_size)?;
        r.usize("backbone.vit_width", &mut b.vit_width)?;
        r.usize("backbone.vit_layers", &mut b.vit_layers)?;
        r.usize("backbone.vit_heads", &mut b.vit_heads)?;
        r.usize("backbone.text_width", &mut b.text_width)?;
        r.usize("backbone.text_layers", &mut b.text_layers)?;
        r.usize("backbone.text_heads", &mut b.text_heads)?;
        r.usize("backbone.max_len", &mut b.max_len)?;
        r.usize("backbone.sentence_dim", &mut b.sentence_dim)?;
        r.usize("backbone.vocab_size", &mut b.vocab_size)?;
        let br = &mut m.bridger;
        r.usize("bridger.hidden_dim", &mut br.hidden_dim)?;
        r.usize("bridger.count", &mut br.count)?;
        r.parse("bridger.scope", &mut br.scope)?;
        r.parse("bridger.zoom_variant", &mut br.zoom_variant)?;
        r.usize("bridger.heads", &mut br.heads)?;
        r.usize("bridger.ffn", &mut br.ffn)?;
        r.bool("bridger.pre_norm", &mut br.pre_norm)?;
        r.parse("bridger.zero_init", &mut br.zero_init)?;
        let d = &mut m.decoder;
        r.usize("decoder.dim", &mut d.dim)?;
        r.usize("decoder.layers", &mut d.layers)?;
        r.usize("decoder.heads", &mut d.heads)?;
        r.usize("decoder.ffn", &mut d.ffn)?;
        r.usize("decoder.kernel_k", &mut d.kernel_k)?;
        let p = &mut m.pet;
        r.parse("pet.method", &mut p.method)?;
        r.usize("pet.reduction_factor", &mut p.reduction_factor)?;
        r.usize("pet.lora_rank", &mut p.lora_rank)?;
        r.f64("pet.lora_alpha", &mut p.lora_alpha)?;
        let t = &mut c.train;
        r.f64("train.lr", &mut t.lr)?;
        r.f64("train.bridger_lr", &mut t.bridger_lr)?;
        r.usize("train.epochs", &mut t.epochs)?;
        r.usize("train.decay_epoch", &mut t.decay_epoch)?;
        r.usize("train.batch_size", &mut t.batch_size)?;
        r.f64("train.val_fraction", &mut t.val_fraction)?;

        let unknown: Vec<&String> = r.map.keys().filter(|k| !r.used.contains(*k)).collect();
        if !unknown.is_empty() {
            return Err(Error::config(format!("unknown config keys: {unknown:?}")));
        }
        c.model.validate()?;
        c.train.validate()?;
        Ok(c)
    }

    /// Every key with its effective value, in the same flat layout the
    /// parser accepts.
    pub fn to_flat(&self) -> Value {
        let m = &self.model;
        let (b, br, d, p, t) = (&m.backbone, &m.bridger, &m.decoder, &m.pet, &self.train);
        serde_json::json!({
            "seed": m.seed,
            "backbone.image_variant": b.image_variant.to_string(),
            "backbone.num_taps": b.num_taps,
            "backbone.image_size": b.image_size,
            "backbone.widths": b.widths,
            "backbone.patch_size": b.patch_size,
            "backbone.vit_width": b.vit_width,
            "backbone.vit_layers": b.vit_layers,
            "backbone.vit_heads": b.vit_heads,
            "backbone.text_width": b.text_width,
            "backbone.text_layers": b.text_layers,
            "backbone.text_heads": b.text_heads,
            "backbone.max_len": b.max_len,
            "backbone.sentence_dim": b.sentence_dim,
            "backbone.vocab_size": b.vocab_size,
            "bridger.hidden_dim": br.hidden_dim,
            "bridger.count": br.count,
            "bridger.scope": br.scope.to_string(),
            "bridger.zoom_variant": br.zoom_variant.to_string(),
            "bridger.heads": br.heads,
            "bridger.ffn": br.ffn,
            "bridger.pre_norm": br.pre_norm,
            "bridger.zero_init": br.zero_init.to_string(),
            "decoder.dim": d.dim,
            "decoder.layers": d.layers,
            "decoder.heads": d.heads,
            "decoder.ffn": d.ffn,
            "decoder.kernel_k": d.kernel_k,
            "pet.method": p.method.to_string(),
            "pet.reduction_factor": p.reduction_factor,
            "pet.lora_rank": p.lora_rank,
            "pet.lora_alpha": p.lora_alpha,
            "train.lr": t.lr,
            "train.bridger_lr": t.bridger_lr,
            "train.epochs": t.epochs,
            "train.decay_epoch": t.decay_epoch,
            "train.batch_size": t.batch_size,
            "train.val_fraction": t.val_fraction,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::input(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let c = Config::from_json_str("{}").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.model.backbone.max_len, 17);
        assert_eq!(c.model.decoder.layers, 3);
        assert_eq!(c.model.decoder.ffn, 512);
    }

    #[test]
    fn flat_round_trip() {
        let text = r#"{"bridger.zoom_variant": "mlp", "bridger.hidden_dim": 32, "train.epochs": 5,
                       "train.decay_epoch": 3, "backbone.widths": [8, 8, 16, 16]}"#;
        let c = Config::from_json_str(text).unwrap();
        assert_eq!(c.model.bridger.zoom_variant, ZoomVariant::Mlp);
        assert_eq!(Config::from_value(&c.to_flat()).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_and_malformed_keys() {
        assert!(Config::from_json_str(r#"{"bridger.hiden_dim": 8}"#).is_err());
        assert!(Config::from_json_str(r#"{"bridger.hidden_dim": "wide"}"#).is_err());
        assert!(Config::from_json_str(r#"{"bridger.hidden_dim": 12}"#).is_err());
        assert!(Config::from_json_str(r#"{"backbone.image_size": 40}"#).is_err());
        assert!(Config::from_json_str(r#"{"train.epochs": 10, "train.decay_epoch": 10}"#).is_err());
        assert!(Config::from_json_str("[1, 2]").is_err());
    }

    #[test]
    fn scope_stage_selection() {
        let mut b = BridgerConfig::default();
        assert_eq!(b.stages(4).unwrap(), vec![2, 3, 4]);
        b.scope = Scope::Late;
        b.count = 2;
        assert_eq!(b.stages(4).unwrap(), vec![3, 4]);
        b.count = 3;
        assert!(b.stages(4).is_err());
        b.scope = Scope::Single;
        b.count = 1;
        assert_eq!(b.stages(4).unwrap(), vec![4]);
        b.count = 0;
        assert!(b.stages(4).unwrap().is_empty());
    }

    #[test]
    fn cnn_stage_shapes() {
        let b = BackboneConfig::default();
        assert_eq!(b.stage_shape(2), [64, 8, 8]);
        assert_eq!(b.stage_shape(3), [128, 4, 4]);
        assert_eq!(b.stage_shape(4), [256, 2, 2]);
    }
}
