//! Parameter-efficient referring segmentation on a frozen toy dual
//! encoder, built on a small reverse-mode autodiff core.

pub mod backbone;
pub mod bridger;
pub mod config;
pub mod error;
pub mod harness;
pub mod model;
pub mod ndgrad;
pub mod objective;
pub mod petzoo;
pub mod risdec;

pub use config::{Config, ModelConfig, TrainConfig};
pub use error::{Error, Result};
pub use model::Etris;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/backbone.md")]
    mod backbone {}
    #[doc = include_str!("../../../book/src/bridger.md")]
    mod bridger {}
    #[doc = include_str!("../../../book/src/decoder.md")]
    mod decoder {}
    #[doc = include_str!("../../../book/src/objective.md")]
    mod objective {}
    #[doc = include_str!("../../../book/src/pet.md")]
    mod pet {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
