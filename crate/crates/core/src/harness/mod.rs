//! Data, training and evaluation plumbing around the model.

pub mod ablate;
pub mod check;
pub mod checkpoint;
pub mod dataset;
pub mod optim;
pub mod pnm;
pub mod synth;
pub mod train;
pub mod vocab;
