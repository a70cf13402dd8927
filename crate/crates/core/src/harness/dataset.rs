//! On-disk dataset layout: `manifest.json` plus one directory per sample
//! holding `image.ppm`, `mask.pgm` and `tokens.json`.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pnm::{self, Pnm};
use super::synth::{self, SampleRecord};
use super::vocab::Vocab;
use crate::error::{Error, Result};
use crate::ndgrad::DiffArray;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub count: usize,
    pub seed: u64,
    pub image_size: usize,
    pub max_len: usize,
    pub vocab: Vec<String>,
    pub grammar_sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TokensFile {
    tokens: Vec<usize>,
    expression: String,
}

/// A decoded sample ready for the model.
#[derive(Clone, Debug)]
pub struct Sample {
    /// `[3, H, W]` in `[0, 1]`.
    pub image: DiffArray,
    pub tokens: Vec<usize>,
    /// `H×W` foreground flags.
    pub mask: Vec<bool>,
    pub expression: String,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub samples: Vec<Sample>,
}

fn sample_dir(root: &Path, i: usize) -> PathBuf {
    root.join(format!("sample_{i:05}"))
}

/// Converts an interleaved `H×W×3` byte image to a planar `[3, H, W]` array.
pub fn image_to_array(rgb: &[u8], size: usize) -> DiffArray {
    let mut v = vec![0.0; 3 * size * size];
    for p in 0..size * size {
        for c in 0..3 {
            v[c * size * size + p] = rgb[3 * p + c] as f64 / 255.0;
        }
    }
    DiffArray::new(&[3, size, size], v).expect("planar image shape")
}

impl Sample {
    pub fn from_record(r: &SampleRecord, size: usize) -> Self {
        Sample {
            image: image_to_array(&r.image, size),
            tokens: r.tokens.clone(),
            mask: r.mask.iter().map(|&m| m == 1).collect(),
            expression: r.expression.clone(),
        }
    }
}

/// Generates `n` samples in memory, in index order.
pub fn generate(n: usize, seed: u64, size: usize, max_len: usize) -> Result<Vec<SampleRecord>> {
    let vocab = Vocab::standard();
    (0..n).into_par_iter().map(|i| synth::generate_one(seed, i as u64, size, &vocab, max_len)).collect()
}

/// Generates and writes a dataset directory.
pub fn write(dir: &Path, n: usize, seed: u64, size: usize, max_len: usize) -> Result<Manifest> {
    if n == 0 {
        return Err(Error::input("dataset must contain at least one sample"));
    }
    let records = generate(n, seed, size, max_len)?;
    std::fs::create_dir_all(dir)?;
    for (i, r) in records.iter().enumerate() {
        let d = sample_dir(dir, i);
        std::fs::create_dir_all(&d)?;
        pnm::write(&d.join("image.ppm"), &Pnm { width: size, height: size, channels: 3, maxval: 255, data: r.image.clone() })?;
        pnm::write(&d.join("mask.pgm"), &Pnm { width: size, height: size, channels: 1, maxval: 1, data: r.mask.clone() })?;
        let tf = TokensFile { tokens: r.tokens.clone(), expression: r.expression.clone() };
        std::fs::write(d.join("tokens.json"), serde_json::to_vec_pretty(&tf)?)?;
    }
    let manifest = Manifest {
        count: n,
        seed,
        image_size: size,
        max_len,
        vocab: Vocab::standard().words().to_vec(),
        grammar_sha256: synth::grammar_sha256(),
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

impl Dataset {
    pub fn from_records(records: &[SampleRecord], seed: u64, size: usize, max_len: usize) -> Self {
        Dataset {
            manifest: Manifest {
                count: records.len(),
                seed,
                image_size: size,
                max_len,
                vocab: Vocab::standard().words().to_vec(),
                grammar_sha256: synth::grammar_sha256(),
            },
            samples: records.iter().map(|r| Sample::from_record(r, size)).collect(),
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join("manifest.json");
        let text = std::fs::read_to_string(&mpath)
            .map_err(|e| Error::input(format!("cannot read {}: {e}", mpath.display())))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::input(format!("{}: {e}", mpath.display())))?;
        if manifest.vocab != Vocab::standard().words() {
            return Err(Error::input("dataset vocabulary differs from the built-in vocabulary"));
        }
        let size = manifest.image_size;
        let samples = (0..manifest.count)
            .into_par_iter()
            .map(|i| {
                let d = sample_dir(dir, i);
                let img = pnm::read(&d.join("image.ppm"))?;
                let mask = pnm::read(&d.join("mask.pgm"))?;
                if img.channels != 3 || mask.channels != 1 || img.width != size || img.height != size
                    || mask.width != size || mask.height != size
                {
                    return Err(Error::input(format!("{}: image or mask is not {size}×{size}", d.display())));
                }
                let tpath = d.join("tokens.json");
                let tf: TokensFile = serde_json::from_slice(
                    &std::fs::read(&tpath).map_err(|e| Error::input(format!("cannot read {}: {e}", tpath.display())))?,
                )
                .map_err(|e| Error::input(format!("{}: {e}", tpath.display())))?;
                let scale = 255.0 / img.maxval as f64;
                let rgb: Vec<u8> = img.data.iter().map(|&v| (v as f64 * scale).round() as u8).collect();
                Ok(Sample {
                    image: image_to_array(&rgb, size),
                    tokens: tf.tokens,
                    mask: mask.data.iter().map(|&m| m > 0).collect(),
                    expression: tf.expression,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if samples.is_empty() {
            return Err(Error::input(format!("dataset {} is empty", dir.display())));
        }
        Ok(Dataset { manifest, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Splits off the last `fraction` of samples as a held-out set.
    pub fn split(&self, fraction: f64) -> (Dataset, Option<Dataset>) {
        let held = ((self.len() as f64) * fraction).round() as usize;
        if held == 0 || held >= self.len() {
            return (self.clone(), None);
        }
        let cut = self.len() - held;
        let part = |s: &[Sample]| Dataset {
            manifest: Manifest { count: s.len(), ..self.manifest.clone() },
            samples: s.to_vec(),
        };
        (part(&self.samples[..cut]), Some(part(&self.samples[cut..])))
    }
}
