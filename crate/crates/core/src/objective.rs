//! Text-to-pixel contrastive loss, mask binarization and segmentation
//! metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndgrad::{log_sigmoid, resize_bilinear_values, sigmoid, BackwardFn, Graph, Var};

pub const DEFAULT_THRESHOLD: f64 = 0.35;
pub const PR_THRESHOLDS: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];

/// Mean over all pixels of `−log σ(z)` on foreground and `−log(1 − σ(z))`
/// on background, evaluated as `−log σ(±z)`.
pub fn contrastive_loss(g: &mut Graph, logits: Var, gt: &[bool]) -> Result<Var> {
    let z = g.value(logits).to_vec();
    if z.len() != gt.len() {
        return Err(Error::config(format!("loss: {} logits for {} mask pixels", z.len(), gt.len())));
    }
    let n = z.len() as f64;
    let loss = -compensated_sum(z.iter().zip(gt).map(|(&v, &p)| log_sigmoid(if p { v } else { -v }))) / n;
    let gt = gt.to_vec();
    let backward: BackwardFn = Box::new(move |g, sink| {
        if let Some(buf) = sink.buffer(logits) {
            for ((o, &v), &p) in buf.iter_mut().zip(&z).zip(&gt) {
                *o += g[0] * (sigmoid(v) - if p { 1.0 } else { 0.0 }) / n;
            }
        }
    });
    g.push_op(vec![1], vec![loss], &[logits], Some(backward))
}

/// Neumaier-compensated sum, accurate to about one rounding of the result.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        c += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + c
}

/// Nearest-neighbour downsampling of an `h×w` mask by `factor`, sampling
/// the pixel nearest each output cell's center.
pub fn downsample_mask(mask: &[bool], h: usize, w: usize, factor: usize) -> Vec<bool> {
    let (oh, ow) = (h / factor, w / factor);
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        for x in 0..ow {
            let sy = (y * factor + factor / 2).min(h - 1);
            let sx = (x * factor + factor / 2).min(w - 1);
            out.push(mask[sy * w + sx]);
        }
    }
    out
}

/// Sigmoid probabilities upsampled bilinearly to `out_h×out_w`.
pub fn upsampled_probabilities(logits: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let p: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
    resize_bilinear_values(&p, 1, h, w, out_h, out_w)
}

/// Foreground wherever the upsampled probability is at least `threshold`.
pub fn finalize_mask(logits: &[f64], h: usize, w: usize, out_h: usize, out_w: usize, threshold: f64) -> Vec<bool> {
    upsampled_probabilities(logits, h, w, out_h, out_w).into_iter().map(|p| p >= threshold).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub oiou: f64,
    pub miou: f64,
    pub pr50: f64,
    pub pr60: f64,
    pub pr70: f64,
    pub pr80: f64,
    pub pr90: f64,
}

impl MetricReport {
    pub fn pr(&self) -> [f64; 5] {
        [self.pr50, self.pr60, self.pr70, self.pr80, self.pr90]
    }
}

/// Running intersection/union totals and per-sample IoUs.
#[derive(Clone, Debug, Default)]
pub struct MetricAccumulator {
    pub intersection: u64,
    pub union: u64,
    pub ious: Vec<f64>,
}

impl MetricAccumulator {
    pub fn add(&mut self, pred: &[bool], gt: &[bool]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::input(format!("prediction has {} pixels, ground truth {}", pred.len(), gt.len())));
        }
        let (mut i, mut u) = (0u64, 0u64);
        for (&p, &t) in pred.iter().zip(gt) {
            i += (p && t) as u64;
            u += (p || t) as u64;
        }
        self.intersection += i;
        self.union += u;
        self.ious.push(if u == 0 { 1.0 } else { i as f64 / u as f64 });
        Ok(())
    }

    pub fn report(&self) -> Result<MetricReport> {
        if self.ious.is_empty() {
            return Err(Error::input("no samples to score"));
        }
        let n = self.ious.len() as f64;
        let pr = |x: f64| self.ious.iter().filter(|&&v| v > x).count() as f64 / n;
        Ok(MetricReport {
            oiou: if self.union == 0 { 1.0 } else { self.intersection as f64 / self.union as f64 },
            miou: self.ious.iter().sum::<f64>() / n,
            pr50: pr(0.5),
            pr60: pr(0.6),
            pr70: pr(0.7),
            pr80: pr(0.8),
            pr90: pr(0.9),
        })
    }
}

/// oIoU, mIoU and Precision@X over paired masks.
pub fn metrics(preds: &[Vec<bool>], gts: &[Vec<bool>]) -> Result<MetricReport> {
    if preds.len() != gts.len() {
        return Err(Error::input(format!("{} predictions for {} ground-truth masks", preds.len(), gts.len())));
    }
    let mut acc = MetricAccumulator::default();
    for (p, t) in preds.iter().zip(gts) {
        acc.add(p, t)?;
    }
    acc.report()
}
