//! Spatial ops on single `[C, h, w]` feature maps.

use super::gemm::{matmul, matmul_into};
use super::graph::{BackwardFn, Graph, Var};
use crate::error::{Error, Result};

/// Zero padding per side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub fn uniform(p: usize) -> Self {
        Padding { top: p, bottom: p, left: p, right: p }
    }
}

struct ConvGeom {
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: Padding,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let p = self.oh * self.ow;
        let mut cols = vec![0.0; self.c_in * self.kh * self.kw * p];
        for c in 0..self.c_in {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad.top as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src = &x[(c * self.h + iy as usize) * self.w..];
                        for ox in 0..self.ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad.left as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[oy * self.ow + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im_add(&self, cols: &[f64], dx: &mut [f64]) {
        let p = self.oh * self.ow;
        for c in 0..self.c_in {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad.top as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let base = (c * self.h + iy as usize) * self.w;
                        for ox in 0..self.ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad.left as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dx[base + ix as usize] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_bias(g: &Graph, b: Option<Var>, c_out: usize, op: &str) -> Result<()> {
    if let Some(b) = b {
        if g.shape(b) != [c_out] {
            return Err(Error::config(format!("{op}: bias {:?} for {c_out} channels", g.shape(b))));
        }
    }
    Ok(())
}

/// Bilinear sampling taps (lower index, upper index, upper weight) for
/// resizing `n_in` samples to `n_out` with half-pixel centers.
pub(crate) fn bilinear_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Plain-buffer bilinear resize of a `[C, h, w]` map.
pub fn resize_bilinear_values(x: &[f64], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let top = src[y0 * w + x0] * (1.0 - lx) + src[y0 * w + x1] * lx;
                let bot = src[y1 * w + x0] * (1.0 - lx) + src[y1 * w + x1] * lx;
                out[(ch * oh + oy) * ow + ox] = top * (1.0 - ly) + bot * ly;
            }
        }
    }
    out
}

fn chw(g: &Graph, x: Var, op: &str) -> Result<(usize, usize, usize)> {
    match *g.shape(x) {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::config(format!("{op} expects [C,h,w], got {s:?}"))),
    }
}

impl Graph {
    /// 2-D convolution with symmetric zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        self.conv2d_padded(x, w, b, stride, Padding::uniform(padding))
    }

    /// 2-D convolution of `[C_in,h,w]` by `[C_out,C_in,kh,kw]` with per-side padding.
    pub fn conv2d_padded(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: Padding,
    ) -> Result<Var> {
        let (c_in, h, wd) = chw(self, x, "conv2d")?;
        let (c_out, kh, kw) = match *self.shape(w) {
            [co, ci, kh, kw] if ci == c_in => (co, kh, kw),
            ref s => {
                return Err(Error::config(format!("conv2d: weight {s:?} does not fit input channels {c_in}")))
            }
        };
        if stride == 0 {
            return Err(Error::config("conv2d: stride must be at least 1"));
        }
        if h + pad.top + pad.bottom < kh || wd + pad.left + pad.right < kw {
            return Err(Error::config(format!("conv2d: kernel {kh}x{kw} larger than padded {h}x{wd}")));
        }
        check_bias(self, b, c_out, "conv2d")?;
        let geom = ConvGeom {
            c_in,
            h,
            w: wd,
            kh,
            kw,
            stride,
            pad,
            oh: (h + pad.top + pad.bottom - kh) / stride + 1,
            ow: (wd + pad.left + pad.right - kw) / stride + 1,
        };
        let k = c_in * kh * kw;
        let p = geom.oh * geom.ow;
        let cols = geom.im2col(self.value(x));
        let wv = self.value_arc(w);
        let mut out = matmul(&wv, false, &cols, false, c_out, k, p);
        if let Some(b) = b {
            for (co, bb) in self.value(b).iter().enumerate() {
                out[co * p..(co + 1) * p].iter_mut().for_each(|o| *o += bb);
            }
        }
        let shape = vec![c_out, geom.oh, geom.ow];
        let mut parents = vec![x, w];
        parents.extend(b);
        let backward: BackwardFn = Box::new(move |g, sink| {
            if let Some(buf) = sink.buffer(w) {
                matmul_into(g, false, &cols, true, c_out, p, k, buf, true);
            }
            if let Some(b) = b {
                if let Some(buf) = sink.buffer(b) {
                    for (co, o) in buf.iter_mut().enumerate() {
                        *o += g[co * p..(co + 1) * p].iter().sum::<f64>();
                    }
                }
            }
            if sink.wants(x) {
                let dcols = matmul(&wv, true, g, false, k, c_out, p);
                if let Some(buf) = sink.buffer(x) {
                    geom.col2im_add(&dcols, buf);
                }
            }
        });
        self.push_op(shape, out, &parents, Some(backward))
    }

    /// Transposed convolution with kernel size equal to the stride, so the
    /// output tiles never overlap: `[C_in,h,w]` by `[C_in,C_out,k,k]` gives
    /// `[C_out, h·k, w·k]`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let (c_in, h, wd) = chw(self, x, "conv_transpose2d")?;
        let (c_out, k) = match *self.shape(w) {
            [ci, co, kh, kw] if ci == c_in && kh == kw => (co, kh),
            ref s => {
                return Err(Error::config(format!(
                    "conv_transpose2d: weight {s:?} does not fit input channels {c_in}"
                )))
            }
        };
        if k != stride || k == 0 {
            return Err(Error::config(format!(
                "conv_transpose2d supports kernel == stride only (got kernel {k}, stride {stride})"
            )));
        }
        check_bias(self, b, c_out, "conv_transpose2d")?;
        let hw = h * wd;
        let rows = c_out * k * k;
        let xv = self.value_arc(x);
        let wv = self.value_arc(w);
        // tiles[(co,dy,dx), (y,x)] = Σ_ci W[ci,(co,dy,dx)] · x[ci,(y,x)]
        let tiles = matmul(&wv, true, &xv, false, rows, c_in, hw);
        let (oh, ow) = (h * k, wd * k);
        let mut out = vec![0.0; c_out * oh * ow];
        let bias: Vec<f64> = b.map(|b| self.value(b).to_vec()).unwrap_or_else(|| vec![0.0; c_out]);
        for co in 0..c_out {
            for dy in 0..k {
                for dx in 0..k {
                    let r = (co * k + dy) * k + dx;
                    for y in 0..h {
                        for xx in 0..wd {
                            out[(co * oh + y * k + dy) * ow + xx * k + dx] = tiles[r * hw + y * wd + xx] + bias[co];
                        }
                    }
                }
            }
        }
        let mut parents = vec![x, w];
        parents.extend(b);
        let backward: BackwardFn = Box::new(move |g, sink| {
            let mut gt = vec![0.0; rows * hw];
            for co in 0..c_out {
                for dy in 0..k {
                    for dx in 0..k {
                        let r = (co * k + dy) * k + dx;
                        for y in 0..h {
                            for xx in 0..wd {
                                gt[r * hw + y * wd + xx] = g[(co * oh + y * k + dy) * ow + xx * k + dx];
                            }
                        }
                    }
                }
            }
            if let Some(buf) = sink.buffer(x) {
                matmul_into(&wv, false, &gt, false, c_in, rows, hw, buf, true);
            }
            if let Some(buf) = sink.buffer(w) {
                matmul_into(&xv, false, &gt, true, c_in, hw, rows, buf, true);
            }
            if let Some(b) = b {
                if let Some(buf) = sink.buffer(b) {
                    for co in 0..c_out {
                        buf[co] += g[co * oh * ow..(co + 1) * oh * ow].iter().sum::<f64>();
                    }
                }
            }
        });
        self.push_op(vec![c_out, oh, ow], out, &parents, Some(backward))
    }

    /// Bilinear resize with half-pixel centers (no corner alignment).
    pub fn resize_bilinear(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let (c, h, w) = chw(self, x, "resize_bilinear")?;
        if oh == 0 || ow == 0 {
            return Err(Error::config("resize_bilinear: empty output"));
        }
        if (oh, ow) == (h, w) {
            return Ok(x);
        }
        let out = resize_bilinear_values(self.value(x), c, h, w, oh, ow);
        let ty = bilinear_taps(h, oh);
        let tx = bilinear_taps(w, ow);
        let backward: BackwardFn = Box::new(move |g, sink| {
            if let Some(buf) = sink.buffer(x) {
                for ch in 0..c {
                    let dst = &mut buf[ch * h * w..(ch + 1) * h * w];
                    for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                            let gv = g[(ch * oh + oy) * ow + ox];
                            dst[y0 * w + x0] += gv * (1.0 - ly) * (1.0 - lx);
                            dst[y0 * w + x1] += gv * (1.0 - ly) * lx;
                            dst[y1 * w + x0] += gv * ly * (1.0 - lx);
                            dst[y1 * w + x1] += gv * ly * lx;
                        }
                    }
                }
            }
        });
        self.push_op(vec![c, oh, ow], out, &[x], Some(backward))
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let (c, h, w) = chw(self, x, "upsample_nearest")?;
        if factor == 0 {
            return Err(Error::config("upsample_nearest: factor must be positive"));
        }
        let (oh, ow) = (h * factor, w * factor);
        let xv = self.value(x);
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    out[(ch * oh + oy) * ow + ox] = xv[(ch * h + oy / factor) * w + ox / factor];
                }
            }
        }
        let backward: BackwardFn = Box::new(move |g, sink| {
            if let Some(buf) = sink.buffer(x) {
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            buf[(ch * h + oy / factor) * w + ox / factor] += g[(ch * oh + oy) * ow + ox];
                        }
                    }
                }
            }
        });
        self.push_op(vec![c, oh, ow], out, &[x], Some(backward))
    }
}
