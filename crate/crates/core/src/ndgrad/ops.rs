//! Dense primitives: elementwise maps, matrix products, normalization,
//! softmax and the structural ops (concat, slice, transpose, gather).

use super::array::numel;
use super::gemm::{matmul, matmul_into};
use super::graph::{BackwardFn, Graph, Var};
use crate::error::{Error, Result};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(sigmoid(x))` without overflow or cancellation.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn same_shape(g: &Graph, a: Var, b: Var, op: &str) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::config(format!(
            "{op}: shape mismatch {:?} vs {:?}",
            g.shape(a),
            g.shape(b)
        )));
    }
    Ok(())
}

/// Interprets a shape as a matrix whose last axis is the row length.
fn rows_cols(shape: &[usize]) -> (usize, usize) {
    let c = *shape.last().unwrap_or(&1);
    (numel(shape) / c.max(1), c)
}

impl Graph {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "add")?;
        let data = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let backward: BackwardFn = Box::new(move |g, sink| {
            sink.add(a, g);
            sink.add(b, g);
        });
        self.push_op(self.shape(a).to_vec(), data, &[a, b], Some(backward))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "sub")?;
        let data = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        let backward: BackwardFn = Box::new(move |g, sink| {
            sink.add(a, g);
            if let Some(buf) = sink.buffer(b) {
                for (o, x) in buf.iter_mut().zip(g) {
                    *o -= x;
                }
            }
        });
        self.push_op(self.shape(a).to_vec(), data, &[a, b], Some(backward))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "mul")?;
        let av = self.value_arc(a);
        let bv = self.value_arc(b);
        let data = av.iter().zip(bv.iter()).map(|(x, y)| x * y).collect();
        let backward: BackwardFn = Box::new(move |g, sink| {
            if let Some(buf) = sink.buffer(a) {
                for ((o, x), y) in buf.iter_mut().zip(g).zip(bv.iter()) {
                    *o += x * y;
                }
            }
            if let Some(buf) = sink.buffer(b) {
                for ((o, x), y) in buf.iter_mut().zip(g).zip(av.iter()) {
                    *o += x * y;
                }
            }
        });
        self.push_op(self.shape(a).to_vec(), data, &[a, b], Some(backward))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let data = self.value(a).iter().map(|x| x * c).collect();
        let backward: BackwardFn = Box::new(move |g, sink| {
            if let Some(buf) = sink.buffer(a) {
                for (o, x) in buf.iter_mut().zip(g) {
                    *o += c * x;
                }
            }
        });
        self.push_op(self.shape(a).to_vec(), data, &[a], Some(backward))
    }

    /// Elementwise map with derivative `df(x, y)` evaluated at input `x` and
    /// output `y`.
    fn unary(
        &mut self,
        x: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Result<Var> {
        let xv = self.value_arc(x);
        let yv: Vec<f64> = xv.iter().map(|&v| f(v)).collect();
        let need = self.any_requires_grad(&[x]);
        let backward: Option<BackwardFn> = if need {
            let ys = yv.clone();
            Some(Box::new(move |g, sink| {
                if let Some(buf) = sink.buffer(x) {
                    for i in 0..buf.len() {
                        buf[i] += g[i] * df(xv[i], ys[i]);
                    }
                }
            }))
        } else {
            None
        };
        self.push_op(self.shape(x).to_vec(), yv, &[x], backward)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| if v > 0.0 { v } else { 0.0 }, |v, _| if v > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, gelu, |v, _| gelu_grad(v))
    }

    /// `a (m×k) · b (k×n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::config(format!("matmul: incompatible shapes {sa:?} and {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let av = self.value_arc(a);
        let bv = self.value_arc(b);
        let data = matmul(&av, false, &bv, false, m, k, n);
        let backward: BackwardFn = Box::new(move |g, sink| {
            if let Some(buf) = sink.buffer(a) {
                matmul_into(g, false, &bv, true, m, n, k, buf, true);
            }
            if let Some(buf) = sink.buffer(b) {
                matmul_into(&av, true, g, false, k, m, n, buf, true);
            }
        });
        self.push_op(vec![m, n], data, &[a, b], Some(backward))
    }

    /// `x · wᵀ + b` with `w` stored as `[out, in]`. A 1-D `x` is treated as a
    /// single row and yields a 1-D result.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let (n, fan_in) = rows_cols(&xs);
        if ws.len() != 2 || ws[1] != fan_in {
            return Err(Error::config(format!("linear: input {xs:?} does not match weight {ws:?}")));
        }
        let fan_out = ws[0];
        if let Some(b) = b {
            if self.shape(b) != [fan_out] {
                return Err(Error::config(format!(
                    "linear: bias {:?} does not match {fan_out} outputs",
                    self.shape(b)
                )));
            }
        }
        let xv = self.value_arc(x);
        let wv = self.value_arc(w);
        let mut data = matmul(&xv, false, &wv, true, n, fan_in, fan_out);
        if let Some(b) = b {
            let bv = self.value(b);
            for row in data.chunks_mut(fan_out) {
                for (o, bb) in row.iter_mut().zip(bv) {
                    *o += bb;
                }
            }
        }
        let mut shape = xs.clone();
        *shape.last_mut().unwrap() = fan_out;
        let mut parents = vec![x, w];
        parents.extend(b);
        let backward: BackwardFn = Box::new(move |g, sink| {
            if let Some(buf) = sink.buffer(x) {
                matmul_into(g, false, &wv, false, n, fan_out, fan_in, buf, true);
            }
            if let Some(buf) = sink.buffer(w) {
                matmul_into(g, true, &xv, false, fan_out, n, fan_in, buf, true);
            }
            if let Some(b) = b {
                if let Some(buf) = sink.buffer(b) {
                    for row in g.chunks(fan_out) {
                        for (o, x) in buf.iter_mut().zip(row) {
                            *o += x;
                        }
                    }
                }
            }
        });
        self.push_op(shape, data, &parents, Some(backward))
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (rows, d) = rows_cols(&xs);
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::config(format!("layer_norm: affine params must be [{d}]")));
        }
        let xv = self.value_arc(x);
        let gv = self.value_arc(gamma);
        let bv = self.value(beta).to_vec();
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gv[j] + bv[j];
            }
        }
        let backward: BackwardFn = Box::new(move |g, sink| {
            if let Some(buf) = sink.buffer(gamma) {
                for r in 0..rows {
                    for j in 0..d {
                        buf[j] += g[r * d + j] * xhat[r * d + j];
                    }
                }
            }
            if let Some(buf) = sink.buffer(beta) {
                for r in 0..rows {
                    for j in 0..d {
                        buf[j] += g[r * d + j];
                    }
                }
            }
            if let Some(buf) = sink.buffer(x) {
                let mut dxhat = vec![0.0; d];
                for r in 0..rows {
                    let mut mean_d = 0.0;
                    let mut mean_dx = 0.0;
                    for j in 0..d {
                        dxhat[j] = g[r * d + j] * gv[j];
                        mean_d += dxhat[j];
                        mean_dx += dxhat[j] * xhat[r * d + j];
                    }
                    mean_d /= d as f64;
                    mean_dx /= d as f64;
                    for j in 0..d {
                        buf[r * d + j] += rstd[r] * (dxhat[j] - mean_d - xhat[r * d + j] * mean_dx);
                    }
                }
            }
        });
        self.push_op(xs, out, &[x, gamma, beta], Some(backward))
    }

    /// Softmax over the last axis, max-subtracted.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (rows, d) = rows_cols(&xs);
        let xv = self.value(x);
        let mut y = vec![0.0; xv.len()];
        for r in 0..rows {
            softmax_row(&xv[r * d..(r + 1) * d], &mut y[r * d..(r + 1) * d]);
        }
        let ys = y.clone();
        let backward: BackwardFn = Box::new(move |g, sink| {
            if let Some(buf) = sink.buffer(x) {
                for r in 0..rows {
                    let yr = &ys[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        buf[r * d + j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
        });
        self.push_op(xs, y, &[x], Some(backward))
    }

    pub fn transpose2d(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 {
            return Err(Error::config(format!("transpose2d needs a matrix, got {xs:?}")));
        }
        let (r, c) = (xs[0], xs[1]);
        let data = transpose(self.value(x), r, c);
        let backward: BackwardFn = Box::new(move |g, sink| {
            if let Some(buf) = sink.buffer(x) {
                for i in 0..r {
                    for j in 0..c {
                        buf[i * c + j] += g[j * r + i];
                    }
                }
            }
        });
        self.push_op(vec![c, r], data, &[x], Some(backward))
    }

    /// Concatenation along axis 0 (channels for `[C,h,w]`, rows for `[L,d]`).
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::config("concat of nothing"))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut lead = 0;
        for &v in xs {
            let s = self.shape(v);
            if s[1..] != tail[..] {
                return Err(Error::config(format!(
                    "concat: trailing dims {:?} differ from {tail:?}",
                    &s[1..]
                )));
            }
            lead += s[0];
        }
        let mut data = Vec::with_capacity(lead * numel(&tail));
        let mut spans = Vec::with_capacity(xs.len());
        for &v in xs {
            spans.push((v, data.len(), self.value(v).len()));
            data.extend_from_slice(self.value(v));
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let backward: BackwardFn = Box::new(move |g, sink| {
            for &(v, off, len) in &spans {
                sink.add(v, &g[off..off + len]);
            }
        });
        self.push_op(shape, data, xs, Some(backward))
    }

    /// Rows `start..end` along axis 0.
    pub fn slice(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if start >= end || end > xs[0] {
            return Err(Error::config(format!("slice {start}..{end} out of range for {xs:?}")));
        }
        let inner = numel(&xs[1..]);
        let data = self.value(x)[start * inner..end * inner].to_vec();
        let mut shape = xs.clone();
        shape[0] = end - start;
        let backward: BackwardFn = Box::new(move |g, sink| {
            if let Some(buf) = sink.buffer(x) {
                for (o, v) in buf[start * inner..end * inner].iter_mut().zip(g) {
                    *o += v;
                }
            }
        });
        self.push_op(shape, data, &[x], Some(backward))
    }

    /// Row lookup: `table[ids[i]]` for each id (embeddings, end-token pick).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let ts = self.shape(table).to_vec();
        if ts.len() != 2 {
            return Err(Error::config(format!("gather_rows needs a matrix, got {ts:?}")));
        }
        let (rows, d) = (ts[0], ts[1]);
        if let Some(bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::input(format!("row id {bad} out of range for {rows} rows")));
        }
        let tv = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let ids = ids.to_vec();
        let n = ids.len();
        let backward: BackwardFn = Box::new(move |g, sink| {
            if let Some(buf) = sink.buffer(table) {
                for (k, &i) in ids.iter().enumerate() {
                    for j in 0..d {
                        buf[i * d + j] += g[k * d + j];
                    }
                }
            }
        });
        self.push_op(vec![n, d], data, &[table], Some(backward))
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).iter().sum();
        let backward: BackwardFn = Box::new(move |g, sink| {
            if let Some(buf) = sink.buffer(x) {
                buf.iter_mut().for_each(|o| *o += g[0]);
            }
        });
        self.push_op(vec![1], vec![s], &[x], Some(backward))
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len() as f64;
        let s = self.sum_all(x)?;
        self.scale(s, 1.0 / n)
    }

    /// Mean of a matrix over `axis` (0: over rows → `[c]`, 1: over columns → `[r]`).
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 || axis > 1 {
            return Err(Error::config(format!("mean_axis({axis}) on shape {xs:?}")));
        }
        let (r, c) = (xs[0], xs[1]);
        let xv = self.value(x);
        let (shape, data) = if axis == 0 {
            let mut m = vec![0.0; c];
            for i in 0..r {
                for j in 0..c {
                    m[j] += xv[i * c + j] / r as f64;
                }
            }
            (vec![c], m)
        } else {
            (vec![r], (0..r).map(|i| xv[i * c..(i + 1) * c].iter().sum::<f64>() / c as f64).collect())
        };
        let backward: BackwardFn = Box::new(move |g, sink| {
            if let Some(buf) = sink.buffer(x) {
                for i in 0..r {
                    for j in 0..c {
                        buf[i * c + j] += if axis == 0 { g[j] / r as f64 } else { g[i] / c as f64 };
                    }
                }
            }
        });
        self.push_op(shape, data, &[x], Some(backward))
    }
}

pub(crate) fn softmax_row(x: &[f64], y: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, v) in y.iter_mut().zip(x) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in y.iter_mut() {
        *o /= sum;
    }
}

pub(crate) fn transpose(x: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x[i * c + j];
        }
    }
    out
}
