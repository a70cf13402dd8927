use super::gemm::{matmul, matmul_into};
use super::graph::{BackwardFn, Graph, Var};
use super::layers::Linear;
use super::param::ParamStore;
use crate::error::{Error, Result};

/// Which keys each query may attend to.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AttnMask {
    /// Query `i` sees keys `0..=i` only.
    pub causal: bool,
    /// Keys marked `false` are ignored by every query.
    pub key_valid: Option<Vec<bool>>,
}

impl AttnMask {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn causal() -> Self {
        AttnMask { causal: true, key_valid: None }
    }

    pub fn keys(valid: Vec<bool>) -> Self {
        AttnMask { causal: false, key_valid: Some(valid) }
    }

    fn allows(&self, i: usize, j: usize) -> bool {
        (!self.causal || j <= i) && self.key_valid.as_ref().map_or(true, |v| v[j])
    }
}

/// Projections of one multi-head attention block. The key projection has
/// no bias: a key bias only shifts every score of a query by the same
/// amount, which softmax ignores.
#[derive(Clone, Debug)]
pub struct MhaParams {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MhaParams {
    /// Registers projections for `dim`-wide attention whose keys/values
    /// come from `kv_dim`-wide tokens. `zero_out` zero-initialises the
    /// output projection.
    pub fn new<R: rand::Rng>(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        kv_dim: usize,
        heads: usize,
        zero_out: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::config(format!("attention width {dim} not divisible by {heads} heads")));
        }
        Ok(MhaParams {
            q: Linear::new(store, &format!("{prefix}.q"), dim, dim, true, rng)?,
            k: Linear::new(store, &format!("{prefix}.k"), kv_dim, dim, false, rng)?,
            v: Linear::new(store, &format!("{prefix}.v"), kv_dim, dim, true, rng)?,
            o: if zero_out {
                Linear::zeros(store, &format!("{prefix}.o"), dim, dim, true)?
            } else {
                Linear::new(store, &format!("{prefix}.o"), dim, dim, true, rng)?
            },
            heads,
        })
    }
}

impl Graph {
    /// Per-head `softmax(QKᵀ/√d_h)·V` on already-projected `[Lq,d]`,
    /// `[Lk,d]`, `[Lk,d]` inputs.
    pub fn scaled_dot_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        mask: &AttnMask,
    ) -> Result<Var> {
        let (lq, d) = match *self.shape(q) {
            [a, b] => (a, b),
            ref s => return Err(Error::config(format!("attention query must be [L,d], got {s:?}"))),
        };
        let lk = self.shape(k)[0];
        if self.shape(k) != [lk, d] || self.shape(v) != [lk, d] {
            return Err(Error::config(format!(
                "attention key/value shapes {:?}/{:?} do not match query width {d}",
                self.shape(k),
                self.shape(v)
            )));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::config(format!("attention width {d} not divisible by {heads} heads")));
        }
        if lq == 0 || lk == 0 {
            return Err(Error::config("attention needs at least one query and one key"));
        }
        if let Some(valid) = &mask.key_valid {
            if valid.len() != lk {
                return Err(Error::config(format!("key mask length {} for {lk} keys", valid.len())));
            }
        }
        for i in 0..lq {
            if !(0..lk).any(|j| mask.allows(i, j)) {
                return Err(Error::config(format!("query {i} has no visible key")));
            }
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let qv = self.value_arc(q);
        let kv = self.value_arc(k);
        let vv = self.value_arc(v);
        let qh = split_heads(&qv, lq, heads, dh);
        let kh = split_heads(&kv, lk, heads, dh);
        let vh = split_heads(&vv, lk, heads, dh);
        let mut probs = Vec::with_capacity(heads);
        let mut out = vec![0.0; lq * d];
        for h in 0..heads {
            let mut s = matmul(&qh[h], false, &kh[h], true, lq, dh, lk);
            for i in 0..lq {
                let row = &mut s[i * lk..(i + 1) * lk];
                let mut max = f64::NEG_INFINITY;
                for (j, x) in row.iter_mut().enumerate() {
                    *x *= scale;
                    if mask.allows(i, j) {
                        max = max.max(*x);
                    }
                }
                let mut sum = 0.0;
                for (j, x) in row.iter_mut().enumerate() {
                    *x = if mask.allows(i, j) { (*x - max).exp() } else { 0.0 };
                    sum += *x;
                }
                row.iter_mut().for_each(|x| *x /= sum);
            }
            let o = matmul(&s, false, &vh[h], false, lq, lk, dh);
            for i in 0..lq {
                out[i * d + h * dh..i * d + (h + 1) * dh].copy_from_slice(&o[i * dh..(i + 1) * dh]);
            }
            probs.push(s);
        }
        let backward: BackwardFn = Box::new(move |g, sink| {
            let gh = split_heads(g, lq, heads, dh);
            let mut dq = vec![0.0; lq * d];
            let mut dk = vec![0.0; lk * d];
            let mut dv = vec![0.0; lk * d];
            for h in 0..heads {
                let p = &probs[h];
                let dvh = matmul(p, true, &gh[h], false, lk, lq, dh);
                let mut dp = matmul(&gh[h], false, &vh[h], true, lq, dh, lk);
                for i in 0..lq {
                    let pr = &p[i * lk..(i + 1) * lk];
                    let dr = &mut dp[i * lk..(i + 1) * lk];
                    let dot: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
                    for j in 0..lk {
                        dr[j] = pr[j] * (dr[j] - dot) * scale;
                    }
                }
                let mut dqh = vec![0.0; lq * dh];
                matmul_into(&dp, false, &kh[h], false, lq, lk, dh, &mut dqh, false);
                let dkh = matmul(&dp, true, &qh[h], false, lk, lq, dh);
                merge_head(&mut dq, &dqh, lq, d, h, dh);
                merge_head(&mut dk, &dkh, lk, d, h, dh);
                merge_head(&mut dv, &dvh, lk, d, h, dh);
            }
            sink.add(q, &dq);
            sink.add(k, &dk);
            sink.add(v, &dv);
        });
        self.push_op(vec![lq, d], out, &[q, k, v], Some(backward))
    }

    /// Multi-head attention with learned Q/K/V/output projections.
    pub fn multi_head_attention(
        &mut self,
        store: &ParamStore,
        params: &MhaParams,
        query: Var,
        key: Var,
        value: Var,
        mask: &AttnMask,
    ) -> Result<Var> {
        let q = params.q.forward(self, store, query)?;
        let k = params.k.forward(self, store, key)?;
        let v = params.v.forward(self, store, value)?;
        let a = self.scaled_dot_attention(q, k, v, params.heads, mask)?;
        params.o.forward(self, store, a)
    }
}

fn split_heads(x: &[f64], l: usize, heads: usize, dh: usize) -> Vec<Vec<f64>> {
    let d = heads * dh;
    (0..heads)
        .map(|h| {
            let mut out = Vec::with_capacity(l * dh);
            for i in 0..l {
                out.extend_from_slice(&x[i * d + h * dh..i * d + (h + 1) * dh]);
            }
            out
        })
        .collect()
}

fn merge_head(dst: &mut [f64], src: &[f64], l: usize, d: usize, h: usize, dh: usize) {
    for i in 0..l {
        dst[i * d + h * dh..i * d + (h + 1) * dh].copy_from_slice(&src[i * dh..(i + 1) * dh]);
    }
}
