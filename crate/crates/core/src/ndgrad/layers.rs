//! Parameter holders for the recurring layer shapes. Each layer keeps
//! only [`ParamId`]s; values live in the model's [`ParamStore`].

use rand::Rng;

use super::array::DiffArray;
use super::conv::Padding;
use super::graph::{Graph, Var};
use super::param::{ParamId, ParamStore};
use crate::error::Result;

fn default_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = default_bound(fan_in);
        let weight = store.register(format!("{name}.weight"), DiffArray::uniform(&[fan_out, fan_in], bound, rng))?;
        let bias = if bias {
            Some(store.register(format!("{name}.bias"), DiffArray::uniform(&[fan_out], bound, rng))?)
        } else {
            None
        };
        Ok(Linear { weight, bias, fan_in, fan_out })
    }

    pub fn zeros(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Result<Self> {
        let weight = store.register(format!("{name}.weight"), DiffArray::zeros(&[fan_out, fan_in]))?;
        let bias = if bias { Some(store.register(format!("{name}.bias"), DiffArray::zeros(&[fan_out]))?) } else { None };
        Ok(Linear { weight, bias, fan_in, fan_out })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.linear(x, w, b)
    }

    pub fn ids(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }

    pub fn numel(&self) -> usize {
        self.fan_in * self.fan_out + if self.bias.is_some() { self.fan_out } else { 0 }
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: Padding,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = default_bound(c_in * kernel * kernel);
        let weight =
            store.register(format!("{name}.weight"), DiffArray::uniform(&[c_out, c_in, kernel, kernel], bound, rng))?;
        let bias = Some(store.register(format!("{name}.bias"), DiffArray::uniform(&[c_out], bound, rng))?);
        Ok(Conv2d { weight, bias, stride, padding })
    }

    /// Zero weights and bias, for residual branches that must start silent.
    pub fn zeros(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let weight = store.register(format!("{name}.weight"), DiffArray::zeros(&[c_out, c_in, kernel, kernel]))?;
        let bias = Some(store.register(format!("{name}.bias"), DiffArray::zeros(&[c_out]))?);
        Ok(Conv2d { weight, bias, stride, padding })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.conv2d_padded(x, w, b, self.stride, self.padding)
    }
}

/// Transposed convolution with kernel == stride.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
}

impl ConvTranspose2d {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = default_bound(c_in);
        let weight =
            store.register(format!("{name}.weight"), DiffArray::uniform(&[c_in, c_out, stride, stride], bound, rng))?;
        let bias = Some(store.register(format!("{name}.bias"), DiffArray::uniform(&[c_out], bound, rng))?);
        Ok(ConvTranspose2d { weight, bias, stride })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.conv_transpose2d(x, w, b, self.stride)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        let gamma = store.register(format!("{name}.gamma"), DiffArray::full(&[dim], 1.0))?;
        let beta = store.register(format!("{name}.beta"), DiffArray::zeros(&[dim]))?;
        Ok(LayerNorm { gamma, beta, eps: 1e-5 })
    }

    /// Normalizes over the last axis of `x`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gm = g.param(store, self.gamma);
        let bt = g.param(store, self.beta);
        g.layer_norm(x, gm, bt, self.eps)
    }

    /// Normalizes a `[C,h,w]` map over channels at every pixel.
    pub fn forward_chw(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let tokens = map_to_tokens(g, x)?;
        let y = self.forward(g, store, tokens)?;
        tokens_to_map(g, y, s[1], s[2])
    }
}

/// `[C,h,w]` → `[h·w, C]`.
pub fn map_to_tokens(g: &mut Graph, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let flat = g.reshape(x, &[s[0], s[1] * s[2]])?;
    g.transpose2d(flat)
}

/// `[h·w, C]` → `[C,h,w]`.
pub fn tokens_to_map(g: &mut Graph, x: Var, h: usize, w: usize) -> Result<Var> {
    let c = g.shape(x)[1];
    let t = g.transpose2d(x)?;
    g.reshape(t, &[c, h, w])
}

/// Two-layer perceptron with GELU in between.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        hidden: usize,
        out: usize,
        zero_out: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let fc1 = Linear::new(store, &format!("{name}.fc1"), dim, hidden, true, rng)?;
        let fc2 = if zero_out {
            Linear::zeros(store, &format!("{name}.fc2"), hidden, out, true)?
        } else {
            Linear::new(store, &format!("{name}.fc2"), hidden, out, true, rng)?
        };
        Ok(Mlp { fc1, fc2 })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, store, x)?;
        let h = g.gelu(h)?;
        self.fc2.forward(g, store, h)
    }
}
