//! Adam over the trainable parameters, with a learning rate per parameter
//! group.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::ndgrad::{ParamId, ParamStore};

#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    moments: HashMap<ParamId, (Vec<f64>, Vec<f64>)>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, moments: HashMap::new() }
    }
}

impl Adam {
    pub fn steps(&self) -> i32 {
        self.t
    }

    /// One update. `grads` must cover trainable parameters only; `lr_for`
    /// maps a parameter name to its current learning rate.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Vec<f64>)], lr_for: impl Fn(&str) -> f64) -> Result<()> {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for (id, g) in grads {
            let p = store.get_mut(*id);
            if !p.trainable {
                return Err(Error::Internal(format!("optimizer received a gradient for frozen {}", p.name)));
            }
            let lr = lr_for(&p.name);
            let (m, v) = self.moments.entry(*id).or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            for (((w, &gi), mi), vi) in p.array.values_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                *w -= lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
