//! Central-difference verification of analytic gradients.

use serde::Serialize;

use super::graph::{Graph, Var};
use super::param::{ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub eps: f64,
    pub tol: f64,
    /// Probe at most this many evenly spaced entries per parameter; `None`
    /// probes every entry.
    pub max_entries_per_param: Option<usize>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions { eps: 1e-5, tol: 1e-4, max_entries_per_param: None }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub numel: usize,
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct GradcheckReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_err < self.tol)
    }

    pub fn get(&self, name: &str) -> Option<&ParamCheck> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(move |p| p.max_rel_err >= self.tol)
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn probe_indices(n: usize, limit: Option<usize>) -> Vec<usize> {
    match limit {
        Some(k) if k < n => {
            if k <= 1 {
                return vec![0];
            }
            let mut idx: Vec<usize> = (0..k).map(|i| i * (n - 1) / (k - 1)).collect();
            idx.dedup();
            idx
        }
        _ => (0..n).collect(),
    }
}

fn eval_scalar<F>(f: &F, store: &ParamStore) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::no_grad();
    let out = f(&mut g, store)?;
    let v = g.value(out);
    if v.len() != 1 {
        return Err(Error::config(format!("gradcheck target must be scalar, got {:?}", g.shape(out))));
    }
    Ok(v[0])
}

/// Compares the reverse-mode gradient of the scalar built by `f` with
/// `(f(θ+eps) − f(θ−eps)) / 2eps` for every trainable parameter entry.
/// Frozen parameters are skipped and do not appear in the report.
pub fn gradcheck<F>(store: &ParamStore, f: F, opts: &GradcheckOptions) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    let grads = g.backward(out)?;
    drop(g);

    let mut probe = store.clone();
    let mut report = GradcheckReport { params: Vec::new(), tol: opts.tol };
    for id in store.trainable_ids() {
        let p = store.get(id);
        let zeros;
        let analytic = match grads.param(id) {
            Some(a) => a,
            None => {
                zeros = vec![0.0; p.numel()];
                &zeros
            }
        };
        let mut check = ParamCheck {
            name: p.name.clone(),
            numel: p.numel(),
            checked: 0,
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in probe_indices(p.numel(), opts.max_entries_per_param) {
            let numeric = central_difference(&f, &mut probe, id, i, opts.eps)
                .map_err(|e| Error::numerical(format!("{} [{i}]: {e}", p.name)))?;
            let err = relative_error(analytic[i], numeric);
            check.checked += 1;
            if err > check.max_rel_err || check.checked == 1 {
                check.max_rel_err = err;
                check.worst_index = i;
                check.analytic = analytic[i];
                check.numeric = numeric;
            }
        }
        report.params.push(check);
    }
    Ok(report)
}

fn central_difference<F>(f: &F, store: &mut ParamStore, id: ParamId, i: usize, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let orig = store.get(id).array.values()[i];
    store.get_mut(id).array.values_mut()[i] = orig + eps;
    let plus = eval_scalar(f, store);
    store.get_mut(id).array.values_mut()[i] = orig - eps;
    let minus = eval_scalar(f, store);
    store.get_mut(id).array.values_mut()[i] = orig;
    let (plus, minus) = (plus?, minus?);
    if !plus.is_finite() || !minus.is_finite() {
        return Err(Error::numerical("non-finite objective at probe point"));
    }
    Ok((plus - minus) / (2.0 * eps))
}
