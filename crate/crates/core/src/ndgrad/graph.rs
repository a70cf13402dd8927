use std::collections::HashMap;
use std::sync::Arc;

use super::array::{numel, DiffArray};
use super::param::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Vector-Jacobian product of one recorded op: receives the upstream
/// gradient of the op's output and accumulates into its parents.
pub type BackwardFn = Box<dyn Fn(&[f64], &mut GradSink<'_>)>;

struct Node {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    requires_grad: bool,
    param: Option<ParamId>,
    backward: Option<BackwardFn>,
}

/// Per-forward-call tape. Ops append nodes; [`Graph::backward`] replays
/// them in reverse. Nothing outlives the call: build, differentiate, drop.
pub struct Graph {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    grad_enabled: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), param_vars: HashMap::new(), grad_enabled: true }
    }

    /// A graph that records values only; useful for evaluation and for
    /// finite-difference probes.
    pub fn no_grad() -> Self {
        Graph { grad_enabled: false, ..Self::new() }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a constant. Constants never receive gradients.
    pub fn constant(&mut self, a: &DiffArray) -> Var {
        self.push_leaf(a.shape().to_vec(), a.values_arc().clone(), false, None)
    }

    /// Records an input array; it gets a gradient iff `a.requires_grad()`.
    pub fn input(&mut self, a: &DiffArray) -> Var {
        let rg = a.requires_grad() && self.grad_enabled;
        self.push_leaf(a.shape().to_vec(), a.values_arc().clone(), rg, None)
    }

    pub fn constant_from(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        let a = DiffArray::new(shape, data)?;
        Ok(self.constant(&a))
    }

    /// Records a parameter. Frozen parameters become constants; repeated
    /// requests for the same parameter return the same handle.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let p = store.get(id);
        let rg = p.trainable && self.grad_enabled;
        let v = self.push_leaf(p.array.shape().to_vec(), p.array.values_arc().clone(), rg, Some(id));
        self.param_vars.insert(id, v);
        v
    }

    fn push_leaf(
        &mut self,
        shape: Vec<usize>,
        data: Arc<Vec<f64>>,
        requires_grad: bool,
        param: Option<ParamId>,
    ) -> Var {
        self.nodes.push(Node { shape, data, requires_grad, param, backward: None });
        Var(self.nodes.len() - 1)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub(crate) fn value_arc(&self, v: Var) -> Arc<Vec<f64>> {
        self.nodes[v.0].data.clone()
    }

    pub fn array(&self, v: Var) -> DiffArray {
        let n = &self.nodes[v.0];
        DiffArray::from_arc(n.shape.clone(), n.data.clone())
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// True when any of `parents` needs a gradient, i.e. when an op on them
    /// must record a backward function.
    pub fn any_requires_grad(&self, parents: &[Var]) -> bool {
        self.grad_enabled && parents.iter().any(|p| self.nodes[p.0].requires_grad)
    }

    /// Appends an op output. `backward` is called only when some parent
    /// requires a gradient; pass `None` for non-differentiable results.
    pub fn push_op(
        &mut self,
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: &[Var],
        backward: Option<BackwardFn>,
    ) -> Result<Var> {
        if numel(&shape) != data.len() {
            return Err(Error::Internal(format!(
                "op produced {} values for shape {shape:?}",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::numerical(format!("non-finite value in op output of shape {shape:?}")));
        }
        let rg = self.any_requires_grad(parents);
        self.nodes.push(Node {
            shape,
            data: Arc::new(data),
            requires_grad: rg,
            param: None,
            backward: if rg { backward } else { None },
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Same data under a new shape, without copying.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(x).len() {
            return Err(Error::config(format!("cannot reshape {:?} into {shape:?}", self.shape(x))));
        }
        let rg = self.any_requires_grad(&[x]);
        let backward: Option<BackwardFn> = if rg {
            Some(Box::new(move |g, sink| sink.add(x, g)))
        } else {
            None
        };
        let data = self.value_arc(x);
        self.nodes.push(Node { shape: shape.to_vec(), data, requires_grad: rg, param: None, backward });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::config(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let requires: Vec<bool> = self.nodes.iter().map(|n| n.requires_grad).collect();
        for i in (0..=loss.0).rev() {
            let Some(node_backward) = self.nodes[i].backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            let mut sink = GradSink { grads: &mut grads, requires: &requires, nodes: &self.nodes };
            node_backward(&g, &mut sink);
        }
        let mut by_param = Vec::new();
        let mut leaves = HashMap::new();
        for (i, g) in grads.into_iter().enumerate() {
            let Some(g) = g else { continue };
            if g.iter().any(|x| !x.is_finite()) {
                let what = match self.nodes[i].param {
                    Some(id) => format!("parameter #{}", id.0),
                    None => format!("node {i}"),
                };
                return Err(Error::numerical(format!("non-finite gradient for {what}")));
            }
            match self.nodes[i].param {
                Some(id) => by_param.push((id, g)),
                None if self.nodes[i].backward.is_none() => {
                    leaves.insert(Var(i), g);
                }
                None => {}
            }
        }
        by_param.sort_by_key(|(id, _)| *id);
        Ok(Gradients { by_param, leaves })
    }
}

/// Write access to parent gradients during the reverse pass.
pub struct GradSink<'a> {
    grads: &'a mut Vec<Option<Vec<f64>>>,
    requires: &'a [bool],
    nodes: &'a [Node],
}

impl GradSink<'_> {
    pub fn wants(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    /// Mutable gradient buffer of `v`, zero-filled on first access.
    /// `None` when `v` does not take gradients.
    pub fn buffer(&mut self, v: Var) -> Option<&mut [f64]> {
        if !self.requires[v.0] {
            return None;
        }
        let len = self.nodes[v.0].data.len();
        Some(self.grads[v.0].get_or_insert_with(|| vec![0.0; len]).as_mut_slice())
    }

    pub fn add(&mut self, v: Var, g: &[f64]) {
        if let Some(buf) = self.buffer(v) {
            for (b, x) in buf.iter_mut().zip(g) {
                *b += x;
            }
        }
    }
}

/// Result of a reverse pass: gradients of trainable parameters and of
/// gradient-requiring inputs.
#[derive(Debug, Default)]
pub struct Gradients {
    by_param: Vec<(ParamId, Vec<f64>)>,
    leaves: HashMap<Var, Vec<f64>>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.by_param
            .binary_search_by_key(&id, |(pid, _)| *pid)
            .ok()
            .map(|i| self.by_param[i].1.as_slice())
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.by_param.iter().map(|(id, g)| (*id, g.as_slice()))
    }

    pub fn input(&self, v: Var) -> Option<&[f64]> {
        self.leaves.get(&v).map(Vec::as_slice)
    }

    pub fn into_params(self) -> Vec<(ParamId, Vec<f64>)> {
        self.by_param
    }
}
