use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Row-major dense array with an optional gradient buffer.
///
/// Values sit behind an `Arc` so that recording a parameter on a graph or
/// handing a frozen array to another thread never copies the buffer.
#[derive(Clone, PartialEq)]
pub struct DiffArray {
    shape: Vec<usize>,
    values: Arc<Vec<f64>>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl DiffArray {
    pub fn new(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::config(format!("zero-sized dimension in shape {shape:?}")));
        }
        if numel(shape) != values.len() {
            return Err(Error::config(format!(
                "shape {shape:?} needs {} values, got {}",
                numel(shape),
                values.len()
            )));
        }
        Ok(DiffArray {
            shape: shape.to_vec(),
            values: Arc::new(values),
            grad: None,
            requires_grad: false,
        })
    }

    pub(crate) fn from_arc(shape: Vec<usize>, values: Arc<Vec<f64>>) -> Self {
        debug_assert_eq!(numel(&shape), values.len());
        DiffArray { shape, values, grad: None, requires_grad: false }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        DiffArray::from_arc(shape.to_vec(), Arc::new(vec![v; numel(shape)]))
    }

    pub fn scalar(v: f64) -> Self {
        Self::full(&[1], v)
    }

    /// Gaussian entries with the given standard deviation.
    pub fn randn<R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let values = (0..numel(shape)).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
        DiffArray::from_arc(shape.to_vec(), Arc::new(values))
    }

    /// Uniform entries in `[-bound, bound)`.
    pub fn uniform<R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let values = (0..numel(shape)).map(|_| rng.gen_range(-bound..bound)).collect();
        DiffArray::from_arc(shape.to_vec(), Arc::new(values))
    }

    pub fn with_requires_grad(mut self, on: bool) -> Self {
        self.requires_grad = on;
        if !on {
            self.grad = None;
        }
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_arc(&self) -> &Arc<Vec<f64>> {
        &self.values
    }

    /// Mutable access; clones the buffer only if it is shared.
    pub fn values_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.values).as_mut_slice()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Adds `g` into the gradient buffer, allocating it on first use.
    /// Arrays that do not require gradients ignore the call.
    pub fn accumulate_grad(&mut self, g: &[f64]) -> Result<()> {
        if !self.requires_grad {
            return Ok(());
        }
        if g.len() != self.values.len() {
            return Err(Error::Internal(format!(
                "gradient length {} does not match array length {}",
                g.len(),
                self.values.len()
            )));
        }
        let buf = self.grad.get_or_insert_with(|| vec![0.0; g.len()]);
        for (b, x) in buf.iter_mut().zip(g) {
            *b += x;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.len() {
            return Err(Error::config(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        Ok(DiffArray::from_arc(shape.to_vec(), self.values.clone()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
            && self.grad.as_ref().map_or(true, |g| g.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs_diff(&self, other: &DiffArray) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on mismatched shapes");
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Little-endian bytes of the values, used for checksums and checkpoints.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len() * 8);
        for v in self.values.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }
}

impl fmt::Debug for DiffArray {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head: Vec<f64> = self.values.iter().take(8).copied().collect();
        f.debug_struct("DiffArray")
            .field("shape", &self.shape)
            .field("head", &head)
            .field("requires_grad", &self.requires_grad)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_length_mismatch() {
        assert!(DiffArray::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(DiffArray::new(&[0, 3], vec![]).is_err());
    }

    #[test]
    fn frozen_arrays_never_allocate_grad() {
        let mut a = DiffArray::zeros(&[3]);
        a.accumulate_grad(&[1.0, 2.0, 3.0]).unwrap();
        assert!(a.grad().is_none());
        let mut b = DiffArray::zeros(&[3]).with_requires_grad(true);
        b.accumulate_grad(&[1.0, 2.0, 3.0]).unwrap();
        b.accumulate_grad(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(b.grad().unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn reshape_shares_storage() {
        let a = DiffArray::new(&[2, 3], (0..6).map(f64::from).collect()).unwrap();
        let b = a.reshaped(&[3, 2]).unwrap();
        assert!(Arc::ptr_eq(a.values_arc(), b.values_arc()));
        assert!(a.reshaped(&[4]).is_err());
    }
}
