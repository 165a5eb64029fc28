use std::sync::atomic::{AtomicU64, Ordering};

use super::Tensor;
use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Identity of a [`Param`] on a tape. Only used to route gradients, never
/// to influence numerics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(u64);

/// A trainable tensor and its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param {
    id: ParamId,
    value: Tensor,
    grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param { id: ParamId(NEXT_ID.fetch_add(1, Ordering::Relaxed)), value, grad }
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn grad(&self) -> &Tensor {
        &self.grad
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn set_value(&mut self, value: Tensor) -> Result<()> {
        if value.shape() != self.value.shape() {
            return Err(Error::shape(
                "set_value",
                format!("{:?} != {:?}", value.shape(), self.value.shape()),
            ));
        }
        self.value = value;
        Ok(())
    }

    pub fn accumulate_grad(&mut self, g: &Tensor) -> Result<()> {
        if g.shape() != self.grad.shape() {
            return Err(Error::shape(
                "accumulate_grad",
                format!("{:?} != {:?}", g.shape(), self.grad.shape()),
            ));
        }
        for (a, b) in self.grad.data_mut().iter_mut().zip(g.data()) {
            *a += b;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
    }

    /// Mutable access to value and gradient buffers together, for optimizers.
    pub fn buffers_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (self.value.data_mut(), self.grad.data_mut())
    }
}
