//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Storage is row-major with no views or strides; every op copies. A [`Tape`]
//! records each differentiable op in execution order and [`Tape::backward`]
//! replays the records in reverse, accumulating adjoints into each tensor's
//! gradient buffer. All math runs in f64 and loops are sequential, so a fixed
//! op order gives bit-identical gradients across runs.
//!
//! Tensors are `Rc`-backed handles and deliberately not `Send`: a model and
//! its tape stay confined to one thread, and parallelism happens at the
//! whole-run level.

mod conv;
mod ops;

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub use ops::IGNORE_INDEX;

/// Train/eval switch. It changes how batch normalization computes statistics
/// and whether running buffers move.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

struct TensorInner {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Vec<f64>,
    requires_grad: bool,
}

/// Shared handle to a tensor. Clones alias the same storage.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<RefCell<TensorInner>>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        debug_assert_eq!(numel(&shape), data.len());
        let n = data.len();
        Tensor {
            inner: Rc::new(RefCell::new(TensorInner {
                shape,
                data,
                grad: vec![0.0; n],
                requires_grad: false,
            })),
        }
    }

    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        if numel(&shape) != data.len() {
            return Err(Error::invalid(format!(
                "tensor data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor::from_parts(shape, data))
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = numel(&shape);
        Tensor::from_parts(shape, vec![0.0; n])
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Tensor {
        let n = numel(&shape);
        Tensor::from_parts(shape, vec![value; n])
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::from_parts(vec![1], vec![value])
    }

    /// Gaussian init with the given standard deviation.
    pub fn randn(shape: Vec<usize>, std: f64, rng: &mut impl Rng) -> Tensor {
        let dist = Normal::new(0.0, std).expect("std must be finite and positive");
        let n = numel(&shape);
        let data: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
        Tensor::from_parts(shape, data)
    }

    /// Marks the tensor as trainable and returns it. Used at parameter
    /// creation; buffers such as running statistics stay non-trainable.
    pub fn trainable(self) -> Tensor {
        self.inner.borrow_mut().requires_grad = true;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn rank(&self) -> usize {
        self.inner.borrow().shape.len()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data_vec(&self) -> Vec<f64> {
        self.inner.borrow().data.clone()
    }

    pub fn grad_vec(&self) -> Vec<f64> {
        self.inner.borrow().grad.clone()
    }

    /// Scalar value. Panics on non-scalar tensors; callers only reach this
    /// after ops whose output shape is [1].
    pub fn item(&self) -> f64 {
        let inner = self.inner.borrow();
        assert!(
            inner.data.len() == 1,
            "item() on tensor of shape {:?}",
            inner.shape
        );
        inner.data[0]
    }

    pub fn set_data(&self, data: &[f64]) -> Result<()> {
        let mut inner = self.inner.borrow_mut();
        if data.len() != inner.data.len() {
            return Err(Error::invalid(format!(
                "set_data length {} does not match shape {:?}",
                data.len(),
                inner.shape
            )));
        }
        inner.data.copy_from_slice(data);
        Ok(())
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad.fill(0.0);
    }

    pub fn accumulate_grad(&self, g: &[f64]) {
        let mut inner = self.inner.borrow_mut();
        debug_assert_eq!(g.len(), inner.grad.len());
        for (dst, src) in inner.grad.iter_mut().zip(g) {
            *dst += src;
        }
    }

    /// In-place update, used by the optimizer. Not recorded on any tape.
    pub fn update_data(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.inner.borrow_mut().data);
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        let shape = self.shape();
        match shape.as_slice() {
            [m, n] => Ok((*m, *n)),
            _ => Err(Error::invalid(format!(
                "{op}: expected a rank-2 tensor, got shape {shape:?}"
            ))),
        }
    }

    fn dims1(&self, op: &'static str) -> Result<usize> {
        let shape = self.shape();
        match shape.as_slice() {
            [n] => Ok(*n),
            _ => Err(Error::invalid(format!(
                "{op}: expected a rank-1 tensor, got shape {shape:?}"
            ))),
        }
    }

}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("shape", &inner.shape)
            .field("data", &inner.data)
            .finish()
    }
}

type BackwardStep = Box<dyn Fn()>;

/// Wengert list. Ops append a closure that propagates the output adjoint to
/// the inputs; `backward` replays the list in reverse.
pub struct Tape {
    steps: RefCell<Vec<BackwardStep>>,
    // Handles to every op output, in record order. `backward` clears their
    // gradients before replaying so only leaf gradients persist across calls.
    outputs: RefCell<Vec<Tensor>>,
    recording: bool,
}

impl Tape {
    pub fn new() -> Tape {
        Tape {
            steps: RefCell::new(Vec::new()),
            outputs: RefCell::new(Vec::new()),
            recording: true,
        }
    }

    /// Forward-only tape: ops run but record nothing. Used for evaluation
    /// and generation.
    pub fn no_grad() -> Tape {
        Tape {
            steps: RefCell::new(Vec::new()),
            outputs: RefCell::new(Vec::new()),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn op_count(&self) -> usize {
        self.steps.borrow().len()
    }

    fn record(&self, output: &Tensor, step: impl Fn() + 'static) {
        if self.recording {
            self.outputs.borrow_mut().push(output.clone());
            self.steps.borrow_mut().push(Box::new(step));
        }
    }

    /// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Gradients
    /// of op outputs are recomputed from scratch on every call, while leaf
    /// gradients (parameters, inputs) accumulate until explicitly zeroed, so
    /// two calls double a parameter gradient.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        if !self.recording {
            return Err(Error::invalid("backward on a no-grad tape"));
        }
        if loss.len() != 1 {
            return Err(Error::invalid(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        for out in self.outputs.borrow().iter() {
            out.zero_grad();
        }
        loss.accumulate_grad(&[1.0]);
        for step in self.steps.borrow().iter().rev() {
            step();
        }
        Ok(())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

#[cfg(test)]
mod tests;
