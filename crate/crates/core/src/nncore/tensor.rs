use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};

use super::autograd::Op;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) struct TensorInner {
    pub(crate) id: u64,
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<f64>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op,
}

/// Dense n-dimensional array of f64, immutable after creation.
///
/// Cloning is cheap (shared storage). A tensor produced by an op while
/// recording is enabled remembers its parents so `autograd::backward` can
/// replay the graph in reverse.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) inner: Arc<TensorInner>,
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() || shape.iter().any(|&d| d == 0) {
        return Err(Error::Input(format!(
            "tensor shape {shape:?} has a zero or missing dimension"
        )));
    }
    let expect: usize = shape.iter().product();
    if expect != len {
        return Err(Error::Input(format!(
            "tensor shape {shape:?} expects {expect} elements, got {len}"
        )));
    }
    Ok(())
}

impl Tensor {
    pub(crate) fn make(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Op) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Arc::new(TensorInner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                op,
            }),
        }
    }

    /// Constant leaf (does not receive gradients).
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        check_shape(shape, data.len())?;
        Ok(Tensor::make(shape.to_vec(), data, false, Op::Leaf))
    }

    /// Trainable leaf; `backward` collects a gradient for it.
    pub fn var(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        check_shape(shape, data.len())?;
        Ok(Tensor::make(shape.to_vec(), data, true, Op::Leaf))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        assert!(n > 0, "zeros: shape {shape:?} is empty");
        Tensor::make(shape.to_vec(), vec![0.0; n], false, Op::Leaf)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        let n: usize = shape.iter().product();
        assert!(n > 0, "full: shape {shape:?} is empty");
        Tensor::make(shape.to_vec(), vec![value; n], false, Op::Leaf)
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::make(vec![1], vec![value], false, Op::Leaf)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Tensor> {
        if rows.is_empty() {
            return Err(Error::Input("from_rows: no rows".into()));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Input("from_rows: ragged rows".into()));
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        Tensor::new(&[rows.len(), cols], data)
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.inner.data
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Number of rows of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        assert_eq!(self.rank(), 2, "rows: tensor is not rank 2");
        self.inner.shape[0]
    }

    /// Number of columns of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        assert_eq!(self.rank(), 2, "cols: tensor is not rank 2");
        self.inner.shape[1]
    }

    /// Element (r, c) of a rank-2 tensor.
    pub fn get2(&self, r: usize, c: usize) -> f64 {
        let cols = self.cols();
        self.inner.data[r * cols + c]
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item: tensor has {} elements", self.numel());
        self.inner.data[0]
    }

    /// Leaf copy that is cut off from the recorded graph.
    pub fn detach(&self) -> Tensor {
        Tensor::make(
            self.inner.shape.clone(),
            self.inner.data.clone(),
            false,
            Op::Leaf,
        )
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.inner.op, Op::Leaf)
    }

    pub fn all_finite(&self) -> bool {
        self.inner.data.iter().all(|v| v.is_finite())
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor(id={}, shape={:?}, requires_grad={})",
            self.inner.id, self.inner.shape, self.inner.requires_grad
        )
    }
}
