//! Reverse-mode differentiation over the op graph.
//!
//! Ops record their parents and a backward closure while recording is
//! enabled; `backward` walks the graph once in reverse topological order and
//! accumulates gradients into a [`Gradients`] store keyed by tensor id.
//! Inference code wraps itself in [`no_grad`] so nothing is recorded.

use std::cell::Cell;
use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Backward closure: (output tensor, output gradient) -> gradient per parent.
pub(crate) type BackwardFn =
    Box<dyn Fn(&Tensor, &[f64]) -> Vec<Option<Vec<f64>>> + Send + Sync>;

pub(crate) enum Op {
    Leaf,
    Node {
        parents: Vec<Tensor>,
        backward: BackwardFn,
    },
}

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Runs `f` with recording disabled; ops executed inside produce plain leaves.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    GRAD_ENABLED.with(|g| {
        let prev = g.get();
        g.set(false);
        let out = f();
        g.set(prev);
        out
    })
}

/// Gradients collected by one `backward` call, keyed by tensor id.
pub struct Gradients {
    map: HashMap<u64, Vec<f64>>,
}

impl Gradients {
    fn new() -> Self {
        Gradients {
            map: HashMap::new(),
        }
    }

    pub fn get(&self, t: &Tensor) -> Option<&[f64]> {
        self.map.get(&t.id()).map(|v| v.as_slice())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    fn accumulate(&mut self, id: u64, grad: Vec<f64>) {
        match self.map.get_mut(&id) {
            Some(buf) => {
                debug_assert_eq!(buf.len(), grad.len());
                for (b, g) in buf.iter_mut().zip(grad) {
                    *b += g;
                }
            }
            None => {
                self.map.insert(id, grad);
            }
        }
    }
}

/// Backpropagates from a scalar loss and returns gradients for every
/// reachable tensor that requires one. Intermediate gradients are dropped as
/// soon as they have been consumed; leaves keep theirs.
pub fn backward(loss: &Tensor) -> Result<Gradients> {
    if loss.numel() != 1 {
        return Err(Error::Input(format!(
            "backward requires a scalar loss, got shape {:?}",
            loss.shape()
        )));
    }
    if !loss.requires_grad() {
        return Err(Error::Input(
            "backward: loss is not connected to any trainable tensor".into(),
        ));
    }

    // Iterative post-order DFS; only subgraphs that require grad are visited.
    let mut order: Vec<Tensor> = Vec::new();
    let mut visited: HashSet<u64> = HashSet::new();
    let mut stack: Vec<(Tensor, usize)> = vec![(loss.clone(), 0)];
    visited.insert(loss.id());
    while let Some((t, child)) = stack.pop() {
        let next_parent = match &t.inner.op {
            Op::Leaf => None,
            Op::Node { parents, .. } => parents.get(child).cloned(),
        };
        match next_parent {
            Some(p) => {
                stack.push((t, child + 1));
                if p.requires_grad() && visited.insert(p.id()) {
                    stack.push((p, 0));
                }
            }
            None => order.push(t),
        }
    }

    let mut grads = Gradients::new();
    grads.map.insert(loss.id(), vec![1.0]);

    for t in order.iter().rev() {
        let Some(gout) = grads.map.get(&t.id()).cloned() else {
            continue;
        };
        if let Op::Node { parents, backward } = &t.inner.op {
            let parent_grads = backward(t, &gout);
            debug_assert_eq!(parent_grads.len(), parents.len());
            for (p, pg) in parents.iter().zip(parent_grads) {
                if let Some(pg) = pg {
                    if p.requires_grad() {
                        debug_assert_eq!(pg.len(), p.numel(), "bad grad size from op");
                        grads.accumulate(p.id(), pg);
                    }
                }
            }
            grads.map.remove(&t.id());
        }
    }
    Ok(grads)
}

/// Builds an op result, recording parents only when recording is on and some
/// parent participates in differentiation.
pub(crate) fn emit(
    shape: Vec<usize>,
    data: Vec<f64>,
    parents: &[&Tensor],
    make_backward: impl FnOnce() -> BackwardFn,
) -> Tensor {
    let record = is_grad_enabled() && parents.iter().any(|p| p.requires_grad());
    if record {
        Tensor::make(
            shape,
            data,
            true,
            Op::Node {
                parents: parents.iter().map(|p| (*p).clone()).collect(),
                backward: make_backward(),
            },
        )
    } else {
        Tensor::make(shape, data, false, Op::Leaf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::ops;

    #[test]
    fn no_grad_suppresses_recording() {
        let a = Tensor::var(&[2], vec![1.0, 2.0]).unwrap();
        let b = no_grad(|| ops::scale(&a, 3.0));
        assert!(b.is_leaf());
        assert!(!b.requires_grad());
        let c = ops::scale(&a, 3.0);
        assert!(c.requires_grad());
    }

    #[test]
    fn backward_accumulates_over_reuse() {
        // f = sum(a * a) => df/da = 2a
        let a = Tensor::var(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let p = ops::mul(&a, &a).unwrap();
        let loss = ops::sum_all(&p);
        let grads = backward(&loss).unwrap();
        let g = grads.get(&a).unwrap();
        for (gi, ai) in g.iter().zip(a.data()) {
            assert!((gi - 2.0 * ai).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let a = Tensor::var(&[2], vec![1.0, 2.0]).unwrap();
        let b = ops::scale(&a, 2.0);
        assert!(backward(&b).is_err());
    }
}
