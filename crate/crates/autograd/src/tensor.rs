use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Result, TensorError};
use crate::memory;

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with tape recording disabled on the current thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|flag| flag.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|flag| flag.replace(false)));
    f()
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(Cell::get)
}

/// Inputs handed to an operation's adjoint.
pub(crate) struct BackwardCtx<'a> {
    pub parents: &'a [Tensor],
    pub output: &'a [f32],
    pub grad: &'a [f32],
}

pub(crate) type BackwardFn =
    Box<dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Vec<f32>>> + Send + Sync + 'static>;

struct GradFn {
    op: &'static str,
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Node {
    id: usize,
    data: Vec<f32>,
    shape: Vec<usize>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f32>>>,
    grad_fn: Option<GradFn>,
}

impl Drop for Node {
    // Unlinks the graph iteratively; long recurrent unrolls would otherwise
    // recurse once per node.
    fn drop(&mut self) {
        memory::on_free(self.data.len() * std::mem::size_of::<f32>());
        let mut stack = match self.grad_fn.take() {
            Some(gf) => gf.parents,
            None => return,
        };
        while let Some(t) = stack.pop() {
            if let Ok(mut node) = Arc::try_unwrap(t.0) {
                if let Some(gf) = node.grad_fn.take() {
                    stack.extend(gf.parents);
                }
            }
        }
    }
}

/// A dense, immutable, row-major `f32` tensor.
///
/// Cloning is cheap (reference counted). Gradients live behind a lock so
/// that tensors without tape attachments can be shared across threads.
#[derive(Clone)]
pub struct Tensor(Arc<Node>);

impl Tensor {
    fn build(
        data: Vec<f32>,
        shape: Vec<usize>,
        requires_grad: bool,
        grad_fn: Option<GradFn>,
    ) -> Tensor {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        memory::on_alloc(data.len() * std::mem::size_of::<f32>());
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            data,
            shape,
            requires_grad,
            grad: Mutex::new(None),
            grad_fn,
        }))
    }

    /// Constant tensor. Fails when `data.len()` disagrees with `shape`.
    pub fn new(data: Vec<f32>, shape: &[usize]) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                op: "new",
                len: data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(Tensor::build(data, shape.to_vec(), false, None))
    }

    /// Trainable leaf tensor.
    pub fn param(data: Vec<f32>, shape: &[usize]) -> Result<Tensor> {
        Ok(Tensor::new(data, shape)?.requires_grad())
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Tensor {
        let n = shape.iter().product();
        Tensor::build(vec![value; n], shape.to_vec(), false, None)
    }

    pub fn scalar(value: f32) -> Tensor {
        Tensor::build(vec![value], Vec::new(), false, None)
    }

    /// Returns a leaf copy of this tensor that participates in gradients.
    pub fn requires_grad(self) -> Tensor {
        if self.0.requires_grad && self.0.grad_fn.is_none() {
            return self;
        }
        Tensor::build(self.0.data.clone(), self.0.shape.clone(), true, None)
    }

    /// Returns a constant copy cut off from the tape.
    pub fn detach(&self) -> Tensor {
        Tensor::build(self.0.data.clone(), self.0.shape.clone(), false, None)
    }

    /// Creates the output of an operation, attaching it to the tape when any
    /// parent requires a gradient and recording is enabled.
    pub(crate) fn from_op<F>(
        data: Vec<f32>,
        shape: Vec<usize>,
        op: &'static str,
        parents: Vec<Tensor>,
        backward: F,
    ) -> Tensor
    where
        F: Fn(&BackwardCtx<'_>) -> Vec<Option<Vec<f32>>> + Send + Sync + 'static,
    {
        let track = is_grad_enabled() && parents.iter().any(|p| p.0.requires_grad);
        if track {
            let grad_fn = GradFn {
                op,
                parents,
                backward: Box::new(backward),
            };
            Tensor::build(data, shape, true, Some(grad_fn))
        } else {
            Tensor::build(data, shape, false, None)
        }
    }

    pub(crate) fn id(&self) -> usize {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.0.data.clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f32 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    pub fn is_requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    /// Name of the operation that produced this tensor, if it is on the tape.
    pub fn op_name(&self) -> Option<&'static str> {
        self.0.grad_fn.as_ref().map(|gf| gf.op)
    }

    pub fn grad(&self) -> Option<Vec<f32>> {
        self.0.grad.lock().expect("grad lock poisoned").clone()
    }

    /// Clears the accumulated gradient. Values are never touched.
    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[f32]) {
        let mut slot = self.0.grad.lock().expect("grad lock poisoned");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Injects a gradient directly; used by optimizers and tests.
    pub fn set_grad(&self, g: Vec<f32>) -> Result<()> {
        if g.len() != self.numel() {
            return Err(TensorError::DataLength {
                op: "set_grad",
                len: g.len(),
                shape: self.shape().to_vec(),
            });
        }
        *self.0.grad.lock().expect("grad lock poisoned") = Some(g);
        Ok(())
    }

    /// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
    /// reachable tensor that requires one; calling twice adds twice.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.0.requires_grad {
            return Ok(());
        }

        // Post-order DFS yields parents before children.
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited: HashSet<usize> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(gf) = &t.0.grad_fn {
                for p in &gf.parents {
                    if p.0.requires_grad && !visited.contains(&p.id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }

        let mut pending: HashMap<usize, Vec<f32>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);
        for node in order.iter().rev() {
            let Some(g) = pending.remove(&node.id()) else {
                continue;
            };
            if let Some(gf) = &node.0.grad_fn {
                let ctx = BackwardCtx {
                    parents: &gf.parents,
                    output: &node.0.data,
                    grad: &g,
                };
                let parent_grads = (gf.backward)(&ctx);
                debug_assert_eq!(parent_grads.len(), gf.parents.len(), "{}", gf.op);
                for (p, pg) in gf.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    if !p.0.requires_grad {
                        continue;
                    }
                    debug_assert_eq!(pg.len(), p.numel(), "adjoint size in {}", gf.op);
                    match pending.get_mut(&p.id()) {
                        Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                        None => {
                            pending.insert(p.id(), pg);
                        }
                    }
                }
            }
            node.accumulate_grad(&g);
        }
        Ok(())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f32> = self.data().iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.op_name())
            .field("data", &preview)
            .finish()
    }
}
