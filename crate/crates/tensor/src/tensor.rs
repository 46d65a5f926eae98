//! The [`Tensor`] handle and the recording tape behind it.
//!
//! Every op that has at least one input requiring gradients records a
//! [`GradFn`] on its output. Nodes carry a monotonically increasing id, so
//! sorting the reachable nodes by descending id replays the tape in reverse
//! execution order. Backward consumes each node's closure; running it twice
//! over the same graph is an error.

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result, TensorError};

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Whether new ops record onto the tape.
pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|c| c.get())
}

/// Disables recording until dropped.
pub struct NoGradGuard {
    prev: bool,
}

impl NoGradGuard {
    pub fn new() -> Self {
        let prev = GRAD_ENABLED.with(|c| c.replace(false));
        NoGradGuard { prev }
    }
}

impl Default for NoGradGuard {
    fn default() -> Self {
        Self::new()
    }
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|c| c.set(self.prev));
    }
}

/// Runs `f` without recording any ops.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    let _guard = NoGradGuard::new();
    f()
}

/// Adjoint closure of one recorded op. Receives the output gradient and a
/// per-input flag telling which input gradients are wanted.
pub type BackwardFn = Box<dyn FnOnce(&[f32], &[bool]) -> Vec<Option<Vec<f32>>>>;

pub(crate) struct GradFn {
    name: &'static str,
    inputs: Vec<Tensor>,
    backward: BackwardFn,
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: Rc<Vec<f32>>,
    requires_grad: bool,
    is_leaf: bool,
    op_name: &'static str,
    grad: RefCell<Option<Vec<f32>>>,
    grad_fn: RefCell<Option<GradFn>>,
}

#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.data();
        let preview: Vec<f32> = data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .field("data", &preview)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(
        shape: Vec<usize>,
        data: Rc<Vec<f32>>,
        requires_grad: bool,
        is_leaf: bool,
        op_name: &'static str,
    ) -> Tensor {
        Tensor {
            inner: Rc::new(Inner {
                id: next_id(),
                shape,
                data,
                requires_grad,
                is_leaf,
                op_name,
                grad: RefCell::new(None),
                grad_fn: RefCell::new(None),
            }),
        }
    }

    pub fn from_vec(data: Vec<f32>, shape: &[usize]) -> Result<Tensor> {
        if shape.contains(&0) {
            return Err(invalid(
                "from_vec",
                format!("zero extent in shape {shape:?}"),
            ));
        }
        if numel(shape) != data.len() {
            return Err(invalid(
                "from_vec",
                format!(
                    "shape {shape:?} needs {} values, got {}",
                    numel(shape),
                    data.len()
                ),
            ));
        }
        Ok(Self::build(
            shape.to_vec(),
            Rc::new(data),
            false,
            true,
            "leaf",
        ))
    }

    pub fn from_slice(data: &[f32], shape: &[usize]) -> Result<Tensor> {
        Self::from_vec(data.to_vec(), shape)
    }

    pub fn scalar(v: f32) -> Tensor {
        Self::build(vec![1], Rc::new(vec![v]), false, true, "leaf")
    }

    pub fn full(shape: &[usize], v: f32) -> Tensor {
        Self::build(
            shape.to_vec(),
            Rc::new(vec![v; numel(shape)]),
            false,
            true,
            "leaf",
        )
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Self::full(shape, 1.0)
    }

    /// Standard normal samples scaled by `std`.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f32, rng: &mut R) -> Tensor {
        let data = (0..numel(shape))
            .map(|_| {
                let z: f32 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        Self::build(shape.to_vec(), Rc::new(data), false, true, "leaf")
    }

    pub fn rand_uniform<R: Rng + ?Sized>(shape: &[usize], lo: f32, hi: f32, rng: &mut R) -> Tensor {
        let data = (0..numel(shape)).map(|_| rng.gen_range(lo..hi)).collect();
        Self::build(shape.to_vec(), Rc::new(data), false, true, "leaf")
    }

    /// Returns a leaf sharing this tensor's storage with `requires_grad` set.
    pub fn requires_grad(self) -> Tensor {
        Self::build(
            self.inner.shape.clone(),
            self.inner.data.clone(),
            true,
            true,
            "leaf",
        )
    }

    /// A new leaf with the same values and no history.
    pub fn detach(&self) -> Tensor {
        Self::build(
            self.inner.shape.clone(),
            self.inner.data.clone(),
            false,
            true,
            "leaf",
        )
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.inner.shape[axis]
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.inner.data
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.inner.data.as_ref().clone()
    }

    pub(crate) fn storage(&self) -> Rc<Vec<f32>> {
        self.inner.data.clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f32 {
        debug_assert_eq!(self.numel(), 1);
        self.inner.data[0]
    }

    pub fn requires_grad_flag(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.is_leaf
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn same_storage(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.inner.data, &other.inner.data)
    }

    pub fn grad(&self) -> Option<Ref<'_, Vec<f32>>> {
        let g = self.inner.grad.borrow();
        if g.is_some() {
            Some(Ref::map(g, |g| g.as_ref().unwrap()))
        } else {
            None
        }
    }

    pub fn grad_vec(&self) -> Option<Vec<f32>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Records the result of an op. `backward` is only kept when grad mode is
    /// on and at least one input requires grad.
    pub fn from_op(
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<f32>,
        inputs: &[&Tensor],
        backward: impl FnOnce(&[f32], &[bool]) -> Vec<Option<Vec<f32>>> + 'static,
    ) -> Result<Tensor> {
        debug_assert_eq!(numel(&shape), data.len(), "{name}");
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: name, index });
        }
        let track = grad_enabled() && inputs.iter().any(|t| t.inner.requires_grad);
        let out = Self::build(shape, Rc::new(data), track, false, name);
        if track {
            *out.inner.grad_fn.borrow_mut() = Some(GradFn {
                name,
                inputs: inputs.iter().map(|t| (*t).clone()).collect(),
                backward: Box::new(backward),
            });
        }
        Ok(out)
    }

    /// Same as [`Tensor::from_op`] but reuses an existing storage (views).
    pub(crate) fn from_op_shared(
        name: &'static str,
        shape: Vec<usize>,
        data: Rc<Vec<f32>>,
        inputs: &[&Tensor],
        backward: impl FnOnce(&[f32], &[bool]) -> Vec<Option<Vec<f32>>> + 'static,
    ) -> Tensor {
        let track = grad_enabled() && inputs.iter().any(|t| t.inner.requires_grad);
        let out = Self::build(shape, data, track, false, name);
        if track {
            *out.inner.grad_fn.borrow_mut() = Some(GradFn {
                name,
                inputs: inputs.iter().map(|t| (*t).clone()).collect(),
                backward: Box::new(backward),
            });
        }
        out
    }

    /// Reverse-mode sweep from a scalar loss. Populates `grad` on every
    /// reachable leaf that requires grad and consumes the recorded graph.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.inner.requires_grad {
            return Err(TensorError::NoGradient);
        }
        if self.inner.is_leaf {
            accumulate(&self.inner.grad, &[1.0]);
            return Ok(());
        }
        if self.inner.grad_fn.borrow().is_none() {
            return Err(TensorError::GraphConsumed(self.inner.op_name));
        }

        // Collect every recorded node reachable from the loss.
        let mut nodes: Vec<Tensor> = Vec::new();
        let mut seen: HashMap<u64, ()> = HashMap::new();
        let mut stack = vec![self.clone()];
        seen.insert(self.id(), ());
        while let Some(t) = stack.pop() {
            let gf = t.inner.grad_fn.borrow();
            match gf.as_ref() {
                Some(gf) => {
                    for inp in &gf.inputs {
                        if inp.inner.requires_grad
                            && !inp.inner.is_leaf
                            && seen.insert(inp.id(), ()).is_none()
                        {
                            stack.push(inp.clone());
                        }
                    }
                }
                None => return Err(TensorError::GraphConsumed(t.inner.op_name)),
            }
            drop(gf);
            nodes.push(t);
        }
        // Descending id is reverse execution order.
        nodes.sort_unstable_by(|a, b| b.id().cmp(&a.id()));

        let mut grads: HashMap<u64, Vec<f32>> = HashMap::new();
        grads.insert(self.id(), vec![1.0]);
        for node in nodes {
            let Some(gout) = grads.remove(&node.id()) else {
                // Reachable only through inputs that did not need gradients.
                node.inner.grad_fn.borrow_mut().take();
                continue;
            };
            let gf = node
                .inner
                .grad_fn
                .borrow_mut()
                .take()
                .ok_or(TensorError::GraphConsumed(node.inner.op_name))?;
            let needs: Vec<bool> = gf.inputs.iter().map(|t| t.inner.requires_grad).collect();
            let input_grads = (gf.backward)(&gout, &needs);
            debug_assert_eq!(input_grads.len(), gf.inputs.len(), "{}", gf.name);
            for (inp, g) in gf.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !inp.inner.requires_grad {
                    continue;
                }
                debug_assert_eq!(g.len(), inp.numel(), "grad size from {}", gf.name);
                if inp.inner.is_leaf {
                    accumulate(&inp.inner.grad, &g);
                } else {
                    match grads.get_mut(&inp.id()) {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => {
                            grads.insert(inp.id(), g);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn accumulate(slot: &RefCell<Option<Vec<f32>>>, g: &[f32]) {
    let mut slot = slot.borrow_mut();
    match slot.as_mut() {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g.to_vec()),
    }
}
