use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::{Tensor, TensorError};

pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &mut GradSink<'_>)>;

struct Node {
    shape: Rc<[usize]>,
    value: Rc<[f64]>,
    requires_grad: bool,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
struct Inner {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Records operations in execution order so gradients can be pulled back
/// from a scalar loss. Single-threaded; build one tape per forward pass.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.len())
            .finish()
    }
}

/// Handle to a recorded value. Cheap to copy; lives as long as its tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Accumulation target handed to backward closures.
pub(crate) struct GradSink<'a> {
    grads: &'a mut [Option<Vec<f64>>],
    requires: &'a [bool],
    sizes: &'a [usize],
}

impl GradSink<'_> {
    /// Mutable gradient buffer for node `id`, or `None` when that node does
    /// not need a gradient.
    pub(crate) fn grad(&mut self, id: usize) -> Option<&mut [f64]> {
        if !self.requires[id] {
            return None;
        }
        let n = self.sizes[id];
        Some(self.grads[id].get_or_insert_with(|| vec![0.0; n]))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable leaf: receives a gradient on backward.
    pub fn leaf(&self, t: Tensor) -> Var<'_> {
        self.push_leaf(t, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.push_leaf(t, false)
    }

    fn push_leaf(&self, t: Tensor, requires_grad: bool) -> Var<'_> {
        let Tensor { shape, data } = t;
        self.push(shape, data, requires_grad, None)
    }

    pub(crate) fn push(
        &self,
        shape: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
        backward: Option<BackwardFn>,
    ) -> Var<'_> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            shape: shape.into(),
            value: data.into(),
            requires_grad,
            backward: if requires_grad { backward } else { None },
        });
        Var { tape: self, id }
    }

    pub(crate) fn shape_of(&self, id: usize) -> Rc<[usize]> {
        self.inner.borrow().nodes[id].shape.clone()
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<[f64]> {
        self.inner.borrow().nodes[id].value.clone()
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.inner.borrow().nodes[id].requires_grad
    }

    /// Reverse pass from a one-element `loss`. A tape supports exactly one
    /// backward pass.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients, TensorError> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(TensorError::Detached);
        }
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(TensorError::BackwardTwice);
        }
        let root = &inner.nodes[loss.id];
        if root.value.len() != 1 {
            return Err(TensorError::NonScalarLoss(root.shape.to_vec()));
        }
        inner.consumed = true;

        let nodes = &inner.nodes[..=loss.id];
        let requires: Vec<bool> = nodes.iter().map(|n| n.requires_grad).collect();
        let sizes: Vec<usize> = nodes.iter().map(|n| n.value.len()).collect();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        if requires[loss.id] {
            grads[loss.id] = Some(vec![1.0]);
        }
        for id in (0..nodes.len()).rev() {
            let Some(bw) = nodes[id].backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let mut sink = GradSink {
                grads: &mut grads,
                requires: &requires,
                sizes: &sizes,
            };
            bw(&g, &mut sink);
        }
        let shapes = nodes.iter().map(|n| n.shape.clone()).collect();
        Ok(Gradients { grads, shapes })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Rc<[usize]>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`. Leaves the loss does not
    /// depend on report zeros; constants and intermediate nodes report
    /// `None`.
    pub fn get(&self, v: Var<'_>) -> Option<Tensor> {
        let shape = self.shapes.get(v.id)?.to_vec();
        match &self.grads[v.id] {
            Some(g) => Some(Tensor::new(shape, g.clone()).expect("gradient shape")),
            None if v.tape.requires_grad(v.id) && v.tape.inner.borrow().nodes[v.id].backward.is_none() => {
                Some(Tensor::zeros(shape))
            }
            None => None,
        }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.shape_of(self.id).to_vec()
    }

    pub fn numel(&self) -> usize {
        self.tape.value_of(self.id).len()
    }

    pub fn value(&self) -> Tensor {
        Tensor::new(self.shape(), self.tape.value_of(self.id).to_vec()).expect("node shape")
    }

    pub(crate) fn data(&self) -> Rc<[f64]> {
        self.tape.value_of(self.id)
    }

    /// Value of a one-element variable.
    pub fn item(&self) -> f64 {
        let d = self.data();
        assert_eq!(d.len(), 1, "item() on non-scalar {:?}", self.shape());
        d[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }
}
