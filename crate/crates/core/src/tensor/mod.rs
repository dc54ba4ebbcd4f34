//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Operations record themselves onto a [`Tape`] whenever any input tracks
//! gradients; [`Tape::backward`] replays the records in reverse and
//! accumulates gradients into every reachable tracked tensor. Tensors are
//! cheap handles over shared storage, so recorded closures keep their
//! operands alive without copying.

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Error, Result};

pub mod adam;
pub mod conv;
pub mod gradcheck;
pub mod init;
pub mod loss;
pub mod norm;
pub mod ops;
pub mod pool;

struct Storage {
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
}

/// A dense row-major f64 tensor. Cloning copies the handle, not the data.
#[derive(Clone)]
pub struct Tensor {
    st: Rc<Storage>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.st.shape)
            .field("requires_grad", &self.st.requires_grad)
            .finish()
    }
}

impl Tensor {
    /// Untracked tensor from row-major data.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        Self::build(data, shape, false)
    }

    /// Gradient-tracking tensor from row-major data.
    pub fn tracked(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        Self::build(data, shape, true)
    }

    fn build(data: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<Tensor> {
        let expect: usize = shape.iter().product();
        if expect != data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Dimension {
                op: "tensor",
                detail: format!("shape {:?} does not describe {} values", shape, data.len()),
            });
        }
        Ok(Self::from_parts(data, shape.to_vec(), requires_grad))
    }

    pub(crate) fn from_parts(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Tensor {
        Tensor {
            st: Rc::new(Storage {
                shape,
                data: RefCell::new(data),
                requires_grad,
                grad: RefCell::new(None),
            }),
        }
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Self::from_parts(vec![0.0; n], shape.to_vec(), false)
    }

    pub fn scalar(v: f64) -> Tensor {
        Self::from_parts(vec![v], vec![1], false)
    }

    pub fn shape(&self) -> &[usize] {
        &self.st.shape
    }

    pub fn rank(&self) -> usize {
        self.st.shape.len()
    }

    /// Number of stored elements.
    pub fn len(&self) -> usize {
        self.st.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.st.requires_grad
    }

    /// Borrow the stored values.
    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.st.data.borrow()
    }

    /// Copy of the stored values.
    pub fn value(&self) -> Vec<f64> {
        self.st.data.borrow().clone()
    }

    /// The single stored value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.len(), 1, "item() on a tensor of {} elements", self.len());
        self.st.data.borrow()[0]
    }

    /// Copy of the accumulated gradient, if one has been populated.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.st.grad.borrow().clone()
    }

    pub fn clear_grad(&self) {
        *self.st.grad.borrow_mut() = None;
    }

    /// Overwrite the stored values in place (shape is immutable).
    pub fn set_data(&self, data: Vec<f64>) {
        assert_eq!(data.len(), self.len(), "set_data length mismatch");
        *self.st.data.borrow_mut() = data;
    }

    fn accumulate_persistent_grad(&self, delta: &[f64]) {
        let mut g = self.st.grad.borrow_mut();
        match g.as_mut() {
            Some(buf) => {
                for (a, b) in buf.iter_mut().zip(delta) {
                    *a += b;
                }
            }
            None => *g = Some(delta.to_vec()),
        }
    }

    /// Identity of the underlying storage; stable while any handle lives.
    pub(crate) fn key(&self) -> usize {
        Rc::as_ptr(&self.st) as usize
    }

    pub fn same_storage(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.st, &other.st)
    }
}

/// Per-backward-pass gradient accumulator keyed by tensor identity.
pub(crate) struct GradMap {
    entries: HashMap<usize, (Tensor, Vec<f64>)>,
}

impl GradMap {
    fn new() -> GradMap {
        GradMap {
            entries: HashMap::new(),
        }
    }

    /// Gradient of `t` accumulated so far, cloned out of the map.
    pub(crate) fn out_grad(&self, t: &Tensor) -> Option<Vec<f64>> {
        self.entries.get(&t.key()).map(|(_, g)| g.clone())
    }

    /// Add `delta` into the running gradient of `t`. No-op for tensors
    /// that do not track gradients.
    pub(crate) fn accumulate(&mut self, t: &Tensor, delta: Vec<f64>) {
        if !t.requires_grad() {
            return;
        }
        debug_assert_eq!(delta.len(), t.len());
        match self.entries.get_mut(&t.key()) {
            Some((_, g)) => {
                for (a, b) in g.iter_mut().zip(&delta) {
                    *a += b;
                }
            }
            None => {
                self.entries.insert(t.key(), (t.clone(), delta));
            }
        }
    }
}

struct TapeOp {
    #[allow(dead_code)]
    name: &'static str,
    rule: Box<dyn Fn(&mut GradMap)>,
}

/// Wengert list recording one forward pass.
///
/// Record order is a topological order by construction, so the backward
/// pass is a single reverse sweep that visits every operation exactly once.
pub struct Tape {
    ops: RefCell<Vec<TapeOp>>,
    enabled: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// A recording tape.
    pub fn new() -> Tape {
        Tape {
            ops: RefCell::new(Vec::new()),
            enabled: true,
        }
    }

    /// A tape that records nothing; use for evaluation-only forwards.
    pub fn disabled() -> Tape {
        Tape {
            ops: RefCell::new(Vec::new()),
            enabled: false,
        }
    }

    /// Number of recorded operations.
    pub fn len(&self) -> usize {
        self.ops.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Whether an op over `inputs` should record a backward rule.
    pub(crate) fn should_record(&self, inputs: &[&Tensor]) -> bool {
        self.enabled && inputs.iter().any(|t| t.requires_grad())
    }

    pub(crate) fn record(&self, name: &'static str, rule: impl Fn(&mut GradMap) + 'static) {
        self.ops.borrow_mut().push(TapeOp {
            name,
            rule: Box::new(rule),
        });
    }

    /// Reverse sweep from a scalar loss. Every reachable tracked tensor
    /// receives `d loss / d tensor` added into its persistent gradient, so
    /// repeated calls without [`Tensor::clear_grad`] accumulate.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        if loss.len() != 1 {
            return Err(Error::Usage {
                what: format!(
                    "backward requires a scalar loss, got shape {:?}",
                    loss.shape()
                ),
            });
        }
        let mut gm = GradMap::new();
        gm.accumulate(loss, vec![1.0]);
        for op in self.ops.borrow().iter().rev() {
            (op.rule)(&mut gm);
        }
        for (tensor, grad) in gm.entries.values() {
            tensor.accumulate_persistent_grad(grad);
        }
        Ok(())
    }
}

struct ParamInner {
    name: String,
    tensor: Tensor,
    m: RefCell<Vec<f64>>,
    v: RefCell<Vec<f64>>,
    step: Cell<u64>,
}

/// A named, trainable tensor with its optimizer state.
#[derive(Clone)]
pub struct Parameter {
    inner: Rc<ParamInner>,
}

impl std::fmt::Debug for Parameter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Parameter")
            .field("name", &self.inner.name)
            .field("shape", &self.inner.tensor.shape())
            .field("step", &self.inner.step.get())
            .finish()
    }
}

impl Parameter {
    /// Wrap `data` as a trainable tensor. The name should be a unique path
    /// such as `"conv1.weight"`.
    pub fn new(name: impl Into<String>, data: Vec<f64>, shape: &[usize]) -> Result<Parameter> {
        let tensor = Tensor::tracked(data, shape)?;
        Ok(Self::from_tensor(name, tensor))
    }

    pub fn from_tensor(name: impl Into<String>, tensor: Tensor) -> Parameter {
        let n = tensor.len();
        Parameter {
            inner: Rc::new(ParamInner {
                name: name.into(),
                tensor,
                m: RefCell::new(vec![0.0; n]),
                v: RefCell::new(vec![0.0; n]),
                step: Cell::new(0),
            }),
        }
    }

    pub fn name(&self) -> &str {
        &self.inner.name
    }

    pub fn tensor(&self) -> &Tensor {
        &self.inner.tensor
    }

    pub fn step_count(&self) -> u64 {
        self.inner.step.get()
    }

    pub fn zero_grad(&self) {
        self.inner.tensor.clear_grad();
    }

    pub(crate) fn adam_state(&self) -> (Ref<'_, Vec<f64>>, Ref<'_, Vec<f64>>) {
        (self.inner.m.borrow(), self.inner.v.borrow())
    }

    pub(crate) fn apply_adam(&self, m: Vec<f64>, v: Vec<f64>, data: Vec<f64>) {
        *self.inner.m.borrow_mut() = m;
        *self.inner.v.borrow_mut() = v;
        self.inner.tensor.set_data(data);
        self.inner.step.set(self.inner.step.get() + 1);
    }
}
