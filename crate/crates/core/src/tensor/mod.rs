//! Row-major float tensors with reverse-mode automatic differentiation.
//!
//! The graph is built eagerly: every operation allocates a node holding its
//! output values, handles to its parents, and a boxed backward closure.
//! Calling [`Tensor::backward`] on a scalar walks the graph in reverse
//! topological order and accumulates gradients into every node that requires
//! them. Graphs are per-forward-pass; parameters are long-lived leaf nodes
//! shared between passes.
//!
//! Everything is generic over [`Scalar`] so the same model code runs in f32
//! for training/sampling and in f64 for finite-difference gradient checks.
//!
//! Determinism contract: all loops run in fixed index order on a single
//! thread, so identical inputs produce bit-identical outputs.

mod ops;

pub use ops::AttentionWeights;

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

/// Element type of a tensor: f32 for model math, f64 for the gradient-check
/// shadow mode.
pub trait Scalar:
    num_traits::Float + num_traits::FromPrimitive + fmt::Debug + fmt::Display + std::iter::Sum + 'static
{
    /// e^x as used inside softmax and sigmoid. The f32 path is a local
    /// polynomial (accurate to about a ulp), so activation math does not
    /// depend on the platform's libm and stays bit-identical everywhere;
    /// the f64 shadow mode keeps the full-precision libm call.
    fn fast_exp(self) -> Self;
}

impl Scalar for f32 {
    fn fast_exp(self) -> Self {
        exp_f32(self)
    }
}

impl Scalar for f64 {
    fn fast_exp(self) -> Self {
        self.exp()
    }
}

/// exp(x) = 2^n · e^u with n = round(x·log₂e) and u = x − n·ln2 in
/// [−ln2/2, ln2/2], where e^u is a degree-6 Taylor polynomial. Max relative
/// error ≈ 1.2e-7, about one f32 ulp.
fn exp_f32(x: f32) -> f32 {
    let x = x.clamp(-87.0, 88.0);
    let t = x * std::f32::consts::LOG2_E;
    let n = t.round();
    let u = (t - n) * std::f32::consts::LN_2;
    let p = 1.0
        + u * (1.0
            + u * (0.5
                + u * (1.0 / 6.0 + u * (1.0 / 24.0 + u * (1.0 / 120.0 + u * (1.0 / 720.0))))));
    let scale = f32::from_bits((((n as i32) + 127) << 23) as u32);
    p * scale
}

/// Shorthand for writing literals in generic code.
pub(crate) fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("literal conversion")
}

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with gradient recording disabled. Used by the sampler and all
/// analysis passes, where graphs would only waste memory.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

type BackwardFn<T> = Box<dyn Fn(&[T])>;

struct Node<T: Scalar> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    parents: Vec<Tensor<T>>,
    backward: Option<BackwardFn<T>>,
}

/// Shared handle to a graph node. Cloning is cheap and aliases the node.
pub struct Tensor<T: Scalar = f32> {
    node: Rc<RefCell<Node<T>>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            node: Rc::clone(&self.node),
        }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.node.borrow();
        write!(
            f,
            "Tensor{:?} requires_grad={} first={:?}",
            n.shape,
            n.requires_grad,
            n.data.first()
        )
    }
}

fn check_finite<T: Scalar>(data: &[T], what: &str) -> Result<()> {
    for (i, v) in data.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite value {v} at flat index {i} in {what}"
            )));
        }
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    fn from_node(node: Node<T>) -> Self {
        Tensor {
            node: Rc::new(RefCell::new(node)),
        }
    }

    /// Leaf tensor that does not require gradients.
    pub fn constant(shape: &[usize], data: Vec<T>) -> Result<Self> {
        Self::leaf(shape, data, false)
    }

    /// Leaf tensor marked trainable.
    pub fn param(shape: &[usize], data: Vec<T>) -> Result<Self> {
        Self::leaf(shape, data, true)
    }

    pub fn leaf(shape: &[usize], data: Vec<T>, requires_grad: bool) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!(
                "shape {:?} does not describe {} elements",
                shape,
                data.len()
            )));
        }
        check_finite(&data, "tensor construction")?;
        Ok(Self::from_node(Node {
            shape: shape.to_vec(),
            data,
            grad: None,
            requires_grad,
            parents: Vec::new(),
            backward: None,
        }))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::leaf(shape, vec![T::zero(); numel], false).expect("zeros")
    }

    pub fn scalar(value: T) -> Self {
        Self::leaf(&[1], vec![value], false).expect("scalar")
    }

    /// Result of an op. When recording is off or no parent needs gradients,
    /// the node is stored as a plain leaf and the graph ends here.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        debug_assert!(data.iter().all(|v| v.is_finite()), "non-finite op output");
        Self::from_node(Node {
            shape,
            data,
            grad: None,
            requires_grad: true,
            parents,
            backward: Some(backward),
        })
    }

    pub(crate) fn detached(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert!(data.iter().all(|v| v.is_finite()), "non-finite op output");
        Self::from_node(Node {
            shape,
            data,
            grad: None,
            requires_grad: false,
            parents: Vec::new(),
            backward: None,
        })
    }

    /// True when the next op over these inputs must record a backward edge.
    pub(crate) fn recording(inputs: &[&Tensor<T>]) -> bool {
        grad_enabled() && inputs.iter().any(|t| t.requires_grad())
    }

    pub fn shape(&self) -> Vec<usize> {
        self.node.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.node.borrow().data.len()
    }

    /// Borrow of the raw values. Hold briefly; ops borrow internally.
    pub fn data(&self) -> Ref<'_, [T]> {
        Ref::map(self.node.borrow(), |n| n.data.as_slice())
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.borrow().data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.borrow().requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.borrow().backward.is_none()
    }

    /// Value of a one-element tensor.
    pub fn value(&self) -> T {
        let n = self.node.borrow();
        assert_eq!(n.data.len(), 1, "value() on non-scalar tensor");
        n.data[0]
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.node.borrow_mut().grad = None;
    }

    /// Freeze or unfreeze a leaf. Frozen leaves record no graph edges, so
    /// backward passes cannot reach them.
    pub fn set_requires_grad(&self, requires: bool) -> Result<()> {
        let mut n = self.node.borrow_mut();
        if n.backward.is_some() {
            return Err(Error::Config("set_requires_grad on a non-leaf tensor".into()));
        }
        n.requires_grad = requires;
        if !requires {
            n.grad = None;
        }
        Ok(())
    }

    /// Overwrite the values of a leaf (optimizer updates, FD perturbation).
    pub fn set_data(&self, new: &[T]) -> Result<()> {
        let mut n = self.node.borrow_mut();
        if n.backward.is_some() {
            return Err(Error::Config("set_data on a non-leaf tensor".into()));
        }
        if new.len() != n.data.len() {
            return Err(Error::Config(format!(
                "set_data length {} vs {}",
                new.len(),
                n.data.len()
            )));
        }
        check_finite(new, "set_data")?;
        n.data.copy_from_slice(new);
        Ok(())
    }

    pub(crate) fn set_at(&self, i: usize, v: T) {
        self.node.borrow_mut().data[i] = v;
    }

    pub(crate) fn accumulate_grad(&self, contrib: &[T]) {
        let mut n = self.node.borrow_mut();
        if !n.requires_grad {
            return;
        }
        let len = n.data.len();
        debug_assert_eq!(contrib.len(), len);
        let g = n.grad.get_or_insert_with(|| vec![T::zero(); len]);
        for (gi, &ci) in g.iter_mut().zip(contrib) {
            *gi = *gi + ci;
        }
    }

    /// Reverse-mode pass from a scalar. Gradients accumulate into every
    /// reachable node with `requires_grad`; call [`Tensor::zero_grad`] on
    /// leaves between steps.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Config(format!(
                "backward() needs a scalar, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(Error::Config(
                "backward() on a tensor that does not require gradients".into(),
            ));
        }
        check_finite(&self.node.borrow().data, "loss value")?;

        let order = self.reverse_topo();
        self.accumulate_grad(&[T::one()]);
        for t in &order {
            let grad = {
                let n = t.node.borrow();
                match (&n.grad, &n.backward) {
                    (Some(g), Some(_)) => g.clone(),
                    _ => continue,
                }
            };
            let n = t.node.borrow();
            if let Some(back) = n.backward.as_ref() {
                back(&grad);
            }
        }
        Ok(())
    }

    /// Nodes ordered so that every node precedes its parents.
    fn reverse_topo(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited: HashSet<usize> = HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            let key = Rc::as_ptr(&t.node) as usize;
            if !visited.insert(key) {
                continue;
            }
            stack.push((t.clone(), true));
            let n = t.node.borrow();
            for p in &n.parents {
                if p.requires_grad() {
                    stack.push((p.clone(), false));
                }
            }
        }
        order.reverse();
        order
    }

    /// Enforces the public-op invariant that all stored values are finite.
    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        check_finite(&self.node.borrow().data, what)
    }
}

/// Maximum relative error between the reverse-mode gradient of `f` at `x`
/// and a central finite difference, taken over all coordinates.
///
/// `x` must be a trainable leaf. Run this with `T = f64`; the f32 path is
/// too noisy for the tolerances the callers assert.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, eps: T) -> Result<T>
where
    T: Scalar,
    F: Fn(&Tensor<T>) -> Result<Tensor<T>>,
{
    if !x.is_leaf() || !x.requires_grad() {
        return Err(Error::Config("grad_check needs a trainable leaf".into()));
    }
    x.zero_grad();
    let loss = f(x)?;
    if loss.numel() != 1 {
        return Err(Error::Config("grad_check needs a scalar-valued f".into()));
    }
    loss.backward()?;
    let analytic = x
        .grad()
        .ok_or_else(|| Error::Config("f does not depend on x".into()))?;

    let base = x.to_vec();
    let mut max_rel = T::zero();
    for i in 0..base.len() {
        x.set_at(i, base[i] + eps);
        let up = no_grad(|| f(x)).map(|t| t.value())?;
        x.set_at(i, base[i] - eps);
        let down = no_grad(|| f(x)).map(|t| t.value())?;
        x.set_at(i, base[i]);
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss while probing coordinate {i}"
            )));
        }
        let central = (up - down) / (lit::<T>(2.0) * eps);
        let rel = (analytic[i] - central).abs() / (central.abs() + lit::<T>(1e-8));
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaf_shape_validation() {
        assert!(Tensor::<f32>::constant(&[2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::<f32>::constant(&[0], vec![]).is_err());
        assert!(Tensor::<f32>::constant(&[2], vec![f32::NAN, 0.0]).is_err());
    }

    #[test]
    fn backward_requires_scalar() {
        let x = Tensor::<f32>::param(&[2], vec![1.0, 2.0]).unwrap();
        assert!(x.backward().is_err());
    }

    #[test]
    fn no_grad_suppresses_graph() {
        let x = Tensor::<f32>::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = no_grad(|| x.mul(&x).unwrap());
        assert!(!y.requires_grad());
        assert!(y.is_leaf());
    }

    #[test]
    fn grad_check_sum_of_squares() {
        // f(x) = sum(x^2) at x = [1, 2] has gradient [2, 4].
        let x = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
        let err = grad_check(|x| x.mul(x)?.mean_all()?.mul_scalar(2.0), &x, 1e-5).unwrap();
        assert!(err < 1e-6, "rel err {err}");
        let g = x.grad().unwrap();
        assert!((g[0] - 2.0).abs() < 1e-9 && (g[1] - 4.0).abs() < 1e-9, "{g:?}");
    }

    #[test]
    fn grad_check_linear_is_exact() {
        // f(x) = sum(x): gradient is all ones and FD error is ~0.
        let x = Tensor::<f64>::param(&[3], vec![0.3, -0.7, 2.0]).unwrap();
        let err = grad_check(|x| x.mean_all()?.mul_scalar(3.0), &x, 1e-5).unwrap();
        assert!(err < 1e-8, "rel err {err}");
        let g = x.grad().unwrap();
        assert!(g.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn shared_node_accumulates_both_paths() {
        // y = x*x + x ⇒ dy/dx = 2x + 1.
        let x = Tensor::<f64>::param(&[1], vec![3.0]).unwrap();
        let y = x.mul(&x).unwrap().add(&x).unwrap();
        y.backward().unwrap();
        assert!((x.grad().unwrap()[0] - 7.0).abs() < 1e-12);
    }
}
