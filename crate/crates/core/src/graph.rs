//! Reverse-mode automatic differentiation over a dynamically recorded tape.
//!
//! Operations append nodes in execution order, so parents always precede
//! children and a single reverse sweep visits every node once. The tape is
//! consumed by [`Graph::backward`]; build a new graph for the next step.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// What a backward closure sees for one node.
pub struct BackwardCtx<'a, T> {
    /// Gradient of the loss with respect to this node's output.
    pub grad: &'a Tensor<T>,
    pub inputs: Vec<&'a Tensor<T>>,
    pub output: &'a Tensor<T>,
    /// Which inputs need a gradient; others may be returned as `None`.
    pub needs: Vec<bool>,
}

type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    op: &'static str,
    value: Tensor<T>,
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

/// Gradients of every `requires_grad` leaf after a backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that never receives a gradient (inputs, targets).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Leaf whose gradient is reported by [`Graph::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: "leaf",
            value,
            parents: Vec::new(),
            requires_grad,
            backward: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    pub(crate) fn ensure_live(&self) -> Result<()> {
        if self.consumed {
            Err(Error::GraphConsumed)
        } else {
            Ok(())
        }
    }

    /// Appends an operation result. Non-finite outputs abort with an error.
    pub fn record(
        &mut self,
        op: &'static str,
        parents: &[Var],
        value: Tensor<T>,
        backward: impl Fn(&BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Result<Var> {
        self.ensure_live()?;
        if !value.all_finite() {
            return Err(Error::NonFinite { op });
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            parents: parents.iter().map(|p| p.0).collect(),
            requires_grad,
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Propagates d(loss)/d(node) back to every leaf created with
    /// `requires_grad`. Consumes the tape: recorded values are released and
    /// the graph rejects further use.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        self.ensure_live()?;
        let loss_value = &self.nodes[loss.0].value;
        if !loss_value.is_scalar() {
            return Err(Error::NotScalar(loss_value.shape().to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::full(loss_value.shape(), T::one()));
        }

        for idx in (0..=loss.0).rev() {
            let Some(backward) = self.nodes[idx].backward.take() else {
                continue;
            };
            let Some(grad) = grads[idx].take() else {
                self.nodes[idx].value = Tensor::zeros(&[0]);
                continue;
            };
            let parent_grads = {
                let node = &self.nodes[idx];
                let ctx = BackwardCtx {
                    grad: &grad,
                    inputs: node.parents.iter().map(|&p| &self.nodes[p].value).collect(),
                    output: &node.value,
                    needs: node
                        .parents
                        .iter()
                        .map(|&p| self.nodes[p].requires_grad)
                        .collect(),
                };
                backward(&ctx)
            };
            let parents = self.nodes[idx].parents.clone();
            debug_assert_eq!(parents.len(), parent_grads.len(), "op {}", self.nodes[idx].op);
            for (p, g) in parents.into_iter().zip(parent_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(g.shape(), self.nodes[p].value.shape(), "op {}", self.nodes[idx].op);
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
            // Children have all been visited, so nobody reads this value again.
            self.nodes[idx].value = Tensor::zeros(&[0]);
        }

        // Only leaves keep their gradients.
        for (idx, node) in self.nodes.iter().enumerate() {
            if !node.parents.is_empty() || !node.requires_grad {
                grads[idx] = None;
            }
        }
        Ok(Gradients { grads })
    }

    // Elementwise building blocks.

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape(format!("add: {:?} vs {:?}", va.shape(), vb.shape())));
        }
        let mut out = va.clone();
        out.add_assign(vb);
        self.record("add", &[a, b], out, |ctx| {
            vec![Some(ctx.grad.clone()), Some(ctx.grad.clone())]
        })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape(format!("mul: {:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::from_vec(va.shape(), data)?;
        self.record("mul", &[a, b], out, |ctx| {
            let g = ctx.grad.data();
            let (a, b) = (ctx.inputs[0], ctx.inputs[1]);
            let ga = ctx.needs[0].then(|| {
                let d = g.iter().zip(b.data()).map(|(&g, &y)| g * y).collect();
                Tensor::from_vec(a.shape(), d).unwrap()
            });
            let gb = ctx.needs[1].then(|| {
                let d = g.iter().zip(a.data()).map(|(&g, &x)| g * x).collect();
                Tensor::from_vec(b.shape(), d).unwrap()
            });
            vec![ga, gb]
        })
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var> {
        let out = self.value(a).map(|v| v * factor);
        self.record("scale", &[a], out, move |ctx| {
            vec![Some(ctx.grad.map(|g| g * factor))]
        })
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.record("sum", &[a], out, |ctx| {
            vec![Some(Tensor::full(ctx.inputs[0].shape(), ctx.grad.data()[0]))]
        })
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = T::from_f64(self.value(a).len() as f64);
        let out = Tensor::scalar(self.value(a).sum() / n);
        self.record("mean", &[a], out, move |ctx| {
            vec![Some(Tensor::full(ctx.inputs[0].shape(), ctx.grad.data()[0] / n))]
        })
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        self.record("reshape", &[a], out, |ctx| {
            vec![Some(ctx.grad.clone().reshape(ctx.inputs[0].shape()).unwrap())]
        })
    }

    /// Collapses all but the leading (batch) axis.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a);
        let n = *shape
            .first()
            .ok_or_else(|| Error::shape("flatten: scalar input"))?;
        let rest: usize = shape[1..].iter().product();
        self.reshape(a, &[n, rest])
    }
}
