//! Wengert-list tape for reverse-mode differentiation.
//!
//! Every operation appends one node holding its output value, the vars it
//! read, and (when any input needs a gradient) a [`GradFn`] implementing its
//! vector-Jacobian product. Nodes are appended in evaluation order, so the
//! node list is already topologically sorted and [`Tape::backward`] is a
//! single reverse sweep.

use std::collections::HashMap;

use crate::error::{Result, UsesError};
use crate::numerics::scalar::Scalar;
use crate::numerics::tensor::Tensor;

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that made it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of one recorded operation.
pub trait GradFn<T: Scalar> {
    fn name(&self) -> &'static str;

    /// Returns one entry per input (same order as recorded); `None` for inputs
    /// that receive no gradient.
    fn backward(&self, ctx: &GradCtx<'_, T>, grad: &[T]) -> Result<Vec<Option<Vec<T>>>>;
}

/// Read access to a node's inputs and output during the backward sweep.
pub struct GradCtx<'a, T: Scalar> {
    tape: &'a Tape<T>,
    inputs: &'a [Var],
    output: &'a Tensor<T>,
}

impl<'a, T: Scalar> GradCtx<'a, T> {
    pub fn input(&self, i: usize) -> &'a Tensor<T> {
        &self.tape.nodes[self.inputs[i].0].value
    }

    pub fn needs_grad(&self, i: usize) -> bool {
        self.tape.nodes[self.inputs[i].0].requires_grad
    }

    pub fn output(&self) -> &'a Tensor<T> {
        self.output
    }
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    inputs: Vec<Var>,
    grad_fn: Option<Box<dyn GradFn<T>>>,
    requires_grad: bool,
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
    live_elements: usize,
    peak_elements: usize,
}

/// Gradients of a scalar with respect to every leaf that requires one.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    by_leaf: HashMap<Var, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` when the leaf does not influence the loss.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.by_leaf.get(&var)
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: true,
            live_elements: 0,
            peak_elements: 0,
        }
    }

    /// A tape that never records backward rules; used for inference.
    pub fn no_grad() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: false,
            live_elements: 0,
            peak_elements: 0,
        }
    }

    pub fn is_grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Tensor elements currently held in node values.
    pub fn live_elements(&self) -> usize {
        self.live_elements
    }

    /// Largest [`Tape::live_elements`] seen so far.
    pub fn peak_elements(&self) -> usize {
        self.peak_elements
    }

    fn track(&mut self, elements: usize) {
        self.live_elements += elements;
        self.peak_elements = self.peak_elements.max(self.live_elements);
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.track(value.numel());
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            grad_fn: None,
            requires_grad: requires_grad && self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
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

    pub fn needs_grad(&self, inputs: &[Var]) -> bool {
        self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Appends an operation result. The backward rule is dropped when no
    /// input requires a gradient.
    pub fn record(
        &mut self,
        value: Tensor<T>,
        inputs: &[Var],
        grad_fn: impl GradFn<T> + 'static,
    ) -> Var {
        let requires_grad = self.needs_grad(inputs);
        self.track(value.numel());
        self.nodes.push(Node {
            value,
            inputs: inputs.to_vec(),
            grad_fn: if requires_grad {
                Some(Box::new(grad_fn))
            } else {
                None
            },
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Current length, for use with [`Tape::rewind`].
    pub fn mark(&self) -> usize {
        self.nodes.len()
    }

    /// Drops every node recorded after `mark`; vars created after it become
    /// invalid. Only allowed on tapes without gradient recording.
    pub fn rewind(&mut self, mark: usize) -> Result<()> {
        if self.grad_enabled {
            return Err(UsesError::Contract(
                "rewind is only available on no-grad tapes".into(),
            ));
        }
        let dropped: usize = self.nodes.iter().skip(mark).map(|n| n.value.numel()).sum();
        self.live_elements -= dropped;
        self.nodes.truncate(mark);
        Ok(())
    }

    /// Copies the value of `var`, rewinds to `mark`, and re-inserts the value
    /// as a constant. Bounds memory use of long inference passes.
    pub fn rewind_keeping(&mut self, mark: usize, var: Var) -> Result<Var> {
        let value = self.value(var).clone();
        self.rewind(mark)?;
        Ok(self.constant(value))
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let loss_value = self.value(loss);
        if loss_value.numel() != 1 {
            return Err(UsesError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        if !loss_value.is_finite() {
            return Err(UsesError::NonFinite {
                node: format!("node {}", loss.0),
                op: self.op_name(loss.0).into(),
                detail: "loss value is not finite".into(),
            });
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);
        let mut by_leaf = HashMap::new();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(grad) = grads[i].take() else {
                continue;
            };
            let Some(grad_fn) = &node.grad_fn else {
                by_leaf.insert(Var(i), Tensor::from_parts(node.value.shape().to_vec(), grad));
                continue;
            };
            let ctx = GradCtx {
                tape: self,
                inputs: &node.inputs,
                output: &node.value,
            };
            let input_grads = grad_fn.backward(&ctx, &grad)?;
            if input_grads.len() != node.inputs.len() {
                return Err(UsesError::Contract(format!(
                    "{} returned {} gradients for {} inputs",
                    grad_fn.name(),
                    input_grads.len(),
                    node.inputs.len()
                )));
            }
            for (slot, (input, g)) in node.inputs.iter().zip(input_grads).enumerate() {
                let Some(g) = g else { continue };
                let target = &self.nodes[input.0];
                if !target.requires_grad {
                    continue;
                }
                if g.len() != target.value.numel() {
                    return Err(UsesError::Contract(format!(
                        "{} produced gradient of length {} for input {slot} with {} elements",
                        grad_fn.name(),
                        g.len(),
                        target.value.numel()
                    )));
                }
                if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
                    return Err(UsesError::NonFinite {
                        node: format!("node {i} (input {slot} = node {})", input.0),
                        op: grad_fn.name().into(),
                        detail: format!("gradient element {pos} is {}", g[pos]),
                    });
                }
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            *a += *b;
                        }
                    }
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { by_leaf })
    }

    fn op_name(&self, index: usize) -> &'static str {
        self.nodes[index]
            .grad_fn
            .as_ref()
            .map(|f| f.name())
            .unwrap_or("leaf")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn element_accounting_follows_rewind() {
        let mut t = Tape::<f64>::no_grad();
        t.constant(Tensor::zeros(&[3, 4]).unwrap());
        let mark = t.mark();
        let a = t.constant(Tensor::zeros(&[10]).unwrap());
        t.abs(a);
        assert_eq!((t.live_elements(), t.peak_elements()), (32, 32));
        t.rewind(mark).unwrap();
        assert_eq!((t.live_elements(), t.peak_elements()), (12, 32));
        assert!(Tape::<f64>::new().rewind(0).is_err());
    }
}
