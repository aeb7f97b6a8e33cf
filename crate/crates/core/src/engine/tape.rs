//! Reverse-mode differentiation tape.
//!
//! Every differentiable operation appends a node holding its output value, its
//! input node ids and a gradient rule. Node ids are assigned in recording
//! order, so inputs always precede their consumers and a single reverse sweep
//! visits every node once.

use super::tensor::{Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product of one recorded operation.
///
/// Returns one entry per input; `None` means no gradient flows to that input.
/// Entries whose `needs_grad` flag is false may be skipped.
pub trait GradRule<T: Element>: Send + Sync {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        needs_grad: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>>;
}

impl<T, F> GradRule<T> for F
where
    T: Element,
    F: Fn(&[&Tensor<T>], &Tensor<T>, &Tensor<T>, &[bool]) -> Result<Vec<Option<Tensor<T>>>>
        + Send
        + Sync,
{
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        needs_grad: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        self(inputs, output, grad, needs_grad)
    }
}

/// Pins a closure to the [`GradRule`] signature so its argument types are inferred.
pub fn grad_fn<T, F>(f: F) -> F
where
    T: Element,
    F: Fn(&[&Tensor<T>], &Tensor<T>, &Tensor<T>, &[bool]) -> Result<Vec<Option<Tensor<T>>>>
        + Send
        + Sync,
{
    f
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x100_0000_01b3;

struct Node<T: Element> {
    op: &'static str,
    inputs: Vec<Var>,
    value: Tensor<T>,
    rule: Option<Box<dyn GradRule<T>>>,
    requires_grad: bool,
    leaf: bool,
}

pub struct Tape<T: Element> {
    nodes: Vec<Node<T>>,
    branches: u64,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), branches: FNV_OFFSET }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Folds the branch taken by a piecewise op (relu signs, pooling argmax,
    /// clamp ranges) into [`Tape::branch_signature`].
    pub fn note_branches(&mut self, choices: impl IntoIterator<Item = u64>) {
        for c in choices {
            self.branches = (self.branches ^ c).wrapping_mul(FNV_PRIME);
        }
    }

    /// Equal signatures mean every piecewise op took the same branches, so
    /// the recorded function is smooth between the two evaluations.
    pub fn branch_signature(&self) -> u64 {
        self.branches
    }

    /// Trainable leaf; receives a gradient (zeros if unused) from `backward`.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push_node("leaf", Vec::new(), value, None, true, true)
    }

    /// Input that takes part in the computation but is never differentiated.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_node("constant", Vec::new(), value, None, false, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op
    }

    pub fn inputs(&self, v: Var) -> &[Var] {
        &self.nodes[v.0].inputs
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records an operation. The rule is dropped when no input needs a gradient.
    pub fn push(
        &mut self,
        op: &'static str,
        inputs: &[Var],
        value: Tensor<T>,
        rule: impl GradRule<T> + 'static,
    ) -> Result<Var> {
        if let Some(bad) = inputs.iter().find(|v| v.0 >= self.nodes.len()) {
            return Err(Error::Tape(format!("{op}: input node {} is not on this tape", bad.0)));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let rule: Option<Box<dyn GradRule<T>>> = if requires_grad {
            Some(Box::new(rule))
        } else {
            None
        };
        Ok(self.push_node(op, inputs.to_vec(), value, rule, requires_grad, false))
    }

    fn push_node(
        &mut self,
        op: &'static str,
        inputs: Vec<Var>,
        value: Tensor<T>,
        rule: Option<Box<dyn GradRule<T>>>,
        requires_grad: bool,
        leaf: bool,
    ) -> Var {
        self.nodes.push(Node {
            op,
            inputs,
            value,
            rule,
            requires_grad,
            leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Gradient of the scalar `loss` with respect to every node it depends on.
    /// Every trainable leaf gets an entry, zero-filled when unreachable.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::Tape(format!("loss node {} is not on this tape", loss.0)))?;
        if node.value.numel() != 1 {
            return Err(Error::Tape(format!(
                "loss must be scalar, got shape {:?}",
                node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones(node.value.shape())?);

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            let Some(rule) = node.rule.as_ref() else {
                continue;
            };
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let inputs: Vec<&Tensor<T>> =
                node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|v| self.nodes[v.0].requires_grad)
                .collect();
            let input_grads = rule.backward(&inputs, &node.value, &grad, &needs)?;
            if input_grads.len() != node.inputs.len() {
                return Err(Error::Tape(format!(
                    "{}: gradient rule returned {} gradients for {} inputs",
                    node.op,
                    input_grads.len(),
                    node.inputs.len()
                )));
            }
            for ((v, g), need) in node.inputs.iter().zip(input_grads).zip(needs) {
                let (Some(g), true) = (g, need) else {
                    continue;
                };
                if g.shape() != self.nodes[v.0].value.shape() {
                    return Err(Error::Tape(format!(
                        "{}: gradient shape {:?} does not match input shape {:?}",
                        node.op,
                        g.shape(),
                        self.nodes[v.0].value.shape()
                    )));
                }
                grads[v.0] = Some(match grads[v.0].take() {
                    None => g,
                    Some(acc) => acc.add(&g)?,
                });
            }
        }

        for (id, node) in self.nodes.iter().enumerate() {
            if node.leaf && node.requires_grad && grads[id].is_none() {
                grads[id] = Some(Tensor::zeros_like(&node.value));
            }
        }
        Ok(Gradients { grads })
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<T: Element> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
