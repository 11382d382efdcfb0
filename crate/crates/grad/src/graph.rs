//! The recording tape and the reverse sweep.

use std::collections::HashMap;

use crate::{ParamId, ParamStore, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Inputs handed to a backward closure.
pub struct BackwardArgs<'a> {
    /// Gradient of the root with respect to this node's output.
    pub grad: &'a Tensor,
    pub output: &'a Tensor,
    pub inputs: Vec<&'a Tensor>,
    /// `needs[i]` is false when input `i` does not require a gradient.
    pub needs: Vec<bool>,
}

pub type BackwardFn = Box<dyn Fn(&BackwardArgs<'_>) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// Whether normalization layers use batch statistics or stored running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A single-use tape. Build one per forward pass, then call [`Graph::backward`].
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    mode: Mode,
    buffer_updates: Vec<(ParamId, Tensor)>,
}

impl Graph {
    pub fn new(mode: Mode) -> Self {
        Graph { nodes: Vec::new(), params: HashMap::new(), mode, buffer_updates: Vec::new() }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Vec::new(), None, false)
    }

    /// A free input that receives a gradient.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Vec::new(), None, true)
    }

    /// The graph node for parameter `id`. Repeated calls return the same node,
    /// so a parameter used in several places accumulates one gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = self.push(p.value.clone(), Vec::new(), None, p.trainable);
        self.params.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records an operation. `backward` returns one optional gradient per input.
    /// It is only stored when at least one input requires a gradient.
    pub fn custom<F>(&mut self, inputs: &[Var], value: Tensor, backward: F) -> Var
    where
        F: Fn(&BackwardArgs<'_>) -> Vec<Option<Tensor>> + 'static,
    {
        let requires = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        if requires {
            self.push(value, inputs.to_vec(), Some(Box::new(backward)), true)
        } else {
            self.push(value, Vec::new(), None, false)
        }
    }

    /// Queues a new value for a non-trainable buffer (e.g. running statistics).
    pub fn queue_buffer_update(&mut self, id: ParamId, value: Tensor) {
        self.buffer_updates.push((id, value));
    }

    pub fn take_buffer_updates(&mut self) -> Vec<(ParamId, Tensor)> {
        std::mem::take(&mut self.buffer_updates)
    }

    fn push(
        &mut self,
        value: Tensor,
        parents: Vec<Var>,
        backward: Option<BackwardFn>,
        requires_grad: bool,
    ) -> Var {
        self.nodes.push(Node { value, parents, backward, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Grads {
        assert_eq!(self.value(root).numel(), 1, "backward root must be a scalar");
        let seed = Tensor::ones(self.value(root).shape());
        self.backward_with(root, seed)
    }

    /// Reverse sweep seeded with an arbitrary output gradient.
    pub fn backward_with(&self, root: Var, seed: Tensor) -> Grads {
        assert_eq!(seed.shape(), self.value(root).shape(), "seed shape mismatch");
        let n = root.0 + 1;
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        let mut keep = vec![false; n];
        for &v in self.params.values() {
            if v.0 < n {
                keep[v.0] = true;
            }
        }
        grads[root.0] = Some(seed);
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            let Some(backward) = node.backward.as_ref() else { continue };
            let Some(grad) = grads[i].take() else { continue };
            let args = BackwardArgs {
                grad: &grad,
                output: &node.value,
                inputs: node.parents.iter().map(|p| &self.nodes[p.0].value).collect(),
                needs: node.parents.iter().map(|p| self.nodes[p.0].requires_grad).collect(),
            };
            let parent_grads = backward(&args);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (p, g) in node.parents.iter().zip(parent_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[p.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(g.shape(), self.nodes[p.0].value.shape(), "gradient shape mismatch");
                match &mut grads[p.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
            if keep[i] {
                grads[i] = Some(grad);
            }
        }
        Grads { grads, params: self.params.iter().map(|(&k, &v)| (k, v)).collect() }
    }
}

/// Gradients produced by one reverse sweep.
pub struct Grads {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Grads {
    /// Gradient of a leaf or parameter node. Intermediate gradients are freed during the sweep.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for every parameter that appeared in the graph and received one.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params
            .iter()
            .filter_map(move |&(id, v)| self.get(v).map(|g| (id, g)))
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.iter().find(|(p, _)| *p == id).and_then(|&(_, v)| self.get(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_parameter_accumulates() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::new(&[2], vec![1.0, 2.0]), true);
        let mut g = Graph::new(Mode::Train);
        let a = g.param(&store, id);
        let b = g.param(&store, id);
        assert_eq!(a, b);
        let y = g.mul(a, b);
        let s = g.sum(y);
        let grads = g.backward(s);
        assert_eq!(grads.param(id).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn frozen_parameter_gets_no_gradient() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::new(&[2], vec![1.0, 2.0]), false);
        let mut g = Graph::new(Mode::Train);
        let w = g.param(&store, id);
        let x = g.leaf(Tensor::new(&[2], vec![3.0, 4.0]));
        let y = g.mul(w, x);
        let s = g.sum(y);
        let grads = g.backward(s);
        assert!(grads.param(id).is_none());
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 2.0]);
    }
}
