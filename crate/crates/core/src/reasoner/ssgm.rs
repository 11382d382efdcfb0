//! Gate computed from the content grid that admits scope evidence into it.

use smloc_grad::{Graph, ParamId, ParamStore, Tensor, Var};

use crate::error::{ensure, Result};
use crate::init::{fan_in_normal, Rng};

#[derive(Clone, Debug)]
pub struct Ssgm {
    pub norm: (ParamId, ParamId),
    pub gate: (ParamId, ParamId),
}

/// Modulated content plus the gate that produced it, both `[B, N, C]`.
#[derive(Clone, Copy, Debug)]
pub struct Modulated {
    pub content: Var,
    pub gate: Var,
}

impl Ssgm {
    pub fn register(store: &mut ParamStore, rng: &mut Rng, channels: usize) -> Self {
        Ssgm {
            norm: (
                store.add("reasoner.ssgm.norm.gamma", Tensor::ones(&[channels]), true),
                store.add("reasoner.ssgm.norm.beta", Tensor::zeros(&[channels]), true),
            ),
            gate: (
                store.add("reasoner.ssgm.gate.weight", fan_in_normal(rng, &[channels, channels], channels, 1.0), true),
                store.add("reasoner.ssgm.gate.bias", Tensor::zeros(&[channels]), true),
            ),
        }
    }

    /// `gate = σ(Linear(LayerNorm(content)))` per token, `content + gate ⊙ scope`.
    pub fn modulate(&self, g: &mut Graph, store: &ParamStore, content: Var, scope: Var) -> Result<Modulated> {
        ensure(g.shape(content) == g.shape(scope), || {
            format!("content {:?} and scope {:?} differ in shape", g.shape(content), g.shape(scope))
        })?;
        let (ga, be) = (g.param(store, self.norm.0), g.param(store, self.norm.1));
        let n = g.layer_norm(content, ga, be, 1e-5);
        let (w, b) = (g.param(store, self.gate.0), g.param(store, self.gate.1));
        let z = g.linear(n, w, Some(b));
        let gate = g.sigmoid(z);
        let admitted = g.mul(gate, scope);
        Ok(Modulated { content: g.add(content, admitted), gate })
    }
}
