//! Shared sequence mixer: a stack of selective state-space blocks, plus a
//! pass-through mixer for wiring tests.

use serde::{Deserialize, Serialize};
use smloc_grad::{Graph, ParamId, ParamStore, Tensor, Var};

use crate::error::{ensure, Result};
use crate::init::{fan_in_normal, Rng};
use crate::registry::Registry;

pub trait SequenceMixer {
    fn name(&self) -> &str;

    /// Maps `[B, L, C]` to `[B, L, C]`; output at position `t` may only depend on inputs at `≤ t`.
    fn forward(&self, g: &mut Graph, store: &ParamStore, seq: Var) -> Result<Var>;

    fn param_ids(&self) -> Vec<ParamId>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixerConfig {
    pub layers: usize,
    pub state: usize,
    /// Inner width is `expand * C`.
    pub expand: usize,
    pub conv_kernel: usize,
}

impl Default for MixerConfig {
    fn default() -> Self {
        MixerConfig { layers: 2, state: 16, expand: 2, conv_kernel: 4 }
    }
}

pub type MixerFactory = dyn Fn(&mut ParamStore, &mut Rng, usize, &MixerConfig) -> Box<dyn SequenceMixer>;

/// `selective_scan` builds the state-space stack; `identity` passes tokens through.
pub fn mixer_registry() -> Registry<MixerFactory> {
    let mut r: Registry<MixerFactory> = Registry::new("mixer");
    r.register("selective_scan", Box::new(|store: &mut ParamStore, rng: &mut Rng, c: usize, cfg: &MixerConfig| {
        Box::new(StateSpaceMixer::register(store, rng, "reasoner.mixer", c, cfg)) as Box<dyn SequenceMixer>
    }));
    r.register("identity", Box::new(|_: &mut ParamStore, _: &mut Rng, _: usize, _: &MixerConfig| {
        Box::new(IdentityMixer) as Box<dyn SequenceMixer>
    }));
    r
}

pub struct IdentityMixer;

impl SequenceMixer for IdentityMixer {
    fn name(&self) -> &str {
        "identity"
    }

    fn forward(&self, _: &mut Graph, _: &ParamStore, seq: Var) -> Result<Var> {
        Ok(seq)
    }

    fn param_ids(&self) -> Vec<ParamId> {
        Vec::new()
    }
}

#[derive(Clone, Debug)]
pub struct StateSpaceBlock {
    pub norm: (ParamId, ParamId),
    pub in_x: ParamId,
    pub in_z: ParamId,
    pub conv: (ParamId, ParamId),
    /// Projects the conv output to `[dt_rank | B | C]`.
    pub x_proj: ParamId,
    pub dt_proj: (ParamId, ParamId),
    pub a_log: ParamId,
    pub skip: ParamId,
    pub out: ParamId,
    pub dt_rank: usize,
    pub state: usize,
}

impl StateSpaceBlock {
    pub fn register(store: &mut ParamStore, rng: &mut Rng, prefix: &str, c: usize, cfg: &MixerConfig) -> Self {
        let e = cfg.expand * c;
        let n = cfg.state;
        let r = c.div_ceil(16);
        let norm = (
            store.add(format!("{prefix}.norm.gamma"), Tensor::ones(&[c]), true),
            store.add(format!("{prefix}.norm.beta"), Tensor::zeros(&[c]), true),
        );
        let in_x = store.add(format!("{prefix}.in_x"), fan_in_normal(rng, &[c, e], c, 1.0), true);
        let in_z = store.add(format!("{prefix}.in_z"), fan_in_normal(rng, &[c, e], c, 1.0), true);
        let k = cfg.conv_kernel;
        let conv = (
            store.add(format!("{prefix}.conv.weight"), fan_in_normal(rng, &[e, k], k, 1.0), true),
            store.add(format!("{prefix}.conv.bias"), Tensor::zeros(&[e]), true),
        );
        let x_proj = store.add(format!("{prefix}.x_proj"), fan_in_normal(rng, &[e, r + 2 * n], e, 1.0), true);
        // step sizes start log-uniform in [1e-3, 1e-1]; the bias is their inverse softplus
        let dt_bias = Tensor::from_fn(&[e], |_| {
            let u: f64 = rand::Rng::random(rng);
            let dt = (u * (0.1f64.ln() - 0.001f64.ln()) + 0.001f64.ln()).exp();
            dt + (-(-dt).exp_m1()).ln()
        });
        let dt_proj = (
            store.add(format!("{prefix}.dt_proj.weight"), fan_in_normal(rng, &[r, e], r, 1.0), true),
            store.add(format!("{prefix}.dt_proj.bias"), dt_bias, true),
        );
        let a_log = store.add(
            format!("{prefix}.a_log"),
            Tensor::from_fn(&[e, n], |i| ((i % n) as f64 + 1.0).ln()),
            true,
        );
        let skip = store.add(format!("{prefix}.skip"), Tensor::ones(&[e]), true);
        let out = store.add(format!("{prefix}.out"), fan_in_normal(rng, &[e, c], e, 1.0), true);
        StateSpaceBlock { norm, in_x, in_z, conv, x_proj, dt_proj, a_log, skip, out, dt_rank: r, state: n }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![
            self.norm.0, self.norm.1, self.in_x, self.in_z, self.conv.0, self.conv.1, self.x_proj,
            self.dt_proj.0, self.dt_proj.1, self.a_log, self.skip, self.out,
        ]
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let p = |g: &mut Graph, id| g.param(store, id);
        let (ga, be) = (p(g, self.norm.0), p(g, self.norm.1));
        let h = g.layer_norm(x, ga, be, 1e-5);
        let wx = p(g, self.in_x);
        let xi = g.linear(h, wx, None);
        let wz = p(g, self.in_z);
        let z = g.linear(h, wz, None);
        let (cw, cb) = (p(g, self.conv.0), p(g, self.conv.1));
        let xc = g.causal_conv1d(xi, cw, cb);
        let xc = g.silu(xc);
        let wp = p(g, self.x_proj);
        let proj = g.linear(xc, wp, None);
        let (r, n) = (self.dt_rank, self.state);
        let dt_low = g.narrow(proj, 2, 0, r);
        let bm = g.narrow(proj, 2, r, n);
        let cm = g.narrow(proj, 2, r + n, n);
        let (dw, db) = (p(g, self.dt_proj.0), p(g, self.dt_proj.1));
        let delta = g.linear(dt_low, dw, Some(db));
        let delta = g.softplus(delta);
        let a_log = p(g, self.a_log);
        let a = g.exp(a_log);
        let a = g.neg(a);
        let d = p(g, self.skip);
        let y = selective_scan(g, xc, delta, a, bm, cm, d);
        let gate = g.silu(z);
        let y = g.mul(y, gate);
        let wo = p(g, self.out);
        let y = g.linear(y, wo, None);
        g.add(x, y)
    }
}

/// Residual stack of [`StateSpaceBlock`]s. One instance is shared by every scan direction.
pub struct StateSpaceMixer {
    pub blocks: Vec<StateSpaceBlock>,
}

impl StateSpaceMixer {
    pub fn register(store: &mut ParamStore, rng: &mut Rng, prefix: &str, c: usize, cfg: &MixerConfig) -> Self {
        let blocks = (0..cfg.layers)
            .map(|i| StateSpaceBlock::register(store, rng, &format!("{prefix}.block{i}"), c, cfg))
            .collect();
        StateSpaceMixer { blocks }
    }
}

impl SequenceMixer for StateSpaceMixer {
    fn name(&self) -> &str {
        "selective_scan"
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, seq: Var) -> Result<Var> {
        ensure(g.shape(seq).len() == 3, || format!("mixer input must be [B, L, C], got {:?}", g.shape(seq)))?;
        Ok(self.blocks.iter().fold(seq, |x, b| b.forward(g, store, x)))
    }

    fn param_ids(&self) -> Vec<ParamId> {
        self.blocks.iter().flat_map(StateSpaceBlock::param_ids).collect()
    }
}

/// Selective state-space recurrence over `u, delta: [B, L, E]` with `a: [E, N]`,
/// input-dependent `b, c: [B, L, N]` and skip `d: [E]`:
///
/// `h_t = exp(Δ_t a) ⊙ h_{t-1} + Δ_t b_t u_t`, `y_t = ⟨c_t, h_t⟩ + d u_t`.
pub fn selective_scan(g: &mut Graph, u: Var, delta: Var, a: Var, b: Var, c: Var, d: Var) -> Var {
    let s = g.shape(u).to_vec();
    let (bs, l, e) = (s[0], s[1], s[2]);
    let n = g.shape(a)[1];
    assert_eq!(g.shape(delta), s.as_slice(), "delta shape");
    assert_eq!(g.shape(a), &[e, n], "a shape");
    assert_eq!(g.shape(b), &[bs, l, n], "b shape");
    assert_eq!(g.shape(c), &[bs, l, n], "c shape");
    assert_eq!(g.shape(d), &[e], "d shape");
    let (uv, dv, av, bv, cv, skip) = (
        g.value(u).data(),
        g.value(delta).data(),
        g.value(a).data(),
        g.value(b).data(),
        g.value(c).data(),
        g.value(d).data(),
    );
    // states[((bi*l + t)*e + ei)*n + k]
    let mut states = vec![0.0; bs * l * e * n];
    let mut y = vec![0.0; bs * l * e];
    let mut h = vec![0.0; n];
    for bi in 0..bs {
        for ei in 0..e {
            h.iter_mut().for_each(|v| *v = 0.0);
            for t in 0..l {
                let ie = (bi * l + t) * e + ei;
                let ib = (bi * l + t) * n;
                let (ut, dt) = (uv[ie], dv[ie]);
                let mut acc = 0.0;
                for k in 0..n {
                    h[k] = (dt * av[ei * n + k]).exp() * h[k] + dt * bv[ib + k] * ut;
                    acc += cv[ib + k] * h[k];
                }
                states[ie * n..ie * n + n].copy_from_slice(&h);
                y[ie] = acc + skip[ei] * ut;
            }
        }
    }
    let value = Tensor::new(&s, y);
    g.custom(&[u, delta, a, b, c, d], value, move |args| {
        let gy = args.grad.data();
        let (uv, dv, av, bv, cv, skip) = (
            args.inputs[0].data(),
            args.inputs[1].data(),
            args.inputs[2].data(),
            args.inputs[3].data(),
            args.inputs[4].data(),
            args.inputs[5].data(),
        );
        let mut du = vec![0.0; bs * l * e];
        let mut ddelta = vec![0.0; bs * l * e];
        let mut da = vec![0.0; e * n];
        let mut db = vec![0.0; bs * l * n];
        let mut dc = vec![0.0; bs * l * n];
        let mut dd = vec![0.0; e];
        let mut carry = vec![0.0; n];
        for bi in 0..bs {
            for ei in 0..e {
                carry.iter_mut().for_each(|v| *v = 0.0);
                for t in (0..l).rev() {
                    let ie = (bi * l + t) * e + ei;
                    let ib = (bi * l + t) * n;
                    let (ut, dt, g_t) = (uv[ie], dv[ie], gy[ie]);
                    dd[ei] += g_t * ut;
                    du[ie] += g_t * skip[ei];
                    let h_t = &states[ie * n..ie * n + n];
                    for k in 0..n {
                        dc[ib + k] += g_t * h_t[k];
                        let dh = carry[k] + g_t * cv[ib + k];
                        let h_prev = if t == 0 { 0.0 } else { states[(ie - e) * n + k] };
                        let ak = av[ei * n + k];
                        let decay = (dt * ak).exp();
                        let through = dh * h_prev * decay;
                        ddelta[ie] += through * ak + dh * bv[ib + k] * ut;
                        da[ei * n + k] += through * dt;
                        db[ib + k] += dh * dt * ut;
                        du[ie] += dh * dt * bv[ib + k];
                        carry[k] = dh * decay;
                    }
                }
            }
        }
        let three = |v: Vec<f64>, last: usize| Tensor::new(&[bs, l, last], v);
        vec![
            args.needs[0].then(|| three(du, e)),
            args.needs[1].then(|| three(ddelta, e)),
            args.needs[2].then(|| Tensor::new(&[e, n], da)),
            args.needs[3].then(|| three(db, n)),
            args.needs[4].then(|| three(dc, n)),
            args.needs[5].then(|| Tensor::new(&[e], dd)),
        ]
    })
}
