//! Finite-difference checks for every differentiable op on the tape.

use smloc_grad::gradcheck::check_input;
use smloc_grad::{BatchNormParams, Graph, Mode, ParamStore, Tensor, Var};

fn noise(shape: &[usize], seed: u64) -> Tensor {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    Tensor::from_fn(shape, |_| {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    })
}

/// Weighted sum so every output coordinate carries a distinct gradient.
fn probe(g: &mut Graph, y: Var, seed: u64) -> Var {
    let w = g.constant(noise(g.shape(y), seed));
    let p = g.mul(y, w);
    g.sum(p)
}

fn check_unary(shape: &[usize], f: impl Fn(&mut Graph, Var) -> Var) {
    let x0 = noise(shape, 7);
    let eval = |x: &Tensor| {
        let mut g = Graph::new(Mode::Train);
        let x = g.leaf(x.clone());
        let y = f(&mut g, x);
        let l = probe(&mut g, y, 99);
        (g, x, l)
    };
    let (g, x, l) = eval(&x0);
    let grads = g.backward(l);
    let analytic = grads.get(x).unwrap().clone();
    let report = check_input(&x0, &analytic, |t| { let (g, _, l) = eval(t); g.value(l).item() }, 1e-6, 200);
    assert!(report.passes(1e-6), "{report:?}");
}

#[test]
fn pointwise_ops() {
    check_unary(&[3, 4], |g, x| g.sigmoid(x));
    check_unary(&[3, 4], |g, x| g.gelu(x));
    check_unary(&[3, 4], |g, x| g.silu(x));
    check_unary(&[3, 4], |g, x| g.softplus(x));
    check_unary(&[3, 4], |g, x| g.exp(x));
    check_unary(&[3, 4], |g, x| g.scale(x, -2.5));
    check_unary(&[3, 4], |g, x| g.mul(x, x));
    check_unary(&[3, 4], |g, x| { let s = g.sigmoid(x); g.sub(x, s) });
    check_unary(&[3, 4], |g, x| { let s = g.exp(x); g.add_n(&[x, s, x]) });
    check_unary(&[3, 4], |g, x| g.mean(x));
}

#[test]
fn linear_and_broadcast_ops() {
    let w = noise(&[4, 5], 3);
    let b = noise(&[5], 4);
    check_unary(&[2, 3, 4], |g, x| {
        let w = g.leaf(w.clone());
        let b = g.leaf(b.clone());
        g.linear(x, w, Some(b))
    });
    // gradient with respect to the weight
    let x = noise(&[6, 4], 5);
    check_unary(&[4, 5], |g, w| {
        let x = g.constant(x.clone());
        g.linear(x, w, None)
    });
    let c = noise(&[4], 6);
    check_unary(&[2, 3, 4], |g, x| {
        let c = g.constant(c.clone());
        let y = g.mul_last(x, c);
        g.add_last(y, c)
    });
    let x = noise(&[2, 3, 4], 8);
    check_unary(&[4], |g, c| {
        let x = g.constant(x.clone());
        let y = g.mul_last(x, c);
        g.add_last(y, c)
    });
}

#[test]
fn conv_ops() {
    let w3 = noise(&[4, 3, 3, 3], 11);
    let w1 = noise(&[2, 3, 1, 1], 12);
    let b = noise(&[4], 13);
    check_unary(&[2, 3, 5, 6], |g, x| {
        let w = g.constant(w3.clone());
        let b = g.constant(b.clone());
        g.conv2d(x, w, Some(b))
    });
    check_unary(&[2, 3, 5, 6], |g, x| {
        let w = g.constant(w1.clone());
        g.conv2d(x, w, None)
    });
    let x = noise(&[2, 3, 5, 6], 14);
    check_unary(&[4, 3, 3, 3], |g, w| {
        let x = g.constant(x.clone());
        g.conv2d(x, w, None)
    });
    check_unary(&[4], |g, b| {
        let x = g.constant(x.clone());
        let w = g.constant(w3.clone());
        g.conv2d(x, w, Some(b))
    });
    let cw = noise(&[3, 4], 15);
    let cb = noise(&[3], 16);
    check_unary(&[2, 7, 3], |g, x| {
        let w = g.constant(cw.clone());
        let b = g.constant(cb.clone());
        g.causal_conv1d(x, w, b)
    });
    let cx = noise(&[2, 7, 3], 17);
    check_unary(&[3, 4], |g, w| {
        let x = g.constant(cx.clone());
        let b = g.constant(cb.clone());
        g.causal_conv1d(x, w, b)
    });
}

#[test]
fn layout_ops() {
    check_unary(&[2, 3, 4, 4], |g, x| g.patchify(x, 2));
    check_unary(&[2, 8, 3, 2], |g, x| g.pixel_shuffle(x, 2));
    check_unary(&[2, 3, 3, 2], |g, x| g.upsample_nearest(x, 3));
    check_unary(&[2, 3, 5, 7], |g, x| g.adaptive_avg_pool2d(x, 2, 3));
    check_unary(&[2, 3, 2, 5], |g, x| g.nchw_to_tokens(x));
    check_unary(&[2, 10, 3], |g, x| g.tokens_to_nchw(x, 2, 5));
    check_unary(&[2, 5, 3], |g, x| g.gather_rows(x, &[4, 0, 0, 2, 1]));
    check_unary(&[2, 5, 3], |g, x| g.narrow(x, 1, 1, 3));
    check_unary(&[2, 5, 3], |g, x| {
        let y = g.sigmoid(x);
        g.concat(&[x, y, x], 1)
    });
    check_unary(&[2, 5, 3], |g, x| g.reshape(x, &[10, 3]));
    check_unary(&[2, 4, 3, 3], |g, x| g.glu_channels(x));
}

#[test]
fn normalization_ops() {
    let gamma = noise(&[5], 21);
    let beta = noise(&[5], 22);
    check_unary(&[2, 3, 5], |g, x| {
        let ga = g.constant(gamma.clone());
        let be = g.constant(beta.clone());
        g.layer_norm(x, ga, be, 1e-5)
    });
    let mut store = ParamStore::new();
    let bn = BatchNormParams::register(&mut store, "bn", 3);
    check_unary(&[2, 3, 3, 4], |g, x| g.batch_norm2d(&store, x, &bn));
}

#[test]
fn batch_norm_queues_running_statistics_only_in_train_mode() {
    let mut store = ParamStore::new();
    let bn = BatchNormParams::register(&mut store, "bn", 2);
    let x = noise(&[3, 2, 2, 2], 5);
    let mut g = Graph::new(Mode::Train);
    let xv = g.constant(x.clone());
    g.batch_norm2d(&store, xv, &bn);
    assert_eq!(g.take_buffer_updates().len(), 2);
    let mut g = Graph::new(Mode::Eval);
    let xv = g.constant(x);
    let y = g.batch_norm2d(&store, xv, &bn);
    assert!(g.take_buffer_updates().is_empty());
    // default running stats are mean 0, var 1, so eval mode is nearly the identity
    assert!(g.value(y).max_abs_diff(g.value(xv)) < 1e-4);
}
