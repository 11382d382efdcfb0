//! Pointwise arithmetic, activations and full reductions.

use crate::{Graph, Tensor, Var};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Exact (erf-based) GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl Graph {
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.custom(&[a, b], value, |args| vec![Some(args.grad.clone()), Some(args.grad.clone())])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.custom(&[a, b], value, |args| {
            vec![Some(args.grad.clone()), Some(args.grad.map(|g| -g))]
        })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.custom(&[a, b], value, |args| {
            let ga = args.needs[0].then(|| args.grad.zip_map(args.inputs[1], |g, y| g * y));
            let gb = args.needs[1].then(|| args.grad.zip_map(args.inputs[0], |g, x| g * x));
            vec![ga, gb]
        })
    }

    /// Sums any number of same-shaped values.
    pub fn add_n(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "add_n of nothing");
        let mut value = self.value(xs[0]).clone();
        for &x in &xs[1..] {
            value.add_assign(self.value(x));
        }
        let n = xs.len();
        self.custom(xs, value, move |args| (0..n).map(|_| Some(args.grad.clone())).collect())
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let value = self.value(x).map(|v| v * s);
        self.custom(&[x], value, move |args| vec![Some(args.grad.map(|g| g * s))])
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        let value = self.value(x).map(|v| v + s);
        self.custom(&[x], value, |args| vec![Some(args.grad.clone())])
    }

    /// Applies `f` pointwise; `df(x, y)` is the derivative given input `x` and output `y`.
    pub fn unary(
        &mut self,
        x: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var {
        let value = self.value(x).map(f);
        self.custom(&[x], value, move |args| {
            let xs = args.inputs[0].data();
            let ys = args.output.data();
            let g = args.grad.data();
            let data = (0..g.len()).map(|i| g[i] * df(xs[i], ys[i])).collect();
            vec![Some(Tensor::new(args.grad.shape(), data))]
        })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, gelu, |x, _| gelu_grad(x))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(x, silu, |x, _| {
            let s = sigmoid(x);
            s * (1.0 + x * (1.0 - s))
        })
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, |x, _| sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, |_, y| y)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let shape = self.shape(x).to_vec();
        self.custom(&[x], value, move |args| vec![Some(Tensor::full(&shape, args.grad.item()))])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }
}
