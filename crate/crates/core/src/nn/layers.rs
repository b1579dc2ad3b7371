//! Transformer building blocks on top of [`Graph`].

use std::f64::consts::PI;

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `y = x W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub dims: (usize, usize),
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        Linear {
            w: store.add_uniform(format!("{name}.w"), [d_in, d_out], d_in, rng),
            b: store.add_uniform(format!("{name}.b"), [1, d_out], d_in, rng),
            dims: (d_in, d_out),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::filled([1, dim], T::one())),
            beta: store.add(format!("{name}.beta"), Tensor::zeros([1, dim])),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        self.forward_modulated(g, x, None)
    }

    /// Layer norm whose affine rows are offset by `(scale, shift)`, each `[1, dim]`.
    pub fn forward_modulated<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        x: Var,
        modulation: Option<(Var, Var)>,
    ) -> Result<Var> {
        let mut gamma = g.param(self.gamma);
        let mut beta = g.param(self.beta);
        if let Some((scale, shift)) = modulation {
            gamma = g.add(gamma, scale)?;
            beta = g.add(beta, shift)?;
        }
        g.layer_norm(x, gamma, beta)
    }
}

/// Two-layer GELU MLP.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        FeedForward {
            up: Linear::new(store, &format!("{name}.up"), dim, hidden, rng),
            down: Linear::new(store, &format!("{name}.down"), hidden, dim, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.up.forward(g, x)?;
        let h = g.gelu(h);
        self.down.forward(g, h)
    }
}

/// Multi-head scaled dot-product attention on already projected inputs:
/// `softmax(Q K^T / sqrt(d_head) + mask) V` per head, heads concatenated.
///
/// `mask` is additive (`0` or `-inf`), shape `[queries, keys]`.
pub fn attention<T: Scalar>(
    g: &mut Graph<'_, T>,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&Tensor<T>>,
    heads: usize,
) -> Result<Var> {
    let [nq, d] = g.shape(q);
    let [nk, dk] = g.shape(k);
    if dk != d || g.shape(v) != [nk, d] {
        return Err(Error::Shape {
            op: "attention",
            left: [nq, d],
            right: [nk, dk],
        });
    }
    if heads == 0 || d % heads != 0 {
        return Err(Error::Domain(format!(
            "head count {heads} does not divide model dimension {d}"
        )));
    }
    if let Some(m) = mask {
        if m.shape() != [nq, nk] {
            return Err(Error::Shape {
                op: "attention mask",
                left: [nq, nk],
                right: m.shape(),
            });
        }
    }
    let dh = d / heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mask = mask.map(|m| g.constant(m.clone()));
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice_cols(q, h * dh, dh)?,
                g.slice_cols(k, h * dh, dh)?,
                g.slice_cols(v, h * dh, dh)?,
            )
        };
        let scores = g.matmul_nt(qh, kh)?;
        let mut scores = g.scale(scores, scale);
        if let Some(m) = mask {
            scores = g.add(scores, m)?;
        }
        let weights = g.softmax(scores);
        outs.push(g.matmul(weights, vh)?);
    }
    if heads == 1 {
        Ok(outs[0])
    } else {
        g.concat_cols(&outs)
    }
}

/// Additive mask hiding keys after each query position.
pub fn causal_mask<T: Scalar>(n: usize) -> Tensor<T> {
    let mut t = Tensor::zeros([n, n]);
    for i in 0..n {
        for j in i + 1..n {
            t.data_mut()[i * n + j] = T::neg_infinity();
        }
    }
    t
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        MultiHeadAttention {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, rng),
            out: Linear::new(store, &format!("{name}.out"), dim, dim, rng),
            heads,
        }
    }

    /// Queries from `x`, keys and values from `context`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        x: Var,
        context: Var,
        mask: Option<&Tensor<T>>,
    ) -> Result<Var> {
        let q = self.q.forward(g, x)?;
        let k = self.k.forward(g, context)?;
        let v = self.v.forward(g, context)?;
        let a = attention(g, q, k, v, mask, self.heads)?;
        self.out.forward(g, a)
    }
}

/// Interleaved `[sin(2πv/λ_0), cos(2πv/λ_0), sin(2πv/λ_1), ...]` with `dim / 2`
/// wavelengths spaced geometrically from `wavelengths.0` to `wavelengths.1`.
pub fn sinusoidal_embed(value: f64, dim: usize, wavelengths: (f64, f64)) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::Domain(format!("sinusoidal dimension must be even, got {dim}")));
    }
    let (lo, hi) = wavelengths;
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::Domain(format!("bad wavelength range ({lo}, {hi})")));
    }
    let half = dim / 2;
    let ratio = if half > 1 { (hi / lo).powf(1.0 / (half - 1) as f64) } else { 1.0 };
    let mut out = Vec::with_capacity(dim);
    let mut lambda = lo;
    for i in 0..half {
        if i == half - 1 && half > 1 {
            lambda = hi;
        }
        let angle = 2.0 * PI * value / lambda;
        out.push(angle.sin());
        out.push(angle.cos());
        lambda *= ratio;
    }
    Ok(out)
}

/// [`sinusoidal_embed`] for several values, stacked as rows.
pub fn sinusoidal_rows<T: Scalar>(values: &[f64], dim: usize, wavelengths: (f64, f64)) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(values.len() * dim);
    for &v in values {
        data.extend(sinusoidal_embed(v, dim, wavelengths)?.into_iter().map(T::of));
    }
    Tensor::new([values.len(), dim], data)
}
