//! Forward and backward passes of the building blocks, one sequence at a
//! time. Activations are row-major `[rows, width]` slices.

use rand::Rng;

use super::params::{Attention, FeedForward, LayerNorm, Linear};
use super::tensor::{matmul, matmul_a_bt, matmul_at_b_acc, Scalar};

pub(crate) const LN_EPS: f64 = 1e-5;

pub(crate) fn linear_forward<T: Scalar>(l: &Linear<T>, x: &[T], rows: usize) -> Vec<T> {
    let (fan_in, fan_out) = (l.weight.shape[0], l.weight.shape[1]);
    let mut y = matmul(x, &l.weight.data, rows, fan_in, fan_out);
    for r in 0..rows {
        for (o, &b) in y[r * fan_out..(r + 1) * fan_out].iter_mut().zip(&l.bias.data) {
            *o += b;
        }
    }
    y
}

/// Accumulates weight and bias gradients into `g`, returns the input gradient.
pub(crate) fn linear_backward<T: Scalar>(l: &Linear<T>, g: &mut Linear<T>, x: &[T], dy: &[T], rows: usize) -> Vec<T> {
    let (fan_in, fan_out) = (l.weight.shape[0], l.weight.shape[1]);
    matmul_at_b_acc(&mut g.weight.data, x, dy, rows, fan_in, fan_out);
    for r in 0..rows {
        for (gb, &d) in g.bias.data.iter_mut().zip(&dy[r * fan_out..(r + 1) * fan_out]) {
            *gb += d;
        }
    }
    matmul_a_bt(dy, &l.weight.data, rows, fan_out, fan_in)
}

#[derive(Debug, Clone)]
pub(crate) struct NormCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

pub(crate) fn layer_norm_forward<T: Scalar>(ln: &LayerNorm<T>, x: &[T], rows: usize) -> (Vec<T>, NormCache<T>) {
    let d = ln.gain.len();
    let mut y = vec![T::zero(); rows * d];
    let mut xhat = vec![T::zero(); rows * d];
    let mut rstd = vec![T::zero(); rows];
    let inv_d = T::lit(1.0 / d as f64);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + T::lit(LN_EPS)).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (row[j] - mean) * rs;
            xhat[r * d + j] = h;
            y[r * d + j] = h * ln.gain.data[j] + ln.bias.data[j];
        }
    }
    (y, NormCache { xhat, rstd })
}

pub(crate) fn layer_norm_backward<T: Scalar>(
    ln: &LayerNorm<T>,
    g: &mut LayerNorm<T>,
    cache: &NormCache<T>,
    dy: &[T],
    rows: usize,
) -> Vec<T> {
    let d = ln.gain.len();
    let inv_d = T::lit(1.0 / d as f64);
    let mut dx = vec![T::zero(); rows * d];
    let mut dxhat = vec![T::zero(); d];
    for r in 0..rows {
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_xhat = T::zero();
        for j in 0..d {
            g.gain.data[j] += dyr[j] * xh[j];
            g.bias.data[j] += dyr[j];
            dxhat[j] = dyr[j] * ln.gain.data[j];
            mean_dxhat += dxhat[j];
            mean_dxhat_xhat += dxhat[j] * xh[j];
        }
        mean_dxhat *= inv_d;
        mean_dxhat_xhat *= inv_d;
        for j in 0..d {
            dx[r * d + j] = cache.rstd[r] * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
    dx
}

const GELU_K: f64 = 0.044_715;

/// tanh approximation of GELU
pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let u = c * (x + T::lit(GELU_K) * x * x * x);
    T::lit(0.5) * x * (T::one() + u.tanh())
}

pub(crate) fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let u = c * (x + T::lit(GELU_K) * x * x * x);
    let t = u.tanh();
    let du = c * (T::one() + T::lit(3.0 * GELU_K) * x * x);
    T::lit(0.5) * (T::one() + t) + T::lit(0.5) * x * (T::one() - t * t) * du
}

#[derive(Debug, Clone)]
pub(crate) struct FfnCache<T> {
    x: Vec<T>,
    pre: Vec<T>,
    act: Vec<T>,
}

pub(crate) fn ffn_forward<T: Scalar>(f: &FeedForward<T>, x: &[T], rows: usize) -> (Vec<T>, FfnCache<T>) {
    let pre = linear_forward(&f.fc1, x, rows);
    let act: Vec<T> = pre.iter().map(|&v| gelu(v)).collect();
    let y = linear_forward(&f.fc2, &act, rows);
    (
        y,
        FfnCache {
            x: x.to_vec(),
            pre,
            act,
        },
    )
}

pub(crate) fn ffn_backward<T: Scalar>(
    f: &FeedForward<T>,
    g: &mut FeedForward<T>,
    cache: &FfnCache<T>,
    dy: &[T],
    rows: usize,
) -> Vec<T> {
    let mut dact = linear_backward(&f.fc2, &mut g.fc2, &cache.act, dy, rows);
    for (d, &p) in dact.iter_mut().zip(&cache.pre) {
        *d *= gelu_grad(p);
    }
    linear_backward(&f.fc1, &mut g.fc1, &cache.x, &dact, rows)
}

/// Which keys a query may attend to.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AttnMask<'a> {
    /// `true` for real (non-pad) key positions.
    pub keys: &'a [bool],
    /// Query `i` sees keys `j <= i` only.
    pub causal: bool,
}

impl AttnMask<'_> {
    fn allows(&self, i: usize, j: usize) -> bool {
        self.keys[j] && (!self.causal || j <= i)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct AttnCache<T> {
    xq: Vec<T>,
    xkv: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// `[heads, nq, nk]`
    probs: Vec<T>,
    context: Vec<T>,
    nq: usize,
    nk: usize,
}

pub(crate) fn attention_forward<T: Scalar>(
    a: &Attention<T>,
    xq: &[T],
    nq: usize,
    xkv: &[T],
    nk: usize,
    mask: AttnMask<'_>,
    heads: usize,
) -> (Vec<T>, AttnCache<T>) {
    let d = a.query.weight.shape[1];
    let dh = d / heads;
    let scale = T::lit(1.0 / (dh as f64).sqrt());
    let q = linear_forward(&a.query, xq, nq);
    let k = linear_forward(&a.key, xkv, nk);
    let v = linear_forward(&a.value, xkv, nk);
    let mut probs = vec![T::zero(); heads * nq * nk];
    let mut context = vec![T::zero(); nq * d];
    let mut scores = vec![T::zero(); nk];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..nq {
            let qi = &q[i * d + off..i * d + off + dh];
            let mut max = T::neg_infinity();
            for j in 0..nk {
                if mask.allows(i, j) {
                    let kj = &k[j * d + off..j * d + off + dh];
                    let s = qi.iter().zip(kj).map(|(&x, &y)| x * y).sum::<T>() * scale;
                    scores[j] = s;
                    if s > max {
                        max = s;
                    }
                }
            }
            if max == T::neg_infinity() {
                continue;
            }
            let prow = &mut probs[(h * nq + i) * nk..(h * nq + i + 1) * nk];
            let mut z = T::zero();
            for j in 0..nk {
                if mask.allows(i, j) {
                    let e = (scores[j] - max).exp();
                    prow[j] = e;
                    z += e;
                }
            }
            let ctx = &mut context[i * d + off..i * d + off + dh];
            for j in 0..nk {
                if prow[j] != T::zero() {
                    prow[j] = prow[j] / z;
                    let vj = &v[j * d + off..j * d + off + dh];
                    for (c, &vv) in ctx.iter_mut().zip(vj) {
                        *c += prow[j] * vv;
                    }
                }
            }
        }
    }
    let out = linear_forward(&a.output, &context, nq);
    (
        out,
        AttnCache {
            xq: xq.to_vec(),
            xkv: xkv.to_vec(),
            q,
            k,
            v,
            probs,
            context,
            nq,
            nk,
        },
    )
}

/// Returns gradients with respect to the query-side and key/value-side inputs.
pub(crate) fn attention_backward<T: Scalar>(
    a: &Attention<T>,
    g: &mut Attention<T>,
    c: &AttnCache<T>,
    dout: &[T],
    heads: usize,
) -> (Vec<T>, Vec<T>) {
    let d = a.query.weight.shape[1];
    let dh = d / heads;
    let (nq, nk) = (c.nq, c.nk);
    let scale = T::lit(1.0 / (dh as f64).sqrt());
    let dcontext = linear_backward(&a.output, &mut g.output, &c.context, dout, nq);
    let mut dq = vec![T::zero(); nq * d];
    let mut dk = vec![T::zero(); nk * d];
    let mut dv = vec![T::zero(); nk * d];
    let mut dp = vec![T::zero(); nk];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..nq {
            let prow = &c.probs[(h * nq + i) * nk..(h * nq + i + 1) * nk];
            let dci = &dcontext[i * d + off..i * d + off + dh];
            let mut dot = T::zero();
            for j in 0..nk {
                if prow[j] == T::zero() {
                    dp[j] = T::zero();
                    continue;
                }
                let vj = &c.v[j * d + off..j * d + off + dh];
                dp[j] = dci.iter().zip(vj).map(|(&x, &y)| x * y).sum();
                dot += dp[j] * prow[j];
                for (dvv, &dc) in dv[j * d + off..j * d + off + dh].iter_mut().zip(dci) {
                    *dvv += prow[j] * dc;
                }
            }
            for j in 0..nk {
                if prow[j] == T::zero() {
                    continue;
                }
                let ds = prow[j] * (dp[j] - dot) * scale;
                for t in 0..dh {
                    dq[i * d + off + t] += ds * c.k[j * d + off + t];
                    dk[j * d + off + t] += ds * c.q[i * d + off + t];
                }
            }
        }
    }
    let dxq = linear_backward(&a.query, &mut g.query, &c.xq, &dq, nq);
    let mut dxkv = linear_backward(&a.key, &mut g.key, &c.xkv, &dk, nk);
    let dxv = linear_backward(&a.value, &mut g.value, &c.xkv, &dv, nk);
    super::tensor::add_assign(&mut dxkv, &dxv);
    (dxq, dxkv)
}

/// Inverted-dropout mask, `None` when dropout is inactive.
pub(crate) fn dropout_mask<T: Scalar, R: Rng + ?Sized>(n: usize, rate: f64, rng: Option<&mut R>) -> Option<Vec<T>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    Some(
        (0..n)
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect(),
    )
}

pub(crate) fn apply_mask<T: Scalar>(x: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        for (v, &k) in x.iter_mut().zip(m) {
            *v *= k;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
