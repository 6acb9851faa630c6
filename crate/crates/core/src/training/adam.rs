use crate::error::{Error, Result};
use crate::model::{Parameters, Scalar};

/// First and second moments plus the update count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Parameters<T>,
    pub v: Parameters<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &Parameters<T>) -> Self {
        AdamState {
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// Bias-corrected Adam update in place. Fails before touching anything if a
/// gradient entry is not finite.
pub fn adam_step<T: Scalar>(
    params: &mut Parameters<T>,
    grads: &Parameters<T>,
    state: &mut AdamState<T>,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) -> Result<()> {
    for (name, _, g) in grads.tensors() {
        if g.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(name));
        }
    }
    for ((name, _, p), (_, _, g)) in params.tensors().into_iter().zip(grads.tensors()) {
        if p.shape != g.shape {
            return Err(Error::ShapeMismatch {
                name,
                expected: p.shape.clone(),
                found: g.shape.clone(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(betas.0), T::lit(betas.1));
    let c1 = T::lit(1.0 - betas.0.powi(t));
    let c2 = T::lit(1.0 - betas.1.powi(t));
    let lr = T::lit(lr);
    let eps = T::lit(eps);
    let one = T::one();
    let grads = grads.tensors();
    let mut ms = state.m.tensors_mut();
    let mut vs = state.v.tensors_mut();
    for (i, (_, _, p)) in params.tensors_mut().into_iter().enumerate() {
        let g = &grads[i].2.data;
        let m = &mut ms[i].2.data;
        let v = &mut vs[i].2.data;
        for j in 0..p.data.len() {
            m[j] = b1 * m[j] + (one - b1) * g[j];
            v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
            let mhat = m[j] / c1;
            let vhat = v[j] / c2;
            p.data[j] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
