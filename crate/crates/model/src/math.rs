//! Dense math pieces shared by the forward and backward passes.

use crate::scalar::Real;
use ndarray::{Array1, Array2};

/// Variance floor inside RMS normalization.
pub(crate) const RMS_EPS: f64 = 1e-6;

/// Row-wise RMS normalization with a learned gain.
pub(crate) fn rmsnorm<F: Real>(x: &Array2<F>, gain: &Array1<F>) -> Array2<F> {
    let (m, d) = x.dim();
    debug_assert_eq!(gain.len(), d);
    let mut y = Array2::zeros((m, d));
    let g = gain.as_slice().expect("contiguous");
    let eps = F::from_f64(RMS_EPS);
    let dim = F::from_f64(d as f64);
    for (xr, mut yr) in x.rows().into_iter().zip(y.rows_mut()) {
        let xs = xr.as_slice().expect("contiguous");
        let ys = yr.as_slice_mut().expect("contiguous");
        let ms = xs.iter().map(|&v| v * v).sum::<F>() / dim;
        let inv = (ms + eps).sqrt().recip();
        for i in 0..d {
            ys[i] = xs[i] * inv * g[i];
        }
    }
    y
}

/// Backward of [`rmsnorm`]: returns dL/dx and accumulates the gain gradient.
pub(crate) fn rmsnorm_backward<F: Real>(
    x: &Array2<F>,
    gain: &Array1<F>,
    dy: &Array2<F>,
    dgain: &mut Array1<F>,
) -> Array2<F> {
    let (m, d) = x.dim();
    let mut dx = Array2::zeros((m, d));
    let g = gain.as_slice().expect("contiguous");
    let dg = dgain.as_slice_mut().expect("contiguous");
    let eps = F::from_f64(RMS_EPS);
    let dim = F::from_f64(d as f64);
    for t in 0..m {
        let xs = x.row(t);
        let xs = xs.as_slice().expect("contiguous");
        let dys = dy.row(t);
        let dys = dys.as_slice().expect("contiguous");
        let mut dxr = dx.row_mut(t);
        let dxs = dxr.as_slice_mut().expect("contiguous");
        let ms = xs.iter().map(|&v| v * v).sum::<F>() / dim;
        let inv = (ms + eps).sqrt().recip();
        // dot = sum_i dy_i * g_i * x_i
        let mut dot = F::zero();
        for i in 0..d {
            dot += dys[i] * g[i] * xs[i];
        }
        let coef = inv * inv * inv * dot / dim;
        for i in 0..d {
            dxs[i] = inv * g[i] * dys[i] - coef * xs[i];
            dg[i] += dys[i] * xs[i] * inv;
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// GELU in its tanh form, element-wise.
pub(crate) fn gelu<F: Real>(x: &Array2<F>) -> Array2<F> {
    let c = F::from_f64(GELU_C);
    let a = F::from_f64(GELU_A);
    let half = F::from_f64(0.5);
    x.mapv(|v| {
        let u = c * (v + a * v * v * v);
        half * v * (F::one() + u.tanh())
    })
}

/// Element-wise `dy * gelu'(pre)`.
pub(crate) fn gelu_vjp<F: Real>(pre: &Array2<F>, dy: &Array2<F>) -> Array2<F> {
    let c = F::from_f64(GELU_C);
    let a = F::from_f64(GELU_A);
    let three_a = F::from_f64(3.0 * GELU_A);
    let half = F::from_f64(0.5);
    let mut out = dy.clone();
    out.zip_mut_with(pre, |d, &v| {
        let u = c * (v + a * v * v * v);
        let t = u.tanh();
        let sech2 = F::one() - t * t;
        let deriv = half * (F::one() + t) + half * v * sech2 * c * (F::one() + three_a * v * v);
        *d *= deriv;
    });
    out
}

/// Numerically safe softmax over a logits slice, in f64.
pub fn softmax_f64<F: Real>(logits: &[F]) -> Vec<f64> {
    let max = logits
        .iter()
        .map(|&v| v.to_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&v| (v.to_f64() - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}
