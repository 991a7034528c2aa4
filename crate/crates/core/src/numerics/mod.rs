//! Dense kernels, random streams and the optimizer shared by every network.

mod adam;
mod matrix;
mod rng;

pub use adam::{AdamConfig, AdamState};
pub use matrix::{matmul, Matrix};
pub use rng::Rng;

pub(crate) use matrix::{axpy, dot, outer_acc, vec_mat, vec_mat_t_acc};

use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Softmax over the entries where `mask` is true; masked entries come out as
/// exactly zero.
pub fn masked_softmax(scores: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if scores.len() != mask.len() {
        return Err(Error::shape(format!(
            "{} scores but {} mask entries",
            scores.len(),
            mask.len()
        )));
    }
    let mut out = vec![0.0; scores.len()];
    masked_softmax_into(scores, mask, &mut out)?;
    Ok(out)
}

pub(crate) fn masked_softmax_into(scores: &[f64], mask: &[bool], out: &mut [f64]) -> Result<()> {
    let max = scores
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&s, _)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::EmptyMask);
    }
    let mut total = 0.0;
    for ((o, &s), &m) in out.iter_mut().zip(scores).zip(mask) {
        *o = if m { (s - max).exp() } else { 0.0 };
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
    Ok(())
}

/// What the layer-norm backward pass needs from its forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormCache {
    pub normalized: Vec<f64>,
    pub inv_std: f64,
}

pub fn layer_norm_fwd(
    x: &[f64],
    gain: &[f64],
    offset: &[f64],
    eps: f64,
) -> Result<(Vec<f64>, LayerNormCache)> {
    if gain.len() != x.len() || offset.len() != x.len() {
        return Err(Error::shape(format!(
            "layer norm over {} values with {} gains and {} offsets",
            x.len(),
            gain.len(),
            offset.len()
        )));
    }
    let mut y = vec![0.0; x.len()];
    let cache = layer_norm_into(x, gain, offset, eps, &mut y);
    Ok((y, cache))
}

pub(crate) fn layer_norm_into(
    x: &[f64],
    gain: &[f64],
    offset: &[f64],
    eps: f64,
    y: &mut [f64],
) -> LayerNormCache {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + eps).sqrt();
    let normalized: Vec<f64> = x.iter().map(|v| (v - mean) * inv_std).collect();
    for i in 0..x.len() {
        y[i] = gain[i] * normalized[i] + offset[i];
    }
    LayerNormCache {
        normalized,
        inv_std,
    }
}

/// Returns `(dx, dgain, doffset)`.
pub fn layer_norm_bwd(
    cache: &LayerNormCache,
    gain: &[f64],
    dy: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n = cache.normalized.len();
    if gain.len() != n || dy.len() != n {
        return Err(Error::shape("layer norm backward length mismatch"));
    }
    let mut dx = vec![0.0; n];
    let mut dgain = vec![0.0; n];
    let mut doffset = vec![0.0; n];
    layer_norm_bwd_acc(cache, gain, dy, &mut dx, &mut dgain, &mut doffset);
    Ok((dx, dgain, doffset))
}

pub(crate) fn layer_norm_bwd_acc(
    cache: &LayerNormCache,
    gain: &[f64],
    dy: &[f64],
    dx: &mut [f64],
    dgain: &mut [f64],
    doffset: &mut [f64],
) {
    let n = cache.normalized.len();
    let xhat = &cache.normalized;
    let mut mean_d = 0.0;
    let mut mean_dx = 0.0;
    for i in 0..n {
        dgain[i] += dy[i] * xhat[i];
        doffset[i] += dy[i];
        let d = dy[i] * gain[i];
        mean_d += d;
        mean_dx += d * xhat[i];
    }
    mean_d /= n as f64;
    mean_dx /= n as f64;
    for i in 0..n {
        let d = dy[i] * gain[i];
        dx[i] += cache.inv_std * (d - mean_d - xhat[i] * mean_dx);
    }
}

#[inline]
pub(crate) fn relu_in_place(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}
