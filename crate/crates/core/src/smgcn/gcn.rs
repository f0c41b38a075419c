//! Initial-residual, identity-mapped graph convolution:
//!
//! `H_k = sigmoid( ((1 - alpha) P drop(H_{k-1}) + alpha H_0) ((1 - beta_k) I + beta_k W_k) )`
//!
//! with `beta_k = ln(eta / k + 1)` for layers `k = 1..L`.

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::sigmoid;
use crate::seed::{stream_rng, Stream};

pub fn beta(k: usize, eta: f64) -> f64 {
    debug_assert!(k >= 1, "layers are numbered from 1");
    (eta / k as f64 + 1.0).ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcnHyper {
    pub alpha: f64,
    pub eta: f64,
    pub dropout: f64,
}

/// Train mode draws dropout masks from `(seed, step)`; eval mode never drops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train { seed: u64, step: u32 },
    Eval,
}

#[derive(Debug, Clone)]
pub struct LayerCache {
    /// Inverted-dropout multipliers applied to the layer input, if any.
    pub mask: Option<Array2<f64>>,
    /// `(1 - alpha) P drop(H_{k-1}) + alpha H_0`
    pub mixed: Array2<f64>,
    pub output: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct GcnForward {
    pub layers: Vec<LayerCache>,
}

impl GcnForward {
    pub fn output(&self) -> &Array2<f64> {
        &self.layers.last().expect("at least one layer").output
    }
}

pub fn dropout_masks(shape: (usize, usize), layers: usize, p: f64, seed: u64, step: u32) -> Vec<Array2<f64>> {
    let mut rng = stream_rng(seed, Stream::GcnDropout, step);
    let keep = 1.0 / (1.0 - p);
    (0..layers)
        .map(|_| Array2::from_shape_fn(shape, |_| if rng.random::<f64>() < p { 0.0 } else { keep }))
        .collect()
}

pub fn gcn_forward(
    propagation: &Array2<f64>,
    h0: &Array2<f64>,
    weights: &[Array2<f64>],
    hyper: GcnHyper,
    mode: Mode,
) -> Result<GcnForward> {
    if weights.is_empty() {
        return Err(Error::Argument("GCN needs at least one layer".into()));
    }
    let n = h0.nrows();
    if propagation.dim() != (n, n) {
        return Err(Error::Argument(format!(
            "propagation matrix {:?} does not match {n} nodes",
            propagation.dim()
        )));
    }
    let masks = match mode {
        Mode::Train { seed, step } if hyper.dropout > 0.0 => {
            Some(dropout_masks(h0.dim(), weights.len(), hyper.dropout, seed, step))
        }
        _ => None,
    };
    let mut layers: Vec<LayerCache> = Vec::with_capacity(weights.len());
    for (idx, w) in weights.iter().enumerate() {
        let k = idx + 1;
        let b = beta(k, hyper.eta);
        let input = layers.last().map(|l| &l.output).unwrap_or(h0);
        let mask = masks.as_ref().map(|m| m[idx].clone());
        let propagated = match &mask {
            Some(m) => propagation.dot(&(input * m)),
            None => propagation.dot(input),
        };
        let mixed = propagated * (1.0 - hyper.alpha) + &(h0 * hyper.alpha);
        let pre = &mixed * (1.0 - b) + &(mixed.dot(w) * b);
        let output = pre.mapv(sigmoid);
        if let Some(bad) = output.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                location: format!("GCN layer {k}"),
                message: format!("non-finite activation at flat index {bad}"),
            });
        }
        layers.push(LayerCache { mask, mixed, output });
    }
    Ok(GcnForward { layers })
}

/// Gradients with respect to every layer weight and to `H_0`, given
/// `dL/dH_L`.
pub fn gcn_backward(
    propagation: &Array2<f64>,
    weights: &[Array2<f64>],
    hyper: GcnHyper,
    forward: &GcnForward,
    grad_output: &Array2<f64>,
) -> Result<(Vec<Array2<f64>>, Array2<f64>)> {
    if forward.layers.len() != weights.len() {
        return Err(Error::Internal(format!(
            "{} cached layers for {} weights",
            forward.layers.len(),
            weights.len()
        )));
    }
    let mut g_weights = vec![Array2::zeros((0, 0)); weights.len()];
    let mut g_h0 = Array2::<f64>::zeros(grad_output.raw_dim());
    let mut g_out = grad_output.clone();
    for idx in (0..weights.len()).rev() {
        let k = idx + 1;
        let b = beta(k, hyper.eta);
        let cache = &forward.layers[idx];
        let g_pre = &g_out * &cache.output.mapv(|h| h * (1.0 - h));
        g_weights[idx] = cache.mixed.t().dot(&g_pre) * b;
        let g_mixed = &g_pre * (1.0 - b) + &(g_pre.dot(&weights[idx].t()) * b);
        g_h0.scaled_add(hyper.alpha, &g_mixed);
        let mut g_in = propagation.t().dot(&g_mixed) * (1.0 - hyper.alpha);
        if let Some(m) = &cache.mask {
            g_in *= m;
        }
        if idx == 0 {
            g_h0 += &g_in;
        } else {
            g_out = g_in;
        }
    }
    Ok((g_weights, g_h0))
}
