//! Small dense helpers shared by the numeric modules.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;

pub fn dot(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn norm(a: ArrayView1<f64>) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity, `None` if either vector has zero norm.
pub fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Option<f64> {
    let na2 = dot(a, a);
    let nb2 = dot(b, b);
    if na2 == 0.0 || nb2 == 0.0 {
        return None;
    }
    // sqrt of the product keeps cos(a, a) == 1 exactly
    Some(dot(a, b) / (na2 * nb2).sqrt())
}

/// Gradient of `cos(a, b)` with respect to `a`.
pub fn cosine_grad_a(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let na = norm(a);
    let nb = norm(b);
    let c = dot(a, b) / (na * nb);
    let inv = 1.0 / (na * nb);
    let scale = c / (na * na);
    Array1::from_shape_fn(a.len(), |k| b[k] * inv - a[k] * scale)
}

/// Uniform fan-in initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn uniform_init<R: Rng>(rng: &mut R, rows: usize, cols: usize, fan_in: usize) -> Array2<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..=bound))
}

pub fn uniform_vec<R: Rng>(rng: &mut R, len: usize, fan_in: usize) -> Array1<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array1::from_shape_fn(len, |_| rng.random_range(-bound..=bound))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn all_finite(m: ArrayView2<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Largest eigenvalue magnitude of a symmetric matrix by power iteration.
pub fn spectral_radius(m: ArrayView2<f64>, iters: usize) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    // deterministic, non-degenerate start vector
    let mut v = Array1::from_shape_fn(n, |i| 1.0 + (i as f64 * 0.618_033_988_7).fract());
    let mut lambda = 0.0;
    for _ in 0..iters {
        let w = m.dot(&v);
        let nw = norm(w.view());
        if nw == 0.0 {
            return 0.0;
        }
        lambda = nw / norm(v.view());
        v = w / nw;
    }
    lambda
}
