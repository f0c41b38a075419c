use ndarray::{Array1, ArrayView1};
use rand::Rng;

use crate::seed::{stream_rng, Stream};

/// Two inverted-dropout views of `x`: each entry is kept with probability
/// `1 - p` and rescaled by `1 / (1 - p)`.
pub fn augment_feature(x: ArrayView1<f64>, p: f64, seed: u64) -> (Array1<f64>, Array1<f64>) {
    augment_with(x, p, &mut stream_rng(seed, Stream::Augment, 0))
}

pub fn augment_with<R: Rng>(x: ArrayView1<f64>, p: f64, rng: &mut R) -> (Array1<f64>, Array1<f64>) {
    assert!((0.0..1.0).contains(&p), "dropout must lie in [0, 1)");
    (dropout_view(x, p, rng), dropout_view(x, p, rng))
}

pub fn dropout_view<R: Rng>(x: ArrayView1<f64>, p: f64, rng: &mut R) -> Array1<f64> {
    if p == 0.0 {
        return x.to_owned();
    }
    let scale = 1.0 / (1.0 - p);
    x.mapv(|v| if rng.random::<f64>() < p { 0.0 } else { v * scale })
}
