use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::linalg::{uniform_init, uniform_vec};

/// One affine layer, `y = x W^T + b` over rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out x in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn init<R: Rng>(rng: &mut R, input: usize, output: usize) -> Self {
        Self {
            weight: uniform_init(rng, output, input, input),
            bias: uniform_vec(rng, output, input),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }
}

/// Four-layer MLP with rectifier activations between layers and a linear
/// output.
#[derive(Debug, Clone, PartialEq)]
pub struct Readout {
    pub layers: Vec<Dense>,
}

pub struct ReadoutCache {
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Array2<f64>>,
}

pub struct DenseGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Readout {
    pub const DEPTH: usize = 4;

    /// `input -> hidden -> hidden -> hidden -> output`.
    pub fn init<R: Rng>(rng: &mut R, input: usize, hidden: usize, output: usize) -> Self {
        let dims = [input, hidden, hidden, hidden, output];
        Self {
            layers: (0..Self::DEPTH).map(|l| Dense::init(rng, dims[l], dims[l + 1])).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, ReadoutCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let mut cur = x.clone();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&cur);
            inputs.push(cur);
            if l == last {
                return (z, ReadoutCache { inputs, pre });
            }
            cur = z.mapv(|v| v.max(0.0));
            pre.push(z);
        }
        unreachable!("readout has at least one layer")
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        self.forward(x).0
    }

    /// Parameter gradients and `dL/dx`.
    pub fn backward(&self, cache: &ReadoutCache, grad_output: &Array2<f64>) -> (Vec<DenseGrad>, Array2<f64>) {
        let mut grads: Vec<DenseGrad> = Vec::with_capacity(self.layers.len());
        let mut g = grad_output.clone();
        for l in (0..self.layers.len()).rev() {
            if l < self.layers.len() - 1 {
                let z = &cache.pre[l];
                g.zip_mut_with(z, |gv, &zv| {
                    if zv <= 0.0 {
                        *gv = 0.0
                    }
                });
            }
            grads.push(DenseGrad {
                weight: g.t().dot(&cache.inputs[l]),
                bias: g.sum_axis(Axis(0)),
            });
            g = g.dot(&self.layers[l].weight);
        }
        grads.reverse();
        (grads, g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn zero_weights_give_final_bias() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut r = Readout::init(&mut rng, 6, 4, 2);
        for l in &mut r.layers {
            l.weight.fill(0.0);
        }
        for l in &mut r.layers[..3] {
            l.bias.fill(0.0);
        }
        let x = Array2::from_shape_fn((3, 6), |(i, j)| (i * 6 + j) as f64 - 7.0);
        let out = r.apply(&x);
        for row in out.rows() {
            assert_eq!(row, r.layers[3].bias);
        }
    }

    #[test]
    fn matches_explicit_chain() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let r = Readout::init(&mut rng, 6, 5, 3);
        let x = Array2::from_shape_fn((1, 6), |(_, j)| (j as f64 * 0.37).sin());
        let out = r.apply(&x);
        let mut v: Vec<f64> = x.row(0).to_vec();
        for (l, layer) in r.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.weight.nrows()];
            for o in 0..layer.weight.nrows() {
                let mut acc = layer.bias[o];
                for i in 0..layer.weight.ncols() {
                    acc += layer.weight[[o, i]] * v[i];
                }
                next[o] = if l < 3 { acc.max(0.0) } else { acc };
            }
            v = next;
        }
        for k in 0..3 {
            assert!((out[[0, k]] - v[k]).abs() < 1e-10);
        }
    }
}
