use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{uniform_init, uniform_vec};
use crate::modality::Modality;

/// Affine map `h = W x + b` from raw features into the shared space.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    pub modality: Modality,
    /// `d x F`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl HeadGrad {
    pub fn zeros_like(head: &ProjectionHead) -> Self {
        Self {
            weight: Array2::zeros(head.weight.raw_dim()),
            bias: Array1::zeros(head.bias.raw_dim()),
        }
    }
}

impl ProjectionHead {
    pub fn init<R: Rng>(rng: &mut R, modality: Modality, input_dim: usize, out_dim: usize) -> Self {
        Self {
            modality,
            weight: uniform_init(rng, out_dim, input_dim, input_dim),
            bias: uniform_vec(rng, out_dim, input_dim),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn project(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Argument(format!(
                "{} head expects {} inputs, got {}",
                self.modality.name(),
                self.input_dim(),
                x.len()
            )));
        }
        Ok(self.weight.dot(&x) + &self.bias)
    }

    /// Project each row of `x` (`N x F`) to get `N x d`.
    pub fn project_rows(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Argument(format!(
                "{} head expects {} inputs, got {}",
                self.modality.name(),
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(x.dot(&self.weight.t()) + &self.bias)
    }

    /// Accumulate parameter gradients given `dL/dH` for `H = project_rows(X)`.
    pub fn accumulate_grad(&self, grad: &mut HeadGrad, x: ArrayView2<f64>, g_out: ArrayView2<f64>) {
        grad.weight += &g_out.t().dot(&x);
        grad.bias += &g_out.sum_axis(Axis(0));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_and_zero_input() {
        let head = ProjectionHead {
            modality: Modality::Text,
            weight: Array2::eye(3),
            bias: Array1::zeros(3),
        };
        let x = array![1.0, -2.0, 0.5];
        assert_eq!(head.project(x.view()).unwrap(), x);
        let head = ProjectionHead {
            bias: array![0.1, 0.2, 0.3],
            ..head
        };
        assert_eq!(head.project(Array1::zeros(3).view()).unwrap(), array![0.1, 0.2, 0.3]);
    }

    #[test]
    fn matches_explicit_dot_products() {
        let w = array![[0.1, -0.4, 0.7, 1.1], [0.3, 0.2, -0.9, 0.05], [-1.0, 0.6, 0.25, 0.4]];
        let b = array![0.5, -0.25, 0.125];
        let x = array![1.5, -0.3, 0.8, 2.0];
        let head = ProjectionHead {
            modality: Modality::Visual,
            weight: w.clone(),
            bias: b.clone(),
        };
        let h = head.project(x.view()).unwrap();
        for r in 0..3 {
            let mut acc = b[r];
            for c in 0..4 {
                acc += w[[r, c]] * x[c];
            }
            assert!((h[r] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let head = ProjectionHead {
            modality: Modality::Poi,
            weight: Array2::zeros((2, 3)),
            bias: Array1::zeros(2),
        };
        assert!(matches!(head.project(Array1::zeros(4).view()), Err(Error::Argument(_))));
    }
}
