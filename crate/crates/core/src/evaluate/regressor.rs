//! Downstream regressors fitted on fused embeddings. Inputs and targets are
//! standardized with training-set statistics; predictions are mapped back.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::data::{RegressorKind, RunConfig};
use crate::error::{Error, Result};
use crate::linalg::{uniform_init, uniform_vec};
use crate::optim::{Adam, AdamConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressorConfig {
    pub kind: RegressorKind,
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub ridge_lambda: f64,
}

impl From<&RunConfig> for RegressorConfig {
    fn from(cfg: &RunConfig) -> Self {
        Self {
            kind: cfg.regressor,
            hidden: cfg.regressor_hidden,
            epochs: cfg.regressor_epochs,
            lr: cfg.regressor_lr,
            weight_decay: cfg.regressor_weight_decay,
            ridge_lambda: cfg.ridge_lambda,
        }
    }
}

struct Standardizer {
    mean: Array1<f64>,
    std: Array1<f64>,
}

impl Standardizer {
    fn fit(x: &Array2<f64>) -> Self {
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let std = x
            .var_axis(Axis(0), 0.0)
            .mapv(|v| if v > 1e-24 { v.sqrt() } else { 1.0 });
        Self { mean, std }
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        (x - &self.mean) / &self.std
    }
}

/// Fit on `(x_train, y_train)` and predict `x_test`.
pub fn fit_predict<R: Rng>(
    x_train: &Array2<f64>,
    y_train: &[f64],
    x_test: &Array2<f64>,
    cfg: &RegressorConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if x_train.nrows() != y_train.len() {
        return Err(Error::Argument("one target per training row required".into()));
    }
    if x_train.nrows() < 2 {
        return Err(Error::Argument("regressor needs at least 2 training rows".into()));
    }
    if x_train.ncols() != x_test.ncols() {
        return Err(Error::Argument("train and test widths differ".into()));
    }
    let sx = Standardizer::fit(x_train);
    let xt = sx.apply(x_train);
    let xs = sx.apply(x_test);
    let y = Array1::from(y_train.to_vec());
    let y_mean = y.mean().unwrap();
    let y_std = {
        let v = y.var(0.0);
        if v > 1e-24 {
            v.sqrt()
        } else {
            1.0
        }
    };
    let yt = (&y - y_mean) / y_std;
    let pred = match cfg.kind {
        RegressorKind::Ridge => ridge(&xt, &yt, &xs, cfg.ridge_lambda)?,
        RegressorKind::Mlp => mlp(&xt, &yt, &xs, cfg, rng)?,
    };
    let out: Vec<f64> = pred.iter().map(|p| p * y_std + y_mean).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            location: "regressor".into(),
            message: "non-finite prediction".into(),
        });
    }
    Ok(out)
}

/// Ridge regression on centred data (intercept 0 after standardization),
/// solved in the smaller of the primal and dual forms.
fn ridge(x: &Array2<f64>, y: &Array1<f64>, xs: &Array2<f64>, lambda: f64) -> Result<Array1<f64>> {
    if lambda <= 0.0 {
        return Err(Error::Config(format!("ridge_lambda must be positive, got {lambda}")));
    }
    let (n, p) = x.dim();
    let to_na = |m: &Array2<f64>| nalgebra::DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]]);
    let xn = to_na(x);
    let yn = nalgebra::DVector::from_iterator(n, y.iter().copied());
    let w = if p <= n {
        let a = xn.transpose() * &xn + nalgebra::DMatrix::identity(p, p) * lambda;
        let chol = a.cholesky().ok_or_else(|| Error::Numeric {
            location: "ridge".into(),
            message: "normal equations not positive definite".into(),
        })?;
        chol.solve(&(xn.transpose() * yn))
    } else {
        let k = &xn * xn.transpose() + nalgebra::DMatrix::identity(n, n) * lambda;
        let chol = k.cholesky().ok_or_else(|| Error::Numeric {
            location: "ridge".into(),
            message: "kernel matrix not positive definite".into(),
        })?;
        xn.transpose() * chol.solve(&yn)
    };
    let w = Array1::from_iter(w.iter().copied());
    Ok(xs.dot(&w))
}

/// One hidden rectifier layer, full-batch Adam on mean squared error.
fn mlp<R: Rng>(
    x: &Array2<f64>,
    y: &Array1<f64>,
    xs: &Array2<f64>,
    cfg: &RegressorConfig,
    rng: &mut R,
) -> Result<Array1<f64>> {
    if cfg.hidden == 0 {
        return Err(Error::Config("regressor_hidden must be at least 1".into()));
    }
    let (n, p) = x.dim();
    let h = cfg.hidden;
    let mut w1 = uniform_init(rng, h, p, p);
    let mut b1 = uniform_vec(rng, h, p);
    let mut w2 = uniform_vec(rng, h, h);
    let mut b2 = [0.0];
    let mut adam = Adam::new(
        AdamConfig::new(cfg.lr, cfg.weight_decay),
        &[w1.len(), b1.len(), w2.len(), 1],
    );
    for epoch in 0..cfg.epochs {
        let z = x.dot(&w1.t()) + &b1;
        let a = z.mapv(|v| v.max(0.0));
        let out = a.dot(&w2) + b2[0];
        let err = &out - y;
        let loss = err.dot(&err) / n as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                stage: "regressor".into(),
                step: epoch,
                loss,
            });
        }
        let g_out = &err * (2.0 / n as f64);
        let g_w2 = a.t().dot(&g_out);
        let g_b2 = [g_out.sum()];
        let mut g_a = Array2::zeros((n, h));
        for (i, mut row) in g_a.rows_mut().into_iter().enumerate() {
            row.assign(&(&w2 * g_out[i]));
        }
        g_a.zip_mut_with(&z, |g, &zv| {
            if zv <= 0.0 {
                *g = 0.0
            }
        });
        let g_w1 = g_a.t().dot(x);
        let g_b1 = g_a.sum_axis(Axis(0));
        adam.update(
            &mut [
                w1.as_slice_mut().unwrap(),
                b1.as_slice_mut().unwrap(),
                w2.as_slice_mut().unwrap(),
                &mut b2,
            ],
            &[
                g_w1.as_slice().unwrap(),
                g_b1.as_slice().unwrap(),
                g_w2.as_slice().unwrap(),
                &g_b2,
            ],
        );
    }
    let a = (xs.dot(&w1.t()) + &b1).mapv(|v| v.max(0.0));
    Ok(a.dot(&w2) + b2[0])
}
