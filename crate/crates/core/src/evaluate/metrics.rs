use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    pub r2: f64,
}

impl Metrics {
    pub fn mean(all: &[Metrics]) -> Metrics {
        let n = all.len().max(1) as f64;
        Metrics {
            mae: all.iter().map(|m| m.mae).sum::<f64>() / n,
            rmse: all.iter().map(|m| m.rmse).sum::<f64>() / n,
            r2: all.iter().map(|m| m.r2).sum::<f64>() / n,
        }
    }
}

/// Mean absolute error, root mean squared error and the coefficient of
/// determination `1 - SS_res / SS_tot`.
pub fn metrics(y_true: &[f64], y_pred: &[f64]) -> Result<Metrics> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Argument(format!(
            "{} targets but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let n = y_true.len();
    if n < 2 {
        return Err(Error::Argument(format!("metrics need at least 2 points, got {n}")));
    }
    let mean = y_true.iter().sum::<f64>() / n as f64;
    let ss_tot: f64 = y_true.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Undefined("R² is undefined for constant targets".into()));
    }
    let mut abs = 0.0;
    let mut sq = 0.0;
    for (t, p) in y_true.iter().zip(y_pred) {
        abs += (t - p).abs();
        sq += (t - p).powi(2);
    }
    Ok(Metrics {
        mae: abs / n as f64,
        rmse: (sq / n as f64).sqrt(),
        r2: 1.0 - sq / ss_tot,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identities() {
        let y = [1.0, 2.0, 3.0];
        assert_eq!(
            metrics(&y, &y).unwrap(),
            Metrics {
                mae: 0.0,
                rmse: 0.0,
                r2: 1.0
            }
        );
        assert_eq!(metrics(&y, &[2.0; 3]).unwrap().r2, 0.0);
        let m = metrics(&y, &[1.0, 2.0, 4.0]).unwrap();
        assert!((m.mae - 1.0 / 3.0).abs() < 1e-9);
        assert!((m.rmse - 1.0 / 3f64.sqrt()).abs() < 1e-9);
        assert!((m.r2 - 0.5).abs() < 1e-9);
    }

    #[test]
    fn constant_targets_are_undefined() {
        assert!(matches!(metrics(&[2.0, 2.0], &[1.0, 3.0]), Err(Error::Undefined(_))));
        assert!(matches!(metrics(&[2.0], &[2.0]), Err(Error::Argument(_))));
    }
}
