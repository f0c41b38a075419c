use std::fmt::Write as _;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::metrics::{metrics, Metrics};
use super::regressor::{fit_predict, RegressorConfig};
use crate::data::{kfold_split, Disease, RunConfig};
use crate::error::{Error, Result};
use crate::seed::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiseaseReport {
    pub disease: String,
    pub folds: Vec<Metrics>,
    pub mean: Metrics,
    /// Out-of-fold prediction for every circle, in circle order.
    pub predictions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tag: String,
    pub config_hash: String,
    pub config: Vec<(String, String)>,
    pub diseases: Vec<DiseaseReport>,
    /// Mean over diseases of each disease's fold-mean metrics.
    pub mean: Metrics,
}

impl EvalReport {
    pub fn disease(&self, d: Disease) -> Option<&DiseaseReport> {
        self.diseases.iter().find(|r| r.disease == d.name())
    }

    /// `tag,disease,fold,mae,rmse,r2` with one row per fold plus a `mean`
    /// row per disease.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("tag,disease,fold,mae,rmse,r2\n");
        for d in &self.diseases {
            for (f, m) in d.folds.iter().enumerate() {
                writeln!(out, "{},{},{f},{:?},{:?},{:?}", self.tag, d.disease, m.mae, m.rmse, m.r2).unwrap();
            }
            let m = d.mean;
            writeln!(out, "{},{},mean,{:?},{:?},{:?}", self.tag, d.disease, m.mae, m.rmse, m.r2).unwrap();
        }
        out
    }
}

/// K-fold cross-validated prediction of one target from embedding rows.
/// Folds come from `kfold_split(n, k, seed)`; each fold's regressor is
/// initialized from its own stream so folds are independent.
pub fn predict_disease(
    embeddings: &Array2<f64>,
    targets: &[f64],
    disease: Disease,
    k: usize,
    seed: u64,
    reg: &RegressorConfig,
) -> Result<DiseaseReport> {
    let n = embeddings.nrows();
    if targets.len() != n {
        return Err(Error::Argument(format!("{n} embeddings but {} targets", targets.len())));
    }
    if n < k {
        return Err(Error::Argument(format!("{n} labeled circles is fewer than K = {k}")));
    }
    let folds = kfold_split(n, k, seed)?;
    let mut out = Vec::with_capacity(k);
    let mut predictions = vec![0.0; n];
    for (f, test) in folds.iter().enumerate() {
        let mut in_test = vec![false; n];
        for &i in test {
            in_test[i] = true;
        }
        let train: Vec<usize> = (0..n).filter(|&i| !in_test[i]).collect();
        let x_train = embeddings.select(Axis(0), &train);
        let x_test = embeddings.select(Axis(0), test);
        let y_train: Vec<f64> = train.iter().map(|&i| targets[i]).collect();
        let y_test: Vec<f64> = test.iter().map(|&i| targets[i]).collect();
        let counter = (disease as u32) << 16 | f as u32;
        let mut rng = stream_rng(seed, Stream::Regressor, counter);
        let pred = fit_predict(&x_train, &y_train, &x_test, reg, &mut rng)?;
        let m = metrics(&y_test, &pred)?;
        if m.mae > m.rmse * (1.0 + 1e-12) + 1e-12 {
            return Err(Error::Internal(format!("fold {f}: MAE {} exceeds RMSE {}", m.mae, m.rmse)));
        }
        out.push(m);
        for (&i, p) in test.iter().zip(pred) {
            predictions[i] = p;
        }
    }
    Ok(DiseaseReport {
        disease: disease.name().into(),
        mean: Metrics::mean(&out),
        folds: out,
        predictions,
    })
}

/// Evaluate all four diseases. `targets[i]` holds circle `i`'s counts in
/// [`Disease::ALL`] order.
pub fn evaluate_embeddings(
    embeddings: &Array2<f64>,
    targets: &[[f64; 4]],
    tag: &str,
    cfg: &RunConfig,
) -> Result<EvalReport> {
    let reg = RegressorConfig::from(cfg);
    let diseases = Disease::ALL
        .iter()
        .enumerate()
        .map(|(d, &disease)| {
            let y: Vec<f64> = targets.iter().map(|t| t[d]).collect();
            predict_disease(embeddings, &y, disease, cfg.folds, cfg.rng_seed, &reg)
        })
        .collect::<Result<Vec<_>>>()?;
    let means: Vec<Metrics> = diseases.iter().map(|d| d.mean).collect();
    Ok(EvalReport {
        tag: tag.into(),
        config_hash: cfg.hash(),
        config: cfg.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        mean: Metrics::mean(&means),
        diseases,
    })
}
