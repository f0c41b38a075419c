//! Reconstruction of spatial autocorrelation from fused embeddings, plus a
//! cross-modal alignment penalty on post-GCN node rows.

use ndarray::{Array2, ArrayView2, Zip};

use crate::error::{Error, Result};
use crate::modality::Modality;

/// Post-GCN rows of one modality, `n x d`, indexed by circle.
pub struct ModalRows<'a> {
    pub modality: Modality,
    pub rows: ArrayView2<'a, f64>,
}

pub struct ObjectiveValue {
    pub reconstruction: f64,
    pub alignment: f64,
}

impl ObjectiveValue {
    pub fn total(&self) -> f64 {
        self.reconstruction + self.alignment
    }
}

fn check(e: &Array2<f64>, s: &Array2<f64>) -> Result<()> {
    let n = e.nrows();
    if s.dim() != (n, n) {
        return Err(Error::Argument(format!(
            "S is {:?} but there are {n} embeddings",
            s.dim()
        )));
    }
    Ok(())
}

/// `sum_{i != j} (S_ij - e_i . e_j)^2`, returned with the residual matrix
/// (diagonal zeroed).
fn residuals(e: &Array2<f64>, s: &Array2<f64>) -> (f64, Array2<f64>) {
    let mut r = s - &e.dot(&e.t());
    r.diag_mut().fill(0.0);
    let loss = r.iter().map(|v| v * v).sum();
    (loss, r)
}

fn split_text<'a, 'b>(modal: &'b [ModalRows<'a>]) -> (Option<&'b ModalRows<'a>>, Vec<&'b ModalRows<'a>>) {
    let text = modal.iter().find(|m| m.modality == Modality::Text);
    let others = modal.iter().filter(|m| m.modality != Modality::Text).collect();
    (text, others)
}

/// The alignment term is only defined against text rows; modalities that
/// were ablated away simply drop out of the sum.
pub fn objective(e: &Array2<f64>, modal: &[ModalRows<'_>], s: &Array2<f64>, lambda: f64) -> Result<ObjectiveValue> {
    check(e, s)?;
    let (reconstruction, _) = residuals(e, s);
    let mut alignment = 0.0;
    if let (Some(text), others) = split_text(modal) {
        let n = e.nrows() as f64;
        for m in others {
            let mut sum = 0.0;
            for (t, o) in text.rows.rows().into_iter().zip(m.rows.rows()) {
                sum += Zip::from(&t).and(&o).fold(0.0, |acc, a, b| acc + (a - b) * (a - b)).sqrt();
            }
            alignment += lambda * sum / n;
        }
    }
    Ok(ObjectiveValue {
        reconstruction,
        alignment,
    })
}

pub struct ObjectiveGrad {
    pub value: ObjectiveValue,
    pub embeddings: Array2<f64>,
    /// Gradient for each entry of `modal`, in the same order.
    pub modal: Vec<Array2<f64>>,
}

pub fn objective_grad(
    e: &Array2<f64>,
    modal: &[ModalRows<'_>],
    s: &Array2<f64>,
    lambda: f64,
) -> Result<ObjectiveGrad> {
    let value = objective(e, modal, s, lambda)?;
    let (_, r) = residuals(e, s);
    let sym = &r + &r.t();
    let embeddings = sym.dot(e) * -2.0;

    let mut grads: Vec<Array2<f64>> = modal.iter().map(|m| Array2::zeros(m.rows.raw_dim())).collect();
    if let Some(ti) = modal.iter().position(|m| m.modality == Modality::Text) {
        let n = e.nrows() as f64;
        let scale = lambda / n;
        for (mi, m) in modal.iter().enumerate() {
            if mi == ti {
                continue;
            }
            for i in 0..e.nrows() {
                let diff = &modal[ti].rows.row(i) - &m.rows.row(i);
                let dist = diff.dot(&diff).sqrt();
                // subgradient 0 at coincident rows
                if dist == 0.0 {
                    continue;
                }
                let g = diff * (scale / dist);
                grads[ti].row_mut(i).scaled_add(1.0, &g);
                grads[mi].row_mut(i).scaled_add(-1.0, &g);
            }
        }
    }
    Ok(ObjectiveGrad {
        value,
        embeddings,
        modal: grads,
    })
}
