//! Per-circle modality features built from feature rows.

use std::collections::BTreeMap;

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};

use crate::data::{Dataset, Poi, RawFeatureMatrix};
use crate::error::{Error, Result};
use crate::modality::Modality;

/// Arithmetic mean of the rows of `vectors` (`M x dim`). Because projection
/// heads are affine, the mean of projected image vectors equals the
/// projection of the mean raw vector.
pub fn aggregate_visual(vectors: ArrayView2<f64>) -> Result<Array1<f64>> {
    if vectors.nrows() == 0 {
        return Err(Error::Integrity("circle has no images".into()));
    }
    Ok(vectors.mean_axis(Axis(0)).expect("non-empty"))
}

pub fn gather_rows(m: &RawFeatureMatrix, rows: &[u32]) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), m.dim), |(i, k)| m.row(rows[i] as usize)[k] as f64)
}

/// POI feature of a circle: for each category present, the mean of
/// `[review ++ category]` over all reviews of that category in the circle,
/// then the sum over categories. A circle without POIs gets the zero vector.
pub fn aggregate_poi(
    pois: &[&Poi],
    reviews: &RawFeatureMatrix,
    categories: &RawFeatureMatrix,
    vocab: &[String],
) -> Result<Array1<f64>> {
    let dim = reviews.dim;
    let mut out = Array1::zeros(2 * dim);
    if pois.is_empty() {
        return Ok(out);
    }
    let mut per_category: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
    for p in pois {
        let g = vocab.iter().position(|v| *v == p.category).ok_or_else(|| {
            Error::Integrity(format!("POI `{}` has unknown category `{}`", p.id, p.category))
        })?;
        per_category.entry(g).or_default().extend(&p.review_row_ids);
    }
    if per_category.values().all(Vec::is_empty) {
        return Err(Error::Integrity(format!(
            "circle `{}` has POIs but no reviews",
            pois[0].circle_id
        )));
    }
    for (g, rows) in per_category {
        if rows.is_empty() {
            continue;
        }
        let review_mean = aggregate_visual(gather_rows(reviews, &rows).view())?;
        let cat: Array1<f64> = categories.row(g).iter().map(|&v| v as f64).collect();
        // the category half is constant within a group, so its mean is itself
        let joined = concatenate![Axis(0), review_mean, cat];
        out += &joined;
    }
    Ok(out)
}

/// Raw per-circle inputs of the three projection heads.
#[derive(Debug, Clone, PartialEq)]
pub struct CircleModalFeatures {
    /// `n x F`
    pub text: Array2<f64>,
    /// `n x F`, mean of each circle's image rows
    pub visual: Array2<f64>,
    /// `n x 2F`
    pub poi: Array2<f64>,
}

impl CircleModalFeatures {
    pub fn get(&self, m: Modality) -> &Array2<f64> {
        match m {
            Modality::Text => &self.text,
            Modality::Visual => &self.visual,
            Modality::Poi => &self.poi,
        }
    }

    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let n = ds.n_circles();
        let dim = ds.dim();
        let mut text = Array2::zeros((n, dim));
        let mut visual = Array2::zeros((n, dim));
        let mut poi = Array2::zeros((n, 2 * dim));
        let by_circle = ds.pois_by_circle();
        for (i, c) in ds.circles.iter().enumerate() {
            text.row_mut(i).assign(&ds.circle_text.row_f64(c.text_row_id as usize));
            let imgs = gather_rows(&ds.images, &c.image_row_ids);
            let v = aggregate_visual(imgs.view())
                .map_err(|_| Error::Integrity(format!("circle `{}` has no images", c.id)))?;
            visual.row_mut(i).assign(&v);
            poi.row_mut(i)
                .assign(&aggregate_poi(&by_circle[i], &ds.poi_review, &ds.poi_category, &ds.vocab)?);
        }
        Ok(Self { text, visual, poi })
    }
}
