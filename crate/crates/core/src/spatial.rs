//! Geographic distance, POI functional similarity, the spatial
//! autocorrelation matrix and top-K candidate selection.
//!
//! Every pairwise quantity is computed once per unordered pair and mirrored,
//! so `D`, `F` and `S` are symmetric to the last bit.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LivingCircle, Poi};
use crate::error::{Error, Result};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Guard added inside `ln(D + 1)` when two circles coincide.
pub const ZERO_DISTANCE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl From<&LivingCircle> for LatLon {
    fn from(c: &LivingCircle) -> Self {
        LatLon {
            lat: c.lat,
            lon: c.lon,
        }
    }
}

/// Great-circle distance in kilometres.
pub fn haversine_km(a: LatLon, b: LatLon) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = p2 - p1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Pairwise distances divided by the largest one.
pub fn normalized_distance_matrix(points: &[LatLon]) -> Result<Array2<f64>> {
    let n = points.len();
    if n < 2 {
        return Err(Error::Argument(format!("need at least 2 circles, got {n}")));
    }
    let mut d = Array2::zeros((n, n));
    let mut max: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let v = haversine_km(points[i], points[j]);
            d[[i, j]] = v;
            d[[j, i]] = v;
            max = max.max(v);
        }
    }
    if max == 0.0 {
        return Err(Error::Degenerate("all circles share one location".into()));
    }
    d.mapv_inplace(|v| v / max);
    Ok(d)
}

/// Category-weight vector of one circle; absent categories weigh zero.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TfidfVector {
    pub weights: BTreeMap<String, f64>,
}

impl TfidfVector {
    pub fn is_zero(&self) -> bool {
        self.weights.values().all(|&w| w == 0.0)
    }
}

/// TF-IDF over POI categories, one document per circle.
///
/// `tf = count / total POIs in the circle`, `idf = ln((1 + n) / (1 + df)) + 1`.
pub fn tfidf_vectors(category_lists: &[Vec<&str>]) -> Vec<TfidfVector> {
    let n = category_lists.len() as f64;
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    let counts: Vec<BTreeMap<&str, usize>> = category_lists
        .iter()
        .map(|cats| {
            let mut m = BTreeMap::new();
            for &c in cats {
                *m.entry(c).or_insert(0) += 1;
            }
            m
        })
        .collect();
    for m in &counts {
        for &c in m.keys() {
            *df.entry(c).or_insert(0) += 1;
        }
    }
    counts
        .iter()
        .zip(category_lists)
        .map(|(m, cats)| {
            let total = cats.len() as f64;
            let weights = m
                .iter()
                .map(|(&c, &k)| {
                    let idf = ((1.0 + n) / (1.0 + df[c] as f64)).ln() + 1.0;
                    (c.to_string(), k as f64 / total * idf)
                })
                .collect();
            TfidfVector { weights }
        })
        .collect()
}

/// Category lists per circle, following each circle's `poi_ids`.
pub fn circle_categories<'a>(circles: &[LivingCircle], pois: &'a [Poi]) -> Vec<Vec<&'a str>> {
    let by_id: BTreeMap<&str, &Poi> = pois.iter().map(|p| (p.id.as_str(), p)).collect();
    circles
        .iter()
        .map(|c| {
            c.poi_ids
                .iter()
                .filter_map(|id| by_id.get(id.as_str()).map(|p| p.category.as_str()))
                .collect()
        })
        .collect()
}

/// Cosine similarity of two TF-IDF vectors; 0 if either is zero.
pub fn functional_similarity(u: &TfidfVector, v: &TfidfVector) -> f64 {
    let nu: f64 = u.weights.values().map(|w| w * w).sum::<f64>().sqrt();
    let nv: f64 = v.weights.values().map(|w| w * w).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    let dot: f64 = u
        .weights
        .iter()
        .filter_map(|(k, a)| v.weights.get(k).map(|b| a * b))
        .sum();
    dot / (nu * nv)
}

pub fn functional_similarity_matrix(vectors: &[TfidfVector]) -> Array2<f64> {
    let n = vectors.len();
    let mut f = Array2::zeros((n, n));
    for i in 0..n {
        f[[i, i]] = functional_similarity(&vectors[i], &vectors[i]);
        for j in i + 1..n {
            let v = functional_similarity(&vectors[i], &vectors[j]);
            f[[i, j]] = v;
            f[[j, i]] = v;
        }
    }
    f
}

/// `ln(D + 1)` with the zero-distance guard.
pub fn log_distance(d: f64) -> f64 {
    if d > 0.0 {
        (d + 1.0).ln()
    } else {
        (1.0 + ZERO_DISTANCE_EPS).ln()
    }
}

/// `S_ij = F_ij / ln(D_ij + 1)` off the diagonal, `S_ii = 0`.
pub fn spatial_autocorrelation(f: &Array2<f64>, d: &Array2<f64>) -> Result<Array2<f64>> {
    if f.dim() != d.dim() || f.nrows() != f.ncols() {
        return Err(Error::Argument(format!(
            "F {:?} and D {:?} must be the same square shape",
            f.dim(),
            d.dim()
        )));
    }
    let n = f.nrows();
    let mut s = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let v = f[[i, j]] / log_distance(d[[i, j]]);
            s[[i, j]] = v;
            s[[j, i]] = v;
        }
    }
    Ok(s)
}

/// For each row, the `k` other indices with the largest score, descending,
/// ties broken by ascending index.
pub fn top_k_candidates(s: &Array2<f64>, k: usize) -> Vec<Vec<usize>> {
    let n = s.nrows();
    (0..n)
        .map(|i| {
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            // `+ 0.0` folds -0.0 into +0.0 so signed zeros tie
            let key = |j: usize| s[[i, j]] + 0.0;
            others.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
            others.truncate(k);
            others
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialContext {
    pub distance: Array2<f64>,
    pub function: Array2<f64>,
    pub autocorrelation: Array2<f64>,
    pub top_k: Vec<Vec<usize>>,
}

impl SpatialContext {
    pub fn n(&self) -> usize {
        self.distance.nrows()
    }

    pub fn build(points: &[LatLon], categories: &[Vec<&str>], k: usize) -> Result<Self> {
        if points.len() != categories.len() {
            return Err(Error::Argument("one category list per circle required".into()));
        }
        if k == 0 {
            return Err(Error::Argument("K must be at least 1".into()));
        }
        let distance = normalized_distance_matrix(points)?;
        let function = functional_similarity_matrix(&tfidf_vectors(categories));
        let autocorrelation = spatial_autocorrelation(&function, &distance)?;
        let top_k = top_k_candidates(&autocorrelation, k);
        Ok(Self {
            distance,
            function,
            autocorrelation,
            top_k,
        })
    }

    pub fn from_dataset(ds: &Dataset, k: usize) -> Result<Self> {
        let points: Vec<LatLon> = ds.circles.iter().map(LatLon::from).collect();
        Self::build(&points, &circle_categories(&ds.circles, &ds.pois), k)
    }
}
