//! Post-hoc analyses on fused embeddings: street aggregation, similarity
//! ranking, clustering, PCA and correlation.

use std::collections::{BTreeMap, HashMap};

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::StreetAssignment;
use crate::error::{Error, Result};
use crate::linalg::cosine;
use crate::seed::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreetEmbedding {
    pub street_id: String,
    pub circle_ids: Vec<String>,
    pub embedding: Vec<f64>,
}

/// Mean fused embedding per street, ordered by street id. Every circle must
/// have exactly one assignment; streets whose assignments name no known
/// circle are skipped with a warning.
pub fn aggregate_streets(
    circle_ids: &[String],
    embeddings: &Array2<f64>,
    streets: &[StreetAssignment],
) -> Result<Vec<StreetEmbedding>> {
    if circle_ids.len() != embeddings.nrows() {
        return Err(Error::Argument("one embedding row per circle id required".into()));
    }
    let index: HashMap<&str, usize> = circle_ids.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut assigned = vec![false; circle_ids.len()];
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for a in streets {
        let members = groups.entry(a.street_id.as_str()).or_default();
        if let Some(&i) = index.get(a.circle_id.as_str()) {
            if assigned[i] {
                return Err(Error::Argument(format!("circle `{}` is assigned to two streets", a.circle_id)));
            }
            assigned[i] = true;
            members.push(i);
        }
    }
    if let Some(i) = assigned.iter().position(|&a| !a) {
        return Err(Error::Argument(format!("circle `{}` has no street", circle_ids[i])));
    }
    let mut out = Vec::with_capacity(groups.len());
    for (street, members) in groups {
        if members.is_empty() {
            log::warn!("street `{street}` has no circles in this table; skipped");
            continue;
        }
        let mean = embeddings.select(Axis(0), &members).mean_axis(Axis(0)).expect("non-empty");
        out.push(StreetEmbedding {
            street_id: street.to_string(),
            circle_ids: members.iter().map(|&i| circle_ids[i].clone()).collect(),
            embedding: mean.to_vec(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Similar {
    pub circle_id: String,
    pub score: f64,
}

/// The `top` circles most cosine-similar to `query`, excluding the query
/// itself. Ties go to the smaller id. Rows with zero norm score 0.
pub fn similar_circles(
    query: &str,
    circle_ids: &[String],
    embeddings: &Array2<f64>,
    top: usize,
) -> Result<Vec<Similar>> {
    let q = circle_ids
        .iter()
        .position(|c| c == query)
        .ok_or_else(|| Error::Argument(format!("unknown circle id `{query}`")))?;
    let qv = embeddings.row(q);
    if cosine(qv, qv).is_none() {
        return Err(Error::Degenerate(format!("circle `{query}` has a zero embedding")));
    }
    let mut scored: Vec<Similar> = (0..circle_ids.len())
        .filter(|&i| i != q)
        .map(|i| Similar {
            circle_id: circle_ids[i].clone(),
            score: cosine(qv, embeddings.row(i)).unwrap_or(0.0).clamp(-1.0, 1.0),
        })
        .collect();
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.circle_id.cmp(&b.circle_id)));
    scored.truncate(top);
    Ok(scored)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after every assignment step.
    pub inertia_trace: Vec<f64>,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus_init<R: Rng>(x: &Array2<f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let n = x.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            // every point coincides with a centre; take any unused index
            let unused: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            unused[rng.random_range(0..unused.len())]
        };
        chosen.push(next);
        for i in 0..n {
            d2[i] = d2[i].min(sq_dist(x.row(i), x.row(next)));
        }
    }
    x.select(Axis(0), &chosen)
}

fn assign(x: &Array2<f64>, centroids: &Array2<f64>) -> (Vec<usize>, f64) {
    let mut inertia = 0.0;
    let labels = x
        .rows()
        .into_iter()
        .map(|r| {
            let mut best = (0, f64::INFINITY);
            for (c, cen) in centroids.rows().into_iter().enumerate() {
                let d = sq_dist(r, cen);
                if d < best.1 {
                    best = (c, d);
                }
            }
            inertia += best.1;
            best.0
        })
        .collect();
    (labels, inertia)
}

/// Lloyd's algorithm from a seeded k-means++ start, run until assignments
/// stop changing or `max_iter` updates. Empty clusters keep their centroid.
pub fn kmeans(x: &Array2<f64>, k: usize, seed: u64, max_iter: usize) -> Result<KMeans> {
    let n = x.nrows();
    if k == 0 || k > n {
        return Err(Error::Argument(format!("k must be in 1..={n}, got {k}")));
    }
    let mut rng = stream_rng(seed, Stream::KMeans, 0);
    let mut centroids = plus_plus_init(x, k, &mut rng);
    let (mut labels, mut inertia) = assign(x, &centroids);
    let mut trace = vec![inertia];
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut sums = Array2::<f64>::zeros(centroids.raw_dim());
        let mut counts = vec![0usize; k];
        for (i, &c) in labels.iter().enumerate() {
            sums.row_mut(c).scaled_add(1.0, &x.row(i));
            counts[c] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids.row_mut(c).assign(&(&sums.row(c) / counts[c] as f64));
            }
        }
        let (next, next_inertia) = assign(x, &centroids);
        let prev = *trace.last().unwrap();
        if next_inertia > prev * (1.0 + 1e-12) + 1e-12 {
            return Err(Error::Internal(format!(
                "k-means inertia rose from {prev} to {next_inertia} at iteration {iterations}"
            )));
        }
        trace.push(next_inertia);
        inertia = next_inertia;
        let done = next == labels;
        labels = next;
        if done {
            break;
        }
    }
    Ok(KMeans {
        assignments: labels,
        centroids: centroids.rows().into_iter().map(|r| r.to_vec()).collect(),
        inertia,
        iterations,
        inertia_trace: trace,
    })
}

/// Final inertia for each `k` in `ks`.
pub fn elbow(x: &Array2<f64>, ks: impl IntoIterator<Item = usize>, seed: u64, max_iter: usize) -> Result<Vec<(usize, f64)>> {
    ks.into_iter().map(|k| Ok((k, kmeans(x, k, seed, max_iter)?.inertia))).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Array1<f64>,
    /// `dims x p`, one unit-norm principal direction per row.
    pub components: Array2<f64>,
    /// `n x dims`
    pub projected: Array2<f64>,
    pub explained_ratio: Vec<f64>,
}

/// Principal components of the mean-centred rows, by descending variance.
/// Each component is signed so its largest-magnitude loading is positive.
pub fn pca_project(x: &Array2<f64>, dims: usize) -> Result<Pca> {
    let (n, p) = x.dim();
    if dims == 0 || dims > p || n < dims || n < 2 {
        return Err(Error::Argument(format!("cannot take {dims} components of a {n}x{p} matrix")));
    }
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let centred = x - &mean;
    let cov = centred.t().dot(&centred) / (n - 1) as f64;
    let eig = nalgebra::SymmetricEigen::new(nalgebra::DMatrix::from_fn(p, p, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = values.iter().sum();
    let tol = 1e-12 * values[0].max(f64::MIN_POSITIVE);
    if total <= 0.0 || values[dims - 1] <= tol {
        let rank = values.iter().filter(|&&v| v > tol).count();
        return Err(Error::Degenerate(format!("data has rank {rank}, fewer than {dims} components")));
    }
    let mut components = Array2::zeros((dims, p));
    for (r, &i) in order.iter().take(dims).enumerate() {
        let v = eig.eigenvectors.column(i);
        let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        for k in 0..p {
            components[[r, k]] = sign * v[k];
        }
    }
    Ok(Pca {
        projected: centred.dot(&components.t()),
        explained_ratio: values[..dims].iter().map(|v| v / total).collect(),
        components,
        mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub pcc: f64,
    /// Two-sided, from Student's t with `n - 2` degrees of freedom.
    pub p_value: f64,
    pub n: usize,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation> {
    let n = x.len();
    if y.len() != n {
        return Err(Error::Argument(format!("{n} x values but {} y values", y.len())));
    }
    if n < 3 {
        return Err(Error::Argument(format!("correlation needs at least 3 points, got {n}")));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("correlation with a constant input".into()));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p_value = if r.abs() == 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Internal(e.to_string()))?;
        (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
    };
    Ok(Correlation { pcc: r, p_value, n })
}
