//! The multi-modal circle graph.
//!
//! Node `slot * n + i` holds modality `modalities[slot]` of circle `i`, so
//! with all three modalities the node features are the stacked blocks
//! `[text; visual; poi]`. Intra edges join different modalities of one
//! circle; inter edges join the same modality of a circle and one of its
//! top-K spatial candidates.

use std::collections::HashSet;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::modality::Modality;
use crate::spatial::{log_distance, top_k_candidates, SpatialContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Intra,
    Inter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub weight: f64,
    pub kind: EdgeKind,
}

/// `1 - angle(x, y) / pi`, in `[0, 1]`.
///
/// The angle is `2 atan2(|x^ - y^|, |x^ + y^|)` over the unit vectors, which
/// equals `arccos(cos(x, y))` but stays accurate near 0 and pi.
pub fn angular_weight(x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<f64> {
    let nx = norm(x);
    let ny = norm(y);
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::Degenerate("angular weight of a zero vector".into()));
    }
    let (mut diff, mut sum) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y.iter()) {
        let (a, b) = (a / nx, b / ny);
        diff += (a - b) * (a - b);
        sum += (a + b) * (a + b);
    }
    let angle = 2.0 * diff.sqrt().atan2(sum.sqrt());
    Ok(1.0 - angle / std::f64::consts::PI)
}

/// Distance-discounted weight `w / ln(D + 1)`, guarded at `D = 0`.
pub fn inter_weight(angular: f64, distance: f64) -> f64 {
    angular / log_distance(distance)
}

/// Which parts of the graph to build.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphOptions {
    pub modalities: Vec<Modality>,
    pub inter_edges: bool,
}

impl Default for GraphOptions {
    fn default() -> Self {
        Self {
            modalities: Modality::ALL.to_vec(),
            inter_edges: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiModalGraph {
    pub n_circles: usize,
    pub modalities: Vec<Modality>,
    pub edges: Vec<Edge>,
    pub laplacian: Array2<f64>,
}

impl MultiModalGraph {
    pub fn n_nodes(&self) -> usize {
        self.n_circles * self.modalities.len()
    }

    pub fn node_id(&self, circle: usize, modality: Modality) -> Option<usize> {
        node_id(&self.modalities, self.n_circles, circle, modality)
    }

    /// Inverse of [`node_id`](Self::node_id).
    pub fn node(&self, id: usize) -> (usize, Modality) {
        (id % self.n_circles, self.modalities[id / self.n_circles])
    }

    pub fn count(&self, kind: EdgeKind) -> usize {
        self.edges.iter().filter(|e| e.kind == kind).count()
    }

    pub fn edge_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["u", "v", "weight", "kind"]).expect("in-memory");
        for e in &self.edges {
            let kind = match e.kind {
                EdgeKind::Intra => "intra",
                EdgeKind::Inter => "inter",
            };
            w.write_record([e.u.to_string(), e.v.to_string(), format!("{:?}", e.weight), kind.to_string()])
                .expect("in-memory");
        }
        String::from_utf8(w.into_inner().expect("in-memory")).expect("utf-8")
    }

    pub fn write_edge_csv(&self, path: &Path) -> Result<()> {
        crate::data::format::write_text(path, &self.edge_csv())
    }

    /// Rebuild a graph from its edge list; the adjacency is recomputed.
    pub fn from_edges(n_circles: usize, modalities: Vec<Modality>, edges: Vec<Edge>) -> Result<Self> {
        let n_nodes = n_circles * modalities.len();
        for e in &edges {
            if e.u >= n_nodes || e.v >= n_nodes || e.u == e.v {
                return Err(Error::Integrity(format!(
                    "edge ({}, {}) is invalid for {n_nodes} nodes",
                    e.u, e.v
                )));
            }
            if !(e.weight.is_finite() && e.weight > 0.0) {
                return Err(Error::Integrity(format!("edge ({}, {}) has weight {}", e.u, e.v, e.weight)));
            }
        }
        let laplacian = renormalized_laplacian(n_nodes, &edges);
        Ok(Self {
            n_circles,
            modalities,
            edges,
            laplacian,
        })
    }
}

/// Parse the `u,v,weight,kind` CSV written by [`MultiModalGraph::write_edge_csv`].
pub fn read_edge_csv(path: &Path) -> Result<Vec<Edge>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut edges = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let bad = |what: &str| {
            Error::format(
                path.display().to_string(),
                rec.position().map_or(0, |p| p.byte()),
                format!("row {}: bad {what}", line + 1),
            )
        };
        if rec.len() != 4 {
            return Err(bad("column count"));
        }
        let kind = match &rec[3] {
            "intra" => EdgeKind::Intra,
            "inter" => EdgeKind::Inter,
            _ => return Err(bad("kind")),
        };
        edges.push(Edge {
            u: rec[0].parse().map_err(|_| bad("u"))?,
            v: rec[1].parse().map_err(|_| bad("v"))?,
            weight: rec[2].parse().map_err(|_| bad("weight"))?,
            kind,
        });
    }
    Ok(edges)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path.display().to_string(), 0, format!("{other:?}")),
    }
}

fn node_id(modalities: &[Modality], n: usize, circle: usize, modality: Modality) -> Option<usize> {
    modalities.iter().position(|&m| m == modality).map(|slot| slot * n + circle)
}

/// Build the graph from per-modality projected features (`n x d` each,
/// indexed by [`Modality::index`]) and the spatial context. Top-K candidate
/// lists are re-derived from `S` with the given `k`. Edges whose weight is 0
/// (exactly opposite features) are not stored.
pub fn build_graph(
    features: [&Array2<f64>; 3],
    spatial: &SpatialContext,
    k: usize,
    options: &GraphOptions,
) -> Result<MultiModalGraph> {
    let n = spatial.n();
    if options.modalities.is_empty() {
        return Err(Error::Argument("graph needs at least one modality".into()));
    }
    for &m in &options.modalities {
        if features[m.index()].nrows() != n {
            return Err(Error::Integrity(format!(
                "{} features have {} rows for {n} circles",
                m.name(),
                features[m.index()].nrows()
            )));
        }
    }
    let mods = &options.modalities;
    let mut edges = Vec::new();
    for i in 0..n {
        for a in 0..mods.len() {
            for b in a + 1..mods.len() {
                let (ma, mb) = (mods[a], mods[b]);
                let w = angular_weight(features[ma.index()].row(i), features[mb.index()].row(i))?;
                if w > 0.0 {
                    edges.push(Edge {
                        u: a * n + i,
                        v: b * n + i,
                        weight: w,
                        kind: EdgeKind::Intra,
                    });
                }
            }
        }
    }
    if options.inter_edges && n > 1 {
        let top = top_k_candidates(&spatial.autocorrelation, k);
        for (slot, &m) in mods.iter().enumerate() {
            let h = features[m.index()];
            let mut seen = HashSet::new();
            for (i, cands) in top.iter().enumerate() {
                for &j in cands {
                    let key = (i.min(j), i.max(j));
                    if !seen.insert(key) {
                        continue;
                    }
                    let (lo, hi) = key;
                    let w = inter_weight(angular_weight(h.row(lo), h.row(hi))?, spatial.distance[[lo, hi]]);
                    if w > 0.0 {
                        edges.push(Edge {
                            u: slot * n + lo,
                            v: slot * n + hi,
                            weight: w,
                            kind: EdgeKind::Inter,
                        });
                    }
                }
            }
        }
    }
    let laplacian = renormalized_laplacian(n * mods.len(), &edges);
    Ok(MultiModalGraph {
        n_circles: n,
        modalities: mods.clone(),
        edges,
        laplacian,
    })
}

/// `D^-1/2 (A + I) D^-1/2` with `D` the row sums of `A + I`.
pub fn renormalized_laplacian(n_nodes: usize, edges: &[Edge]) -> Array2<f64> {
    let mut a = Array2::<f64>::eye(n_nodes);
    for e in edges {
        a[[e.u, e.v]] += e.weight;
        a[[e.v, e.u]] += e.weight;
    }
    let degree: Vec<f64> = a.rows().into_iter().map(|r| r.sum()).collect();
    Array2::from_shape_fn((n_nodes, n_nodes), |(i, j)| a[[i, j]] / (degree[i] * degree[j]).sqrt())
}
