use std::collections::BTreeMap;

use curegraph::evaluate::AblationTag;
use curegraph::graph::{build_graph, EdgeKind, GraphOptions, MultiModalGraph};
use curegraph::spatial::{LatLon, SpatialContext};
use curegraph::Modality;
use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CATEGORIES: [&str; 4] = ["food", "shopping", "education_training", "stores"];

struct Fixture {
    points: Vec<LatLon>,
    categories: Vec<Vec<&'static str>>,
    features: [Array2<f64>; 3],
}

/// Random circles with strictly positive features, so no edge weight is 0.
/// Every circle has a `food` POI, so all autocorrelations are positive and
/// top-K lists have no index-dependent ties.
fn fixture(n: usize, d: usize, seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| LatLon {
            lat: 39.8 + rng.random::<f64>() * 0.2,
            lon: 116.3 + rng.random::<f64>() * 0.2,
        })
        .collect();
    let categories = (0..n)
        .map(|_| {
            let extra = rng.random_range(0..=4);
            let mut cats = vec!["food"];
            cats.extend((0..extra).map(|_| CATEGORIES[rng.random_range(0..CATEGORIES.len())]));
            cats
        })
        .collect();
    let features = std::array::from_fn(|_| Array2::from_shape_fn((n, d), |_| 0.05 + rng.random::<f64>()));
    Fixture {
        points,
        categories,
        features,
    }
}

impl Fixture {
    fn graph(&self, k: usize, options: &GraphOptions) -> MultiModalGraph {
        let spatial = SpatialContext::build(&self.points, &self.categories, k).unwrap();
        let [t, v, p] = &self.features;
        build_graph([t, v, p], &spatial, k, options).unwrap()
    }

    fn permuted(&self, perm: &[usize]) -> Fixture {
        Fixture {
            points: perm.iter().map(|&i| self.points[i]).collect(),
            categories: perm.iter().map(|&i| self.categories[i].clone()).collect(),
            features: std::array::from_fn(|m| self.features[m].select(ndarray::Axis(0), perm)),
        }
    }
}

#[test]
fn two_circles_one_candidate() {
    let g = fixture(2, 5, 1).graph(1, &GraphOptions::default());
    assert_eq!(g.count(EdgeKind::Intra), 6);
    assert_eq!(g.count(EdgeKind::Inter), 3);
}

#[test]
fn single_circle_has_only_intra_edges() {
    let zero = array![[0.0]];
    let spatial = SpatialContext {
        distance: zero.clone(),
        function: zero.clone(),
        autocorrelation: zero,
        top_k: vec![vec![]],
    };
    let f = fixture(1, 4, 2).features;
    let g = build_graph([&f[0], &f[1], &f[2]], &spatial, 20, &GraphOptions::default()).unwrap();
    assert_eq!(g.count(EdgeKind::Intra), 3);
    assert_eq!(g.count(EdgeKind::Inter), 0);
    assert_eq!(g.laplacian.dim(), (3, 3));
}

#[test]
fn endpoints_respect_edge_kind() {
    for seed in 0..5 {
        let g = fixture(12, 6, seed).graph(3, &GraphOptions::default());
        for e in &g.edges {
            let ((cu, mu), (cv, mv)) = (g.node(e.u), g.node(e.v));
            match e.kind {
                EdgeKind::Intra => assert!(cu == cv && mu != mv, "{e:?}"),
                EdgeKind::Inter => assert!(mu == mv && cu != cv, "{e:?}"),
            }
            assert!(e.weight > 0.0 && e.weight.is_finite());
        }
    }
}

#[test]
fn laplacian_is_exactly_symmetric() {
    let g = fixture(15, 6, 3).graph(4, &GraphOptions::default());
    assert_eq!(g.laplacian, g.laplacian.t());
}

/// Edge map keyed by (circle, modality) endpoint pairs, order-free.
fn edge_map(g: &MultiModalGraph, relabel: impl Fn(usize) -> usize) -> BTreeMap<((usize, Modality), (usize, Modality)), f64> {
    g.edges
        .iter()
        .map(|e| {
            let (cu, mu) = g.node(e.u);
            let (cv, mv) = g.node(e.v);
            let (a, b) = ((relabel(cu), mu), (relabel(cv), mv));
            ((a.min(b), a.max(b)), e.weight)
        })
        .collect()
}

#[test]
fn circle_permutation_relabels_the_graph() {
    let n = 10;
    let base = fixture(n, 6, 4);
    let perm: Vec<usize> = (0..n).rev().collect();
    let g = base.graph(3, &GraphOptions::default());
    let h = base.permuted(&perm).graph(3, &GraphOptions::default());
    // circle `c` of the permuted city is circle `perm[c]` of the original
    let original = edge_map(&g, |c| c);
    let relabelled = edge_map(&h, |c| perm[c]);
    assert_eq!(original.len(), relabelled.len());
    for (key, w) in &original {
        let w2 = relabelled.get(key).unwrap_or_else(|| panic!("missing edge {key:?}"));
        assert!((w - w2).abs() <= 1e-12, "{key:?}: {w} vs {w2}");
    }
    for a in 0..3 * n {
        for b in 0..3 * n {
            let (ca, ma) = h.node(a);
            let (cb, mb) = h.node(b);
            let ga = g.node_id(perm[ca], ma).unwrap();
            let gb = g.node_id(perm[cb], mb).unwrap();
            assert!((h.laplacian[[a, b]] - g.laplacian[[ga, gb]]).abs() <= 1e-12);
        }
    }
}

#[test]
fn ablation_variants_have_expected_shape() {
    let n = 8;
    let f = fixture(n, 5, 5);
    let full = f.graph(2, &AblationTag::Full.graph_options());
    let full_inter = full.count(EdgeKind::Inter);
    let per_modality = full_inter / 3;
    assert_eq!(full_inter % 3, 0);

    let no_topk = f.graph(2, &AblationTag::WithoutTopK.graph_options());
    assert_eq!(no_topk.n_nodes(), 3 * n);
    assert_eq!(no_topk.count(EdgeKind::Intra), 3 * n);
    assert_eq!(no_topk.count(EdgeKind::Inter), 0);

    for tag in [AblationTag::TextOnly, AblationTag::VisualOnly, AblationTag::PoiOnly] {
        let g = f.graph(2, &tag.graph_options());
        assert_eq!(g.n_nodes(), n, "{tag}");
        assert_eq!(g.count(EdgeKind::Intra), 0, "{tag}");
        assert_eq!(g.count(EdgeKind::Inter), per_modality, "{tag}");
    }
    for tag in [AblationTag::WithoutText, AblationTag::WithoutVisual, AblationTag::WithoutPoi] {
        let g = f.graph(2, &tag.graph_options());
        assert_eq!(g.n_nodes(), 2 * n, "{tag}");
        assert_eq!(g.count(EdgeKind::Intra), n, "{tag}");
        assert_eq!(g.count(EdgeKind::Inter), 2 * per_modality, "{tag}");
    }
}

#[test]
fn spectral_radius_bounded_by_power_iteration() {
    for seed in 0..5 {
        let p = fixture(10, 4, seed).graph(3, &GraphOptions::default()).laplacian;
        let mut x = Array2::from_elem((p.nrows(), 1), 1.0);
        let mut rho = 0.0;
        for _ in 0..500 {
            let y = p.dot(&x);
            rho = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            x = y / rho;
        }
        assert!(rho <= 1.0 + 1e-9, "seed {seed}: {rho}");
    }
}
