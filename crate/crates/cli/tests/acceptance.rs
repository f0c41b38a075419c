//! Acceptance gate. Every check prints one PASS/FAIL line; the process exits
//! non-zero if any check fails.
//!
//! Oracles are written here, independently of the library: brute-force
//! haversine and TF-IDF, exhaustive edge enumeration, central finite
//! differences, hand-evaluated metrics.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use curegraph::data::{generate_synthetic_city, RunConfig, SyntheticSpec};
use curegraph::encoders::{
    infonce_grad, infonce_loss, supcon_grad, supcon_loss, triplet_geo_grad, triplet_geo_loss, visual_encoder_grad,
    visual_encoder_loss, CircleModalFeatures, EncoderHeads, ProjectionHead, VisualBatch,
};
use curegraph::evaluate::{metrics, AblationTag};
use curegraph::graph::{build_graph, EdgeKind, GraphOptions};
use curegraph::linalg::sigmoid;
use curegraph::pipeline::run_pipeline;
use curegraph::smgcn::{gcn_forward, objective, objective_grad, GcnHyper, ModalRows, Mode, ModelState, TrainOptions};
use curegraph::spatial::{LatLon, SpatialContext};
use curegraph::Modality;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

struct Gate {
    failed: Vec<String>,
}

impl Gate {
    fn run(&mut self, name: &str, check: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(format!("panicked: {p:?}")));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name:<38} {detail} [{secs:.2}s]"),
            Err(detail) => {
                println!("FAIL  {name:<38} {detail} [{secs:.2}s]");
                self.failed.push(name.to_string());
            }
        }
    }
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| r.random_range(-1.0..1.0))
}

// ---------------------------------------------------------------- gradients

const FD_STEP: f64 = 1e-4;
const FD_TOL: f64 = 1e-4;

/// Max relative error between `analytic` and central differences of `f`.
fn fd_error(params: &[f64], analytic: &[f64], f: impl Fn(&[f64]) -> f64) -> f64 {
    assert_eq!(params.len(), analytic.len());
    let mut p = params.to_vec();
    let mut worst: f64 = 0.0;
    for k in 0..p.len() {
        let orig = p[k];
        p[k] = orig + FD_STEP;
        let up = f(&p);
        p[k] = orig - FD_STEP;
        let down = f(&p);
        p[k] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let scale = analytic[k].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[k] - numeric).abs() / scale);
    }
    worst
}

fn split(p: &[f64], shapes: &[(usize, usize)]) -> Vec<Array2<f64>> {
    let mut at = 0;
    shapes
        .iter()
        .map(|&(r, c)| {
            let m = Array2::from_shape_vec((r, c), p[at..at + r * c].to_vec()).unwrap();
            at += r * c;
            m
        })
        .collect()
}

fn flat(ms: &[&Array2<f64>]) -> Vec<f64> {
    ms.iter().flat_map(|m| m.iter().copied()).collect()
}

fn grad_report(n: usize, err: f64) -> Outcome {
    ensure(
        n <= 64 && err <= FD_TOL,
        format!("{n} params, max rel err {err:.2e}"),
    )
}

fn grad_triplet() -> Outcome {
    let mut r = rng(1);
    let x = random(&mut r, 3, 3);
    let margin = 5.0; // keeps the hinge active
    let f = |p: &[f64]| {
        let m = split(p, &[(3, 3)]).remove(0);
        triplet_geo_loss(m.row(0), m.row(1), m.row(2), margin)
    };
    let g = triplet_geo_grad(x.row(0), x.row(1), x.row(2), margin);
    let analytic: Vec<f64> = g.anchor.iter().chain(&g.positive).chain(&g.negative).copied().collect();
    grad_report(9, fd_error(&flat(&[&x]), &analytic, f))
}

fn grad_augment_infonce() -> Outcome {
    let mut r = rng(2);
    let (a, b) = (random(&mut r, 3, 3), random(&mut r, 3, 3));
    let tau = 0.5;
    let f = |p: &[f64]| {
        let m = split(p, &[(3, 3), (3, 3)]);
        infonce_loss(m[0].view(), m[1].view(), tau).unwrap()
    };
    let g = infonce_grad(a.view(), b.view(), tau).unwrap();
    grad_report(18, fd_error(&flat(&[&a, &b]), &flat(&[&g.anchors, &g.positives]), f))
}

fn grad_visual() -> Outcome {
    let mut r = rng(3);
    let parts: Vec<Array2<f64>> = (0..5).map(|_| random(&mut r, 2, 3)).collect();
    let (margin, tau) = (3.0, 0.5);
    let batch = |m: &[Array2<f64>]| -> f64 {
        let b = VisualBatch {
            anchors: m[0].view(),
            positives: m[1].view(),
            negatives: m[2].view(),
            view_a: m[3].view(),
            view_b: m[4].view(),
        };
        visual_encoder_loss(&b, margin, tau).unwrap()
    };
    let f = |p: &[f64]| batch(&split(p, &[(2, 3); 5]));
    let g = visual_encoder_grad(
        &VisualBatch {
            anchors: parts[0].view(),
            positives: parts[1].view(),
            negatives: parts[2].view(),
            view_a: parts[3].view(),
            view_b: parts[4].view(),
        },
        margin,
        tau,
    )
    .unwrap();
    let refs: Vec<&Array2<f64>> = parts.iter().collect();
    let analytic = flat(&[&g.anchors, &g.positives, &g.negatives, &g.view_a, &g.view_b]);
    grad_report(30, fd_error(&flat(&refs), &analytic, f))
}

fn grad_cross_modal() -> Outcome {
    let mut r = rng(4);
    let (text, visual) = (random(&mut r, 4, 3), random(&mut r, 4, 3));
    let tau = 1.0;
    let f = |p: &[f64]| {
        let m = split(p, &[(4, 3), (4, 3)]);
        infonce_loss(m[0].view(), m[1].view(), tau).unwrap()
    };
    let g = infonce_grad(text.view(), visual.view(), tau).unwrap();
    grad_report(24, fd_error(&flat(&[&text, &visual]), &flat(&[&g.anchors, &g.positives]), f))
}

fn grad_supcon() -> Outcome {
    let mut r = rng(5);
    let e = random(&mut r, 5, 3);
    let labels = [0, 1, 0, 1, 1];
    let tau = 0.5;
    let f = |p: &[f64]| supcon_loss(split(p, &[(5, 3)])[0].view(), &labels, tau).unwrap();
    let (_, g) = supcon_grad(e.view(), &labels, tau).unwrap();
    grad_report(15, fd_error(&flat(&[&e]), &flat(&[&g]), f))
}

fn spatial_instance(r: &mut ChaCha8Rng, n: usize) -> (Vec<LatLon>, Vec<Vec<&'static str>>) {
    const VOCAB: [&str; 5] = ["food", "shopping", "sports", "culture", "transport"];
    let points = (0..n)
        .map(|_| LatLon {
            lat: 39.8 + r.random_range(0.0..0.2),
            lon: 116.3 + r.random_range(0.0..0.2),
        })
        .collect();
    let cats = (0..n)
        .map(|_| {
            let k = r.random_range(0..6);
            (0..k).map(|_| VOCAB[r.random_range(0..VOCAB.len())]).collect()
        })
        .collect();
    (points, cats)
}

fn grad_objective() -> Outcome {
    let mut r = rng(6);
    let n = 3;
    let e = random(&mut r, n, 2);
    let blocks: Vec<Array2<f64>> = (0..3).map(|_| random(&mut r, n, 2)).collect();
    let s = Array2::from_shape_fn((n, n), |(i, j)| if i == j { 0.0 } else { ((i + 2 * j) as f64).sin() });
    let lambda = 0.7;
    let modal = |b: &[Array2<f64>]| -> Vec<Array2<f64>> { b.to_vec() };
    let rows = |b: &[Array2<f64>]| -> Vec<(Modality, Array2<f64>)> {
        Modality::ALL.iter().copied().zip(modal(b)).collect()
    };
    let eval = |e: &Array2<f64>, b: &[Array2<f64>]| {
        let owned = rows(b);
        let views: Vec<ModalRows> = owned
            .iter()
            .map(|(m, a)| ModalRows {
                modality: *m,
                rows: a.view(),
            })
            .collect();
        objective(e, &views, &s, lambda).unwrap().total()
    };
    let f = |p: &[f64]| {
        let m = split(p, &[(n, 2); 4]);
        eval(&m[0], &m[1..])
    };
    let owned = rows(&blocks);
    let views: Vec<ModalRows> = owned
        .iter()
        .map(|(m, a)| ModalRows {
            modality: *m,
            rows: a.view(),
        })
        .collect();
    let g = objective_grad(&e, &views, &s, lambda).unwrap();
    let mut analytic = flat(&[&g.embeddings]);
    for m in &g.modal {
        analytic.extend(m.iter());
    }
    let params = flat(&[&e, &blocks[0], &blocks[1], &blocks[2]]);
    let direct = fd_error(&params, &analytic, f);

    // through the readout, the GCN and the heads
    let raw = CircleModalFeatures {
        text: random(&mut r, 2, 2),
        visual: random(&mut r, 2, 2),
        poi: random(&mut r, 2, 4),
    };
    let mut heads = EncoderHeads::init(2, 2, 11);
    heads.poi = ProjectionHead::init(&mut rng(12), Modality::Poi, 4, 2);
    let (pts, cats) = spatial_instance(&mut r, 2);
    let cats = vec![cats[0].clone().into_iter().chain(["food"]).collect(), vec!["food"]];
    let sp = SpatialContext::build(&pts, &cats, 1).unwrap();
    let proj: Vec<Array2<f64>> = Modality::ALL
        .iter()
        .map(|&m| heads.get(m).project_rows(raw.get(m).view()).unwrap())
        .collect();
    let graph = build_graph([&proj[0], &proj[1], &proj[2]], &sp, 1, &GraphOptions::default()).unwrap();
    let opts = TrainOptions {
        hyper: GcnHyper {
            alpha: 0.2,
            eta: 0.5,
            dropout: 0.3,
        },
        layers: 1,
        lambda: 0.1,
        lr: 5e-4,
        weight_decay: 3e-3,
        epochs: 1,
        train_heads: true,
        seed: 3,
    };
    let mut st = ModelState::init(&heads, &graph.modalities, &opts).unwrap();
    let mode = Mode::Train { seed: 5, step: 0 };
    let (_, grads) = st.loss_and_grad(&graph.laplacian, &raw, &sp.autocorrelation, &opts, mode).unwrap();
    let analytic = grads.flatten();
    let base: Vec<f64> = st.parameters_mut().into_iter().map(|p| *p).collect();
    let chain = fd_error(&base, &analytic, |p| {
        let mut probe = st.clone();
        for (dst, &v) in probe.parameters_mut().into_iter().zip(p) {
            *dst = v;
        }
        probe
            .loss(&graph.laplacian, &raw, &sp.autocorrelation, &opts, mode)
            .unwrap()
            .total()
    });
    ensure(
        params.len() <= 64 && base.len() <= 64 && direct.max(chain) <= FD_TOL,
        format!(
            "objective {} params err {direct:.2e}; full chain {} params err {chain:.2e}",
            params.len(),
            base.len()
        ),
    )
}

// ------------------------------------------------------------------ spatial

fn haversine_oracle(a: LatLon, b: LatLon) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dp = p2 - p1;
    let dl = (b.lon - a.lon).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * 6371.0 * h.sqrt().asin()
}

fn tfidf_cosine_oracle(cats: &[Vec<&str>]) -> Array2<f64> {
    let n = cats.len();
    let vocab: Vec<&str> = {
        let mut v: Vec<&str> = cats.iter().flatten().copied().collect();
        v.sort();
        v.dedup();
        v
    };
    let vecs: Vec<Vec<f64>> = cats
        .iter()
        .map(|c| {
            vocab
                .iter()
                .map(|w| {
                    if c.is_empty() {
                        return 0.0;
                    }
                    let tf = c.iter().filter(|x| *x == w).count() as f64 / c.len() as f64;
                    let df = cats.iter().filter(|d| d.contains(w)).count() as f64;
                    tf * (((1 + n) as f64 / (1.0 + df)).ln() + 1.0)
                })
                .collect()
        })
        .collect();
    Array2::from_shape_fn((n, n), |(i, j)| {
        let dot: f64 = vecs[i].iter().zip(&vecs[j]).map(|(a, b)| a * b).sum();
        let ni = vecs[i].iter().map(|a| a * a).sum::<f64>().sqrt();
        let nj = vecs[j].iter().map(|a| a * a).sum::<f64>().sqrt();
        if ni == 0.0 || nj == 0.0 {
            0.0
        } else {
            dot / (ni * nj)
        }
    })
}

fn top_k_oracle(s: &Array2<f64>, k: usize) -> Vec<Vec<usize>> {
    (0..s.nrows())
        .map(|i| {
            let mut js: Vec<usize> = (0..s.nrows()).filter(|&j| j != i).collect();
            js.sort_by(|&a, &b| s[[i, b]].partial_cmp(&s[[i, a]]).unwrap().then(a.cmp(&b)));
            js.truncate(k);
            js
        })
        .collect()
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, |m, d| if d.is_nan() { f64::INFINITY } else { m.max(d) })
}

fn spatial_oracle() -> Outcome {
    let (points, cats) = spatial_instance(&mut rng(7), 10);
    let k = 3;
    let ctx = SpatialContext::build(&points, &cats, k).map_err(|e| e.to_string())?;
    let n = points.len();
    let raw = Array2::from_shape_fn((n, n), |(i, j)| haversine_oracle(points[i], points[j]));
    let max = raw.iter().copied().fold(0.0, f64::max);
    let d = raw.mapv(|v| v / max);
    let f = tfidf_cosine_oracle(&cats);
    let s = Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            0.0
        } else {
            f[[i, j]] / (d[[i, j]] + 1.0).ln()
        }
    });
    let top = top_k_oracle(&s, k);
    let errs = [
        max_abs_diff(&ctx.distance, &d),
        max_abs_diff(&ctx.function, &f),
        max_abs_diff(&ctx.autocorrelation, &s),
    ];
    let lists = ctx.top_k == top;
    ensure(
        errs.iter().all(|&e| e <= 1e-9) && lists,
        format!(
            "D {:.1e}, F {:.1e}, S {:.1e}, top-{k} lists equal: {lists}",
            errs[0], errs[1], errs[2]
        ),
    )
}

// -------------------------------------------------------------------- graph

fn angular_oracle(x: ndarray::ArrayView1<f64>, y: ndarray::ArrayView1<f64>) -> f64 {
    let cos = x.dot(&y) / (x.dot(&x).sqrt() * y.dot(&y).sqrt());
    1.0 - cos.clamp(-1.0, 1.0).acos() / std::f64::consts::PI
}

fn graph_oracle() -> Outcome {
    let mut r = rng(8);
    let n = 4;
    let k = 2;
    let (points, cats) = spatial_instance(&mut r, n);
    let sp = SpatialContext::build(&points, &cats, k).map_err(|e| e.to_string())?;
    let feats: Vec<Array2<f64>> = (0..3).map(|_| random(&mut r, n, 3)).collect();
    let g = build_graph([&feats[0], &feats[1], &feats[2]], &sp, k, &GraphOptions::default())
        .map_err(|e| e.to_string())?;

    let top = top_k_oracle(&sp.autocorrelation, k);
    let mut expected: BTreeMap<(usize, usize), (f64, EdgeKind)> = BTreeMap::new();
    for u in 0..3 * n {
        for v in u + 1..3 * n {
            let (su, i) = (u / n, u % n);
            let (sv, j) = (v / n, v % n);
            if i == j {
                let w = angular_oracle(feats[su].row(i), feats[sv].row(j));
                if w > 0.0 {
                    expected.insert((u, v), (w, EdgeKind::Intra));
                }
            } else if su == sv && (top[i].contains(&j) || top[j].contains(&i)) {
                let w = angular_oracle(feats[su].row(i), feats[su].row(j)) / (sp.distance[[i, j]] + 1.0).ln();
                if w > 0.0 {
                    expected.insert((u, v), (w, EdgeKind::Inter));
                }
            }
        }
    }
    let got: BTreeMap<(usize, usize), (f64, EdgeKind)> = g
        .edges
        .iter()
        .map(|e| ((e.u.min(e.v), e.u.max(e.v)), (e.weight, e.kind)))
        .collect();
    if got.len() != g.edges.len() {
        return Err("duplicate edges in the graph".into());
    }
    let same_set = got.keys().eq(expected.keys()) && got.values().zip(expected.values()).all(|(a, b)| a.1 == b.1);
    let werr = got
        .values()
        .zip(expected.values())
        .map(|(a, b)| (a.0 - b.0).abs())
        .fold(0.0, f64::max);
    let p = &g.laplacian;
    let symmetric = p == &p.t().to_owned();
    let sym = nalgebra::DMatrix::from_fn(p.nrows(), p.ncols(), |i, j| p[[i, j]]);
    let radius = sym
        .symmetric_eigenvalues()
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    ensure(
        same_set && werr <= 1e-12 && symmetric && radius <= 1.0 + 1e-9,
        format!(
            "{} edges, set equal: {same_set}, weight err {werr:.1e}, symmetric: {symmetric}, radius {radius:.12}",
            got.len()
        ),
    )
}

// -------------------------------------------------------------- degeneracy

fn gcn_degeneracy() -> Outcome {
    let mut r = rng(9);
    let nodes = 6;
    let sym = |r: &mut ChaCha8Rng| {
        let a = random(r, nodes, nodes).mapv(f64::abs);
        (&a + &a.t()) / 4.0
    };
    let (p1, p2) = (sym(&mut r), sym(&mut r));
    let h = random(&mut r, nodes, 3);
    let weights: Vec<Array2<f64>> = (0..3).map(|_| random(&mut r, 3, 3)).collect();
    let one = GcnHyper {
        alpha: 1.0,
        eta: 0.5,
        dropout: 0.0,
    };
    let a = gcn_forward(&p1, &h, &weights, one, Mode::Eval).map_err(|e| e.to_string())?;
    let b = gcn_forward(&p2, &h, &weights, one, Mode::Eval).map_err(|e| e.to_string())?;
    let identical = a
        .output()
        .iter()
        .zip(b.output())
        .all(|(x, y)| x.to_bits() == y.to_bits());

    let zero = GcnHyper {
        alpha: 0.0,
        eta: 0.0,
        dropout: 0.0,
    };
    let single = gcn_forward(&p1, &h, &weights[..1], zero, Mode::Eval).map_err(|e| e.to_string())?;
    let oracle = p1.dot(&h).mapv(sigmoid);
    let exact = single.output() == &oracle;
    ensure(
        identical && exact,
        format!("alpha=1 independent of P (0 ulp): {identical}; alpha=0, eta=0 equals sigmoid(PH): {exact}"),
    )
}

// ----------------------------------------------------------------- training

fn training_sanity() -> Outcome {
    let start = Instant::now();
    let city = generate_synthetic_city(&SyntheticSpec::default(), 0).map_err(|e| e.to_string())?;
    let cfg = RunConfig::default();
    let run = run_pipeline(&city.dataset, &cfg, &[AblationTag::Full]).map_err(|e| e.to_string())?;
    let log = &run.variants[0].model.log;
    let ratio = log.last / log.initial;
    let secs = start.elapsed().as_secs_f64();
    ensure(
        ratio <= 0.5 && secs < 300.0 && log.step_loss.len() <= 60,
        format!(
            "{} circles, {} epochs, loss {:.1} -> {:.1} (ratio {ratio:.3}), pipeline {secs:.1}s",
            city.dataset.n_circles(),
            log.step_loss.len(),
            log.initial,
            log.last
        ),
    )
}

fn planted_signal() -> Outcome {
    let spec = SyntheticSpec {
        n_circles: 100,
        noise_scale: 0.1,
        ..SyntheticSpec::default()
    };
    let city = generate_synthetic_city(&spec, 0).map_err(|e| e.to_string())?;
    let run = run_pipeline(
        &city.dataset,
        &RunConfig::default(),
        &[AblationTag::Full, AblationTag::WithoutTopK],
    )
    .map_err(|e| e.to_string())?;
    let full = &run.variants[0].report;
    let ablated = &run.variants[1].report;
    let per: Vec<String> = full.diseases.iter().map(|d| format!("{} {:.3}", d.disease, d.mean.r2)).collect();
    let all = full.diseases.iter().all(|d| d.mean.r2 >= 0.5);
    let order = full.mean.r2 >= ablated.mean.r2;
    ensure(
        all && order,
        format!(
            "R2 {}; mean full {:.3} vs w/o top-k {:.3}",
            per.join(", "),
            full.mean.r2,
            ablated.mean.r2
        ),
    )
}

// ------------------------------------------------------------------ metrics

fn metric_identities() -> Outcome {
    let y = [1.0, 2.0, 3.0];
    let perfect = metrics(&y, &y).map_err(|e| e.to_string())?;
    let mean = metrics(&y, &[2.0; 3]).map_err(|e| e.to_string())?;
    let hand = metrics(&y, &[1.0, 2.0, 4.0]).map_err(|e| e.to_string())?;
    let ok_perfect = perfect.mae == 0.0 && perfect.rmse == 0.0 && perfect.r2 == 1.0;
    let ok_mean = mean.r2.abs() <= 1e-12;
    let ok_hand = (hand.mae - 1.0 / 3.0).abs() <= 1e-9
        && (hand.rmse - 1.0 / 3f64.sqrt()).abs() <= 1e-9
        && (hand.r2 - 0.5).abs() <= 1e-9;
    let mut r = rng(10);
    let mut violations = 0;
    for _ in 0..1000 {
        let n = r.random_range(2..40);
        let t: Vec<f64> = (0..n).map(|_| r.random_range(-10.0..10.0)).collect();
        let p: Vec<f64> = (0..n).map(|_| r.random_range(-10.0..10.0)).collect();
        let m = metrics(&t, &p).map_err(|e| e.to_string())?;
        if m.mae > m.rmse {
            violations += 1;
        }
    }
    ensure(
        ok_perfect && ok_mean && ok_hand && violations == 0,
        format!(
            "perfect {ok_perfect}, mean predictor {ok_mean}, hand case ({:.6}, {:.6}, {:.6}), MAE>RMSE in {violations}/1000",
            hand.mae, hand.rmse, hand.r2
        ),
    )
}

fn loss_identities() -> Outcome {
    let mut r = rng(11);
    let one = random(&mut r, 1, 4);
    let other = random(&mut r, 1, 4);
    let n1 = infonce_loss(one.view(), other.view(), 0.5).map_err(|e| e.to_string())?;
    let n = 6;
    let row = random(&mut r, 1, 4);
    let uniform = Array2::from_shape_fn((n, 4), |(_, k)| row[[0, k]]);
    let un = infonce_loss(uniform.view(), uniform.view(), 0.07).map_err(|e| e.to_string())?;
    let b = 5;
    let batch = Array2::from_shape_fn((b, 4), |(_, k)| row[[0, k]]);
    let sc = supcon_loss(batch.view(), &[2; 5], 0.005).map_err(|e| e.to_string())?;
    let x = Array1::from(vec![0.3, -1.2, 2.0]);
    let p = Array1::from(vec![1.0, 0.5, -0.25]);
    let margin = 1.0;
    let t = triplet_geo_loss(x.view(), p.view(), p.view(), margin);
    let ok = n1 == 0.0
        && (un - (n as f64).ln()).abs() <= 1e-9
        && (sc - b as f64 * ((b - 1) as f64).ln()).abs() <= 1e-9
        && t == margin;
    ensure(
        ok,
        format!("InfoNCE N=1 {n1}, uniform {un:.12} vs ln {n}, supcon {sc:.12}, triplet {t}"),
    )
}

// -------------------------------------------------------------- determinism

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn manifest_hash(bytes: &[u8]) -> String {
    let v: serde_json::Value = serde_json::from_slice(bytes).unwrap();
    v["config_hash"].as_str().unwrap().to_string()
}

fn determinism() -> Outcome {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/defaults.cfg");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let out = Command::new(env!("CARGO_BIN_EXE_curegraph"))
            .args(["pipeline", "--config"])
            .arg(&config)
            .args(["--seed", "7", "--out"])
            .arg(d.path())
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!(
                "pipeline exited {:?}: {}",
                out.status.code(),
                String::from_utf8_lossy(&out.stderr)
            ));
        }
    }
    let mut a = files(dirs[0].path());
    let mut b = files(dirs[1].path());
    let manifest = PathBuf::from("manifest.json");
    let (ma, mb) = (a.remove(&manifest).unwrap(), b.remove(&manifest).unwrap());
    let hashes = manifest_hash(&ma) == manifest_hash(&mb);
    let differing: Vec<String> = a
        .iter()
        .filter(|(k, v)| b.get(*k) != Some(*v))
        .map(|(k, _)| k.display().to_string())
        .collect();
    let same_names = a.keys().eq(b.keys());
    let required = ["encode/h_text.cgf", "graph/edges.csv", "train/embeddings.cgf", "eval/report.json"];
    let present = required.iter().all(|f| a.contains_key(Path::new(f)));
    ensure(
        hashes && same_names && differing.is_empty() && present,
        format!(
            "{} files compared, differing: {differing:?}, manifest hashes equal: {hashes}",
            a.len()
        ),
    )
}

fn main() {
    let mut gate = Gate { failed: Vec::new() };
    let start = Instant::now();
    gate.run("gradient: geospatial triplet", grad_triplet);
    gate.run("gradient: augmented-view InfoNCE", grad_augment_infonce);
    gate.run("gradient: visual encoder total", grad_visual);
    gate.run("gradient: cross-modal InfoNCE", grad_cross_modal);
    gate.run("gradient: supervised contrastive", grad_supcon);
    gate.run("gradient: graph objective", grad_objective);
    let grad_secs = start.elapsed().as_secs_f64();
    gate.run("gradient: runtime", || {
        ensure(grad_secs < 10.0, format!("{grad_secs:.2}s for all gradient checks"))
    });
    gate.run("spatial oracle (10 circles)", || {
        let t = Instant::now();
        let out = spatial_oracle()?;
        let secs = t.elapsed().as_secs_f64();
        ensure(secs < 1.0, format!("{out}, {secs:.3}s"))
    });
    gate.run("graph oracle (4 circles)", graph_oracle);
    gate.run("propagation degeneracy", gcn_degeneracy);
    gate.run("training sanity (50 circles)", training_sanity);
    gate.run("planted signal (100 circles)", planted_signal);
    gate.run("metric identities", metric_identities);
    gate.run("determinism (two pipeline runs)", determinism);
    gate.run("loss identities", loss_identities);
    if gate.failed.is_empty() {
        println!("acceptance: all checks passed");
    } else {
        println!("acceptance: {} failed: {}", gate.failed.len(), gate.failed.join(", "));
        std::process::exit(1);
    }
}
