//! Contrastive objectives and their exact gradients with respect to the
//! embeddings they consume.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};
use crate::linalg::norm;

/// Hinge triplet loss `max(0, m + |x - x_p| - |x - x_n|)`.
pub fn triplet_geo_loss(x: ArrayView1<f64>, pos: ArrayView1<f64>, neg: ArrayView1<f64>, margin: f64) -> f64 {
    let dp = norm((&x - &pos).view());
    let dn = norm((&x - &neg).view());
    (margin + (dp - dn)).max(0.0)
}

pub struct TripletGrad {
    pub loss: f64,
    pub anchor: Array1<f64>,
    pub positive: Array1<f64>,
    pub negative: Array1<f64>,
}

/// Loss and gradient. The subgradient is 0 on the hinge and wherever a
/// distance is exactly 0.
pub fn triplet_geo_grad(x: ArrayView1<f64>, pos: ArrayView1<f64>, neg: ArrayView1<f64>, margin: f64) -> TripletGrad {
    let up = &x - &pos;
    let un = &x - &neg;
    let dp = norm(up.view());
    let dn = norm(un.view());
    let raw = margin + (dp - dn);
    let d = x.len();
    if raw <= 0.0 {
        return TripletGrad {
            loss: 0.0,
            anchor: Array1::zeros(d),
            positive: Array1::zeros(d),
            negative: Array1::zeros(d),
        };
    }
    let gp = if dp > 0.0 { up / dp } else { Array1::zeros(d) };
    let gn = if dn > 0.0 { un / dn } else { Array1::zeros(d) };
    TripletGrad {
        loss: raw,
        anchor: &gp - &gn,
        positive: -gp,
        negative: gn,
    }
}

/// Row-normalize; error on a zero row.
fn normalize_rows(m: ArrayView2<f64>, what: &str) -> Result<(Array2<f64>, Array1<f64>)> {
    let norms: Array1<f64> = m.axis_iter(Axis(0)).map(norm).collect();
    if let Some(i) = norms.iter().position(|&n| n == 0.0 || !n.is_finite()) {
        return Err(Error::Degenerate(format!("{what} row {i} has zero or non-finite norm")));
    }
    let mut out = m.to_owned();
    for (mut row, &n) in out.axis_iter_mut(Axis(0)).zip(norms.iter()) {
        row /= n;
    }
    Ok((out, norms))
}

/// Backpropagate through `x_hat = x / |x|` row-wise.
fn normalize_backward(hat: &Array2<f64>, norms: &Array1<f64>, g_hat: &Array2<f64>) -> Array2<f64> {
    let mut g = g_hat.clone();
    Zip::from(g.rows_mut())
        .and(hat.rows())
        .and(norms)
        .for_each(|mut gr, hr, &n| {
            let proj = gr.dot(&hr);
            gr.scaled_add(-proj, &hr);
            gr /= n;
        });
    g
}

/// Log-softmax row helper: returns `(logsumexp, softmax)` of `row / tau`
/// restricted to `mask`, stabilized by max subtraction.
fn masked_softmax(row: ArrayView1<f64>, tau: f64, mask: impl Fn(usize) -> bool) -> (f64, Vec<f64>) {
    let mut max = f64::NEG_INFINITY;
    for (j, &s) in row.iter().enumerate() {
        if mask(j) {
            max = max.max(s / tau);
        }
    }
    let mut total = 0.0;
    let mut probs = vec![0.0; row.len()];
    for (j, &s) in row.iter().enumerate() {
        if mask(j) {
            let e = (s / tau - max).exp();
            probs[j] = e;
            total += e;
        }
    }
    for p in &mut probs {
        *p /= total;
    }
    (max + total.ln(), probs)
}

pub struct PairGrad {
    pub loss: f64,
    pub anchors: Array2<f64>,
    pub positives: Array2<f64>,
}

/// Mean InfoNCE over rows: anchor `i` against all positives, with positive
/// `i` as its match. Similarity is cosine.
pub fn infonce_loss(anchors: ArrayView2<f64>, positives: ArrayView2<f64>, tau: f64) -> Result<f64> {
    Ok(infonce_grad(anchors, positives, tau)?.loss)
}

pub fn infonce_grad(anchors: ArrayView2<f64>, positives: ArrayView2<f64>, tau: f64) -> Result<PairGrad> {
    let n = anchors.nrows();
    if n == 0 || positives.nrows() != n || anchors.ncols() != positives.ncols() {
        return Err(Error::Argument(format!(
            "InfoNCE needs matching non-empty batches, got {:?} and {:?}",
            anchors.dim(),
            positives.dim()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::Argument(format!("temperature must be positive, got {tau}")));
    }
    let (a_hat, a_norm) = normalize_rows(anchors, "anchor")?;
    let (p_hat, p_norm) = normalize_rows(positives, "positive")?;
    let sims = a_hat.dot(&p_hat.t());
    let mut loss = 0.0;
    let mut g_sims = Array2::zeros((n, n));
    for i in 0..n {
        let (lse, probs) = masked_softmax(sims.row(i), tau, |_| true);
        loss += lse - sims[[i, i]] / tau;
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            g_sims[[i, j]] = (probs[j] - target) / (tau * n as f64);
        }
    }
    let g_a_hat = g_sims.dot(&p_hat);
    let g_p_hat = g_sims.t().dot(&a_hat);
    Ok(PairGrad {
        loss: loss / n as f64,
        anchors: normalize_backward(&a_hat, &a_norm, &g_a_hat),
        positives: normalize_backward(&p_hat, &p_norm, &g_p_hat),
    })
}

/// Supervised contrastive loss, summed over anchors:
/// `sum_i -1/|P(i)| sum_{p in P(i)} log softmax_{j != i}(s_ij / tau)[p]`.
pub fn supcon_loss(embeddings: ArrayView2<f64>, labels: &[u32], tau: f64) -> Result<f64> {
    Ok(supcon_grad(embeddings, labels, tau)?.0)
}

pub fn supcon_grad(embeddings: ArrayView2<f64>, labels: &[u32], tau: f64) -> Result<(f64, Array2<f64>)> {
    let b = embeddings.nrows();
    if labels.len() != b {
        return Err(Error::Argument(format!("{b} embeddings but {} labels", labels.len())));
    }
    if !(tau > 0.0) {
        return Err(Error::Argument(format!("temperature must be positive, got {tau}")));
    }
    for i in 0..b {
        if !(0..b).any(|j| j != i && labels[j] == labels[i]) {
            return Err(Error::BatchComposition(format!(
                "sample {i} (label {}) has no positive in the batch",
                labels[i]
            )));
        }
    }
    let (hat, norms) = normalize_rows(embeddings, "embedding")?;
    let sims = hat.dot(&hat.t());
    let mut loss = 0.0;
    let mut g_sims = Array2::<f64>::zeros((b, b));
    for i in 0..b {
        let (lse, probs) = masked_softmax(sims.row(i), tau, |j| j != i);
        let positives: Vec<usize> = (0..b).filter(|&j| j != i && labels[j] == labels[i]).collect();
        let inv = 1.0 / positives.len() as f64;
        for &p in &positives {
            loss -= inv * (sims[[i, p]] / tau - lse);
        }
        for j in 0..b {
            if j == i {
                continue;
            }
            let pos = if labels[j] == labels[i] { inv } else { 0.0 };
            g_sims[[i, j]] = (probs[j] - pos) / tau;
        }
    }
    // s_ij depends on both rows i and j.
    let sym = &g_sims + &g_sims.t();
    let g_hat = sym.dot(&hat);
    Ok((loss, normalize_backward(&hat, &norms, &g_hat)))
}

/// Projected visual batch: triplets plus two augmented views per anchor.
pub struct VisualBatch<'a> {
    pub anchors: ArrayView2<'a, f64>,
    pub positives: ArrayView2<'a, f64>,
    pub negatives: ArrayView2<'a, f64>,
    pub view_a: ArrayView2<'a, f64>,
    pub view_b: ArrayView2<'a, f64>,
}

pub struct VisualGrad {
    pub loss: f64,
    pub triplet: f64,
    pub augment: f64,
    pub anchors: Array2<f64>,
    pub positives: Array2<f64>,
    pub negatives: Array2<f64>,
    pub view_a: Array2<f64>,
    pub view_b: Array2<f64>,
}

/// Mean triplet loss plus InfoNCE over the augmented pairs.
pub fn visual_encoder_loss(batch: &VisualBatch, margin: f64, tau: f64) -> Result<f64> {
    Ok(visual_encoder_grad(batch, margin, tau)?.loss)
}

pub fn visual_encoder_grad(batch: &VisualBatch, margin: f64, tau: f64) -> Result<VisualGrad> {
    let n = batch.anchors.nrows();
    if n == 0 || batch.positives.nrows() != n || batch.negatives.nrows() != n {
        return Err(Error::Argument("triplet batch sizes differ or are empty".into()));
    }
    let mut ga = Array2::zeros(batch.anchors.raw_dim());
    let mut gp = Array2::zeros(batch.positives.raw_dim());
    let mut gn = Array2::zeros(batch.negatives.raw_dim());
    let mut triplet = 0.0;
    let inv = 1.0 / n as f64;
    for i in 0..n {
        let t = triplet_geo_grad(batch.anchors.row(i), batch.positives.row(i), batch.negatives.row(i), margin);
        triplet += t.loss * inv;
        ga.row_mut(i).scaled_add(inv, &t.anchor);
        gp.row_mut(i).scaled_add(inv, &t.positive);
        gn.row_mut(i).scaled_add(inv, &t.negative);
    }
    let aug = infonce_grad(batch.view_a, batch.view_b, tau)?;
    Ok(VisualGrad {
        loss: triplet + aug.loss,
        triplet,
        augment: aug.loss,
        anchors: ga,
        positives: gp,
        negatives: gn,
        view_a: aug.anchors,
        view_b: aug.positives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn triplet_identities() {
        let x = array![0.0, 0.0];
        assert_eq!(triplet_geo_loss(x.view(), x.view(), array![3.0, 0.0].view(), 1.0), 0.0);
        let p = array![0.4, -0.2];
        assert_eq!(triplet_geo_loss(x.view(), p.view(), p.view(), 0.7), 0.7);
    }

    #[test]
    fn triplet_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let v = random(&mut rng, 3, 4);
            let (x, p, n) = (v.row(0), v.row(1), v.row(2));
            let dp: f64 = (0..4).map(|k| (x[k] - p[k]).powi(2)).sum::<f64>().sqrt();
            let dn: f64 = (0..4).map(|k| (x[k] - n[k]).powi(2)).sum::<f64>().sqrt();
            let expected = if 1.0 + dp - dn > 0.0 { 1.0 + dp - dn } else { 0.0 };
            assert!((triplet_geo_loss(x, p, n, 1.0) - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn infonce_single_pair_is_zero() {
        let a = array![[0.3, -1.0, 2.0]];
        let p = array![[-4.0, 0.1, 0.2]];
        assert_eq!(infonce_loss(a.view(), p.view(), 0.05).unwrap(), 0.0);
    }

    #[test]
    fn infonce_uniform_similarity_is_log_n() {
        // every anchor equals every positive: all similarities are 1
        let row = array![0.5, 0.5, -1.0];
        for n in [2usize, 3, 7] {
            let m = Array2::from_shape_fn((n, 3), |(_, k)| row[k]);
            for tau in [0.05, 1.0, 3.0] {
                let l = infonce_loss(m.view(), m.view(), tau).unwrap();
                assert!((l - (n as f64).ln()).abs() < 1e-9, "n={n} tau={tau}");
            }
        }
    }

    #[test]
    fn infonce_rejects_zero_rows() {
        let a = array![[0.0, 0.0], [1.0, 0.0]];
        assert!(matches!(infonce_loss(a.view(), a.view(), 1.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn supcon_uniform_batch() {
        let b = 6;
        let m = Array2::from_shape_fn((b, 2), |(_, k)| if k == 0 { 1.0 } else { 2.0 });
        let labels = [1, 1, 2, 2, 2, 1];
        let l = supcon_loss(m.view(), &labels, 0.005).unwrap();
        assert!((l - b as f64 * ((b - 1) as f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn supcon_two_samples_direct() {
        // B = 2: each sample's only candidate is the other one, so each term
        // is -log(1) = 0 whatever the similarity.
        let m = array![[1.0, 0.0], [-1.0, 0.05]];
        let l = supcon_loss(m.view(), &[4, 4], 0.01).unwrap();
        assert!(l.abs() < 1e-9);
    }

    #[test]
    fn supcon_requires_positive() {
        let m = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        assert!(matches!(supcon_loss(m.view(), &[1, 1, 2], 1.0), Err(Error::BatchComposition(_))));
    }

    #[test]
    fn supcon_matches_hand_expansion_for_pairs() {
        // labels pair (0,2) and (1,3): each anchor has exactly one positive.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random(&mut rng, 4, 3);
        let tau = 0.5;
        let cos = |i: usize, j: usize| {
            let (a, b) = (m.row(i), m.row(j));
            a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt())
        };
        let partner = [2, 3, 0, 1];
        let mut expected = 0.0;
        for i in 0..4 {
            let denom: f64 = (0..4).filter(|&j| j != i).map(|j| (cos(i, j) / tau).exp()).sum();
            expected -= ((cos(i, partner[i]) / tau).exp() / denom).ln();
        }
        let l = supcon_loss(m.view(), &[0, 1, 0, 1], tau).unwrap();
        assert!((l - expected).abs() < 1e-12);
    }

    #[test]
    fn losses_non_negative_on_random_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let a = random(&mut rng, 5, 4);
            let p = random(&mut rng, 5, 4);
            assert!(infonce_loss(a.view(), p.view(), 0.1).unwrap() >= 0.0);
            let labels = [0, 0, 1, 1, 1];
            assert!(supcon_loss(a.view(), &labels, 0.05).unwrap() >= 0.0);
            assert!(triplet_geo_loss(a.row(0), a.row(1), a.row(2), 1.0) >= 0.0);
        }
    }

    #[test]
    fn infonce_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, 6, 5);
        let p = random(&mut rng, 6, 5);
        let base = infonce_loss(a.view(), p.view(), 0.2).unwrap();
        let scaled = infonce_loss((&a * 7.5).view(), (&p * 7.5).view(), 0.2).unwrap();
        assert!((base - scaled).abs() < 1e-9);
    }

    #[test]
    fn visual_loss_is_sum_of_parts() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m: Vec<Array2<f64>> = (0..5).map(|_| random(&mut rng, 3, 4)).collect();
        let batch = VisualBatch {
            anchors: m[0].view(),
            positives: m[1].view(),
            negatives: m[2].view(),
            view_a: m[3].view(),
            view_b: m[4].view(),
        };
        let total = visual_encoder_loss(&batch, 1.0, 0.05).unwrap();
        let trip: f64 = (0..3)
            .map(|i| triplet_geo_loss(m[0].row(i), m[1].row(i), m[2].row(i), 1.0))
            .sum::<f64>()
            / 3.0;
        let aug = infonce_loss(m[3].view(), m[4].view(), 0.05).unwrap();
        assert!((total - (trip + aug)).abs() < 1e-12);
    }
}
