//! Deterministic synthetic city.
//!
//! Each circle carries a small vector of latent factors drawn from a smooth
//! spatial field plus a local perturbation, bounded in `[-1, 1]`. The same
//! latents drive every modality (linear mixes into the feature vectors, the
//! POI category mix, review sentiment) and the disease counts, which are an
//! exact affine function of the latents plus optional Gaussian noise. The
//! latents and the affine map are written to a sidecar so tests can check
//! how much of the planted signal the pipeline recovers.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::{save_dataset, Dataset, DatasetPaths};
use super::format::write_json;
use super::types::{
    default_vocabulary, DiseaseLabels, FeatureKind, LivingCircle, Poi, RawFeatureMatrix,
    StreetAssignment,
};
use crate::error::{Error, Result};
use crate::seed::{stream_rng, Stream};

pub const LATENTS_FILE: &str = "latents.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_circles: usize,
    pub dim: usize,
    pub n_latents: usize,
    pub images_per_circle: (usize, usize),
    pub pois_per_circle: (usize, usize),
    pub reviews_per_poi: (usize, usize),
    /// Probability that an extra review is stored with rating 0.
    pub unrated_fraction: f64,
    /// Label noise standard deviation, as a fraction of the cross-circle
    /// standard deviation of each disease's noiseless counts.
    pub noise_scale: f64,
    /// Multiplier on every generated feature value. At 1.0 components are
    /// roughly unit-variance; `1/sqrt(dim)` gives roughly unit-norm rows.
    pub feature_scale: f64,
    pub extent_km: f64,
    pub min_separation_km: f64,
    pub center: (f64, f64),
    pub circles_per_street: usize,
    pub vocab: Vec<String>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_circles: 50,
            dim: 768,
            n_latents: 4,
            images_per_circle: (2, 5),
            pois_per_circle: (1, 4),
            reviews_per_poi: (1, 3),
            unrated_fraction: 0.05,
            noise_scale: 0.1,
            feature_scale: 1.0,
            extent_km: 20.0,
            min_separation_km: 0.2,
            center: (39.9042, 116.4074),
            circles_per_street: 5,
            vocab: default_vocabulary(),
        }
    }
}

/// Affine disease model: `count_k = base_k + scale_k * coef_k . z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiseaseModel {
    pub base: [f64; 4],
    pub scale: [f64; 4],
    pub coef: [Vec<f64>; 4],
}

impl DiseaseModel {
    pub fn evaluate(&self, z: &[f64]) -> [f64; 4] {
        let mut out = [0.0; 4];
        for k in 0..4 {
            let lin: f64 = self.coef[k].iter().zip(z).map(|(a, b)| a * b).sum();
            out[k] = self.base[k] + self.scale[k] * lin;
        }
        out
    }
}

/// Sidecar with everything needed to re-derive the planted signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub noise_scale: f64,
    pub circle_ids: Vec<String>,
    pub latents: Vec<Vec<f64>>,
    pub disease_model: DiseaseModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCity {
    pub dataset: Dataset,
    pub truth: GroundTruth,
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| gaussian(rng))
}

fn in_range<R: Rng>(rng: &mut R, (lo, hi): (usize, usize)) -> usize {
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

pub fn generate_synthetic_city(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticCity> {
    if spec.n_circles < 2 {
        return Err(Error::Argument(format!(
            "n_circles must be at least 2, got {}",
            spec.n_circles
        )));
    }
    if spec.dim == 0 || spec.n_latents == 0 || spec.vocab.is_empty() {
        return Err(Error::Argument("dim, n_latents and vocab must be non-empty".into()));
    }
    if spec.images_per_circle.0 == 0 || spec.reviews_per_poi.0 == 0 {
        return Err(Error::Argument(
            "every circle needs an image and every POI a review".into(),
        ));
    }
    if !(spec.feature_scale.is_finite() && spec.feature_scale > 0.0) {
        return Err(Error::Argument(format!(
            "feature_scale must be positive, got {}",
            spec.feature_scale
        )));
    }
    let mut rng = stream_rng(seed, Stream::Synthetic, 0);
    let n = spec.n_circles;
    let dim = spec.dim;
    let l = spec.n_latents;
    let n_cat = spec.vocab.len();

    // Positions in km relative to the city centre, with a minimum spacing.
    let mut pos: Vec<(f64, f64)> = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while pos.len() < n {
        attempts += 1;
        if attempts > 1000 * n {
            return Err(Error::Argument(
                "cannot place circles with the requested minimum separation".into(),
            ));
        }
        let p = (
            rng.random_range(-0.5..0.5) * spec.extent_km,
            rng.random_range(-0.5..0.5) * spec.extent_km,
        );
        let ok = pos.iter().all(|q| {
            ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt() >= spec.min_separation_km
        });
        if ok {
            pos.push(p);
        }
    }

    // Smooth latent field: three plane waves per factor plus local noise.
    let mut waves = Vec::with_capacity(l);
    for _ in 0..l {
        let w: Vec<(f64, f64, f64, f64)> = (0..3)
            .map(|_| {
                let theta = rng.random_range(0.0..2.0 * PI);
                let wavelength = rng.random_range(0.5..1.5) * spec.extent_km;
                let k = 2.0 * PI / wavelength;
                (k * theta.cos(), k * theta.sin(), rng.random_range(0.0..2.0 * PI), 0.25)
            })
            .collect();
        waves.push(w);
    }
    let latents: Vec<Vec<f64>> = pos
        .iter()
        .map(|&(x, y)| {
            waves
                .iter()
                .map(|w| {
                    let smooth: f64 = w.iter().map(|&(kx, ky, ph, a)| a * (kx * x + ky * y + ph).cos()).sum();
                    smooth + rng.random_range(-0.25..0.25)
                })
                .collect()
        })
        .collect();

    // Linear mixes from latents into each modality.
    let mix_image = gaussian_matrix(&mut rng, dim, l);
    let mix_text = gaussian_matrix(&mut rng, dim, l);
    let mix_review = gaussian_matrix(&mut rng, dim, l);
    let sentiment_dir: Vec<f64> = (0..dim).map(|_| gaussian(&mut rng)).collect();
    let category_mix = gaussian_matrix(&mut rng, n_cat, l) * 1.5;
    let sentiment_coef: Vec<f64> = (0..l).map(|_| gaussian(&mut rng)).collect();
    let sentiment_norm: f64 = sentiment_coef.iter().map(|v| v.abs()).sum::<f64>().max(1e-12);

    let unit = spec.feature_scale;
    let poi_category = RawFeatureMatrix::new(
        FeatureKind::PoiCategory,
        n_cat,
        dim,
        (0..n_cat * dim).map(|_| (unit * gaussian(&mut rng)) as f32).collect(),
    );

    let mix = |m: &Array2<f64>, z: &[f64], row: usize| -> f64 {
        (0..z.len()).map(|j| m[[row, j]] * z[j]).sum()
    };

    let mut images = Vec::new();
    let mut texts = Vec::new();
    let mut reviews = Vec::new();
    let mut circles = Vec::with_capacity(n);
    let mut pois = Vec::new();
    let (lat0, lon0) = spec.center;
    let km_per_deg_lat = 111.32;
    let km_per_deg_lon = 111.32 * lat0.to_radians().cos();

    for (i, (&(x, y), z)) in pos.iter().zip(&latents).enumerate() {
        let id = format!("c{i:04}");
        let offset: Vec<f64> = (0..dim).map(|_| 0.3 * gaussian(&mut rng)).collect();
        let m_i = in_range(&mut rng, spec.images_per_circle);
        let mut image_row_ids = Vec::with_capacity(m_i);
        for _ in 0..m_i {
            image_row_ids.push((images.len() / dim) as u32);
            for d in 0..dim {
                images.push((unit * (mix(&mix_image, z, d) + offset[d] + 0.5 * gaussian(&mut rng))) as f32);
            }
        }
        let text_row_id = (texts.len() / dim) as u32;
        for d in 0..dim {
            texts.push((unit * (mix(&mix_text, z, d) + 0.5 * gaussian(&mut rng))) as f32);
        }

        // Category mix follows a softmax of the latents.
        let logits: Vec<f64> = (0..n_cat).map(|g| mix(&category_mix, z, g)).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        let sentiment = sentiment_coef.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() / sentiment_norm;

        let o_i = in_range(&mut rng, spec.pois_per_circle);
        let mut poi_ids = Vec::with_capacity(o_i);
        for j in 0..o_i {
            let mut u = rng.random_range(0.0..total);
            let mut g = 0;
            while g + 1 < n_cat && u >= weights[g] {
                u -= weights[g];
                g += 1;
            }
            let poi_id = format!("{id}-p{j}");
            let n_rev = in_range(&mut rng, spec.reviews_per_poi);
            let mut review_row_ids = Vec::new();
            let mut rating_labels = Vec::new();
            for r in 0..n_rev {
                let rating = (3.0 + 1.5 * sentiment + 0.8 * gaussian(&mut rng)).round().clamp(1.0, 5.0) as u8;
                let stored = if r > 0 && rng.random::<f64>() < spec.unrated_fraction { 0 } else { rating };
                review_row_ids.push((reviews.len() / dim) as u32);
                rating_labels.push(stored);
                let s = (rating as f64 - 3.0) / 2.0;
                for d in 0..dim {
                    reviews.push((unit * (mix(&mix_review, z, d) + s * sentiment_dir[d] + 0.5 * gaussian(&mut rng))) as f32);
                }
            }
            pois.push(Poi {
                id: poi_id.clone(),
                circle_id: id.clone(),
                category: spec.vocab[g].clone(),
                review_row_ids,
                rating_labels,
            });
            poi_ids.push(poi_id);
        }

        let households = rng.random_range(1000..=3000u64);
        let elderly_pop = (households as f64 * rng.random_range(0.3..0.45)).round() as u64;
        circles.push(LivingCircle {
            id,
            lat: lat0 + y / km_per_deg_lat,
            lon: lon0 + x / km_per_deg_lon,
            households,
            elderly_pop,
            image_row_ids,
            text_row_id,
            poi_ids,
        });
    }

    // Disease model with L1-normalised coefficients so |coef . z| <= 1.
    let base = [60.0, 180.0, 80.0, 40.0];
    let scale = [20.0, 50.0, 25.0, 12.0];
    let coef: [Vec<f64>; 4] = std::array::from_fn(|_| {
        let raw: Vec<f64> = (0..l).map(|_| gaussian(&mut rng)).collect();
        let norm: f64 = raw.iter().map(|v| v.abs()).sum::<f64>().max(1e-12);
        raw.into_iter().map(|v| v / norm).collect()
    });
    let disease_model = DiseaseModel { base, scale, coef };
    let clean: Vec<[f64; 4]> = latents.iter().map(|z| disease_model.evaluate(z)).collect();
    let spread: [f64; 4] = std::array::from_fn(|k| {
        let mean = clean.iter().map(|c| c[k]).sum::<f64>() / n as f64;
        (clean.iter().map(|c| (c[k] - mean).powi(2)).sum::<f64>() / n as f64).sqrt()
    });
    let labels: Vec<DiseaseLabels> = circles
        .iter()
        .zip(clean)
        .map(|(c, mut counts)| {
            for k in 0..4 {
                if spec.noise_scale > 0.0 {
                    counts[k] += spec.noise_scale * spread[k] * gaussian(&mut rng);
                }
                counts[k] = counts[k].clamp(0.0, c.elderly_pop as f64);
            }
            DiseaseLabels {
                circle_id: c.id.clone(),
                mci: counts[0],
                hypertension: counts[1],
                diabetes: counts[2],
                mdd: counts[3],
            }
        })
        .collect();

    // Streets: square grid cells over the extent.
    let side = ((n as f64 / spec.circles_per_street.max(1) as f64).sqrt().ceil() as usize).max(1);
    let cell = spec.extent_km / side as f64;
    let streets = circles
        .iter()
        .zip(&pos)
        .map(|(c, &(x, y))| {
            let gx = (((x + spec.extent_km / 2.0) / cell) as usize).min(side - 1);
            let gy = (((y + spec.extent_km / 2.0) / cell) as usize).min(side - 1);
            StreetAssignment {
                circle_id: c.id.clone(),
                street_id: format!("s{gy:02}_{gx:02}"),
            }
        })
        .collect();

    let dataset = Dataset {
        vocab: spec.vocab.clone(),
        circles,
        pois,
        labels,
        streets,
        images: RawFeatureMatrix::new(FeatureKind::Image, images.len() / dim, dim, images),
        circle_text: RawFeatureMatrix::new(FeatureKind::CircleText, texts.len() / dim, dim, texts),
        poi_review: RawFeatureMatrix::new(FeatureKind::PoiReview, reviews.len() / dim, dim, reviews),
        poi_category,
    };
    let truth = GroundTruth {
        seed,
        noise_scale: spec.noise_scale,
        circle_ids: dataset.circles.iter().map(|c| c.id.clone()).collect(),
        latents,
        disease_model,
    };
    Ok(SyntheticCity { dataset, truth })
}

/// Generate and write a synthetic city plus its ground-truth sidecar.
pub fn write_synthetic_city(spec: &SyntheticSpec, seed: u64, dir: &Path) -> Result<DatasetPaths> {
    let city = generate_synthetic_city(spec, seed)?;
    let paths = save_dataset(&city.dataset, dir)?;
    write_json(&dir.join(LATENTS_FILE), &city.truth)?;
    Ok(paths)
}
