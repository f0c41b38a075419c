//! Three-stage contrastive training of the projection heads.
//!
//! 1. visual: triplets over images (positive from the same circle, negative
//!    from a circle farther than the living-circle radius) plus InfoNCE
//!    between two dropout views of each anchor;
//! 2. text: cross-modal InfoNCE between projected circle text and the
//!    circle's projected visual feature, in-batch negatives;
//! 3. POI: supervised contrastive loss over two dropout views of each
//!    review (concatenated with its category row), labelled by rating.
//!
//! Every stage reports the loss of a fixed probe batch plan evaluated before
//! and after training, plus the mean training loss per epoch.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::aggregate::CircleModalFeatures;
use super::augment::dropout_view;
use super::head::{HeadGrad, ProjectionHead};
use super::loss::{infonce_grad, supcon_grad, visual_encoder_grad, VisualBatch};
use crate::data::{Dataset, RawFeatureMatrix, RunConfig};
use crate::error::{Error, Result};
use crate::modality::Modality;
use crate::optim::{Adam, AdamConfig};
use crate::seed::{stream_rng, Stream};
use crate::spatial::{haversine_km, LatLon};

const PROBE_COUNTER: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderHeads {
    pub text: ProjectionHead,
    pub visual: ProjectionHead,
    pub poi: ProjectionHead,
}

impl EncoderHeads {
    /// Seeded initialization; the POI head reads `2 * raw_dim` inputs.
    pub fn init(raw_dim: usize, embed_dim: usize, seed: u64) -> Self {
        let mk = |m: Modality, input: usize| {
            let mut rng = stream_rng(seed, Stream::HeadInit, m.index() as u32);
            ProjectionHead::init(&mut rng, m, input, embed_dim)
        };
        Self {
            text: mk(Modality::Text, raw_dim),
            visual: mk(Modality::Visual, raw_dim),
            poi: mk(Modality::Poi, 2 * raw_dim),
        }
    }

    pub fn get(&self, m: Modality) -> &ProjectionHead {
        match m {
            Modality::Text => &self.text,
            Modality::Visual => &self.visual,
            Modality::Poi => &self.poi,
        }
    }

    pub fn get_mut(&mut self, m: Modality) -> &mut ProjectionHead {
        match m {
            Modality::Text => &mut self.text,
            Modality::Visual => &mut self.visual,
            Modality::Poi => &mut self.poi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCurve {
    pub stage: String,
    pub initial: f64,
    #[serde(rename = "final")]
    pub last: f64,
    pub epoch_mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderLosses {
    pub visual: StageCurve,
    pub text: StageCurve,
    pub poi: StageCurve,
}

/// Projected per-circle features, one `n x d` matrix per modality.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedFeatures {
    pub text: Array2<f64>,
    pub visual: Array2<f64>,
    pub poi: Array2<f64>,
}

impl ProjectedFeatures {
    pub fn compute(heads: &EncoderHeads, raw: &CircleModalFeatures) -> Result<Self> {
        Ok(Self {
            text: heads.text.project_rows(raw.text.view())?,
            visual: heads.visual.project_rows(raw.visual.view())?,
            poi: heads.poi.project_rows(raw.poi.view())?,
        })
    }

    pub fn get(&self, m: Modality) -> &Array2<f64> {
        match m {
            Modality::Text => &self.text,
            Modality::Visual => &self.visual,
            Modality::Poi => &self.poi,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub heads: EncoderHeads,
    pub raw: CircleModalFeatures,
    pub projected: ProjectedFeatures,
    pub losses: EncoderLosses,
}

fn to_dense(m: &RawFeatureMatrix) -> Array2<f64> {
    Array2::from_shape_fn((m.rows, m.dim), |(i, k)| m.data[i * m.dim + k] as f64)
}

fn gather(m: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    m.select(Axis(0), rows)
}

fn head_step(adam: &mut Adam, head: &mut ProjectionHead, grad: &HeadGrad) {
    let w = head.weight.as_slice_mut().expect("standard layout");
    let b = head.bias.as_slice_mut().expect("standard layout");
    adam.update(
        &mut [w, b],
        &[grad.weight.as_slice().unwrap(), grad.bias.as_slice().unwrap()],
    );
}

fn new_adam(head: &ProjectionHead, lr: f64, wd: f64) -> Adam {
    Adam::new(AdamConfig::new(lr, wd), &[head.weight.len(), head.bias.len()])
}

fn check(stage: &str, step: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            stage: stage.into(),
            step,
            loss,
        })
    }
}

// ---------------------------------------------------------------- visual --

struct VisualIndex {
    /// image row -> owning circle
    owner: Vec<usize>,
    /// circle -> its image rows
    members: Vec<Vec<usize>>,
    /// circle -> image rows of circles outside the radius
    far: Vec<Vec<usize>>,
}

impl VisualIndex {
    fn build(ds: &Dataset, radius_km: f64) -> Self {
        let n = ds.n_circles();
        let mut owner = vec![usize::MAX; ds.images.rows];
        let members: Vec<Vec<usize>> = ds
            .circles
            .iter()
            .map(|c| c.image_row_ids.iter().map(|&r| r as usize).collect())
            .collect();
        for (i, m) in members.iter().enumerate() {
            for &r in m {
                owner[r] = i;
            }
        }
        let pts: Vec<LatLon> = ds.circles.iter().map(LatLon::from).collect();
        let far = (0..n)
            .map(|i| {
                let mut out: Vec<usize> = (0..n)
                    .filter(|&j| j != i && haversine_km(pts[i], pts[j]) > radius_km)
                    .flat_map(|j| members[j].iter().copied())
                    .collect();
                if out.is_empty() {
                    out = (0..n).filter(|&j| j != i).flat_map(|j| members[j].iter().copied()).collect();
                }
                out
            })
            .collect();
        Self { owner, members, far }
    }

    fn anchors(&self) -> Vec<usize> {
        (0..self.owner.len()).filter(|&r| self.owner[r] != usize::MAX).collect()
    }
}

struct RawVisualBatch {
    anchors: Array2<f64>,
    positives: Array2<f64>,
    negatives: Array2<f64>,
    view_a: Array2<f64>,
    view_b: Array2<f64>,
}

fn plan_visual<R: Rng>(
    rng: &mut R,
    index: &VisualIndex,
    images: &Array2<f64>,
    batch: usize,
    p: f64,
) -> Vec<RawVisualBatch> {
    let mut order = index.anchors();
    order.shuffle(rng);
    order
        .chunks(batch)
        .filter(|c| c.len() >= 2)
        .map(|chunk| {
            let mut pos = Vec::with_capacity(chunk.len());
            let mut neg = Vec::with_capacity(chunk.len());
            for &a in chunk {
                let circle = index.owner[a];
                let same: Vec<usize> = index.members[circle].iter().copied().filter(|&r| r != a).collect();
                pos.push(*same.choose(rng).unwrap_or(&a));
                neg.push(*index.far[circle].choose(rng).unwrap_or(&a));
            }
            let anchors = gather(images, chunk);
            let mut view_a = anchors.clone();
            let mut view_b = anchors.clone();
            for (i, row) in anchors.axis_iter(Axis(0)).enumerate() {
                view_a.row_mut(i).assign(&dropout_view(row, p, rng));
                view_b.row_mut(i).assign(&dropout_view(row, p, rng));
            }
            RawVisualBatch {
                positives: gather(images, &pos),
                negatives: gather(images, &neg),
                anchors,
                view_a,
                view_b,
            }
        })
        .collect()
}

fn visual_batch_grad(head: &ProjectionHead, b: &RawVisualBatch, cfg: &RunConfig) -> Result<(f64, HeadGrad)> {
    let proj = |x: &Array2<f64>| head.project_rows(x.view());
    let (a, p, n, va, vb) = (
        proj(&b.anchors)?,
        proj(&b.positives)?,
        proj(&b.negatives)?,
        proj(&b.view_a)?,
        proj(&b.view_b)?,
    );
    let g = visual_encoder_grad(
        &VisualBatch {
            anchors: a.view(),
            positives: p.view(),
            negatives: n.view(),
            view_a: va.view(),
            view_b: vb.view(),
        },
        cfg.margin,
        cfg.tau_visual,
    )?;
    let mut grad = HeadGrad::zeros_like(head);
    head.accumulate_grad(&mut grad, b.anchors.view(), g.anchors.view());
    head.accumulate_grad(&mut grad, b.positives.view(), g.positives.view());
    head.accumulate_grad(&mut grad, b.negatives.view(), g.negatives.view());
    head.accumulate_grad(&mut grad, b.view_a.view(), g.view_a.view());
    head.accumulate_grad(&mut grad, b.view_b.view(), g.view_b.view());
    Ok((g.loss, grad))
}

fn train_visual(ds: &Dataset, head: &mut ProjectionHead, cfg: &RunConfig) -> Result<StageCurve> {
    let images = to_dense(&ds.images);
    let index = VisualIndex::build(ds, cfg.circle_radius_km);
    let seed = cfg.rng_seed;
    let probe = plan_visual(
        &mut stream_rng(seed, Stream::VisualEncoder, PROBE_COUNTER),
        &index,
        &images,
        cfg.batch_size,
        cfg.aug_dropout,
    );
    let probe_loss = |head: &ProjectionHead| -> Result<f64> {
        let mut total = 0.0;
        for b in &probe {
            total += visual_batch_grad(head, b, cfg)?.0;
        }
        Ok(total / probe.len().max(1) as f64)
    };
    let initial = probe_loss(head)?;
    let mut adam = new_adam(head, cfg.lr_visual, cfg.weight_decay);
    let mut epoch_mean = Vec::with_capacity(cfg.encoder_epochs);
    let mut step = 0;
    for epoch in 0..cfg.encoder_epochs {
        let mut rng = stream_rng(seed, Stream::VisualEncoder, epoch as u32);
        let batches = plan_visual(&mut rng, &index, &images, cfg.batch_size, cfg.aug_dropout);
        let mut sum = 0.0;
        for b in &batches {
            let (loss, grad) = visual_batch_grad(head, b, cfg)?;
            check("visual", step, loss)?;
            head_step(&mut adam, head, &grad);
            sum += loss;
            step += 1;
        }
        epoch_mean.push(sum / batches.len().max(1) as f64);
    }
    Ok(StageCurve {
        stage: "visual".into(),
        initial,
        last: probe_loss(head)?,
        epoch_mean,
    })
}

// ------------------------------------------------------------------ text --

fn text_batch_grad(
    head: &ProjectionHead,
    raw_text: ArrayView2<f64>,
    h_visual: ArrayView2<f64>,
    tau: f64,
) -> Result<(f64, HeadGrad)> {
    let h_text = head.project_rows(raw_text)?;
    let g = infonce_grad(h_text.view(), h_visual, tau)?;
    let mut grad = HeadGrad::zeros_like(head);
    head.accumulate_grad(&mut grad, raw_text, g.anchors.view());
    Ok((g.loss, grad))
}

fn circle_batches<R: Rng>(rng: &mut R, n: usize, batch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch).filter(|c| c.len() >= 2).map(<[usize]>::to_vec).collect()
}

fn train_text(
    head: &mut ProjectionHead,
    raw: &CircleModalFeatures,
    h_visual: &Array2<f64>,
    cfg: &RunConfig,
) -> Result<StageCurve> {
    let n = raw.text.nrows();
    let seed = cfg.rng_seed;
    let probe = circle_batches(&mut stream_rng(seed, Stream::TextEncoder, PROBE_COUNTER), n, cfg.batch_size);
    let eval = |head: &ProjectionHead, batches: &[Vec<usize>]| -> Result<f64> {
        let mut total = 0.0;
        for b in batches {
            total += text_batch_grad(head, gather(&raw.text, b).view(), gather(h_visual, b).view(), cfg.tau_text)?.0;
        }
        Ok(total / batches.len().max(1) as f64)
    };
    let initial = eval(head, &probe)?;
    let mut adam = new_adam(head, cfg.lr_text, cfg.weight_decay);
    let mut epoch_mean = Vec::with_capacity(cfg.encoder_epochs);
    let mut step = 0;
    for epoch in 0..cfg.encoder_epochs {
        let batches = circle_batches(&mut stream_rng(seed, Stream::TextEncoder, epoch as u32), n, cfg.batch_size);
        let mut sum = 0.0;
        for b in &batches {
            let (loss, grad) =
                text_batch_grad(head, gather(&raw.text, b).view(), gather(h_visual, b).view(), cfg.tau_text)?;
            check("text", step, loss)?;
            head_step(&mut adam, head, &grad);
            sum += loss;
            step += 1;
        }
        epoch_mean.push(sum / batches.len().max(1) as f64);
    }
    Ok(StageCurve {
        stage: "text".into(),
        initial,
        last: eval(head, &probe)?,
        epoch_mean,
    })
}

// ------------------------------------------------------------------- poi --

struct ReviewItem {
    row: usize,
    category: usize,
    label: u32,
}

struct RawPoiBatch {
    inputs: Array2<f64>,
    labels: Vec<u32>,
}

fn plan_poi<R: Rng>(
    rng: &mut R,
    items: &[ReviewItem],
    reviews: &Array2<f64>,
    categories: &Array2<f64>,
    batch: usize,
    p: f64,
) -> Vec<RawPoiBatch> {
    let per_batch = (batch / 2).max(1);
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(rng);
    order
        .chunks(per_batch)
        .map(|chunk| {
            let dim = reviews.ncols();
            let mut inputs = Array2::zeros((2 * chunk.len(), 2 * dim));
            let mut labels = Vec::with_capacity(2 * chunk.len());
            for (k, &idx) in chunk.iter().enumerate() {
                let item = &items[idx];
                let review = reviews.row(item.row);
                let cat = categories.row(item.category);
                for v in 0..2 {
                    let view = dropout_view(review, p, rng);
                    let mut row = inputs.row_mut(2 * k + v);
                    row.slice_mut(s![..dim]).assign(&view);
                    row.slice_mut(s![dim..]).assign(&cat);
                    labels.push(item.label);
                }
            }
            RawPoiBatch { inputs, labels }
        })
        .collect()
}

fn poi_batch_grad(head: &ProjectionHead, b: &RawPoiBatch, tau: f64) -> Result<(f64, HeadGrad)> {
    let h = head.project_rows(b.inputs.view())?;
    let (loss, g) = supcon_grad(h.view(), &b.labels, tau)?;
    let mut grad = HeadGrad::zeros_like(head);
    head.accumulate_grad(&mut grad, b.inputs.view(), g.view());
    Ok((loss, grad))
}

fn train_poi(ds: &Dataset, head: &mut ProjectionHead, cfg: &RunConfig) -> Result<StageCurve> {
    let reviews = to_dense(&ds.poi_review);
    let categories = to_dense(&ds.poi_category);
    let mut items = Vec::new();
    for poi in &ds.pois {
        let category = ds
            .category_index(&poi.category)
            .ok_or_else(|| Error::Integrity(format!("unknown category `{}`", poi.category)))?;
        for (&row, &label) in poi.review_row_ids.iter().zip(&poi.rating_labels) {
            items.push(ReviewItem {
                row: row as usize,
                category,
                label: label as u32,
            });
        }
    }
    let seed = cfg.rng_seed;
    let plan = |counter: u32| {
        plan_poi(
            &mut stream_rng(seed, Stream::PoiEncoder, counter),
            &items,
            &reviews,
            &categories,
            cfg.batch_size,
            cfg.aug_dropout,
        )
    };
    let probe = plan(PROBE_COUNTER);
    let eval = |head: &ProjectionHead| -> Result<f64> {
        let mut total = 0.0;
        for b in &probe {
            total += poi_batch_grad(head, b, cfg.tau_poi)?.0;
        }
        Ok(total / probe.len().max(1) as f64)
    };
    let initial = eval(head)?;
    let mut adam = new_adam(head, cfg.lr_poi, cfg.weight_decay);
    let mut epoch_mean = Vec::with_capacity(cfg.encoder_epochs);
    let mut step = 0;
    for epoch in 0..cfg.encoder_epochs {
        let batches = plan(epoch as u32);
        let mut sum = 0.0;
        for b in &batches {
            let (loss, grad) = poi_batch_grad(head, b, cfg.tau_poi)?;
            check("poi", step, loss)?;
            head_step(&mut adam, head, &grad);
            sum += loss;
            step += 1;
        }
        epoch_mean.push(sum / batches.len().max(1) as f64);
    }
    Ok(StageCurve {
        stage: "poi".into(),
        initial,
        last: eval(head)?,
        epoch_mean,
    })
}

/// Run the visual, text and POI stages in order and project every circle.
pub fn train_encoders(ds: &Dataset, cfg: &RunConfig) -> Result<EncoderOutput> {
    cfg.validate()?;
    let raw = CircleModalFeatures::from_dataset(ds)?;
    let mut heads = EncoderHeads::init(ds.dim(), cfg.embed_dim, cfg.rng_seed);

    let visual = train_visual(ds, &mut heads.visual, cfg)?;
    log::info!("visual encoder loss {:.4} -> {:.4}", visual.initial, visual.last);

    let h_visual = heads.visual.project_rows(raw.visual.view())?;
    let text = train_text(&mut heads.text, &raw, &h_visual, cfg)?;
    log::info!("text encoder loss {:.4} -> {:.4}", text.initial, text.last);

    let poi = train_poi(ds, &mut heads.poi, cfg)?;
    log::info!("poi encoder loss {:.4} -> {:.4}", poi.initial, poi.last);

    let projected = ProjectedFeatures::compute(&heads, &raw)?;
    Ok(EncoderOutput {
        heads,
        raw,
        projected,
        losses: EncoderLosses { visual, text, poi },
    })
}
