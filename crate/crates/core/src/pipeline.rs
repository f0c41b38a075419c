//! In-memory orchestration of the full pipeline and its ablation variants.

use std::time::Instant;

use crate::data::{Dataset, RunConfig};
use crate::encoders::{train_encoders, EncoderOutput};
use crate::error::{Error, Result};
use crate::evaluate::{evaluate_embeddings, AblationTag, EvalReport};
use crate::graph::{build_graph, MultiModalGraph};
use crate::modality::Modality;
use crate::smgcn::{train, TrainOptions, TrainOutput};
use crate::spatial::SpatialContext;

/// Disease counts in circle order.
pub fn targets(ds: &Dataset) -> Result<Vec<[f64; 4]>> {
    let by_circle = ds.labels_by_circle();
    ds.circles
        .iter()
        .zip(by_circle)
        .map(|(c, l)| {
            l.map(|l| l.counts())
                .ok_or_else(|| Error::Integrity(format!("circle `{}` has no labels", c.id)))
        })
        .collect()
}

pub struct Variant {
    pub tag: AblationTag,
    pub graph: MultiModalGraph,
    pub model: TrainOutput,
    pub report: EvalReport,
}

/// Build the graph for `tag`, train the GCN on it and evaluate the fused
/// embeddings. Encoders and the spatial context are shared across variants.
pub fn run_variant(
    tag: AblationTag,
    ds: &Dataset,
    encoders: &EncoderOutput,
    spatial: &SpatialContext,
    cfg: &RunConfig,
) -> Result<Variant> {
    let p = &encoders.projected;
    let graph = build_graph(
        [&p.text, &p.visual, &p.poi],
        spatial,
        cfg.top_k,
        &tag.graph_options(),
    )?;
    debug_assert!(graph.modalities.iter().all(|m| Modality::ALL.contains(m)));
    let model = train(
        &graph,
        &encoders.raw,
        &encoders.heads,
        &spatial.autocorrelation,
        &TrainOptions::from(cfg),
    )?;
    let report = evaluate_embeddings(&model.embeddings.fused, &targets(ds)?, tag.name(), cfg)?;
    Ok(Variant {
        tag,
        graph,
        model,
        report,
    })
}

pub struct PipelineRun {
    pub encoders: EncoderOutput,
    pub spatial: SpatialContext,
    pub variants: Vec<Variant>,
    pub seconds: f64,
}

/// Encoders and spatial context once, then every requested variant.
pub fn run_pipeline(ds: &Dataset, cfg: &RunConfig, tags: &[AblationTag]) -> Result<PipelineRun> {
    cfg.validate()?;
    let start = Instant::now();
    let encoders = train_encoders(ds, cfg)?;
    log::info!("encoders trained in {:.1}s", start.elapsed().as_secs_f64());
    let spatial = SpatialContext::from_dataset(ds, cfg.top_k)?;
    let variants = tags
        .iter()
        .map(|&tag| {
            let v = run_variant(tag, ds, &encoders, &spatial, cfg)?;
            log::info!("{tag}: mean R² {:.4}", v.report.mean.r2);
            Ok(v)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PipelineRun {
        encoders,
        spatial,
        variants,
        seconds: start.elapsed().as_secs_f64(),
    })
}
