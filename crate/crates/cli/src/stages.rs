//! One function per subcommand. Each reads prior artifacts, writes only
//! below its own directory and returns the record that goes into the
//! pipeline manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use curegraph::data::dataset::{load_dataset, DatasetPaths};
use curegraph::data::format::{read_dense, write_dense, write_json, write_text};
use curegraph::data::synthetic::LATENTS_FILE;
use curegraph::data::{write_synthetic_city, Dataset, Disease, RunConfig, SyntheticSpec};
use curegraph::encoders::{train_encoders, CircleModalFeatures, EncoderHeads, ProjectedFeatures};
use curegraph::evaluate::{
    aggregate_streets, elbow, evaluate_embeddings, kmeans, pca_project, pearson, similar_circles, AblationTag,
    Correlation, EvalReport,
};
use curegraph::graph::{build_graph, read_edge_csv, MultiModalGraph};
use curegraph::modality::Modality;
use curegraph::pipeline::targets;
use curegraph::smgcn::{read_heads, train, write_checkpoint, write_heads, TrainOptions};
use curegraph::spatial::SpatialContext;
use serde::{Deserialize, Serialize};

use crate::args::Layout;
use crate::manifest::StageRecord;

/// Running record of one stage's inputs and outputs.
pub struct Stage<'a> {
    name: &'static str,
    layout: &'a Layout,
    cfg: &'a RunConfig,
    start: Instant,
    inputs: Vec<String>,
    outputs: Vec<String>,
}

impl<'a> Stage<'a> {
    pub fn begin(name: &'static str, layout: &'a Layout, cfg: &'a RunConfig) -> Result<Self> {
        let dir = layout.stage(name);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            name,
            layout,
            cfg,
            start: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    fn dir(&self) -> PathBuf {
        self.layout.stage(self.name)
    }

    fn out(&mut self, file: &str) -> PathBuf {
        let path = self.dir().join(file);
        self.outputs.push(self.layout.display(&path));
        path
    }

    /// Register a required input; a missing file names the stage that makes it.
    fn input(&mut self, path: PathBuf, producer: &str) -> Result<PathBuf> {
        if !path.exists() {
            bail!(
                "missing input {}: run `curegraph {producer}` first",
                path.display()
            );
        }
        self.inputs.push(self.layout.display(&path));
        Ok(path)
    }

    fn dataset(&mut self) -> Result<Dataset> {
        let paths = DatasetPaths::in_dir(&self.layout.data);
        for p in [&paths.circles, &paths.pois, &paths.labels, &paths.images, &paths.circle_text, &paths.poi_review, &paths.poi_category] {
            self.input(p.clone(), "gen")?;
        }
        for p in [&paths.vocab, &paths.streets] {
            if p.exists() {
                self.inputs.push(self.layout.display(p));
            }
        }
        Ok(load_dataset(&paths)?)
    }

    fn heads(&mut self) -> Result<EncoderHeads> {
        let path = self.input(self.layout.encode(HEADS_FILE), "encode")?;
        Ok(read_heads(&path)?)
    }

    fn embeddings(&mut self, n: usize) -> Result<ndarray::Array2<f64>> {
        let path = self.input(self.layout.train(EMBEDDINGS_FILE), "train")?;
        let emb = read_dense(&path)?;
        if emb.nrows() != n {
            bail!("{} has {} rows for {n} circles; rerun `curegraph train`", path.display(), emb.nrows());
        }
        Ok(emb)
    }

    pub fn finish(self) -> StageRecord {
        let wall_seconds = self.start.elapsed().as_secs_f64();
        log::info!("{} finished in {wall_seconds:.2}s", self.name);
        StageRecord {
            name: self.name.to_string(),
            inputs: self.inputs,
            outputs: self.outputs,
            config_hash: self.cfg.hash(),
            seed: self.cfg.rng_seed,
            wall_seconds,
        }
    }
}

const HEADS_FILE: &str = "heads.cgm";
const EMBEDDINGS_FILE: &str = "embeddings.cgf";
const GRAPH_META_FILE: &str = "graph.json";
const EDGES_FILE: &str = "edges.csv";

/// `gen` writes into the dataset directory rather than a stage directory.
pub fn gen(layout: &Layout, cfg: &RunConfig, spec: &SyntheticSpec) -> Result<StageRecord> {
    let start = Instant::now();
    let paths = write_synthetic_city(spec, cfg.rng_seed, &layout.data)?;
    let mut outputs: Vec<String> = [
        &paths.circles,
        &paths.pois,
        &paths.labels,
        &paths.vocab,
        &paths.streets,
        &paths.images,
        &paths.circle_text,
        &paths.poi_review,
        &paths.poi_category,
    ]
    .into_iter()
    .filter(|p| p.exists())
    .map(|p| layout.display(p))
    .collect();
    outputs.push(layout.display(&layout.data.join(LATENTS_FILE)));
    println!("gen: {} circles -> {}", spec.n_circles, layout.data.display());
    Ok(StageRecord {
        name: "gen".into(),
        inputs: Vec::new(),
        outputs,
        config_hash: cfg.hash(),
        seed: cfg.rng_seed,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn encode(layout: &Layout, cfg: &RunConfig) -> Result<StageRecord> {
    let mut st = Stage::begin("encode", layout, cfg)?;
    let ds = st.dataset()?;
    let enc = train_encoders(&ds, cfg)?;
    write_heads(&st.out(HEADS_FILE), &enc.heads)?;
    for m in Modality::ALL {
        write_dense(&st.out(&format!("h_{}.cgf", m.name())), enc.projected.get(m))?;
    }
    write_json(&st.out("encoder_losses.json"), &enc.losses)?;
    for c in [&enc.losses.visual, &enc.losses.text, &enc.losses.poi] {
        println!("encode: {} loss {:.6} -> {:.6}", c.stage, c.initial, c.last);
    }
    Ok(st.finish())
}

#[derive(Serialize)]
struct TopK<'a> {
    circle_id: &'a str,
    candidates: Vec<&'a str>,
}

pub fn spatial(layout: &Layout, cfg: &RunConfig) -> Result<StageRecord> {
    let mut st = Stage::begin("spatial", layout, cfg)?;
    let ds = st.dataset()?;
    let sc = SpatialContext::from_dataset(&ds, cfg.top_k)?;
    write_dense(&st.out("S.cgf"), &sc.autocorrelation)?;
    write_dense(&st.out("D.cgf"), &sc.distance)?;
    write_dense(&st.out("F.cgf"), &sc.function)?;
    let top: Vec<TopK> = ds
        .circles
        .iter()
        .zip(&sc.top_k)
        .map(|(c, cands)| TopK {
            circle_id: &c.id,
            candidates: cands.iter().map(|&j| ds.circles[j].id.as_str()).collect(),
        })
        .collect();
    write_json(&st.out("top_k.json"), &top)?;
    println!("spatial: {} circles, top-{} lists", ds.n_circles(), cfg.top_k);
    Ok(st.finish())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GraphMeta {
    pub variant: String,
    pub n_circles: usize,
    pub modalities: Vec<Modality>,
    pub top_k: usize,
    pub nodes: usize,
    pub intra_edges: usize,
    pub inter_edges: usize,
}

fn build_variant(
    tag: AblationTag,
    projected: &ProjectedFeatures,
    sc: &SpatialContext,
    cfg: &RunConfig,
) -> curegraph::Result<MultiModalGraph> {
    build_graph(
        [&projected.text, &projected.visual, &projected.poi],
        sc,
        cfg.top_k,
        &tag.graph_options(),
    )
}

pub fn graph(layout: &Layout, cfg: &RunConfig, tag: AblationTag) -> Result<StageRecord> {
    use curegraph::graph::EdgeKind;
    let mut st = Stage::begin("graph", layout, cfg)?;
    let ds = st.dataset()?;
    let heads = st.heads()?;
    let raw = CircleModalFeatures::from_dataset(&ds)?;
    let projected = ProjectedFeatures::compute(&heads, &raw)?;
    let sc = SpatialContext::from_dataset(&ds, cfg.top_k)?;
    let g = build_variant(tag, &projected, &sc, cfg)?;
    g.write_edge_csv(&st.out(EDGES_FILE))?;
    write_dense(&st.out("laplacian.cgf"), &g.laplacian)?;
    let meta = GraphMeta {
        variant: tag.slug().into(),
        n_circles: g.n_circles,
        modalities: g.modalities.clone(),
        top_k: cfg.top_k,
        nodes: g.n_nodes(),
        intra_edges: g.count(EdgeKind::Intra),
        inter_edges: g.count(EdgeKind::Inter),
    };
    write_json(&st.out(GRAPH_META_FILE), &meta)?;
    println!(
        "graph: {tag}, {} nodes, {} intra + {} inter edges",
        meta.nodes, meta.intra_edges, meta.inter_edges
    );
    Ok(st.finish())
}

fn read_graph_meta(path: &Path) -> Result<GraphMeta> {
    Ok(curegraph::data::format::read_json(path)?)
}

#[derive(Serialize)]
struct GcnLosses<'a> {
    variant: &'a str,
    #[serde(flatten)]
    log: &'a curegraph::smgcn::TrainLog,
}

pub fn train_stage(layout: &Layout, cfg: &RunConfig) -> Result<StageRecord> {
    let mut st = Stage::begin("train", layout, cfg)?;
    let ds = st.dataset()?;
    let heads = st.heads()?;
    let meta = read_graph_meta(&st.input(layout.graph(GRAPH_META_FILE), "graph")?)?;
    let edges = read_edge_csv(&st.input(layout.graph(EDGES_FILE), "graph")?)?;
    if meta.n_circles != ds.n_circles() {
        bail!(
            "graph was built for {} circles but the dataset has {}; rerun `curegraph graph`",
            meta.n_circles,
            ds.n_circles()
        );
    }
    let g = MultiModalGraph::from_edges(meta.n_circles, meta.modalities.clone(), edges)?;
    let raw = CircleModalFeatures::from_dataset(&ds)?;
    let sc = SpatialContext::from_dataset(&ds, cfg.top_k)?;
    let out = train(&g, &raw, &heads, &sc.autocorrelation, &TrainOptions::from(cfg))?;
    write_dense(&st.out(EMBEDDINGS_FILE), &out.embeddings.fused)?;
    write_dense(&st.out("nodes.cgf"), &out.embeddings.nodes)?;
    write_checkpoint(&st.out("model.cgm"), &out.state)?;
    write_json(
        &st.out("gcn_losses.json"),
        &GcnLosses {
            variant: &meta.variant,
            log: &out.log,
        },
    )?;
    println!(
        "train: {} loss {:.6} -> {:.6} ({:.3} of initial)",
        meta.variant,
        out.log.initial,
        out.log.last,
        out.log.last / out.log.initial
    );
    Ok(st.finish())
}

#[derive(Serialize)]
struct CorrelationRow {
    disease: &'static str,
    against: String,
    #[serde(flatten)]
    value: Correlation,
}

fn read_covariate(path: &Path, ds: &Dataset) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let index = ds.circle_index();
    let mut values = vec![None; ds.n_circles()];
    for rec in r.records() {
        let rec = rec.with_context(|| format!("reading {}", path.display()))?;
        if rec.len() != 2 {
            bail!("{}: expected `circle_id,value` rows", path.display());
        }
        let i = *index
            .get(&rec[0])
            .with_context(|| format!("{}: unknown circle `{}`", path.display(), &rec[0]))?;
        let v: f64 = rec[1]
            .trim()
            .parse()
            .with_context(|| format!("{}: bad value for `{}`", path.display(), &rec[0]))?;
        values[i] = Some(v);
    }
    values
        .into_iter()
        .zip(&ds.circles)
        .map(|(v, c)| v.with_context(|| format!("{}: no value for circle `{}`", path.display(), c.id)))
        .collect()
}

fn predictions_csv(ds: &Dataset, targets: &[[f64; 4]], report: &EvalReport) -> String {
    let mut out = String::from("circle_id");
    for d in Disease::ALL {
        write!(out, ",{0}_observed,{0}_predicted", d.name()).unwrap();
    }
    out.push('\n');
    for (i, c) in ds.circles.iter().enumerate() {
        out.push_str(&c.id);
        for (k, d) in report.diseases.iter().enumerate() {
            write!(out, ",{:?},{:?}", targets[i][k], d.predictions[i]).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn eval(layout: &Layout, cfg: &RunConfig, covariate: Option<&Path>) -> Result<StageRecord> {
    let mut st = Stage::begin("eval", layout, cfg)?;
    let ds = st.dataset()?;
    let emb = st.embeddings(ds.n_circles())?;
    let variant = match layout.graph(GRAPH_META_FILE) {
        p if p.exists() => read_graph_meta(&st.input(p, "graph")?)?.variant,
        _ => AblationTag::Full.slug().into(),
    };
    let tag: AblationTag = variant.parse()?;
    let y = targets(&ds)?;
    let report = evaluate_embeddings(&emb, &y, tag.name(), cfg)?;
    write_json(&st.out("report.json"), &report)?;
    write_text(&st.out("report.csv"), &report.to_csv())?;
    write_text(&st.out("predictions.csv"), &predictions_csv(&ds, &y, &report))?;

    let extra = covariate
        .map(|p| -> Result<_> {
            let p = st.input(p.to_path_buf(), "eval --covariate")?;
            Ok((p.file_stem().map_or("covariate".into(), |s| s.to_string_lossy().into_owned()), read_covariate(&p, &ds)?))
        })
        .transpose()?;
    let mut rows = Vec::new();
    for (k, (d, r)) in Disease::ALL.iter().zip(&report.diseases).enumerate() {
        let observed: Vec<f64> = y.iter().map(|t| t[k]).collect();
        rows.push(CorrelationRow {
            disease: d.name(),
            against: "observed".into(),
            value: pearson(&r.predictions, &observed)?,
        });
        if let Some((name, values)) = &extra {
            rows.push(CorrelationRow {
                disease: d.name(),
                against: name.clone(),
                value: pearson(&r.predictions, values)?,
            });
        }
    }
    write_json(&st.out("correlation.json"), &rows)?;
    for d in &report.diseases {
        println!(
            "eval: {:<12} MAE {:.4}  RMSE {:.4}  R2 {:.4}",
            d.disease, d.mean.mae, d.mean.rmse, d.mean.r2
        );
    }
    println!("eval: mean R2 {:.4}", report.mean.r2);
    Ok(st.finish())
}

pub fn ablate(layout: &Layout, cfg: &RunConfig, tags: &[AblationTag]) -> Result<StageRecord> {
    let mut st = Stage::begin("ablate", layout, cfg)?;
    let ds = st.dataset()?;
    let heads = st.heads()?;
    let raw = CircleModalFeatures::from_dataset(&ds)?;
    let projected = ProjectedFeatures::compute(&heads, &raw)?;
    let sc = SpatialContext::from_dataset(&ds, cfg.top_k)?;
    let y = targets(&ds)?;
    let opts = TrainOptions::from(cfg);
    let mut summary = String::from("variant,slug,mae,rmse,r2");
    for d in Disease::ALL {
        write!(summary, ",{}_r2", d.name()).unwrap();
    }
    summary.push('\n');
    let mut reports = Vec::new();
    for &tag in tags {
        let g = build_variant(tag, &projected, &sc, cfg)?;
        let out = train(&g, &raw, &heads, &sc.autocorrelation, &opts)?;
        let report = evaluate_embeddings(&out.embeddings.fused, &y, tag.name(), cfg)?;
        std::fs::create_dir_all(st.dir().join(tag.slug()))?;
        write_json(&st.out(&format!("{}/report.json", tag.slug())), &report)?;
        write_text(&st.out(&format!("{}/report.csv", tag.slug())), &report.to_csv())?;
        let m = report.mean;
        write!(summary, "{},{},{:?},{:?},{:?}", tag.name(), tag.slug(), m.mae, m.rmse, m.r2).unwrap();
        for d in &report.diseases {
            write!(summary, ",{:?}", d.mean.r2).unwrap();
        }
        summary.push('\n');
        println!("ablate: {:<14} mean R2 {:.4}", tag.name(), m.r2);
        reports.push(report);
    }
    write_text(&st.out("summary.csv"), &summary)?;
    write_json(&st.out("summary.json"), &reports)?;
    Ok(st.finish())
}

#[derive(Serialize)]
struct ClusterReport {
    k: usize,
    #[serde(flatten)]
    result: curegraph::evaluate::KMeans,
    elbow: Vec<(usize, f64)>,
}

pub fn cluster(layout: &Layout, cfg: &RunConfig, k: usize, elbow_max: usize, max_iter: usize) -> Result<StageRecord> {
    let mut st = Stage::begin("cluster", layout, cfg)?;
    let ds = st.dataset()?;
    let emb = st.embeddings(ds.n_circles())?;
    let result = kmeans(&emb, k, cfg.rng_seed, max_iter)?;
    let curve = elbow(&emb, 1..=elbow_max.min(emb.nrows()), cfg.rng_seed, max_iter)?;
    let mut assignments = String::from("circle_id,cluster\n");
    for (c, a) in ds.circles.iter().zip(&result.assignments) {
        writeln!(assignments, "{},{a}", c.id).unwrap();
    }
    let mut curve_csv = String::from("k,inertia\n");
    for (k, inertia) in &curve {
        writeln!(curve_csv, "{k},{inertia:?}").unwrap();
    }
    write_text(&st.out("assignments.csv"), &assignments)?;
    write_text(&st.out("elbow.csv"), &curve_csv)?;
    println!("cluster: k = {k}, inertia {:.6} after {} iterations", result.inertia, result.iterations);
    write_json(
        &st.out("report.json"),
        &ClusterReport {
            k,
            result,
            elbow: curve,
        },
    )?;
    Ok(st.finish())
}

#[derive(Serialize)]
struct SimilarReport<'a> {
    query: &'a str,
    neighbours: Vec<curegraph::evaluate::Similar>,
}

pub fn similar(layout: &Layout, cfg: &RunConfig, query: Option<&str>, top: usize) -> Result<StageRecord> {
    let mut st = Stage::begin("similar", layout, cfg)?;
    let ds = st.dataset()?;
    let emb = st.embeddings(ds.n_circles())?;
    let ids: Vec<String> = ds.circles.iter().map(|c| c.id.clone()).collect();
    let query = query.unwrap_or(&ids[0]);
    let neighbours = similar_circles(query, &ids, &emb, top)?;
    let mut csv = String::from("rank,circle_id,score\n");
    for (r, s) in neighbours.iter().enumerate() {
        writeln!(csv, "{},{},{:?}", r + 1, s.circle_id, s.score).unwrap();
    }
    write_text(&st.out("similar.csv"), &csv)?;
    for s in &neighbours {
        println!("similar: {query} ~ {} ({:.4})", s.circle_id, s.score);
    }
    write_json(&st.out("report.json"), &SimilarReport { query, neighbours })?;
    Ok(st.finish())
}

#[derive(Serialize)]
struct PcaReport {
    dims: usize,
    explained_ratio: Vec<f64>,
    mean: Vec<f64>,
    components: Vec<Vec<f64>>,
}

pub fn pca(layout: &Layout, cfg: &RunConfig, dims: usize) -> Result<StageRecord> {
    let mut st = Stage::begin("pca", layout, cfg)?;
    let ds = st.dataset()?;
    let emb = st.embeddings(ds.n_circles())?;
    let p = pca_project(&emb, dims)?;
    let mut csv = String::from("circle_id");
    for k in 1..=dims {
        write!(csv, ",pc{k}").unwrap();
    }
    csv.push('\n');
    for (c, row) in ds.circles.iter().zip(p.projected.rows()) {
        csv.push_str(&c.id);
        for v in row {
            write!(csv, ",{v:?}").unwrap();
        }
        csv.push('\n');
    }
    write_text(&st.out("projection.csv"), &csv)?;
    let ratio: Vec<String> = p.explained_ratio.iter().map(|r| format!("{r:.4}")).collect();
    println!("pca: explained variance ratio {}", ratio.join(", "));
    write_json(
        &st.out("report.json"),
        &PcaReport {
            dims,
            explained_ratio: p.explained_ratio,
            mean: p.mean.to_vec(),
            components: p.components.rows().into_iter().map(|r| r.to_vec()).collect(),
        },
    )?;
    Ok(st.finish())
}

pub fn streets(layout: &Layout, cfg: &RunConfig) -> Result<StageRecord> {
    let mut st = Stage::begin("streets", layout, cfg)?;
    let ds = st.dataset()?;
    if ds.streets.is_empty() {
        bail!(
            "dataset {} has no street assignments ({} is missing or empty)",
            layout.data.display(),
            curegraph::data::dataset::STREETS_FILE
        );
    }
    let emb = st.embeddings(ds.n_circles())?;
    let ids: Vec<String> = ds.circles.iter().map(|c| c.id.clone()).collect();
    let streets = aggregate_streets(&ids, &emb, &ds.streets)?;
    let d = emb.ncols();
    let matrix = ndarray::Array2::from_shape_fn((streets.len(), d), |(i, k)| streets[i].embedding[k]);
    write_dense(&st.out("embeddings.cgf"), &matrix)?;
    let mut csv = String::from("row,street_id,n_circles\n");
    for (i, s) in streets.iter().enumerate() {
        writeln!(csv, "{i},{},{}", s.street_id, s.circle_ids.len()).unwrap();
    }
    write_text(&st.out("streets.csv"), &csv)?;
    write_json(&st.out("report.json"), &streets)?;
    println!("streets: {} streets from {} circles", streets.len(), ids.len());
    Ok(st.finish())
}
