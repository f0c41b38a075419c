use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::gcn::{gcn_backward, gcn_forward, GcnForward, GcnHyper, Mode};
use super::objective::{objective_grad, ModalRows, ObjectiveValue};
use super::readout::{DenseGrad, Readout, ReadoutCache};
use crate::data::RunConfig;
use crate::encoders::{CircleModalFeatures, EncoderHeads, HeadGrad, ProjectionHead};
use crate::error::{Error, Result};
use crate::graph::MultiModalGraph;
use crate::linalg::uniform_init;
use crate::modality::Modality;
use crate::optim::{Adam, AdamConfig};
use crate::seed::{stream_rng, Stream};

/// Hyperparameters of GCN training, separated from [`RunConfig`] so tests
/// can build small instances directly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub hyper: GcnHyper,
    pub layers: usize,
    pub lambda: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub train_heads: bool,
    pub seed: u64,
}

impl From<&RunConfig> for TrainOptions {
    fn from(cfg: &RunConfig) -> Self {
        Self {
            hyper: GcnHyper {
                alpha: cfg.alpha,
                eta: cfg.eta,
                dropout: cfg.dropout,
            },
            layers: cfg.gcn_layers,
            lambda: cfg.lambda,
            lr: cfg.lr_gcn,
            weight_decay: cfg.weight_decay,
            epochs: cfg.epochs,
            train_heads: cfg.train_heads,
            seed: cfg.rng_seed,
        }
    }
}

/// Everything trainable plus optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    /// Node slots in order; node `slot * n + i` is circle `i` in modality
    /// `modalities[slot]`.
    pub modalities: Vec<Modality>,
    pub heads: Vec<ProjectionHead>,
    pub weights: Vec<Array2<f64>>,
    pub readout: Readout,
    pub train_heads: bool,
    pub adam: Adam,
}

pub struct ModelForward {
    pub h0: Array2<f64>,
    pub gcn: GcnForward,
    readout_cache: ReadoutCache,
    pub embeddings: Array2<f64>,
}

impl ModelForward {
    pub fn modal_rows(&self, modalities: &[Modality]) -> Vec<ModalRows<'_>> {
        let h = self.gcn.output();
        let n = self.embeddings.nrows();
        modalities
            .iter()
            .enumerate()
            .map(|(slot, &m)| ModalRows {
                modality: m,
                rows: h.slice(s![slot * n..(slot + 1) * n, ..]),
            })
            .collect()
    }
}

pub struct ModelGrads {
    pub heads: Vec<HeadGrad>,
    pub weights: Vec<Array2<f64>>,
    pub readout: Vec<DenseGrad>,
}

impl ModelGrads {
    /// All entries in [`ModelState::parameters_mut`] order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for h in &self.heads {
            out.extend(h.weight.iter());
            out.extend(h.bias.iter());
        }
        for w in &self.weights {
            out.extend(w.iter());
        }
        for l in &self.readout {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }
}

/// Per-circle fused embeddings and the post-GCN node rows they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub modalities: Vec<Modality>,
    /// `n x d`
    pub fused: Array2<f64>,
    /// `(slots * n) x d`
    pub nodes: Array2<f64>,
}

impl EmbeddingTable {
    pub fn n_circles(&self) -> usize {
        self.fused.nrows()
    }

    pub fn modality_rows(&self, m: Modality) -> Option<Array2<f64>> {
        let n = self.n_circles();
        let slot = self.modalities.iter().position(|&x| x == m)?;
        Some(self.nodes.slice(s![slot * n..(slot + 1) * n, ..]).to_owned())
    }
}

/// Concatenate each circle's slot rows: `(slots * n) x d -> n x (slots * d)`.
pub fn fuse_rows(h: &Array2<f64>, n: usize) -> Array2<f64> {
    let slots = h.nrows() / n;
    let d = h.ncols();
    let mut out = Array2::zeros((n, slots * d));
    for slot in 0..slots {
        out.slice_mut(s![.., slot * d..(slot + 1) * d])
            .assign(&h.slice(s![slot * n..(slot + 1) * n, ..]));
    }
    out
}

fn unfuse_rows(g: &Array2<f64>, slots: usize, d: usize) -> Array2<f64> {
    let n = g.nrows();
    let mut out = Array2::zeros((slots * n, d));
    for slot in 0..slots {
        out.slice_mut(s![slot * n..(slot + 1) * n, ..])
            .assign(&g.slice(s![.., slot * d..(slot + 1) * d]));
    }
    out
}

impl ModelState {
    pub fn init(heads: &EncoderHeads, modalities: &[Modality], opts: &TrainOptions) -> Result<Self> {
        if modalities.is_empty() {
            return Err(Error::Argument("model needs at least one modality".into()));
        }
        if opts.layers == 0 {
            return Err(Error::Argument("gcn_layers must be at least 1".into()));
        }
        let heads: Vec<ProjectionHead> = modalities.iter().map(|&m| heads.get(m).clone()).collect();
        let d = heads[0].output_dim();
        let mut rng = stream_rng(opts.seed, Stream::GcnInit, 0);
        let weights = (0..opts.layers).map(|_| uniform_init(&mut rng, d, d, d)).collect();
        let readout = Readout::init(&mut rng, modalities.len() * d, d, d);
        let mut state = Self {
            modalities: modalities.to_vec(),
            heads,
            weights,
            readout,
            train_heads: opts.train_heads,
            adam: Adam::new(AdamConfig::new(opts.lr, opts.weight_decay), &[]),
        };
        let sizes = state.param_sizes();
        state.adam = Adam::new(AdamConfig::new(opts.lr, opts.weight_decay), &sizes);
        Ok(state)
    }

    pub fn embed_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    fn param_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::new();
        if self.train_heads {
            for h in &self.heads {
                sizes.push(h.weight.len());
                sizes.push(h.bias.len());
            }
        }
        sizes.extend(self.weights.iter().map(|w| w.len()));
        for l in &self.readout.layers {
            sizes.push(l.weight.len());
            sizes.push(l.bias.len());
        }
        sizes
    }

    /// Stack the projected rows of every modality into `H_0`.
    pub fn initial_features(&self, raw: &CircleModalFeatures) -> Result<Array2<f64>> {
        let blocks = self
            .heads
            .iter()
            .map(|h| h.project_rows(raw.get(h.modality).view()))
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
        ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn forward(
        &self,
        propagation: &Array2<f64>,
        raw: &CircleModalFeatures,
        hyper: GcnHyper,
        mode: Mode,
    ) -> Result<ModelForward> {
        let h0 = self.initial_features(raw)?;
        let n = raw.text.nrows();
        let gcn = gcn_forward(propagation, &h0, &self.weights, hyper, mode)?;
        let fused = fuse_rows(gcn.output(), n);
        let (embeddings, readout_cache) = self.readout.forward(&fused);
        Ok(ModelForward {
            h0,
            gcn,
            readout_cache,
            embeddings,
        })
    }

    pub fn loss(
        &self,
        propagation: &Array2<f64>,
        raw: &CircleModalFeatures,
        s: &Array2<f64>,
        opts: &TrainOptions,
        mode: Mode,
    ) -> Result<ObjectiveValue> {
        let fwd = self.forward(propagation, raw, opts.hyper, mode)?;
        super::objective::objective(&fwd.embeddings, &fwd.modal_rows(&self.modalities), s, opts.lambda)
    }

    /// Objective value and exact gradients for every trainable parameter.
    pub fn loss_and_grad(
        &self,
        propagation: &Array2<f64>,
        raw: &CircleModalFeatures,
        s: &Array2<f64>,
        opts: &TrainOptions,
        mode: Mode,
    ) -> Result<(ObjectiveValue, ModelGrads)> {
        let fwd = self.forward(propagation, raw, opts.hyper, mode)?;
        let n = fwd.embeddings.nrows();
        let d = self.embed_dim();
        let obj = objective_grad(&fwd.embeddings, &fwd.modal_rows(&self.modalities), s, opts.lambda)?;

        let (readout, g_fused) = self.readout.backward(&fwd.readout_cache, &obj.embeddings);
        let mut g_h = unfuse_rows(&g_fused, self.modalities.len(), d);
        for (slot, g) in obj.modal.iter().enumerate() {
            let mut block = g_h.slice_mut(s![slot * n..(slot + 1) * n, ..]);
            block += g;
        }
        let (weights, g_h0) = gcn_backward(propagation, &self.weights, opts.hyper, &fwd.gcn, &g_h)?;
        let heads = self
            .heads
            .iter()
            .enumerate()
            .map(|(slot, h)| {
                let mut g = HeadGrad::zeros_like(h);
                h.accumulate_grad(
                    &mut g,
                    raw.get(h.modality).view(),
                    g_h0.slice(s![slot * n..(slot + 1) * n, ..]),
                );
                g
            })
            .collect();
        Ok((
            obj.value,
            ModelGrads {
                heads,
                weights,
                readout,
            },
        ))
    }

    /// Every parameter, heads first, then GCN weights, then readout.
    pub fn parameters_mut(&mut self) -> Vec<&mut f64> {
        let mut out: Vec<&mut f64> = Vec::new();
        for h in &mut self.heads {
            out.extend(h.weight.iter_mut());
            out.extend(h.bias.iter_mut());
        }
        for w in &mut self.weights {
            out.extend(w.iter_mut());
        }
        for l in &mut self.readout.layers {
            out.extend(l.weight.iter_mut());
            out.extend(l.bias.iter_mut());
        }
        out
    }

    pub fn apply(&mut self, grads: &ModelGrads) {
        let mut params: Vec<&mut [f64]> = Vec::new();
        let mut gs: Vec<&[f64]> = Vec::new();
        if self.train_heads {
            for (h, g) in self.heads.iter_mut().zip(&grads.heads) {
                params.push(h.weight.as_slice_mut().expect("standard layout"));
                params.push(h.bias.as_slice_mut().expect("standard layout"));
                gs.push(g.weight.as_slice().expect("standard layout"));
                gs.push(g.bias.as_slice().expect("standard layout"));
            }
        }
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            params.push(w.as_slice_mut().expect("standard layout"));
            gs.push(g.as_slice().expect("standard layout"));
        }
        for (l, g) in self.readout.layers.iter_mut().zip(&grads.readout) {
            params.push(l.weight.as_slice_mut().expect("standard layout"));
            params.push(l.bias.as_slice_mut().expect("standard layout"));
            gs.push(g.weight.as_slice().expect("standard layout"));
            gs.push(g.bias.as_slice().expect("standard layout"));
        }
        self.adam.update(&mut params, &gs);
    }

    pub fn embeddings(
        &self,
        propagation: &Array2<f64>,
        raw: &CircleModalFeatures,
        hyper: GcnHyper,
    ) -> Result<EmbeddingTable> {
        let fwd = self.forward(propagation, raw, hyper, Mode::Eval)?;
        Ok(EmbeddingTable {
            modalities: self.modalities.clone(),
            fused: fwd.embeddings,
            nodes: fwd.gcn.output().clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Eval-mode objective before the first update.
    pub initial: f64,
    /// Eval-mode objective after the last update.
    #[serde(rename = "final")]
    pub last: f64,
    pub initial_reconstruction: f64,
    pub final_reconstruction: f64,
    /// Train-mode (dropout) objective at each step, before its update.
    pub step_loss: Vec<f64>,
}

pub struct TrainOutput {
    pub state: ModelState,
    pub embeddings: EmbeddingTable,
    pub log: TrainLog,
}

/// Full-graph training: one Adam step per epoch.
pub fn train(
    graph: &MultiModalGraph,
    raw: &CircleModalFeatures,
    heads: &EncoderHeads,
    s: &Array2<f64>,
    opts: &TrainOptions,
) -> Result<TrainOutput> {
    let state = ModelState::init(heads, &graph.modalities, opts)?;
    train_from(state, graph, raw, s, opts)
}

pub fn train_from(
    mut state: ModelState,
    graph: &MultiModalGraph,
    raw: &CircleModalFeatures,
    s: &Array2<f64>,
    opts: &TrainOptions,
) -> Result<TrainOutput> {
    if graph.modalities != state.modalities {
        return Err(Error::Argument("graph and model disagree on modalities".into()));
    }
    let p = &graph.laplacian;
    let start = state.loss(p, raw, s, opts, Mode::Eval)?;
    let mut step_loss = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        let mode = Mode::Train {
            seed: opts.seed,
            step: state.adam.step as u32,
        };
        let (value, grads) = state.loss_and_grad(p, raw, s, opts, mode)?;
        let loss = value.total();
        if !loss.is_finite() {
            return Err(Error::Diverged {
                stage: "gcn".into(),
                step: epoch,
                loss,
            });
        }
        log::debug!("gcn epoch {epoch}: loss {loss:.6e}");
        step_loss.push(loss);
        state.apply(&grads);
    }
    let end = state.loss(p, raw, s, opts, Mode::Eval)?;
    if !end.total().is_finite() {
        return Err(Error::Diverged {
            stage: "gcn".into(),
            step: opts.epochs,
            loss: end.total(),
        });
    }
    let embeddings = state.embeddings(p, raw, opts.hyper)?;
    Ok(TrainOutput {
        state,
        embeddings,
        log: TrainLog {
            initial: start.total(),
            last: end.total(),
            initial_reconstruction: start.reconstruction,
            final_reconstruction: end.reconstruction,
            step_loss,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, GraphOptions};
    use crate::spatial::{LatLon, SpatialContext};
    use rand::Rng;

    fn tiny(seed: u64) -> (MultiModalGraph, CircleModalFeatures, EncoderHeads, Array2<f64>) {
        let mut rng = stream_rng(seed, Stream::Synthetic, 7);
        let mut raw = |cols: usize| Array2::from_shape_fn((2, cols), |_| rng.random_range(-1.0..1.0));
        let raw = CircleModalFeatures {
            text: raw(2),
            visual: raw(2),
            poi: raw(4),
        };
        let mut heads = EncoderHeads::init(2, 2, seed);
        let mut hr = stream_rng(seed, Stream::HeadInit, 9);
        heads.poi = ProjectionHead::init(&mut hr, Modality::Poi, 4, 2);
        let pts = [LatLon { lat: 39.9, lon: 116.4 }, LatLon { lat: 39.95, lon: 116.45 }];
        let cats = vec![vec!["park", "clinic"], vec!["park"]];
        let sp = SpatialContext::build(&pts, &cats, 1).unwrap();
        let proj: Vec<Array2<f64>> = Modality::ALL
            .iter()
            .map(|&m| heads.get(m).project_rows(raw.get(m).view()).unwrap())
            .collect();
        let g = build_graph([&proj[0], &proj[1], &proj[2]], &sp, 1, &GraphOptions::default()).unwrap();
        (g, raw, heads, sp.autocorrelation)
    }

    fn opts(layers: usize, dropout: f64) -> TrainOptions {
        TrainOptions {
            hyper: GcnHyper {
                alpha: 0.2,
                eta: 0.5,
                dropout,
            },
            layers,
            lambda: 0.1,
            lr: 5e-4,
            weight_decay: 3e-3,
            epochs: 5,
            train_heads: true,
            seed: 3,
        }
    }

    #[test]
    fn full_model_gradient_matches_finite_differences() {
        let (g, raw, heads, s) = tiny(1);
        let o = opts(1, 0.3);
        let mut st = ModelState::init(&heads, &g.modalities, &o).unwrap();
        let n_params = st.parameters_mut().len();
        assert!(n_params <= 64, "{n_params} parameters");
        let mode = Mode::Train { seed: 5, step: 2 };
        let (_, grads) = st.loss_and_grad(&g.laplacian, &raw, &s, &o, mode).unwrap();
        let analytic = grads.flatten();
        assert_eq!(analytic.len(), n_params);
        let h = 1e-4;
        for k in 0..n_params {
            let orig = *st.parameters_mut()[k];
            *st.parameters_mut()[k] = orig + h;
            let up = st.loss(&g.laplacian, &raw, &s, &o, mode).unwrap().total();
            *st.parameters_mut()[k] = orig - h;
            let down = st.loss(&g.laplacian, &raw, &s, &o, mode).unwrap().total();
            *st.parameters_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let scale = analytic[k].abs().max(numeric.abs()).max(1e-6);
            assert!(
                (analytic[k] - numeric).abs() / scale <= 1e-4,
                "param {k}: analytic {} numeric {numeric}",
                analytic[k]
            );
        }
    }

    #[test]
    fn zero_epochs_returns_initialization_forward() {
        let (g, raw, heads, s) = tiny(2);
        let mut o = opts(2, 0.3);
        o.epochs = 0;
        let out = train(&g, &raw, &heads, &s, &o).unwrap();
        let init = ModelState::init(&heads, &g.modalities, &o).unwrap();
        assert_eq!(out.state, init);
        assert_eq!(out.embeddings, init.embeddings(&g.laplacian, &raw, o.hyper).unwrap());
        assert_eq!(out.log.initial, out.log.last);
    }

    #[test]
    fn training_is_reproducible() {
        let (g, raw, heads, s) = tiny(3);
        let o = opts(2, 0.3);
        let a = train(&g, &raw, &heads, &s, &o).unwrap();
        let b = train(&g, &raw, &heads, &s, &o).unwrap();
        assert_eq!(a.state, b.state);
        assert_eq!(a.log, b.log);
        assert_eq!(a.log.step_loss.len(), 5);
    }

    #[test]
    fn frozen_heads_do_not_move() {
        let (g, raw, heads, s) = tiny(4);
        let mut o = opts(1, 0.0);
        o.train_heads = false;
        let out = train(&g, &raw, &heads, &s, &o).unwrap();
        assert_eq!(&out.state.heads[0], heads.get(Modality::Text));
        assert_ne!(out.state.weights, ModelState::init(&heads, &g.modalities, &o).unwrap().weights);
    }

    #[test]
    fn fused_rows_concatenate_slots() {
        let h = Array2::from_shape_fn((6, 2), |(i, j)| (10 * i + j) as f64);
        let f = fuse_rows(&h, 2);
        assert_eq!(f.row(1).to_vec(), vec![10.0, 11.0, 30.0, 31.0, 50.0, 51.0]);
        assert_eq!(unfuse_rows(&f, 3, 2), h);
    }
}
