//! Biaffine edge prediction over externally supplied token embeddings.
//!
//! Position 0 is the root and has a learned vector; positions `1..=n` are
//! the rows of the sentence. For every head position `i` and dependent `j`
//!
//! ```text
//! x_j   = sum_l softmax(mix)_l e_{j,l}
//! h_i   = ELU(x_i W_h + c_h)          d_j = ELU(x_j W_d + c_d)
//! s_ijk = h_i U_k d_j + V^h_k h_i + V^d_k d_j + b_k
//! ```
//!
//! and `softmax_k(s_ij)` gives a distribution over labels, where label 0
//! means "no edge". Gradients are written out by hand.

pub mod lexical;

use std::collections::BTreeSet;

use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lexical::{delexicalize_corpus, delexicalize_label, lexicalize_label, lexicalize_sentence};

use crate::conllu::{Node, Sentence};
use crate::container::{Container, ContainerError};
use crate::embed::{sentence_key, EmbeddingError, EmbeddingProvider};
use crate::graph::{add_enhanced, enhanced_edges, Edge};
use crate::optim::{AdamW, AdamWConfig};

/// Name of label index 0.
pub const NO_EDGE: &str = "<none>";

#[derive(Debug, Error)]
pub enum ParserError {
    #[error("embeddings have {found_layers} layers of dimension {found_dim}; model expects {layers} x {dim}")]
    Dimension {
        layers: usize,
        dim: usize,
        found_layers: usize,
        found_dim: usize,
    },

    #[error(transparent)]
    Embedding(#[from] EmbeddingError),

    #[error("sentence {sentence}: label `{label}` is not in the model inventory")]
    UnknownLabel { sentence: String, label: String },

    #[error("sentence {sentence}: gold edge points at an unknown token")]
    UnknownToken { sentence: String },

    #[error("no training sentences")]
    Empty,

    #[error(transparent)]
    Container(#[from] ContainerError),

    #[error("model metadata: {0}")]
    Meta(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: usize,
    pub dropout: f64,
    pub layer_dropout: f64,
    /// Probability of zeroing all layer vectors of a token.
    pub token_mask: f64,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub epochs: usize,
    /// Stop after this many epochs without dev improvement (needs a dev set).
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: 1024,
            dropout: 0.33,
            layer_dropout: 0.1,
            token_mask: 0.15,
            batch_size: 5,
            optimizer: AdamWConfig {
                lr: 5e-6,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                weight_decay: 0.0,
            },
            epochs: 30,
            patience: 5,
            seed: 1,
        }
    }
}

/// Per-layer token vectors of one sentence: `layers[l]` is `n × dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStack {
    pub layers: Vec<Array2<f64>>,
}

impl EmbeddingStack {
    pub fn from_provider(
        s: &Sentence,
        index: usize,
        provider: &dyn EmbeddingProvider,
    ) -> Result<Self, ParserError> {
        let (layers, dim) = (provider.layers(), provider.dim());
        let n = s.tokens.len();
        let mut out = vec![Array2::zeros((n, dim)); layers];
        for (j, t) in s.tokens.iter().enumerate() {
            let v = provider.lookup(s, index, t.id)?;
            for (l, layer) in out.iter_mut().enumerate() {
                layer
                    .row_mut(j)
                    .assign(&ndarray::ArrayView1::from(&v[l * dim..(l + 1) * dim]));
            }
        }
        Ok(EmbeddingStack { layers: out })
    }

    pub fn len(&self) -> usize {
        self.layers.first().map_or(0, |l| l.nrows())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.ncols())
    }
}

/// All trainable tensors. Also used for gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub mix: Array1<f64>,
    pub root: Array1<f64>,
    pub wh: Array2<f64>,
    pub ch: Array1<f64>,
    pub wd: Array2<f64>,
    pub cd: Array1<f64>,
    /// `labels × hidden × hidden`.
    pub u: Array3<f64>,
    pub vh: Array2<f64>,
    pub vd: Array2<f64>,
    pub b: Array1<f64>,
}

pub const PARAM_NAMES: [&str; 10] = ["mix", "root", "wh", "ch", "wd", "cd", "u", "vh", "vd", "b"];

impl Params {
    fn zeros(layers: usize, dim: usize, hidden: usize, labels: usize) -> Self {
        Params {
            mix: Array1::zeros(layers),
            root: Array1::zeros(dim),
            wh: Array2::zeros((dim, hidden)),
            ch: Array1::zeros(hidden),
            wd: Array2::zeros((dim, hidden)),
            cd: Array1::zeros(hidden),
            u: Array3::zeros((labels, hidden, hidden)),
            vh: Array2::zeros((labels, hidden)),
            vd: Array2::zeros((labels, hidden)),
            b: Array1::zeros(labels),
        }
    }

    fn zeros_like(&self) -> Self {
        Params::zeros(self.mix.len(), self.root.len(), self.ch.len(), self.b.len())
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        vec![
            self.mix.shape().to_vec(),
            self.root.shape().to_vec(),
            self.wh.shape().to_vec(),
            self.ch.shape().to_vec(),
            self.wd.shape().to_vec(),
            self.cd.shape().to_vec(),
            self.u.shape().to_vec(),
            self.vh.shape().to_vec(),
            self.vd.shape().to_vec(),
            self.b.shape().to_vec(),
        ]
    }

    pub fn slices(&self) -> [&[f64]; 10] {
        [
            self.mix.as_slice().unwrap(),
            self.root.as_slice().unwrap(),
            self.wh.as_slice().unwrap(),
            self.ch.as_slice().unwrap(),
            self.wd.as_slice().unwrap(),
            self.cd.as_slice().unwrap(),
            self.u.as_slice().unwrap(),
            self.vh.as_slice().unwrap(),
            self.vd.as_slice().unwrap(),
            self.b.as_slice().unwrap(),
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 10] {
        [
            self.mix.as_slice_mut().unwrap(),
            self.root.as_slice_mut().unwrap(),
            self.wh.as_slice_mut().unwrap(),
            self.ch.as_slice_mut().unwrap(),
            self.wd.as_slice_mut().unwrap(),
            self.cd.as_slice_mut().unwrap(),
            self.u.as_slice_mut().unwrap(),
            self.vh.as_slice_mut().unwrap(),
            self.vd.as_slice_mut().unwrap(),
            self.b.as_slice_mut().unwrap(),
        ]
    }

    fn add_scaled(&mut self, other: &Params, k: f64) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += k * y;
            }
        }
    }
}

/// Random choices made for one training forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Noise {
    pub active_layers: Vec<bool>,
    pub keep_tokens: Vec<bool>,
    /// Inverted-dropout multipliers for head and dependent projections.
    pub head_mask: Option<Array2<f64>>,
    pub dep_mask: Option<Array2<f64>>,
}

impl Noise {
    pub fn none(n: usize, layers: usize) -> Self {
        Noise {
            active_layers: vec![true; layers],
            keep_tokens: vec![true; n],
            head_mask: None,
            dep_mask: None,
        }
    }

    pub fn sample(n: usize, layers: usize, hidden: usize, cfg: &TrainConfig, rng: &mut impl Rng) -> Self {
        let mut active: Vec<bool> = (0..layers).map(|_| !rng.gen_bool(cfg.layer_dropout)).collect();
        if !active.iter().any(|&a| a) {
            active.iter_mut().for_each(|a| *a = true);
        }
        let keep = (0..n).map(|_| !rng.gen_bool(cfg.token_mask)).collect();
        let mut mask = |rows: usize| {
            if cfg.dropout <= 0.0 {
                return None;
            }
            let scale = 1.0 / (1.0 - cfg.dropout);
            Some(Array2::from_shape_fn((rows, hidden), |_| {
                if rng.gen_bool(cfg.dropout) {
                    0.0
                } else {
                    scale
                }
            }))
        };
        let head_mask = mask(n + 1);
        let dep_mask = mask(n);
        Noise {
            active_layers: active,
            keep_tokens: keep,
            head_mask,
            dep_mask,
        }
    }
}

fn elu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        v.exp_m1()
    }
}

fn elu_grad(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        v.exp()
    }
}

struct Cache {
    weights: Array1<f64>,
    x: Array2<f64>,
    uh: Array2<f64>,
    hh: Array2<f64>,
    ud: Array2<f64>,
    hd: Array2<f64>,
    logits: Array3<f64>,
}

/// Logits and label probabilities, indexed `[head position, dependent
/// row, label]`; head position 0 is the root, dependent row `j` is head
/// position `j + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Scores {
    pub logits: Array3<f64>,
    pub probs: Array3<f64>,
}

fn softmax_last(logits: &Array3<f64>) -> Array3<f64> {
    let mut p = logits.clone();
    for mut row in p.lanes_mut(Axis(2)) {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
    p
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeScoreModel {
    /// Label inventory; index 0 is [`NO_EDGE`].
    pub labels: Vec<String>,
    pub params: Params,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    labels: Vec<String>,
    layers: usize,
    dim: usize,
    hidden: usize,
}

impl EdgeScoreModel {
    /// `labels` excludes the no-edge label, which is prepended.
    pub fn new(labels: impl IntoIterator<Item = String>, layers: usize, dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut inventory = vec![NO_EDGE.to_owned()];
        inventory.extend(labels.into_iter().filter(|l| l != NO_EDGE));
        let mut p = Params::zeros(layers, dim, hidden, inventory.len());
        let a = (6.0 / (dim + hidden) as f64).sqrt();
        p.wh.mapv_inplace(|_| rng.gen_range(-a..a));
        p.wd.mapv_inplace(|_| rng.gen_range(-a..a));
        p.root.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
        EdgeScoreModel {
            labels: inventory,
            params: p,
        }
    }

    pub fn layers(&self) -> usize {
        self.params.mix.len()
    }

    pub fn dim(&self) -> usize {
        self.params.root.len()
    }

    pub fn hidden(&self) -> usize {
        self.params.ch.len()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Normalised layer weights.
    pub fn mixture(&self, active: &[bool]) -> Array1<f64> {
        let mix = &self.params.mix;
        let m = mix
            .iter()
            .zip(active)
            .filter(|(_, a)| **a)
            .fold(f64::NEG_INFINITY, |acc, (v, _)| acc.max(*v));
        let mut w: Array1<f64> = mix
            .iter()
            .zip(active)
            .map(|(v, a)| if *a { (v - m).exp() } else { 0.0 })
            .collect();
        let z = w.sum();
        w.mapv_inplace(|v| v / z);
        w
    }

    fn check(&self, stack: &EmbeddingStack) -> Result<(), ParserError> {
        if stack.layers.len() != self.layers() || (stack.len() > 0 && stack.dim() != self.dim()) {
            return Err(ParserError::Dimension {
                layers: self.layers(),
                dim: self.dim(),
                found_layers: stack.layers.len(),
                found_dim: stack.dim(),
            });
        }
        Ok(())
    }

    fn forward(&self, stack: &EmbeddingStack, noise: &Noise) -> Cache {
        let p = &self.params;
        let n = stack.len();
        let weights = self.mixture(&noise.active_layers);

        let mut x = Array2::zeros((n + 1, self.dim()));
        x.row_mut(0).assign(&p.root);
        for (l, layer) in stack.layers.iter().enumerate() {
            if weights[l] != 0.0 {
                x.slice_mut(s![1.., ..]).scaled_add(weights[l], layer);
            }
        }
        for (j, keep) in noise.keep_tokens.iter().enumerate() {
            if !keep {
                x.row_mut(j + 1).fill(0.0);
            }
        }

        let uh = x.dot(&p.wh) + &p.ch;
        let mut hh = uh.mapv(elu);
        if let Some(m) = &noise.head_mask {
            hh *= m;
        }
        let ud = x.slice(s![1.., ..]).dot(&p.wd) + &p.cd;
        let mut hd = ud.mapv(elu);
        if let Some(m) = &noise.dep_mask {
            hd *= m;
        }

        let labels = self.labels.len();
        let mut logits = Array3::zeros((n + 1, n, labels));
        for k in 0..labels {
            let uk = p.u.index_axis(Axis(0), k);
            let mut sk = hh.dot(&uk).dot(&hd.t());
            let sh = hh.dot(&p.vh.row(k));
            let sd = hd.dot(&p.vd.row(k));
            sk += &sh.insert_axis(Axis(1));
            sk += &sd;
            sk += p.b[k];
            logits.slice_mut(s![.., .., k]).assign(&sk);
        }
        Cache {
            weights,
            x,
            uh,
            hh,
            ud,
            hd,
            logits,
        }
    }

    /// Mixed token vectors at inference, root first.
    pub fn mixed_embeddings(&self, stack: &EmbeddingStack) -> Result<Array2<f64>, ParserError> {
        self.check(stack)?;
        Ok(self.forward(stack, &Noise::none(stack.len(), self.layers())).x)
    }

    /// Inference scores; no dropout or masking.
    pub fn score_pairs(&self, stack: &EmbeddingStack) -> Result<Scores, ParserError> {
        self.check(stack)?;
        let cache = self.forward(stack, &Noise::none(stack.len(), self.layers()));
        let probs = softmax_last(&cache.logits);
        Ok(Scores {
            logits: cache.logits,
            probs,
        })
    }

    /// Gold label index per `[head position, dependent row]`.
    pub fn gold_matrix(&self, gold: &Sentence, index: usize) -> Result<Array2<usize>, ParserError> {
        let n = gold.tokens.len();
        let mut y = Array2::zeros((n + 1, n));
        for e in enhanced_edges(gold) {
            let name = || sentence_key(gold, index);
            let j = gold
                .index_of(e.dep)
                .ok_or_else(|| ParserError::UnknownToken { sentence: name() })?;
            let i = match e.head {
                Node::Root => 0,
                Node::Word(h) => gold
                    .index_of(h)
                    .ok_or_else(|| ParserError::UnknownToken { sentence: name() })?
                    + 1,
            };
            let k = self.label_index(&e.label).ok_or_else(|| ParserError::UnknownLabel {
                sentence: name(),
                label: e.label.clone(),
            })?;
            // Several labels on one pair: keep the lowest index.
            if y[[i, j]] == 0 || k < y[[i, j]] {
                y[[i, j]] = k;
            }
        }
        Ok(y)
    }

    /// Mean cross-entropy over ordered pairs of distinct positions.
    pub fn loss(&self, stack: &EmbeddingStack, gold: &Array2<usize>, noise: &Noise) -> f64 {
        let cache = self.forward(stack, noise);
        let n = stack.len();
        let mut total = 0.0;
        for i in 0..=n {
            for j in 0..n {
                if i == j + 1 {
                    continue;
                }
                let row = cache.logits.slice(s![i, j, ..]);
                let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                total += lse - row[gold[[i, j]]];
            }
        }
        total / (n * n).max(1) as f64
    }

    pub fn loss_and_grad(&self, stack: &EmbeddingStack, gold: &Array2<usize>, noise: &Noise) -> (f64, Params) {
        let p = &self.params;
        let c = self.forward(stack, noise);
        let n = stack.len();
        let labels = self.labels.len();
        let pairs = (n * n).max(1) as f64;

        let mut delta = softmax_last(&c.logits);
        let mut loss = 0.0;
        for i in 0..=n {
            for j in 0..n {
                let mut row = delta.slice_mut(s![i, j, ..]);
                if i == j + 1 {
                    row.fill(0.0);
                    continue;
                }
                let y = gold[[i, j]];
                loss -= row[y].ln();
                row[y] -= 1.0;
                row.mapv_inplace(|v| v / pairs);
            }
        }
        loss /= pairs;

        let mut g = self.params.zeros_like();
        let mut ghh = Array2::<f64>::zeros(c.hh.raw_dim());
        let mut ghd = Array2::<f64>::zeros(c.hd.raw_dim());
        for k in 0..labels {
            let dk = delta.slice(s![.., .., k]);
            let uk = p.u.index_axis(Axis(0), k);
            let rows = dk.sum_axis(Axis(1));
            let cols = dk.sum_axis(Axis(0));
            g.b[k] = dk.sum();
            g.vh.row_mut(k).assign(&c.hh.t().dot(&rows));
            g.vd.row_mut(k).assign(&c.hd.t().dot(&cols));
            g.u.index_axis_mut(Axis(0), k).assign(&c.hh.t().dot(&dk.dot(&c.hd)));
            ghh += &dk.dot(&c.hd.dot(&uk.t()));
            ghh += &outer(&rows, &p.vh.row(k).to_owned());
            ghd += &dk.t().dot(&c.hh.dot(&uk));
            ghd += &outer(&cols, &p.vd.row(k).to_owned());
        }

        if let Some(m) = &noise.head_mask {
            ghh *= m;
        }
        if let Some(m) = &noise.dep_mask {
            ghd *= m;
        }
        let guh = ghh * c.uh.mapv(elu_grad);
        let gud = ghd * c.ud.mapv(elu_grad);
        g.wh = c.x.t().dot(&guh);
        g.ch = guh.sum_axis(Axis(0));
        let xd = c.x.slice(s![1.., ..]);
        g.wd = xd.t().dot(&gud);
        g.cd = gud.sum_axis(Axis(0));

        let mut gx = guh.dot(&p.wh.t());
        gx.slice_mut(s![1.., ..]).scaled_add(1.0, &gud.dot(&p.wd.t()));
        g.root = gx.row(0).to_owned();

        let mut gtok = gx.slice(s![1.., ..]).to_owned();
        for (j, keep) in noise.keep_tokens.iter().enumerate() {
            if !keep {
                gtok.row_mut(j).fill(0.0);
            }
        }
        let ga: Vec<f64> = stack.layers.iter().map(|e| (&gtok * e).sum()).collect();
        let mean: f64 = ga.iter().zip(&c.weights).map(|(a, w)| a * w).sum();
        for l in 0..ga.len() {
            g.mix[l] = c.weights[l] * (ga[l] - mean);
        }
        (loss, g)
    }

    /// Predicted enhanced layer for `s`, written into its DEPS columns.
    pub fn decode(&self, stack: &EmbeddingStack, s: &Sentence) -> Result<Sentence, ParserError> {
        let scores = self.score_pairs(stack)?;
        Ok(decode_scores(&scores.probs, &self.labels, s))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = Meta {
            labels: self.labels.clone(),
            layers: self.layers(),
            dim: self.dim(),
            hidden: self.hidden(),
        };
        let mut c = Container::new("edge-biaffine", serde_json::to_value(&meta).expect("metadata serializes"));
        for ((name, shape), data) in PARAM_NAMES.iter().zip(self.params.shapes()).zip(self.params.slices()) {
            c.push(*name, shape, data.to_vec());
        }
        c.to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ParserError> {
        let mut c = Container::from_bytes(bytes)?;
        c.expect_kind("edge-biaffine")?;
        let meta: Meta = serde_json::from_value(c.meta.clone())?;
        let mut params = Params::zeros(meta.layers, meta.dim, meta.hidden, meta.labels.len());
        let shapes = params.shapes();
        for ((name, shape), slot) in PARAM_NAMES.iter().zip(shapes).zip(params.slices_mut()) {
            slot.copy_from_slice(&c.take(name, &shape)?);
        }
        Ok(EdgeScoreModel {
            labels: meta.labels,
            params,
        })
    }
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

fn position_node(s: &Sentence, i: usize) -> Node {
    if i == 0 {
        Node::Root
    } else {
        Node::Word(s.tokens[i - 1].id)
    }
}

/// Turn a probability tensor into DEPS columns. Each pair keeps its most
/// probable label unless that is the no-edge label; a dependent left
/// without any head gets its most probable labeled head. Ties go to the
/// lowest head position, then the lowest label index.
pub fn decode_scores(probs: &Array3<f64>, labels: &[String], s: &Sentence) -> Sentence {
    let n = s.tokens.len();
    let mut out = s.clone();
    out.clear_enhanced();
    let mut edges = Vec::new();
    for j in 0..n {
        let dep = s.tokens[j].id;
        let mut found = false;
        let mut fallback: Option<(f64, usize, usize)> = None;
        for i in 0..=n {
            if i == j + 1 {
                continue;
            }
            let row = probs.slice(s![i, j, ..]);
            let mut best = 0;
            for k in 1..row.len() {
                if row[k] > row[best] {
                    best = k;
                }
                if fallback.is_none_or(|(p, _, _)| row[k] > p) {
                    fallback = Some((row[k], i, k));
                }
            }
            if best != 0 {
                found = true;
                edges.push((i, dep, best));
            }
        }
        if !found {
            if let Some((_, i, k)) = fallback {
                edges.push((i, dep, k));
            }
        }
    }
    add_enhanced(
        &mut out,
        edges.into_iter().map(|(i, dep, k)| {
            let label = lexicalize_label(&labels[k], dep, s);
            Edge::new(position_node(s, i), dep, label)
        }),
    );
    out
}

/// Mini-batch training state.
pub struct Trainer {
    pub model: EdgeScoreModel,
    pub cfg: TrainConfig,
    opt: AdamW,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: EdgeScoreModel, cfg: TrainConfig) -> Self {
        let opt = AdamW::new(cfg.optimizer);
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
        Trainer { model, cfg, opt, rng }
    }

    /// One pass over `corpus` (gold sentences, placeholder labels). Returns
    /// the mean per-sentence loss.
    pub fn train_epoch(&mut self, corpus: &[Sentence], provider: &dyn EmbeddingProvider) -> Result<f64, ParserError> {
        if corpus.is_empty() {
            return Err(ParserError::Empty);
        }
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        for batch in order.chunks(self.cfg.batch_size.max(1)) {
            let mut grad = self.model.params.zeros_like();
            for &i in batch {
                let s = &corpus[i];
                let stack = EmbeddingStack::from_provider(s, i, provider)?;
                self.model.check(&stack)?;
                let gold = self.model.gold_matrix(s, i)?;
                let noise = Noise::sample(
                    stack.len(),
                    self.model.layers(),
                    self.model.hidden(),
                    &self.cfg,
                    &mut self.rng,
                );
                let (loss, g) = self.model.loss_and_grad(&stack, &gold, &noise);
                total += loss;
                grad.add_scaled(&g, 1.0 / batch.len() as f64);
            }
            self.opt.begin_step();
            for (slot, (param, g)) in self.model.params.slices_mut().into_iter().zip(grad.slices()).enumerate() {
                self.opt.update(slot, param, g);
            }
        }
        Ok(total / corpus.len() as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub dev_f1: Option<f64>,
}

/// Labeled F1 over all enhanced edges.
pub fn labeled_f1(system: &[Sentence], gold: &[Sentence]) -> f64 {
    let (mut tp, mut sys, mut gld) = (0usize, 0usize, 0usize);
    for (s, g) in system.iter().zip(gold) {
        let a = enhanced_edges(s);
        let b = enhanced_edges(g);
        tp += a.intersection(&b).len();
        sys += a.len();
        gld += b.len();
    }
    if sys + gld == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (sys + gld) as f64
    }
}

pub fn predict(
    model: &EdgeScoreModel,
    s: &Sentence,
    index: usize,
    provider: &dyn EmbeddingProvider,
) -> Result<Sentence, ParserError> {
    let stack = EmbeddingStack::from_provider(s, index, provider)?;
    model.decode(&stack, s)
}

/// Train a model on gold graphs. With a dev corpus, the best epoch by
/// labeled F1 is kept and training stops after `patience` epochs without
/// improvement.
pub fn fit(
    train: &[Sentence],
    dev: Option<&[Sentence]>,
    provider: &dyn EmbeddingProvider,
    cfg: &TrainConfig,
) -> Result<(EdgeScoreModel, Vec<EpochLog>), ParserError> {
    if train.is_empty() {
        return Err(ParserError::Empty);
    }
    let (delex, inventory): (Vec<Sentence>, BTreeSet<String>) = delexicalize_corpus(train);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = EdgeScoreModel::new(inventory, provider.layers(), provider.dim(), cfg.hidden, &mut rng);
    let mut trainer = Trainer::new(model, cfg.clone());
    let mut log = Vec::new();
    let mut best: Option<(f64, EdgeScoreModel)> = None;
    let mut waited = 0;

    for epoch in 1..=cfg.epochs {
        let loss = trainer.train_epoch(&delex, provider)?;
        let dev_f1 = match dev {
            Some(dev) => {
                let predicted = dev
                    .iter()
                    .enumerate()
                    .map(|(i, s)| predict(&trainer.model, s, i, provider))
                    .collect::<Result<Vec<_>, _>>()?;
                Some(labeled_f1(&predicted, dev))
            }
            None => None,
        };
        log::info!("epoch {}: loss {:.5}{}", epoch, loss, dev_f1.map_or(String::new(), |f| format!(", dev F1 {:.4}", f)));
        log.push(EpochLog { epoch, loss, dev_f1 });
        if let Some(f) = dev_f1 {
            if best.as_ref().is_none_or(|(b, _)| f > *b) {
                best = Some((f, trainer.model.clone()));
                waited = 0;
            } else {
                waited += 1;
                if waited >= cfg.patience {
                    break;
                }
            }
        }
    }
    let model = best.map_or(trainer.model, |(_, m)| m);
    Ok((model, log))
}
