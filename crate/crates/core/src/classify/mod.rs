//! Learned conjunction propagation.
//!
//! Every eligible relation of a conjunction head becomes a binary decision:
//! copy it onto the conjunction dependent or not. Decisions are made by a
//! polynomial-kernel SVM or an MLP over the features in [`features`].

pub mod features;
pub mod mlp;
pub mod svm;

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use features::{featurize, FeatureGroups, FeatureVector, LinearDirection, SparseVec, Vocabulary};
pub use mlp::{Mlp, MlpConfig};
pub use svm::{KernelConfig, KernelSvm};

use crate::conllu::{Node, Sentence};
use crate::container::{Container, ContainerError};
use crate::convert::{propagated_subject_label, seed_enhanced};
use crate::embed::{EmbeddingError, EmbeddingProvider};
use crate::graph::{add_enhanced, basic_edges, coarse, conj_pairs, enhanced_edges, ConjFilter, ConjPair, Edge, LinkSet};

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("sentence {sentence}: tokens differ between input and gold")]
    TokenMismatch { sentence: String },

    #[error("input has {input} sentences but gold has {gold}")]
    CorpusLength { input: usize, gold: usize },

    #[error(transparent)]
    Embedding(#[from] EmbeddingError),

    #[error("no training instances")]
    Empty,

    #[error("training data contains only {0} instances")]
    SingleClass(&'static str),

    #[error("training instance {0} has no gold decision")]
    Unlabeled(usize),

    #[error("features do not match the model: {0}")]
    Mismatch(String),

    #[error(transparent)]
    Container(#[from] ContainerError),

    #[error("model metadata: {0}")]
    Meta(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// A governor of the conjunction head.
    Incoming,
    /// A dependent of the conjunction head.
    Outgoing,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Incoming => "in",
            Direction::Outgoing => "out",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Kernel,
    Mlp,
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "kernel" | "svm" => Ok(ModelKind::Kernel),
            "mlp" | "nn" => Ok(ModelKind::Mlp),
            _ => Err(format!("unknown model kind `{}` (expected kernel or mlp)", s)),
        }
    }
}

/// Which relations of a conjunction head become instances.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractConfig {
    /// Outgoing relations never propagated, by coarse label.
    pub excluded_outgoing: BTreeSet<String>,
    /// Incoming relations never propagated, by coarse label.
    pub excluded_incoming: BTreeSet<String>,
    /// Whether the root relation of a conjunction head is a candidate.
    pub include_root: bool,
    /// Restrict to conjunctions of two VERB/AUX tokens.
    pub verbal_only: bool,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            excluded_outgoing: ["cc", "conj", "punct", "mark"].iter().map(|s| s.to_string()).collect(),
            excluded_incoming: BTreeSet::new(),
            include_root: false,
            verbal_only: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PropagationInstance {
    /// Position of the sentence in its corpus.
    pub sentence: usize,
    pub sent_id: Option<String>,
    pub pair: ConjPair,
    pub target: Node,
    pub label: String,
    pub direction: Direction,
    pub gold: Option<bool>,
    /// The label the gold edge carries when it differs from the candidate
    /// label by a passive rewrite.
    pub gold_label: Option<String>,
}

impl PropagationInstance {
    /// The relation of the conjunction head the instance is about.
    pub fn source_edge(&self) -> Edge {
        match self.direction {
            Direction::Outgoing => Edge::new(self.pair.gov, self.target.word().unwrap(), self.label.clone()),
            Direction::Incoming => Edge::new(self.target, self.pair.gov, self.label.clone()),
        }
    }

    /// The edge propagation would add, with label `label`.
    pub fn edge_with(&self, label: &str) -> Edge {
        match self.direction {
            Direction::Outgoing => Edge::new(self.pair.dep, self.target.word().unwrap(), label),
            Direction::Incoming => Edge::new(self.target, self.pair.dep, label),
        }
    }

    pub fn edge(&self) -> Edge {
        self.edge_with(&self.label)
    }
}

/// Labels a gold edge may carry and still match `label`: subjects match
/// across the passive subtype.
pub fn label_variants(label: &str) -> Vec<String> {
    let mut out = vec![label.to_owned()];
    let base = coarse(label);
    if base == "nsubj" || base == "csubj" {
        for v in [base.to_owned(), format!("{}:pass", base)] {
            if !out.contains(&v) {
                out.push(v);
            }
        }
    }
    out
}

fn same_tokens(a: &Sentence, b: &Sentence) -> bool {
    a.tokens.len() == b.tokens.len()
        && a.tokens.iter().zip(&b.tokens).all(|(x, y)| x.id == y.id && x.form == y.form)
}

fn sentence_name(s: &Sentence, index: usize) -> String {
    crate::embed::sentence_key(s, index)
}

fn instances_from(
    s: &Sentence,
    index: usize,
    layer: &LinkSet,
    cfg: &ExtractConfig,
) -> Vec<PropagationInstance> {
    let filter = if cfg.verbal_only { ConjFilter::Verbs } else { ConjFilter::All };
    let sent_id = s.sent_id().map(str::to_owned);
    let mut out = Vec::new();
    for pair in conj_pairs(s, filter) {
        let make = |target: Node, label: &str, direction| PropagationInstance {
            sentence: index,
            sent_id: sent_id.clone(),
            pair,
            target,
            label: label.to_owned(),
            direction,
            gold: None,
            gold_label: None,
        };
        for e in layer.outgoing(Node::Word(pair.gov)) {
            if e.dep == pair.dep || cfg.excluded_outgoing.contains(coarse(&e.label)) {
                continue;
            }
            out.push(make(Node::Word(e.dep), &e.label, Direction::Outgoing));
        }
        for e in layer.incoming(pair.gov) {
            if e.head == Node::Word(pair.dep)
                || (e.head == Node::Root && !cfg.include_root)
                || cfg.excluded_incoming.contains(coarse(&e.label))
            {
                continue;
            }
            out.push(make(e.head, &e.label, Direction::Incoming));
        }
    }
    out
}

/// One instance per conjunction pair and eligible basic relation of the
/// conjunction head. With `gold`, each instance records whether the gold
/// enhanced layer propagates it.
pub fn extract_instances(
    s: &Sentence,
    index: usize,
    gold: Option<&Sentence>,
    cfg: &ExtractConfig,
) -> Result<Vec<PropagationInstance>, ClassifyError> {
    let mut out = instances_from(s, index, &basic_edges(s), cfg);
    if let Some(gold) = gold {
        if !same_tokens(s, gold) {
            return Err(ClassifyError::TokenMismatch {
                sentence: sentence_name(s, index),
            });
        }
        let enhanced = enhanced_edges(gold);
        for inst in &mut out {
            let found = label_variants(&inst.label)
                .into_iter()
                .find(|l| enhanced.contains(&inst.edge_with(l)));
            inst.gold = Some(found.is_some());
            inst.gold_label = found.filter(|l| *l != inst.label);
        }
    }
    Ok(out)
}

/// Instances and features for a whole corpus with gold decisions.
pub fn training_set(
    corpus: &[Sentence],
    gold: &[Sentence],
    provider: Option<&dyn EmbeddingProvider>,
    groups: FeatureGroups,
    cfg: &ExtractConfig,
) -> Result<(Vec<PropagationInstance>, Vec<FeatureVector>), ClassifyError> {
    if corpus.len() != gold.len() {
        return Err(ClassifyError::CorpusLength {
            input: corpus.len(),
            gold: gold.len(),
        });
    }
    let mut instances = Vec::new();
    let mut features = Vec::new();
    for (i, (s, g)) in corpus.iter().zip(gold).enumerate() {
        for inst in extract_instances(s, i, Some(g), cfg)? {
            features.push(featurize(&inst, s, provider, groups)?);
            instances.push(inst);
        }
    }
    Ok((instances, features))
}

#[derive(Clone, Debug, PartialEq)]
pub enum Classifier {
    Kernel(KernelSvm),
    Mlp(Mlp),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub groups: Option<FeatureGroups>,
    pub extract: ExtractConfig,
    pub kernel: KernelConfig,
    pub mlp: MlpConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            kind: ModelKind::Kernel,
            groups: None,
            extract: ExtractConfig::default(),
            kernel: KernelConfig::default(),
            mlp: MlpConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn groups(&self) -> FeatureGroups {
        self.groups.unwrap_or_else(|| FeatureGroups::defaults(self.kind))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropModel {
    pub groups: FeatureGroups,
    pub extract: ExtractConfig,
    pub vocab: Vocabulary,
    pub dense_dim: usize,
    pub classifier: Classifier,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    groups: FeatureGroups,
    extract: ExtractConfig,
    vocab: Vocabulary,
    dense_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    support: Option<Vec<Vec<u32>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sizes: Option<Vec<usize>>,
}

/// Fit a model on labeled instances and their features.
pub fn train(
    instances: &[PropagationInstance],
    features: &[FeatureVector],
    cfg: &TrainConfig,
) -> Result<PropModel, ClassifyError> {
    assert_eq!(instances.len(), features.len());
    if instances.is_empty() {
        return Err(ClassifyError::Empty);
    }
    let labels = instances
        .iter()
        .enumerate()
        .map(|(i, inst)| inst.gold.ok_or(ClassifyError::Unlabeled(i)))
        .collect::<Result<Vec<bool>, _>>()?;
    let dense_dim = features[0].dense.len();
    if let Some(f) = features.iter().find(|f| f.dense.len() != dense_dim) {
        return Err(ClassifyError::Mismatch(format!(
            "dense vectors of length {} and {}",
            dense_dim,
            f.dense.len()
        )));
    }

    let vocab = Vocabulary::fit(features);
    let x: Vec<SparseVec> = features.iter().map(|f| vocab.encode(f)).collect();
    let classifier = match cfg.kind {
        ModelKind::Kernel => Classifier::Kernel(KernelSvm::train(&x, &labels, &cfg.kernel)?),
        ModelKind::Mlp => Classifier::Mlp(Mlp::train(vocab.len() + dense_dim, &x, &labels, &cfg.mlp)?),
    };
    Ok(PropModel {
        groups: cfg.groups(),
        extract: cfg.extract.clone(),
        vocab,
        dense_dim,
        classifier,
    })
}

impl PropModel {
    pub fn kind(&self) -> ModelKind {
        match self.classifier {
            Classifier::Kernel(_) => ModelKind::Kernel,
            Classifier::Mlp(_) => ModelKind::Mlp,
        }
    }

    pub fn encode(&self, f: &FeatureVector) -> Result<SparseVec, ClassifyError> {
        if f.dense.len() != self.dense_dim {
            return Err(ClassifyError::Mismatch(format!(
                "model expects {} dense values, got {}",
                self.dense_dim,
                f.dense.len()
            )));
        }
        if f.tree.is_some() != self.groups.tree
            || (!f.morphology.is_empty()) != self.groups.morphology
        {
            return Err(ClassifyError::Mismatch("feature groups differ from training".into()));
        }
        Ok(self.vocab.encode(f))
    }

    /// Signed score; positive means propagate.
    pub fn decision(&self, f: &FeatureVector) -> Result<f64, ClassifyError> {
        let x = self.encode(f)?;
        Ok(match &self.classifier {
            Classifier::Kernel(m) => m.decision(&x),
            Classifier::Mlp(m) => m.decision(&x),
        })
    }

    pub fn predict(&self, f: &FeatureVector) -> Result<bool, ClassifyError> {
        Ok(self.decision(f)? > 0.0)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut meta = Meta {
            groups: self.groups,
            extract: self.extract.clone(),
            vocab: self.vocab.clone(),
            dense_dim: self.dense_dim,
            support: None,
            sizes: None,
        };
        let mut tensors: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
        let kind = match &self.classifier {
            Classifier::Kernel(m) => {
                meta.support = Some(m.support.iter().map(|sv| sv.iter().map(|&(i, _)| i).collect()).collect());
                let values: Vec<f64> = m.support.iter().flat_map(|sv| sv.iter().map(|&(_, v)| v)).collect();
                tensors.push(("sv_values".to_owned(), vec![values.len()], values));
                tensors.push(("coef".to_owned(), vec![m.coef.len()], m.coef.clone()));
                tensors.push(("bias".to_owned(), vec![1], vec![m.bias]));
                "prop-kernel"
            }
            Classifier::Mlp(m) => {
                meta.sizes = Some(m.sizes());
                for (l, (w, b)) in m.weights.iter().zip(&m.biases).enumerate() {
                    tensors.push((format!("w{}", l), w.shape().to_vec(), w.iter().copied().collect()));
                    tensors.push((format!("b{}", l), b.shape().to_vec(), b.to_vec()));
                }
                "prop-mlp"
            }
        };
        let mut c = Container::new(kind, serde_json::to_value(&meta).expect("metadata serializes"));
        for (name, shape, data) in tensors {
            c.push(name, shape, data);
        }
        c.to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ClassifyError> {
        let mut c = Container::from_bytes(bytes)?;
        let meta: Meta = serde_json::from_value(c.meta.clone())?;
        let classifier = match c.kind.as_str() {
            "prop-kernel" => {
                let support_idx = meta.support.clone().unwrap_or_default();
                let nnz: usize = support_idx.iter().map(Vec::len).sum();
                let values = c.take("sv_values", &[nnz])?;
                let coef = c.take("coef", &[support_idx.len()])?;
                let bias = c.take("bias", &[1])?[0];
                let mut values = values.into_iter();
                let support = support_idx
                    .into_iter()
                    .map(|idx| idx.into_iter().map(|i| (i, values.next().unwrap())).collect())
                    .collect();
                Classifier::Kernel(KernelSvm { support, coef, bias })
            }
            "prop-mlp" => {
                let sizes = meta.sizes.clone().unwrap_or_default();
                if sizes.len() < 2 {
                    return Err(ClassifyError::Mismatch("MLP without layers".into()));
                }
                let mut weights = Vec::new();
                let mut biases = Vec::new();
                for (l, w) in sizes.windows(2).enumerate() {
                    let wd = c.take(&format!("w{}", l), &[w[0], w[1]])?;
                    let bd = c.take(&format!("b{}", l), &[w[1]])?;
                    weights.push(ndarray::Array2::from_shape_vec((w[0], w[1]), wd).expect("shape checked"));
                    biases.push(ndarray::Array1::from(bd));
                }
                Classifier::Mlp(Mlp { weights, biases })
            }
            other => {
                return Err(ContainerError::Kind {
                    expected: "prop-kernel or prop-mlp".into(),
                    found: other.to_owned(),
                }
                .into())
            }
        };
        Ok(PropModel {
            groups: meta.groups,
            extract: meta.extract,
            vocab: meta.vocab,
            dense_dim: meta.dense_dim,
            classifier,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApplyConfig {
    /// Rewrite propagated subject labels as the converter's passive fix.
    pub relabel_subjects: bool,
    /// Repeat classification over newly added edges until nothing changes.
    pub iterate: bool,
    pub max_rounds: usize,
}

impl Default for ApplyConfig {
    fn default() -> Self {
        ApplyConfig {
            relabel_subjects: false,
            iterate: false,
            max_rounds: 16,
        }
    }
}

/// Add the edges that `decide` accepts. Later rounds (with `iterate`) draw
/// candidates from the enhanced layer, so propagated edges can propagate
/// again.
pub fn apply_with<F>(
    s: &Sentence,
    index: usize,
    extract: &ExtractConfig,
    cfg: &ApplyConfig,
    mut decide: F,
) -> Result<Sentence, ClassifyError>
where
    F: FnMut(&PropagationInstance) -> Result<bool, ClassifyError>,
{
    let mut out = s.clone();
    seed_enhanced(&mut out);
    let mut seen: HashSet<(ConjPair, Node, String, Direction)> = HashSet::new();
    let mut layer = basic_edges(&out);

    for _ in 0..cfg.max_rounds.max(1) {
        let mut added = Vec::new();
        for inst in instances_from(&out, index, &layer, extract) {
            if !seen.insert((inst.pair, inst.target, inst.label.clone(), inst.direction)) {
                continue;
            }
            if decide(&inst)? {
                let label = if cfg.relabel_subjects {
                    propagated_subject_label(&inst.label, &out, inst.pair.dep, true)
                } else {
                    inst.label.clone()
                };
                added.push(inst.edge_with(&label));
            }
        }
        let new = add_enhanced(&mut out, added);
        if !cfg.iterate || new == 0 {
            break;
        }
        layer = enhanced_edges(&out);
    }
    Ok(out)
}

pub fn apply(
    model: &PropModel,
    s: &Sentence,
    index: usize,
    provider: Option<&dyn EmbeddingProvider>,
    cfg: &ApplyConfig,
) -> Result<Sentence, ClassifyError> {
    apply_with(s, index, &model.extract, cfg, |inst| {
        let f = featurize(inst, s, provider, model.groups)?;
        model.predict(&f)
    })
}
