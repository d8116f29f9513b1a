use std::cmp::Ordering;
use std::collections::BTreeSet;

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};

use super::{ClassifyError, Direction, ModelKind, PropagationInstance};
use crate::conllu::{Node, Sentence, TokenId};
use crate::embed::EmbeddingProvider;
use crate::graph::is_conj;

/// Morphological features read for the conjunction head, the conjunction
/// dependent and the target.
pub const MORPH_FEATURES: [&str; 4] = ["Number", "Person", "VerbForm", "Voice"];

/// Optional feature groups. The candidate label and the direction are
/// always used.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureGroups {
    pub morphology: bool,
    pub embeddings: bool,
    pub tree: bool,
}

impl FeatureGroups {
    /// Morphology for the kernel model, dense vectors for the MLP.
    pub fn defaults(kind: ModelKind) -> Self {
        FeatureGroups {
            morphology: kind == ModelKind::Kernel,
            embeddings: kind == ModelKind::Mlp,
            tree: true,
        }
    }

    pub fn none() -> Self {
        FeatureGroups {
            morphology: false,
            embeddings: false,
            tree: false,
        }
    }

    /// Parse a comma-separated group list such as `instance,token,tree`.
    /// `token` stands for the kind's default token features; `morph` and
    /// `dense` select them explicitly.
    pub fn parse(list: &str, kind: ModelKind) -> Result<Self, String> {
        let defaults = Self::defaults(kind);
        let mut groups = Self::none();
        for name in list.split(',').map(str::trim).filter(|n| !n.is_empty()) {
            match name {
                "instance" => {}
                "token" => {
                    groups.morphology |= defaults.morphology;
                    groups.embeddings |= defaults.embeddings;
                }
                "morph" => groups.morphology = true,
                "dense" => groups.embeddings = true,
                "tree" => groups.tree = true,
                other => {
                    return Err(format!(
                        "unknown feature group `{}` (expected instance, token, morph, dense or tree)",
                        other
                    ))
                }
            }
        }
        Ok(groups)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinearDirection {
    BothLeft,
    BothRight,
    Differing,
}

impl LinearDirection {
    /// Where the target lies relative to the two conjuncts.
    pub fn of(target: Node, head: TokenId, dep: TokenId) -> Self {
        let to_head = target.cmp(&Node::Word(head));
        let to_dep = target.cmp(&Node::Word(dep));
        match (to_head, to_dep) {
            (Ordering::Less, Ordering::Less) => LinearDirection::BothLeft,
            (Ordering::Greater, Ordering::Greater) => LinearDirection::BothRight,
            _ => LinearDirection::Differing,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LinearDirection::BothLeft => "both-left",
            LinearDirection::BothRight => "both-right",
            LinearDirection::Differing => "differing",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeFeatures {
    pub linear: LinearDirection,
    /// The conjunction dependent already has an outgoing basic edge with
    /// the candidate label.
    pub existing: bool,
    pub head_labels: BTreeSet<String>,
    pub dep_labels: BTreeSet<String>,
    pub coord_items: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub label: String,
    pub direction: Direction,
    /// `role.Feature=Value`, `_` for absent values.
    pub morphology: Vec<String>,
    pub tree: Option<TreeFeatures>,
    /// Layer-averaged vectors of head, dependent and target, concatenated.
    pub dense: Vec<f64>,
}

impl FeatureVector {
    /// Names of the binary features that are on.
    pub fn names(&self) -> Vec<String> {
        let mut out = vec![format!("label={}", self.label), format!("dir={}", self.direction.name())];
        out.extend(self.morphology.iter().cloned());
        if let Some(t) = &self.tree {
            out.push(format!("lin={}", t.linear.name()));
            out.push(format!("exist={}", if t.existing { "yes" } else { "no" }));
            out.extend(t.head_labels.iter().map(|l| format!("hout={}", l)));
            out.extend(t.dep_labels.iter().map(|l| format!("dout={}", l)));
            out.push(format!("coord={}", t.coord_items));
        }
        out
    }
}

fn outgoing_labels(s: &Sentence, head: TokenId) -> BTreeSet<String> {
    s.tokens
        .iter()
        .filter(|t| t.head == Some(Node::Word(head)))
        .filter_map(|t| t.deprel.clone())
        .collect()
}

fn morphology(s: &Sentence, role: &str, node: Node, out: &mut Vec<String>) {
    let token = node.word().and_then(|id| s.token(id));
    for name in MORPH_FEATURES {
        let value = token.and_then(|t| t.feat(name)).unwrap_or("_");
        out.push(format!("{}.{}={}", role, name, value));
    }
}

fn mean_layers(v: &[f64], layers: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for l in 0..layers {
        for (o, x) in out.iter_mut().zip(&v[l * dim..(l + 1) * dim]) {
            *o += x;
        }
    }
    out.iter_mut().for_each(|o| *o /= layers as f64);
    out
}

/// Compute the feature vector of one instance. Only the basic layer of `s`
/// is read.
pub fn featurize(
    inst: &PropagationInstance,
    s: &Sentence,
    provider: Option<&dyn EmbeddingProvider>,
    groups: FeatureGroups,
) -> Result<FeatureVector, ClassifyError> {
    let head = inst.pair.gov;
    let dep = inst.pair.dep;

    let mut morph = Vec::new();
    if groups.morphology {
        morphology(s, "head", Node::Word(head), &mut morph);
        morphology(s, "dep", Node::Word(dep), &mut morph);
        morphology(s, "target", inst.target, &mut morph);
    }

    let tree = groups.tree.then(|| {
        let head_labels = outgoing_labels(s, head);
        let dep_labels = outgoing_labels(s, dep);
        let conj_children = s
            .tokens
            .iter()
            .filter(|t| t.head == Some(Node::Word(head)))
            .filter(|t| t.deprel.as_deref().is_some_and(is_conj))
            .count();
        TreeFeatures {
            linear: LinearDirection::of(inst.target, head, dep),
            existing: dep_labels.contains(&inst.label),
            head_labels,
            dep_labels,
            coord_items: 1 + conj_children,
        }
    });

    let mut dense = Vec::new();
    if let (true, Some(p)) = (groups.embeddings, provider) {
        let (layers, dim) = (p.layers(), p.dim());
        for node in [Node::Word(head), Node::Word(dep), inst.target] {
            match node {
                Node::Root => dense.extend(std::iter::repeat(0.0).take(dim)),
                Node::Word(id) => {
                    let v = p.lookup(s, inst.sentence, id)?;
                    dense.extend(mean_layers(&v, layers, dim));
                }
            }
        }
    }

    Ok(FeatureVector {
        label: inst.label.clone(),
        direction: inst.direction,
        morphology: morph,
        tree,
        dense,
    })
}

/// Sorted `(index, value)` pairs.
pub type SparseVec = Vec<(u32, f64)>;

pub fn sparse_dot(a: &[(u32, f64)], b: &[(u32, f64)]) -> f64 {
    let (mut i, mut j) = (0, 0);
    let mut sum = 0.0;
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                sum += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    sum
}

/// Feature names seen in training. Binary features take the first
/// `len()` indices; dense values follow.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    names: IndexSet<String>,
}

impl Vocabulary {
    pub fn fit<'a>(features: impl IntoIterator<Item = &'a FeatureVector>) -> Self {
        let mut names = IndexSet::new();
        for f in features {
            for name in f.names() {
                names.insert(name);
            }
        }
        Vocabulary { names }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.get_index_of(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    /// Unknown names are dropped.
    pub fn encode(&self, f: &FeatureVector) -> SparseVec {
        let mut out: SparseVec = f
            .names()
            .iter()
            .filter_map(|n| self.index(n))
            .map(|i| (i as u32, 1.0))
            .collect();
        out.sort_by_key(|&(i, _)| i);
        out.dedup_by_key(|&mut (i, _)| i);
        let base = self.len() as u32;
        out.extend(
            f.dense
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (base + i as u32, *v)),
        );
        out
    }
}
