//! Edge sets over a sentence and the conjunction-structure queries used by
//! conversion, classification and evaluation.

use std::collections::btree_set;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::conllu::{Dep, Node, Sentence, TokenId};

/// A labeled dependency. Equality is exact on the triple, including the
/// full label string.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub head: Node,
    pub dep: TokenId,
    pub label: String,
}

impl Edge {
    pub fn new(head: impl Into<Node>, dep: TokenId, label: impl Into<String>) -> Self {
        Edge {
            head: head.into(),
            dep,
            label: label.into(),
        }
    }

    pub fn coarse_label(&self) -> &str {
        coarse(&self.label)
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head, self.dep, self.label)
    }
}

/// The universal part of a relation label (`nsubj:pass` -> `nsubj`).
pub fn coarse(label: &str) -> &str {
    label.split(':').next().unwrap_or(label)
}

/// `conj` and its subtypes.
pub fn is_conj(label: &str) -> bool {
    coarse(label) == "conj"
}

/// A set of edges.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkSet(BTreeSet<Edge>);

impl LinkSet {
    pub fn new() -> Self {
        LinkSet(BTreeSet::new())
    }

    pub fn insert(&mut self, edge: Edge) -> bool {
        self.0.insert(edge)
    }

    pub fn contains(&self, edge: &Edge) -> bool {
        self.0.contains(edge)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> btree_set::Iter<'_, Edge> {
        self.0.iter()
    }

    /// Edges whose label is exactly `label`.
    pub fn with_label(&self, label: &str) -> LinkSet {
        self.iter().filter(|e| e.label == label).cloned().collect()
    }

    pub fn intersection(&self, other: &LinkSet) -> LinkSet {
        self.0.intersection(&other.0).cloned().collect()
    }

    pub fn difference(&self, other: &LinkSet) -> LinkSet {
        self.0.difference(&other.0).cloned().collect()
    }

    pub fn union(&self, other: &LinkSet) -> LinkSet {
        self.0.union(&other.0).cloned().collect()
    }

    pub fn is_subset(&self, other: &LinkSet) -> bool {
        self.0.is_subset(&other.0)
    }

    pub fn extend(&mut self, edges: impl IntoIterator<Item = Edge>) {
        self.0.extend(edges)
    }

    pub fn labels(&self) -> BTreeSet<&str> {
        self.iter().map(|e| e.label.as_str()).collect()
    }

    pub fn outgoing(&self, head: Node) -> impl Iterator<Item = &Edge> {
        self.iter().filter(move |e| e.head == head)
    }

    pub fn incoming(&self, dep: TokenId) -> impl Iterator<Item = &Edge> {
        self.iter().filter(move |e| e.dep == dep)
    }
}

impl FromIterator<Edge> for LinkSet {
    fn from_iter<I: IntoIterator<Item = Edge>>(iter: I) -> Self {
        LinkSet(iter.into_iter().collect())
    }
}

impl IntoIterator for LinkSet {
    type Item = Edge;
    type IntoIter = btree_set::IntoIter<Edge>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.into_iter()
    }
}

impl<'a> IntoIterator for &'a LinkSet {
    type Item = &'a Edge;
    type IntoIter = btree_set::Iter<'a, Edge>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// A basic-layer `conj` relation: `gov` is the conjunction head (first
/// conjunct), `dep` the conjunction dependent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConjPair {
    pub gov: TokenId,
    pub dep: TokenId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConjFilter {
    All,
    /// Both conjuncts are VERB or AUX.
    Verbs,
}

/// One edge per token with a basic head.
pub fn basic_edges(s: &Sentence) -> LinkSet {
    s.tokens
        .iter()
        .filter_map(|t| {
            let head = t.head?;
            Some(Edge::new(head, t.id, t.deprel.clone().unwrap_or_default()))
        })
        .collect()
}

/// All DEPS entries as edges.
pub fn enhanced_edges(s: &Sentence) -> LinkSet {
    s.tokens
        .iter()
        .flat_map(|t| t.deps.iter().map(move |d| Edge::new(d.head, t.id, d.label.clone())))
        .collect()
}

/// Basic-layer conjunctions in surface order of the conjunction dependent.
pub fn conj_pairs(s: &Sentence, filter: ConjFilter) -> Vec<ConjPair> {
    let is_verbal = |id: TokenId| {
        s.token(id)
            .map(|t| t.upos == "VERB" || t.upos == "AUX")
            .unwrap_or(false)
    };
    let mut pairs: Vec<ConjPair> = s
        .tokens
        .iter()
        .filter_map(|t| match (t.head, t.deprel.as_deref()) {
            (Some(Node::Word(gov)), Some(rel)) if is_conj(rel) => Some(ConjPair { gov, dep: t.id }),
            _ => None,
        })
        .filter(|p| match filter {
            ConjFilter::All => true,
            ConjFilter::Verbs => is_verbal(p.gov) && is_verbal(p.dep),
        })
        .collect();
    pairs.sort_by_key(|p| (p.dep, p.gov));
    pairs
}

/// Every token that is the head or the dependent of a basic `conj` edge.
pub fn conjuncts(s: &Sentence) -> BTreeSet<TokenId> {
    conj_pairs(s, ConjFilter::All)
        .into_iter()
        .flat_map(|p| [p.gov, p.dep])
        .collect()
}

/// Enhanced edges that are not in the basic layer and start or end at a
/// conjunct. `conj` edges are never counted.
pub fn propagated_links(s: &Sentence) -> LinkSet {
    let basic = basic_edges(s);
    let conjuncts = conjuncts(s);
    enhanced_edges(s)
        .into_iter()
        .filter(|e| !is_conj(&e.label))
        .filter(|e| !basic.contains(e))
        .filter(|e| {
            conjuncts.contains(&e.dep) || e.head.word().is_some_and(|h| conjuncts.contains(&h))
        })
        .collect()
}

/// Write an edge set into the DEPS columns, replacing the enhanced layer.
/// Edges pointing at unknown tokens are ignored.
pub fn set_enhanced(s: &mut Sentence, edges: &LinkSet) {
    s.clear_enhanced();
    add_enhanced(s, edges.iter().cloned());
}

/// Add edges to the DEPS columns. Returns the number of new entries.
pub fn add_enhanced(s: &mut Sentence, edges: impl IntoIterator<Item = Edge>) -> usize {
    let mut added = 0;
    for edge in edges {
        if let Some(token) = s.token_mut(edge.dep) {
            if token.deps.insert(Dep::new(edge.head, edge.label)) {
                added += 1;
            }
        }
    }
    added
}

/// Outgoing basic relations per head, in token order.
pub fn basic_children(s: &Sentence) -> BTreeMap<Node, Vec<(TokenId, &str)>> {
    let mut children: BTreeMap<Node, Vec<(TokenId, &str)>> = BTreeMap::new();
    for t in &s.tokens {
        if let (Some(head), Some(rel)) = (t.head, t.deprel.as_deref()) {
            children.entry(head).or_default().push((t.id, rel));
        }
    }
    children
}
