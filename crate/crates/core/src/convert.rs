//! Rule-based propagation of dependencies across conjuncts.
//!
//! For every basic `conj` relation (gov, dep) the converter copies selected
//! governors and dependents of the conjunction head onto the conjunction
//! dependent:
//!
//! 1. Governors of gov are always copied, unless the relation is one of
//!    `governor_exceptions`.
//! 2. Subjects of gov are copied only if dep has no subject of its own. The
//!    copy is relabeled `nsubj:pass`/`csubj:pass` when dep has an `aux:pass`
//!    dependent.
//! 3. Non-subject core dependents are copied only when they follow dep.
//!
//! Three optional modifications extend this: propagation of the adjuncts
//! `obl`, `advmod` and `advcl`; a morphology check on dep (active voice
//! turns `nsubj:pass` into `nsubj`, imperative mood blocks `nsubj`); and
//! repetition of the whole pass until the graph stops changing.
//!
//! Candidate edges within one pass are computed from the graph as it stood
//! at the start of the pass, so a single pass never chains propagations.

use std::collections::BTreeSet;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::conllu::{Dep, Node, Sentence, Token, TokenId};
use crate::graph::{
    add_enhanced, basic_edges, coarse, conj_pairs, enhanced_edges, ConjFilter, ConjPair, Edge,
    LinkSet,
};

/// Linear-order condition applied to propagated adjuncts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdjunctOrder {
    /// The adjunct follows dep (the object rule).
    AfterDep,
    /// The adjunct precedes dep.
    BeforeDep,
    /// The adjunct lies outside the span from gov to dep.
    OutsideSpan,
}

impl AdjunctOrder {
    fn allows(self, target: TokenId, pair: ConjPair) -> bool {
        match self {
            AdjunctOrder::AfterDep => target > pair.dep,
            AdjunctOrder::BeforeDep => target < pair.dep,
            AdjunctOrder::OutsideSpan => {
                let (lo, hi) = if pair.gov < pair.dep {
                    (pair.gov, pair.dep)
                } else {
                    (pair.dep, pair.gov)
                };
                target < lo || target > hi
            }
        }
    }
}

fn labels(items: &[&str]) -> BTreeSet<String> {
    items.iter().map(|s| s.to_string()).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConverterConfig {
    /// Also propagate `non_core` dependents.
    pub propagate_non_core: bool,
    /// Repeat the propagation pass until no edge is added.
    pub iterate_to_fixpoint: bool,
    /// Consult Voice and Mood of the conjunction dependent for subjects.
    pub passive_imperative_fix: bool,
    pub adjunct_order: AdjunctOrder,
    pub governor_exceptions: BTreeSet<String>,
    pub core_nonsubject: BTreeSet<String>,
    pub subject_labels: BTreeSet<String>,
    pub non_core: BTreeSet<String>,
}

impl Default for ConverterConfig {
    fn default() -> Self {
        ConverterConfig {
            propagate_non_core: false,
            iterate_to_fixpoint: false,
            passive_imperative_fix: false,
            adjunct_order: AdjunctOrder::OutsideSpan,
            governor_exceptions: labels(&[
                "vocative",
                "discourse",
                "root",
                "punct",
                "cc",
                "conj",
                "mark",
            ]),
            core_nonsubject: labels(&["obj", "iobj", "ccomp", "xcomp"]),
            subject_labels: labels(&["nsubj", "csubj"]),
            non_core: labels(&["obl", "advmod", "advcl"]),
        }
    }
}

impl ConverterConfig {
    /// The original converter.
    pub fn rbc() -> Self {
        Self::default()
    }

    /// Adjunct propagation plus fixpoint iteration.
    pub fn rbc2() -> Self {
        ConverterConfig {
            propagate_non_core: true,
            iterate_to_fixpoint: true,
            ..Self::default()
        }
    }

    pub fn rbc2_fix() -> Self {
        ConverterConfig {
            passive_imperative_fix: true,
            ..Self::rbc2()
        }
    }

    fn is_governor_exception(&self, label: &str) -> bool {
        self.governor_exceptions.contains(label) || self.governor_exceptions.contains(coarse(label))
    }

    fn is_subject(&self, label: &str) -> bool {
        self.subject_labels.contains(coarse(label))
    }
}

/// Named conversion modes exposed on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "rbc")]
    Rbc,
    #[serde(rename = "rbc2")]
    Rbc2,
    #[serde(rename = "rbc2+fix")]
    Rbc2Fix,
    #[serde(rename = "always")]
    Always,
}

impl Mode {
    /// Converter settings for the mode; `None` for the baseline.
    pub fn converter_config(self) -> Option<ConverterConfig> {
        match self {
            Mode::Rbc => Some(ConverterConfig::rbc()),
            Mode::Rbc2 => Some(ConverterConfig::rbc2()),
            Mode::Rbc2Fix => Some(ConverterConfig::rbc2_fix()),
            Mode::Always => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Rbc => "rbc",
            Mode::Rbc2 => "rbc2",
            Mode::Rbc2Fix => "rbc2+fix",
            Mode::Always => "always",
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rbc" => Ok(Mode::Rbc),
            "rbc2" => Ok(Mode::Rbc2),
            "rbc2+fix" => Ok(Mode::Rbc2Fix),
            "always" => Ok(Mode::Always),
            _ => Err(format!(
                "unknown mode `{}` (expected rbc, rbc2, rbc2+fix or always)",
                s
            )),
        }
    }
}

/// Give every token without DEPS entries its basic relation as enhanced
/// edge. Tokens that already carry DEPS are left alone.
pub fn seed_enhanced(s: &mut Sentence) {
    for token in &mut s.tokens {
        if token.deps.is_empty() {
            if let (Some(head), Some(rel)) = (token.head, token.deprel.as_ref()) {
                token.deps.insert(Dep::new(head, rel.clone()));
            }
        }
    }
}

pub(crate) fn has_basic_child(s: &Sentence, head: TokenId, label: &str) -> bool {
    s.tokens.iter().any(|t| {
        t.head == Some(Node::Word(head)) && t.deprel.as_deref() == Some(label)
    })
}

/// The label a subject relation receives when copied onto `dep`.
///
/// `aux:pass` on dep yields the passive subtype; with `fix`, a dep that is
/// not marked `Voice=Pass` gets plain `nsubj` instead of `nsubj:pass`.
pub fn propagated_subject_label(label: &str, s: &Sentence, dep: TokenId, fix: bool) -> String {
    let base = coarse(label);
    let mut out = if (base == "nsubj" || base == "csubj") && has_basic_child(s, dep, "aux:pass") {
        format!("{}:pass", base)
    } else {
        label.to_owned()
    };
    if fix && out == "nsubj:pass" {
        let passive = s
            .token(dep)
            .and_then(|t| t.feat("Voice"))
            .is_some_and(|v| v == "Pass");
        if !passive {
            out = "nsubj".to_owned();
        }
    }
    out
}

fn is_imperative(token: Option<&Token>) -> bool {
    token.and_then(|t| t.feat("Mood")).is_some_and(|m| m == "Imp")
}

/// Whether dep has a subject that it does not share with gov.
fn has_own_subject(graph: &LinkSet, basic: &LinkSet, pair: ConjPair, cfg: &ConverterConfig) -> bool {
    let gov_subjects: BTreeSet<TokenId> = graph
        .outgoing(Node::Word(pair.gov))
        .filter(|e| cfg.is_subject(&e.label))
        .map(|e| e.dep)
        .collect();
    graph
        .outgoing(Node::Word(pair.dep))
        .chain(basic.outgoing(Node::Word(pair.dep)))
        .any(|e| cfg.is_subject(&e.label) && !gov_subjects.contains(&e.dep))
}

fn propagation_pass(
    s: &Sentence,
    graph: &LinkSet,
    basic: &LinkSet,
    pairs: &[ConjPair],
    cfg: &ConverterConfig,
) -> Vec<Edge> {
    let mut candidates = Vec::new();

    for &pair in pairs {
        for e in graph.incoming(pair.gov) {
            if e.head == Node::Word(pair.dep) || cfg.is_governor_exception(&e.label) {
                continue;
            }
            candidates.push(Edge::new(e.head, pair.dep, e.label.clone()));
        }

        let own_subject = has_own_subject(graph, basic, pair, cfg);
        let dep_token = s.token(pair.dep);

        for e in graph.outgoing(Node::Word(pair.gov)) {
            let target = e.dep;
            if target == pair.dep {
                continue;
            }
            let base = coarse(&e.label);
            let label = if cfg.is_subject(&e.label) {
                if own_subject
                    || graph
                        .outgoing(Node::Word(pair.dep))
                        .any(|d| d.dep == target && cfg.is_subject(&d.label))
                {
                    continue;
                }
                if cfg.passive_imperative_fix && base == "nsubj" && is_imperative(dep_token) {
                    continue;
                }
                propagated_subject_label(&e.label, s, pair.dep, cfg.passive_imperative_fix)
            } else if cfg.core_nonsubject.contains(base) {
                if target <= pair.dep {
                    continue;
                }
                e.label.clone()
            } else if cfg.propagate_non_core && cfg.non_core.contains(base) {
                if !cfg.adjunct_order.allows(target, pair) {
                    continue;
                }
                e.label.clone()
            } else {
                continue;
            };
            candidates.push(Edge::new(pair.dep, target, label));
        }
    }

    candidates.retain(|e| !graph.contains(e));
    candidates.sort();
    candidates.dedup();
    candidates
}

/// Propagate dependencies across every basic conjunction. The basic layer
/// is left untouched; enhanced edges are only ever added.
pub fn convert(s: &Sentence, cfg: &ConverterConfig) -> Sentence {
    let mut out = s.clone();
    seed_enhanced(&mut out);

    let pairs = conj_pairs(&out, ConjFilter::All);
    if pairs.is_empty() {
        return out;
    }
    let basic = basic_edges(&out);
    let mut graph = enhanced_edges(&out);

    loop {
        let added = propagation_pass(&out, &graph, &basic, &pairs, cfg);
        if added.is_empty() {
            break;
        }
        graph.extend(added.iter().cloned());
        add_enhanced(&mut out, added);
        if !cfg.iterate_to_fixpoint {
            break;
        }
    }
    out
}

/// Copy every incoming and outgoing edge of each conjunction head onto its
/// conjunction dependents, without any filtering.
pub fn always_baseline(s: &Sentence) -> Sentence {
    let mut out = s.clone();
    seed_enhanced(&mut out);
    let graph = enhanced_edges(&out);

    let mut added = Vec::new();
    for pair in conj_pairs(&out, ConjFilter::All) {
        for e in graph.incoming(pair.gov) {
            if e.head != Node::Word(pair.dep) {
                added.push(Edge::new(e.head, pair.dep, e.label.clone()));
            }
        }
        for e in graph.outgoing(Node::Word(pair.gov)) {
            if e.dep != pair.dep {
                added.push(Edge::new(pair.dep, e.dep, e.label.clone()));
            }
        }
    }
    add_enhanced(&mut out, added);
    out
}
