//! Random sentences for property tests and toy training runs.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::conllu::{Dep, Node, Sentence, Token, TokenId};
use crate::graph::{add_enhanced, basic_edges, conjuncts, enhanced_edges, set_enhanced, Edge, LinkSet};

/// Relations drawn for random trees, with `conj` made frequent.
pub const LABELS: [&str; 22] = [
    "conj", "conj", "conj", "nsubj", "nsubj", "nsubj:pass", "csubj", "obj", "obj", "iobj", "ccomp",
    "xcomp", "obl", "obl", "advmod", "advcl", "aux:pass", "cc", "punct", "mark", "det", "amod",
];

const UPOS: [&str; 6] = ["VERB", "VERB", "AUX", "NOUN", "PRON", "ADV"];

#[derive(Clone, Copy, Debug)]
pub struct SynthConfig {
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Probability of `Voice=Pass` and of `Mood=Imp` on a token.
    pub feature_prob: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            min_tokens: 1,
            max_tokens: 15,
            feature_prob: 0.15,
        }
    }
}

/// A random (possibly non-projective) basic tree with an empty enhanced
/// layer.
pub fn random_tree(rng: &mut impl Rng, index: usize, cfg: &SynthConfig) -> Sentence {
    let n = rng.gen_range(cfg.min_tokens..=cfg.max_tokens);
    let mut order: Vec<u32> = (1..=n as u32).collect();
    order.shuffle(rng);

    let mut tokens: Vec<Token> = (1..=n as u32)
        .map(|i| {
            let mut t = Token::new(TokenId::new(i), format!("w{}", rng.gen_range(0..20)));
            t.upos = UPOS.choose(rng).unwrap().to_string();
            if rng.gen_bool(cfg.feature_prob) {
                t.feats.insert("Voice", "Pass");
            }
            if rng.gen_bool(cfg.feature_prob) {
                t.feats.insert("Mood", "Imp");
            }
            t
        })
        .collect();

    for (pos, &id) in order.iter().enumerate() {
        let t = &mut tokens[id as usize - 1];
        if pos == 0 {
            t.head = Some(Node::Root);
            t.deprel = Some("root".into());
        } else {
            let head = order[rng.gen_range(0..pos)];
            t.head = Some(Node::Word(TokenId::new(head)));
            t.deprel = Some(LABELS.choose(rng).unwrap().to_string());
        }
    }

    Sentence {
        comments: vec![format!("# sent_id = synth-{}", index + 1)],
        tokens,
        multiword: Vec::new(),
    }
}

pub fn random_corpus(rng: &mut impl Rng, count: usize, cfg: &SynthConfig) -> Vec<Sentence> {
    (0..count).map(|i| random_tree(rng, i, cfg)).collect()
}

fn random_edge(rng: &mut impl Rng, s: &Sentence, near: &[TokenId]) -> Option<Edge> {
    let n = s.tokens.len() as u32;
    if n == 0 {
        return None;
    }
    let pick = |rng: &mut dyn rand::RngCore| TokenId::new(rng.gen_range(1..=n));
    let dep = if !near.is_empty() && rng.gen_bool(0.5) {
        *near.choose(rng).unwrap()
    } else {
        pick(rng)
    };
    let head = if rng.gen_bool(0.1) {
        Node::Root
    } else if !near.is_empty() && rng.gen_bool(0.5) {
        Node::Word(*near.choose(rng).unwrap())
    } else {
        Node::Word(pick(rng))
    };
    if head == Node::Word(dep) {
        return None;
    }
    Some(Edge::new(head, dep, *LABELS.choose(rng).unwrap()))
}

/// Enhanced layer derived from the basic tree: each basic edge is kept
/// with probability `keep`, relabeled occasionally, and up to `extra`
/// random edges (biased toward conjuncts) are added.
pub fn perturb_enhanced(rng: &mut impl Rng, s: &Sentence, keep: f64, extra: usize) -> Sentence {
    let near: Vec<TokenId> = conjuncts(s).into_iter().collect();
    let mut edges = LinkSet::new();
    for e in basic_edges(s) {
        if rng.gen_bool(keep) {
            edges.insert(e);
        } else if rng.gen_bool(0.5) {
            edges.insert(Edge::new(e.head, e.dep, *LABELS.choose(rng).unwrap()));
        }
    }
    for _ in 0..rng.gen_range(0..=extra) {
        if let Some(e) = random_edge(rng, s, &near) {
            edges.insert(e);
        }
    }
    let mut out = s.clone();
    set_enhanced(&mut out, &edges);
    out
}

/// Small random edits to an existing enhanced layer.
pub fn edit_enhanced(rng: &mut impl Rng, s: &Sentence, remove: f64, extra: usize) -> Sentence {
    let near: Vec<TokenId> = conjuncts(s).into_iter().collect();
    let edges: LinkSet = enhanced_edges(s).into_iter().filter(|_| !rng.gen_bool(remove)).collect();
    let mut out = s.clone();
    set_enhanced(&mut out, &edges);
    let added: Vec<Edge> = (0..rng.gen_range(0..=extra))
        .filter_map(|_| random_edge(rng, s, &near))
        .collect();
    add_enhanced(&mut out, added);
    out
}

/// Replace every deps entry label by `f(label)`.
pub fn relabel_enhanced(s: &Sentence, f: impl Fn(&str) -> String) -> Sentence {
    let mut out = s.clone();
    for t in &mut out.tokens {
        t.deps = t.deps.iter().map(|d| Dep::new(d.head, f(&d.label))).collect();
    }
    out
}
