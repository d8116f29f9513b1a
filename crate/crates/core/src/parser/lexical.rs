//! Placeholder labels such as `obl:[case]`.
//!
//! The lexical part of a subtype comes from a marker child of the
//! dependent (its `case`, `mark` or `cc` word, joined with any `fixed`
//! continuation by `_`). A conjunction dependent without its own marker
//! inherits the one of its conjunction head.

use std::collections::BTreeSet;

use crate::conllu::{Dep, Node, Sentence, TokenId};
use crate::graph::is_conj;

/// Relations whose word form can supply a label subtype.
pub const MARKERS: [&str; 3] = ["case", "mark", "cc"];

/// Split `base:[marker]`.
pub fn parse_placeholder(label: &str) -> Option<(&str, &str)> {
    let (base, rest) = label.split_once(':')?;
    let marker = rest.strip_prefix('[')?.strip_suffix(']')?;
    if base.is_empty() || marker.is_empty() {
        return None;
    }
    Some((base, marker))
}

fn lexical_material(s: &Sentence, head: TokenId, marker: &str) -> Option<String> {
    let child = s
        .tokens
        .iter()
        .find(|t| t.head == Some(Node::Word(head)) && t.deprel.as_deref() == Some(marker))?;
    let mut parts = vec![child.form.to_lowercase()];
    parts.extend(
        s.tokens
            .iter()
            .filter(|t| t.head == Some(Node::Word(child.id)) && t.deprel.as_deref() == Some("fixed"))
            .map(|t| t.form.to_lowercase()),
    );
    Some(parts.join("_"))
}

fn conj_head(s: &Sentence, dep: TokenId) -> Option<TokenId> {
    let t = s.token(dep)?;
    match (t.head, t.deprel.as_deref()) {
        (Some(Node::Word(gov)), Some(rel)) if is_conj(rel) => Some(gov),
        _ => None,
    }
}

/// Fill a placeholder from the basic layer of `s`. Labels that are not
/// placeholders are returned unchanged.
pub fn lexicalize_label(label: &str, dep: TokenId, s: &Sentence) -> String {
    let Some((base, marker)) = parse_placeholder(label) else {
        return label.to_owned();
    };
    let lexical = lexical_material(s, dep, marker)
        .or_else(|| conj_head(s, dep).and_then(|gov| lexical_material(s, gov, marker)));
    match lexical {
        Some(lex) => format!("{}:{}", base, lex),
        None => base.to_owned(),
    }
}

/// Inverse of [`lexicalize_label`]: a subtype that the graph reproduces is
/// replaced by its placeholder.
pub fn delexicalize_label(label: &str, dep: TokenId, s: &Sentence) -> String {
    let Some((base, rest)) = label.split_once(':') else {
        return label.to_owned();
    };
    if rest.is_empty() || rest.contains(':') || parse_placeholder(label).is_some() {
        return label.to_owned();
    }
    for marker in MARKERS {
        let placeholder = format!("{}:[{}]", base, marker);
        if lexicalize_label(&placeholder, dep, s) == label {
            return placeholder;
        }
    }
    label.to_owned()
}

fn map_deps(s: &Sentence, f: impl Fn(&str, TokenId, &Sentence) -> String) -> Sentence {
    let mut out = s.clone();
    for (i, t) in s.tokens.iter().enumerate() {
        out.tokens[i].deps = t.deps.iter().map(|d| Dep::new(d.head, f(&d.label, t.id, s))).collect();
    }
    out
}

/// Replace lexicalized subtypes in every DEPS column and return the
/// resulting label inventory.
pub fn delexicalize_corpus(corpus: &[Sentence]) -> (Vec<Sentence>, BTreeSet<String>) {
    let out: Vec<Sentence> = corpus.iter().map(|s| map_deps(s, delexicalize_label)).collect();
    let inventory = out
        .iter()
        .flat_map(|s| s.tokens.iter().flat_map(|t| t.deps.iter().map(|d| d.label.clone())))
        .collect();
    (out, inventory)
}

pub fn lexicalize_sentence(s: &Sentence) -> Sentence {
    map_deps(s, lexicalize_label)
}
