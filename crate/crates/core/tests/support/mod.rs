//! Brute-force oracles and property checks shared by the integration tests
//! and the acceptance suite. The oracles read raw token columns and use
//! only vectors and linear scans.

#![allow(dead_code)]

pub mod learn;
pub mod parse;

use std::collections::BTreeMap;

use conjprop::conllu::{Node, Sentence};
use conjprop::convert::{always_baseline, convert, seed_enhanced, ConverterConfig};
use conjprop::eval::{diff_stats, score, DiffScope};
use conjprop::graph::{basic_edges, conj_pairs, enhanced_edges, propagated_links, ConjFilter, Edge};
use conjprop::synth::{edit_enhanced, perturb_enhanced, random_tree, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Raw = (String, String, String);

fn node_str(n: Node) -> String {
    match n {
        Node::Root => "0".into(),
        Node::Word(id) => id.to_string(),
    }
}

fn push_unique(v: &mut Vec<Raw>, e: Raw) {
    if !v.contains(&e) {
        v.push(e);
    }
}

pub fn raw_basic(s: &Sentence) -> Vec<Raw> {
    let mut out = Vec::new();
    for t in &s.tokens {
        if let Some(h) = t.head {
            push_unique(&mut out, (node_str(h), t.id.to_string(), t.deprel.clone().unwrap_or_default()));
        }
    }
    out
}

pub fn raw_enhanced(s: &Sentence) -> Vec<Raw> {
    let mut out = Vec::new();
    for t in &s.tokens {
        for d in &t.deps {
            push_unique(&mut out, (node_str(d.head), t.id.to_string(), d.label.clone()));
        }
    }
    out
}

fn is_conj_label(l: &str) -> bool {
    l == "conj" || l.starts_with("conj:")
}

pub fn raw_conjuncts(s: &Sentence) -> Vec<String> {
    let mut out = Vec::new();
    for (h, d, l) in raw_basic(s) {
        if is_conj_label(&l) && h != "0" {
            for x in [h.clone(), d.clone()] {
                if !out.contains(&x) {
                    out.push(x);
                }
            }
        }
    }
    out
}

pub fn raw_propagated(s: &Sentence) -> Vec<Raw> {
    let basic = raw_basic(s);
    let conj = raw_conjuncts(s);
    raw_enhanced(s)
        .into_iter()
        .filter(|(h, d, l)| {
            !is_conj_label(l)
                && !basic.iter().any(|b| b.0 == *h && b.1 == *d && b.2 == *l)
                && (conj.contains(h) || conj.contains(d))
        })
        .collect()
}

fn to_raw(e: &Edge) -> Raw {
    (node_str(e.head), e.dep.to_string(), e.label.clone())
}

fn same_set(a: &[Raw], b: &[Raw]) -> bool {
    a.len() == b.len() && a.iter().all(|x| b.contains(x))
}

/// Per-label (tp, sys, gold) and totals by pairwise comparison.
pub fn raw_score(system: &[Sentence], gold: &[Sentence]) -> (BTreeMap<String, (usize, usize, usize)>, (usize, usize, usize)) {
    let mut per = BTreeMap::new();
    let mut total = (0, 0, 0);
    for (s, g) in system.iter().zip(gold) {
        let ps = raw_propagated(s);
        let pg = raw_propagated(g);
        for e in &ps {
            let c = per.entry(e.2.clone()).or_insert((0, 0, 0));
            c.1 += 1;
            total.1 += 1;
            if pg.iter().any(|x| x == e) {
                c.0 += 1;
                total.0 += 1;
            }
        }
        for e in &pg {
            per.entry(e.2.clone()).or_insert((0, 0, 0)).2 += 1;
            total.2 += 1;
        }
    }
    (per, total)
}

/// Per-label (added, removed, sentences, total) and totals.
pub fn raw_diff(
    original: &[Sentence],
    edited: &[Sentence],
    all: bool,
) -> (BTreeMap<String, (usize, usize, usize, usize)>, (usize, usize, usize, usize)) {
    let scoped = |s: &Sentence| {
        if all {
            let mut v = raw_enhanced(s);
            for e in raw_basic(s) {
                push_unique(&mut v, e);
            }
            v
        } else {
            raw_propagated(s)
        }
    };
    let mut per: BTreeMap<String, (usize, usize, usize, usize)> = BTreeMap::new();
    let mut total = (0, 0, 0, 0);
    for (o, e) in original.iter().zip(edited) {
        let before = scoped(o);
        let after = scoped(e);
        let mut touched: Vec<String> = Vec::new();
        for x in &before {
            per.entry(x.2.clone()).or_default().3 += 1;
            total.3 += 1;
            if !after.contains(x) {
                per.entry(x.2.clone()).or_default().1 += 1;
                total.1 += 1;
                if !touched.contains(&x.2) {
                    touched.push(x.2.clone());
                }
            }
        }
        for x in &after {
            if !before.contains(x) {
                per.entry(x.2.clone()).or_default().0 += 1;
                total.0 += 1;
                if !touched.contains(&x.2) {
                    touched.push(x.2.clone());
                }
            }
        }
        for l in &touched {
            per.get_mut(l).unwrap().2 += 1;
        }
        if !touched.is_empty() {
            total.2 += 1;
        }
    }
    (per, total)
}

/// Random gold/system corpus pair of small sentences.
pub fn metric_corpora(seed: u64, count: usize) -> (Vec<Sentence>, Vec<Sentence>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = SynthConfig {
        min_tokens: 1,
        max_tokens: 15,
        ..SynthConfig::default()
    };
    let mut gold = Vec::new();
    let mut system = Vec::new();
    for i in 0..count {
        let tree = random_tree(&mut rng, i, &cfg);
        let g = perturb_enhanced(&mut rng, &tree, 0.9, 6);
        let remove = rng.gen_range(0.0..0.4);
        let s = edit_enhanced(&mut rng, &g, remove, 4);
        gold.push(g);
        system.push(s);
    }
    (system, gold)
}

/// Library metrics against the oracles. Returns a summary or the first
/// disagreement.
pub fn check_metrics(seed: u64, count: usize) -> Result<String, String> {
    let (system, gold) = metric_corpora(seed, count);

    for (i, s) in system.iter().chain(&gold).enumerate() {
        let lib: Vec<Raw> = propagated_links(s).iter().map(to_raw).collect();
        if !same_set(&lib, &raw_propagated(s)) {
            return Err(format!("propagated_links differs on sentence {}", i));
        }
    }

    let report = score(&system, &gold).map_err(|e| e.to_string())?;
    let (per, total) = raw_score(&system, &gold);
    let t = report.total;
    if (t.true_positives, t.system_size, t.gold_size) != total {
        return Err(format!("score totals {:?} vs oracle {:?}", t, total));
    }
    if report.per_label.len() != per.len() {
        return Err("score label sets differ".into());
    }
    for (label, c) in &report.per_label {
        if per.get(label) != Some(&(c.true_positives, c.system_size, c.gold_size)) {
            return Err(format!("score differs on label {}", label));
        }
    }
    let tp_sum: usize = report.per_label.values().map(|c| c.true_positives).sum();
    if tp_sum != t.true_positives {
        return Err("per-label tp does not sum to total".into());
    }

    let reverse = score(&gold, &system).map_err(|e| e.to_string())?;
    if report.precision() != reverse.recall() || report.recall() != reverse.precision() {
        return Err("P(a,b) != R(b,a)".into());
    }
    for (i, (s, g)) in system.iter().zip(&gold).enumerate() {
        let a = score(std::slice::from_ref(s), std::slice::from_ref(g)).unwrap();
        let b = score(std::slice::from_ref(g), std::slice::from_ref(s)).unwrap();
        if a.precision() != b.recall() || a.recall() != b.precision() {
            return Err(format!("P/R symmetry fails on sentence {}", i));
        }
    }
    let identity = score(&gold, &gold).unwrap();
    if identity.total.true_positives != identity.total.gold_size
        || identity.total.true_positives != identity.total.system_size
    {
        return Err("score(x, x) is not perfect".into());
    }

    for (scope, all) in [(DiffScope::ConjunctIncident, false), (DiffScope::All, true)] {
        let lib = diff_stats(&gold, &system, scope).map_err(|e| e.to_string())?;
        let (per, total) = raw_diff(&gold, &system, all);
        let lt = &lib.total;
        if (lt.added, lt.removed, lt.sentences, lt.total) != total {
            return Err(format!("diff_stats totals differ for {:?}", scope));
        }
        for (label, c) in &lib.per_label {
            if per.get(label) != Some(&(c.added, c.removed, c.sentences, c.total)) {
                return Err(format!("diff_stats differs on label {} ({:?})", label, scope));
            }
        }
        let back = diff_stats(&system, &gold, scope).unwrap();
        for (label, c) in &lib.per_label {
            let r = back.per_label.get(label).map_or(0, |b| b.removed);
            if c.added != r {
                return Err(format!("added/removed asymmetry on {}", label));
            }
        }
    }

    Ok(format!(
        "{} sentences, {} gold links, {} system links",
        count, t.gold_size, t.system_size
    ))
}

fn modes() -> Vec<(&'static str, ConverterConfig)> {
    let fix = ConverterConfig {
        passive_imperative_fix: true,
        ..ConverterConfig::rbc()
    };
    let once_non_core = ConverterConfig {
        propagate_non_core: true,
        ..ConverterConfig::rbc()
    };
    vec![
        ("rbc", ConverterConfig::rbc()),
        ("rbc+fix", fix),
        ("rbc+noncore", once_non_core),
        ("rbc2", ConverterConfig::rbc2()),
        ("rbc2+fix", ConverterConfig::rbc2_fix()),
    ]
}

/// Monotonicity, fixpoint idempotence and the default adjunct rule on
/// random trees.
pub fn check_converter(seed: u64, count: usize) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = SynthConfig {
        min_tokens: 1,
        max_tokens: 12,
        ..SynthConfig::default()
    };
    let modes = modes();
    let mut added_total = 0usize;
    let mut governor_adjuncts = 0usize;

    for i in 0..count {
        let mut s = random_tree(&mut rng, i, &cfg);
        if rng.gen_bool(0.3) {
            s = perturb_enhanced(&mut rng, &s, 0.9, 3);
        }
        let mut seeded = s.clone();
        seed_enhanced(&mut seeded);
        let before = enhanced_edges(&seeded);

        for (name, mode) in &modes {
            let out = convert(&s, mode);
            if basic_edges(&out) != basic_edges(&s) {
                return Err(format!("{}: basic layer changed on sentence {}", name, i));
            }
            let after = enhanced_edges(&out);
            if !before.is_subset(&after) {
                return Err(format!("{}: edges removed on sentence {}", name, i));
            }
            if mode.iterate_to_fixpoint && convert(&out, mode) != out {
                return Err(format!("{}: not idempotent on sentence {}", name, i));
            }
            if *name == "rbc" {
                let pairs = conj_pairs(&seeded, ConjFilter::All);
                for e in after.difference(&before) {
                    added_total += 1;
                    if !matches!(e.coarse_label(), "obl" | "advmod" | "advcl") {
                        continue;
                    }
                    // Only a copied governor relation may carry these labels.
                    let explained = pairs.iter().any(|p| {
                        p.dep == e.dep && before.contains(&Edge::new(e.head, p.gov, e.label.clone()))
                    });
                    if !explained {
                        return Err(format!("rbc emitted adjunct {} on sentence {}", e, i));
                    }
                    governor_adjuncts += 1;
                }
            }
        }
        let always = always_baseline(&s);
        if !before.is_subset(&enhanced_edges(&always)) || basic_edges(&always) != basic_edges(&s) {
            return Err(format!("always baseline not monotone on sentence {}", i));
        }
    }
    Ok(format!(
        "{} trees, {} rbc edges added ({} adjunct-labeled governor copies)",
        count, added_total, governor_adjuncts
    ))
}
