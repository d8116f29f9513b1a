//! Precision, recall and F1 on propagated links, annotator agreement and
//! treebank-modification statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::conllu::Sentence;
use crate::graph::{basic_edges, coarse, enhanced_edges, propagated_links, LinkSet};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AlignError {
    #[error("corpora differ in length: {left} vs {right} sentences")]
    Length { left: usize, right: usize },

    #[error("sentences do not align: {}", .0.join(", "))]
    Mismatch(Vec<String>),
}

fn sentence_name(s: &Sentence, idx: usize) -> String {
    s.sent_id()
        .map(str::to_owned)
        .unwrap_or_else(|| format!("#{}", idx + 1))
}

/// Pair up sentences by position, requiring equal ids (when present) and
/// equal token counts.
pub fn align<'a>(
    left: &'a [Sentence],
    right: &'a [Sentence],
) -> Result<Vec<(&'a Sentence, &'a Sentence)>, AlignError> {
    if left.len() != right.len() {
        return Err(AlignError::Length {
            left: left.len(),
            right: right.len(),
        });
    }
    let mut mismatched = Vec::new();
    for (idx, (a, b)) in left.iter().zip(right).enumerate() {
        let ids_differ = matches!((a.sent_id(), b.sent_id()), (Some(x), Some(y)) if x != y);
        let ids: Vec<_> = a.tokens.iter().map(|t| t.id).collect();
        let other: Vec<_> = b.tokens.iter().map(|t| t.id).collect();
        if ids_differ || ids != other {
            let (x, y) = (sentence_name(a, idx), sentence_name(b, idx));
            mismatched.push(if x == y { x } else { format!("{}/{}", x, y) });
        }
    }
    if mismatched.is_empty() {
        Ok(left.iter().zip(right).collect())
    } else {
        Err(AlignError::Mismatch(mismatched))
    }
}

/// Drop sentences whose id is listed.
pub fn exclude_ids(corpus: &[Sentence], ids: &BTreeSet<String>) -> Vec<Sentence> {
    corpus
        .iter()
        .filter(|s| s.sent_id().is_none_or(|id| !ids.contains(id)))
        .cloned()
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub true_positives: usize,
    pub system_size: usize,
    pub gold_size: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.true_positives, self.system_size)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.true_positives, self.gold_size)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }

    fn add(&mut self, other: Counts) {
        self.true_positives += other.true_positives;
        self.system_size += other.system_size;
        self.gold_size += other.gold_size;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct EvalReport {
    pub total: Counts,
    pub per_label: BTreeMap<String, Counts>,
}

impl EvalReport {
    pub fn precision(&self) -> f64 {
        self.total.precision()
    }

    pub fn recall(&self) -> f64 {
        self.total.recall()
    }

    pub fn f1(&self) -> f64 {
        self.total.f1()
    }

    /// Accumulate one sentence's system and gold link sets.
    pub fn add_sentence(&mut self, system: &LinkSet, gold: &LinkSet) {
        let common = system.intersection(gold);
        let labels: BTreeSet<&str> = system.labels().into_iter().chain(gold.labels()).collect();
        for label in labels {
            let counts = Counts {
                true_positives: common.iter().filter(|e| e.label == label).count(),
                system_size: system.iter().filter(|e| e.label == label).count(),
                gold_size: gold.iter().filter(|e| e.label == label).count(),
            };
            self.per_label.entry(label.to_owned()).or_default().add(counts);
            self.total.add(counts);
        }
    }

    /// Per-label counts where labels not in `listed` are folded into their
    /// coarse label.
    pub fn rollup(&self, listed: &BTreeSet<String>) -> BTreeMap<String, Counts> {
        let mut out: BTreeMap<String, Counts> = BTreeMap::new();
        for (label, counts) in &self.per_label {
            let key = if listed.contains(label) {
                label.clone()
            } else {
                coarse(label).to_owned()
            };
            out.entry(key).or_default().add(*counts);
        }
        out
    }

    /// Aligned plain-text table with one row per label and a total row.
    /// Values are percentages with one decimal.
    pub fn table(&self, system_name: &str, gold_name: &str) -> String {
        let both = format!("{}&{}", gold_name, system_name);
        format_table(&self.per_label, &self.total, system_name, gold_name, &both)
    }

    /// Tab-separated records: label, tp, sys, gold, P, R, F1.
    pub fn records(&self) -> String {
        let mut out = String::new();
        for (label, c) in self.per_label.iter().map(|(l, c)| (l.as_str(), c)).chain([("total", &self.total)]) {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{:.1}\t{:.1}\t{:.1}",
                label,
                c.true_positives,
                c.system_size,
                c.gold_size,
                100.0 * c.precision(),
                100.0 * c.recall(),
                100.0 * c.f1()
            )
            .unwrap();
        }
        out
    }
}

fn format_table(
    rows: &BTreeMap<String, Counts>,
    total: &Counts,
    system: &str,
    gold: &str,
    both: &str,
) -> String {
    let width = rows.keys().map(String::len).max().unwrap_or(0).max(5);
    let col = [system, gold, both].iter().map(|s| s.len()).max().unwrap().max(5);
    let mut out = String::new();
    writeln!(
        out,
        "{:<width$}  {:>col$}  {:>col$}  {:>col$}  {:>6}  {:>6}  {:>6}",
        "label", system, gold, both, "P", "R", "F1"
    )
    .unwrap();
    let line = |out: &mut String, label: &str, c: &Counts| {
        writeln!(
            out,
            "{:<width$}  {:>col$}  {:>col$}  {:>col$}  {:>6.1}  {:>6.1}  {:>6.1}",
            label,
            c.system_size,
            c.gold_size,
            c.true_positives,
            100.0 * c.precision(),
            100.0 * c.recall(),
            100.0 * c.f1()
        )
        .unwrap();
    };
    for (label, c) in rows {
        line(&mut out, label, c);
    }
    line(&mut out, "total", total);
    out
}

/// Score a system corpus against a gold corpus on propagated links.
pub fn score(system: &[Sentence], gold: &[Sentence]) -> Result<EvalReport, AlignError> {
    let mut report = EvalReport::default();
    for (s, g) in align(system, gold)? {
        report.add_sentence(&propagated_links(s), &propagated_links(g));
    }
    Ok(report)
}

/// Pairwise agreement between annotators. `reports[&(system, gold)]`
/// treats annotator `system` as the system and `gold` as the gold standard.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Agreement {
    pub names: Vec<String>,
    pub reports: BTreeMap<(usize, usize), EvalReport>,
}

impl Agreement {
    pub fn get(&self, system: usize, gold: usize) -> Option<&EvalReport> {
        self.reports.get(&(system, gold))
    }

    /// Matrix of precisions with the row annotator as gold standard.
    pub fn matrix(&self) -> String {
        let col = self.names.iter().map(String::len).max().unwrap_or(1).max(5);
        let mut out = String::new();
        write!(out, "{:<col$}", "").unwrap();
        for name in &self.names {
            write!(out, "  {:>col$}", name).unwrap();
        }
        out.push('\n');
        for (row, gold) in self.names.iter().enumerate() {
            write!(out, "{:<col$}", gold).unwrap();
            for column in 0..self.names.len() {
                match self.get(column, row) {
                    Some(report) => write!(out, "  {:>col$.1}", 100.0 * report.precision()).unwrap(),
                    None => write!(out, "  {:>col$}", "-").unwrap(),
                }
            }
            out.push('\n');
        }
        out
    }

    /// Per-label table for one ordered pair.
    pub fn pair_table(&self, system: usize, gold: usize) -> Option<String> {
        let report = self.get(system, gold)?;
        Some(report.table(&self.names[system], &self.names[gold]))
    }
}

pub fn agreement_matrix(annotations: &[(String, Vec<Sentence>)]) -> Result<Agreement, AlignError> {
    let links: Vec<Vec<LinkSet>> = annotations
        .iter()
        .map(|(_, corpus)| corpus.iter().map(propagated_links).collect())
        .collect();
    let mut reports = BTreeMap::new();
    for (i, (_, a)) in annotations.iter().enumerate() {
        for (j, (_, b)) in annotations.iter().enumerate() {
            if i == j {
                continue;
            }
            align(a, b)?;
            let mut report = EvalReport::default();
            for (s, g) in links[i].iter().zip(&links[j]) {
                report.add_sentence(s, g);
            }
            reports.insert((i, j), report);
        }
    }
    Ok(Agreement {
        names: annotations.iter().map(|(n, _)| n.clone()).collect(),
        reports,
    })
}

/// Which edges `diff_stats` compares.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiffScope {
    /// Propagated links only (enhanced, not basic, incident to a conjunct).
    ConjunctIncident,
    /// Every basic and enhanced edge.
    All,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DiffCounts {
    pub added: usize,
    pub removed: usize,
    /// Number of sentences with at least one addition or removal.
    pub sentences: usize,
    /// Occurrences in the original corpus within the scope.
    pub total: usize,
    #[serde(skip)]
    changed: BTreeSet<usize>,
}

impl DiffCounts {
    fn merge(&mut self, other: &DiffCounts) {
        self.added += other.added;
        self.removed += other.removed;
        self.total += other.total;
        self.changed.extend(other.changed.iter().copied());
        self.sentences = self.changed.len();
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DiffReport {
    pub per_label: BTreeMap<String, DiffCounts>,
    pub total: DiffCounts,
}

impl DiffReport {
    /// Fold labels not in `listed` into their coarse label.
    pub fn rollup(&self, listed: &BTreeSet<String>) -> DiffReport {
        let mut per_label: BTreeMap<String, DiffCounts> = BTreeMap::new();
        for (label, counts) in &self.per_label {
            let key = if listed.contains(label) {
                label.clone()
            } else {
                coarse(label).to_owned()
            };
            per_label.entry(key).or_default().merge(counts);
        }
        DiffReport {
            per_label,
            total: self.total.clone(),
        }
    }

    pub fn table(&self) -> String {
        let width = self.per_label.keys().map(String::len).max().unwrap_or(0).max(5);
        let mut out = String::new();
        writeln!(
            out,
            "{:<width$}  {:>8}  {:>8}  {:>8}  {:>8}",
            "label", "#added", "#removed", "#sents", "#total"
        )
        .unwrap();
        let rows = self
            .per_label
            .iter()
            .map(|(l, c)| (l.as_str(), c))
            .chain([("all", &self.total)]);
        for (label, c) in rows {
            writeln!(
                out,
                "{:<width$}  {:>8}  {:>8}  {:>8}  {:>8}",
                label, c.added, c.removed, c.sentences, c.total
            )
            .unwrap();
        }
        out
    }

    pub fn records(&self) -> String {
        let mut out = String::new();
        let rows = self
            .per_label
            .iter()
            .map(|(l, c)| (l.as_str(), c))
            .chain([("all", &self.total)]);
        for (label, c) in rows {
            writeln!(out, "{}\t{}\t{}\t{}\t{}", label, c.added, c.removed, c.sentences, c.total)
                .unwrap();
        }
        out
    }
}

fn scoped_edges(s: &Sentence, scope: DiffScope) -> LinkSet {
    match scope {
        DiffScope::ConjunctIncident => propagated_links(s),
        DiffScope::All => enhanced_edges(s).union(&basic_edges(s)),
    }
}

/// Count edges added and removed between two versions of a corpus.
pub fn diff_stats(
    original: &[Sentence],
    edited: &[Sentence],
    scope: DiffScope,
) -> Result<DiffReport, AlignError> {
    let mut report = DiffReport::default();
    for (idx, (o, e)) in align(original, edited)?.into_iter().enumerate() {
        let before = scoped_edges(o, scope);
        let after = scoped_edges(e, scope);
        let added = after.difference(&before);
        let removed = before.difference(&after);

        for edge in &before {
            report.per_label.entry(edge.label.clone()).or_default().total += 1;
            report.total.total += 1;
        }
        for (edge, is_added) in added.iter().map(|e| (e, true)).chain(removed.iter().map(|e| (e, false))) {
            let counts = report.per_label.entry(edge.label.clone()).or_default();
            if is_added {
                counts.added += 1;
                report.total.added += 1;
            } else {
                counts.removed += 1;
                report.total.removed += 1;
            }
            counts.changed.insert(idx);
            counts.sentences = counts.changed.len();
            report.total.changed.insert(idx);
        }
    }
    report.total.sentences = report.total.changed.len();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conllu::{parse_corpus, TokenId};
    use crate::graph::{add_enhanced, Edge};

    const GOLD: &str = "# sent_id = a\n\
1\tx\t_\tNOUN\t_\t_\t2\tnsubj\t2:nsubj|4:nsubj\t_\n\
2\ty\t_\tVERB\t_\t_\t0\troot\t0:root\t_\n\
3\tand\t_\tCCONJ\t_\t_\t4\tcc\t4:cc\t_\n\
4\tz\t_\tVERB\t_\t_\t2\tconj\t2:conj\t_\n\n";

    fn corpus() -> Vec<Sentence> {
        parse_corpus(GOLD).unwrap()
    }

    #[test]
    fn identical_corpora_score_perfectly() {
        let report = score(&corpus(), &corpus()).unwrap();
        assert_eq!(report.total.true_positives, 1);
        assert_eq!(report.precision(), 1.0);
        assert_eq!(report.recall(), 1.0);
        assert_eq!(report.f1(), 1.0);
    }

    #[test]
    fn empty_sets_give_zero_without_nan() {
        let c = Counts::default();
        assert_eq!((c.precision(), c.recall(), c.f1()), (0.0, 0.0, 0.0));
    }

    #[test]
    fn misaligned_corpora_list_ids() {
        let mut other = corpus();
        other[0].comments[0] = "# sent_id = b".into();
        assert_eq!(
            score(&corpus(), &other),
            Err(AlignError::Mismatch(vec!["a/b".into()]))
        );
        assert!(matches!(
            score(&corpus(), &[]),
            Err(AlignError::Length { left: 1, right: 0 })
        ));
    }

    #[test]
    fn extra_edge_lowers_precision() {
        let mut system = corpus();
        add_enhanced(
            &mut system[0],
            [Edge::new(TokenId::new(4), TokenId::new(3), "obl")],
        );
        let report = score(&system, &corpus()).unwrap();
        assert_eq!(report.total.system_size, 2);
        assert_eq!(report.precision(), 0.5);
        assert_eq!(report.recall(), 1.0);
        assert_eq!(report.per_label["obl"].true_positives, 0);
    }

    #[test]
    fn rollup_folds_unlisted_subtypes() {
        let mut report = EvalReport::default();
        for (label, tp) in [("nmod", 1), ("nmod:poss", 2), ("nmod:for", 3)] {
            report.per_label.insert(
                label.into(),
                Counts {
                    true_positives: tp,
                    system_size: tp,
                    gold_size: tp,
                },
            );
        }
        let listed: BTreeSet<String> = ["nmod:poss".to_string()].into_iter().collect();
        let rolled = report.rollup(&listed);
        assert_eq!(rolled["nmod"].true_positives, 4);
        assert_eq!(rolled["nmod:poss"].true_positives, 2);
    }

    #[test]
    fn diff_of_identical_corpora_is_zero() {
        let report = diff_stats(&corpus(), &corpus(), DiffScope::All).unwrap();
        assert_eq!(report.total.added, 0);
        assert_eq!(report.total.removed, 0);
        assert_eq!(report.total.sentences, 0);
        assert_eq!(report.total.total, 5);
    }

    #[test]
    fn exclusion_list_drops_sentences() {
        let ids: BTreeSet<String> = ["a".to_string()].into_iter().collect();
        assert!(exclude_ids(&corpus(), &ids).is_empty());
    }

    #[test]
    fn tables_end_with_total_row() {
        let report = score(&corpus(), &corpus()).unwrap();
        let table = report.table("B", "A");
        assert!(table.lines().last().unwrap().starts_with("total"));
        assert!(report.records().ends_with("total\t1\t1\t1\t100.0\t100.0\t100.0\n"));
    }
}
