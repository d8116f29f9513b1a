//! CoNLL-U reading and writing with both the basic and the enhanced layer.
//!
//! Parsing keeps everything needed to reproduce a well-formed file byte for
//! byte: comment lines and multiword-token range lines are stored verbatim,
//! all string columns are kept as written, and the structured columns
//! (FEATS, HEAD, DEPS) are serialized in their canonical UD form.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::io::{self, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while reading CoNLL-U. Line numbers are 1-based.
#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: expected 10 tab-separated columns, found {found}")]
    ColumnCount { line: usize, found: usize },

    #[error("line {line}: invalid {field} value `{value}`")]
    InvalidField {
        line: usize,
        field: &'static str,
        value: String,
    },

    #[error("line {line}: {field} refers to missing token {target}")]
    DanglingHead {
        line: usize,
        field: &'static str,
        target: String,
    },

    #[error("line {line}: {message}")]
    Structure { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Identifier of a syntactic word. Regular tokens have `minor == 0`, empty
/// nodes (rendered `major.minor`) have `minor >= 1`.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct TokenId {
    pub major: u32,
    pub minor: u32,
}

impl TokenId {
    pub fn new(major: u32) -> Self {
        TokenId { major, minor: 0 }
    }

    pub fn empty(major: u32, minor: u32) -> Self {
        TokenId { major, minor }
    }

    pub fn is_empty_node(self) -> bool {
        self.minor != 0
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.minor == 0 {
            write!(f, "{}", self.major)
        } else {
            write!(f, "{}.{}", self.major, self.minor)
        }
    }
}

fn parse_index(s: &str) -> Option<u32> {
    // Digits only, no sign and no leading zeros, so rendering is the inverse.
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) || (s.len() > 1 && s.starts_with('0'))
    {
        return None;
    }
    s.parse().ok()
}

impl FromStr for TokenId {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.split_once('.') {
            None => {
                let major = parse_index(s).ok_or(())?;
                if major == 0 {
                    return Err(());
                }
                Ok(TokenId::new(major))
            }
            Some((major, minor)) => {
                // Empty nodes may follow the root position ("0.1").
                let major = parse_index(major).ok_or(())?;
                let minor = parse_index(minor).ok_or(())?;
                if minor == 0 {
                    return Err(());
                }
                Ok(TokenId::empty(major, minor))
            }
        }
    }
}

/// A head position: the artificial root or a word.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub enum Node {
    Root,
    Word(TokenId),
}

impl Node {
    pub fn word(self) -> Option<TokenId> {
        match self {
            Node::Root => None,
            Node::Word(id) => Some(id),
        }
    }
}

impl From<TokenId> for Node {
    fn from(id: TokenId) -> Self {
        Node::Word(id)
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Root => f.write_str("0"),
            Node::Word(id) => id.fmt(f),
        }
    }
}

impl FromStr for Node {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        if s == "0" {
            Ok(Node::Root)
        } else {
            s.parse().map(Node::Word)
        }
    }
}

/// Morphological features, kept in canonical UD order (case-insensitive by
/// feature name).
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Features(Vec<(String, String)>);

fn feature_order(a: &str, b: &str) -> Ordering {
    a.to_lowercase()
        .cmp(&b.to_lowercase())
        .then_with(|| a.cmp(b))
}

impl Features {
    pub fn new() -> Self {
        Features(Vec::new())
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.0
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }

    /// Set a feature, replacing an existing value.
    pub fn insert(&mut self, name: impl Into<String>, value: impl Into<String>) {
        let name = name.into();
        let value = value.into();
        match self
            .0
            .binary_search_by(|(k, _)| feature_order(k, &name))
        {
            Ok(idx) => self.0[idx].1 = value,
            Err(idx) => self.0.insert(idx, (name, value)),
        }
    }

    pub fn remove(&mut self, name: &str) -> Option<String> {
        let idx = self.0.iter().position(|(k, _)| k == name)?;
        Some(self.0.remove(idx).1)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

impl fmt::Display for Features {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("_");
        }
        for (idx, (k, v)) in self.0.iter().enumerate() {
            if idx > 0 {
                f.write_str("|")?;
            }
            write!(f, "{}={}", k, v)?;
        }
        Ok(())
    }
}

impl FromStr for Features {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        let mut feats = Features::new();
        if s == "_" {
            return Ok(feats);
        }
        for pair in s.split('|') {
            let (k, v) = pair.split_once('=').ok_or(())?;
            if k.is_empty() || v.is_empty() || feats.get(k).is_some() {
                return Err(());
            }
            feats.insert(k, v);
        }
        Ok(feats)
    }
}

/// One entry of the DEPS column.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Dep {
    pub head: Node,
    pub label: String,
}

impl Dep {
    pub fn new(head: Node, label: impl Into<String>) -> Self {
        Dep {
            head,
            label: label.into(),
        }
    }
}

/// Serialize a DEPS column: sorted by head, `head:label` joined by `|`.
pub fn format_deps(deps: &BTreeSet<Dep>) -> String {
    if deps.is_empty() {
        return "_".to_owned();
    }
    let parts: Vec<String> = deps
        .iter()
        .map(|d| format!("{}:{}", d.head, d.label))
        .collect();
    parts.join("|")
}

fn parse_deps(s: &str) -> Result<BTreeSet<Dep>, ()> {
    let mut deps = BTreeSet::new();
    if s == "_" {
        return Ok(deps);
    }
    for entry in s.split('|') {
        let (head, label) = entry.split_once(':').ok_or(())?;
        if label.is_empty() {
            return Err(());
        }
        deps.insert(Dep::new(head.parse()?, label));
    }
    Ok(deps)
}

/// One syntactic word (a CoNLL-U row that is not a multiword range).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub id: TokenId,
    pub form: String,
    pub lemma: String,
    pub upos: String,
    pub xpos: String,
    pub feats: Features,
    pub head: Option<Node>,
    pub deprel: Option<String>,
    pub deps: BTreeSet<Dep>,
    pub misc: String,
}

impl Token {
    /// A token with all string columns set to `_` and no relations.
    pub fn new(id: TokenId, form: impl Into<String>) -> Self {
        Token {
            id,
            form: form.into(),
            lemma: "_".into(),
            upos: "_".into(),
            xpos: "_".into(),
            feats: Features::new(),
            head: None,
            deprel: None,
            deps: BTreeSet::new(),
            misc: "_".into(),
        }
    }

    pub fn is_empty_node(&self) -> bool {
        self.id.is_empty_node()
    }

    pub fn feat(&self, name: &str) -> Option<&str> {
        self.feats.get(name)
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head = self
            .head
            .map(|h| h.to_string())
            .unwrap_or_else(|| "_".into());
        write!(
            f,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.id,
            self.form,
            self.lemma,
            self.upos,
            self.xpos,
            self.feats,
            head,
            self.deprel.as_deref().unwrap_or("_"),
            format_deps(&self.deps),
            self.misc
        )
    }
}

/// A multiword-token range line, kept verbatim. `before` is the index in
/// `Sentence::tokens` of the token that follows it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiwordRange {
    pub before: usize,
    pub line: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Sentence {
    /// Raw comment lines, including the leading `#`.
    pub comments: Vec<String>,
    pub tokens: Vec<Token>,
    pub multiword: Vec<MultiwordRange>,
}

impl Sentence {
    /// The value of the `# sent_id = ...` comment, if present.
    pub fn sent_id(&self) -> Option<&str> {
        self.comments.iter().find_map(|c| {
            let rest = c.strip_prefix('#')?.trim_start();
            let rest = rest.strip_prefix("sent_id")?;
            let value = rest.trim_start().strip_prefix('=')?;
            Some(value.trim())
        })
    }

    pub fn index_of(&self, id: TokenId) -> Option<usize> {
        self.tokens.binary_search_by_key(&id, |t| t.id).ok()
    }

    pub fn token(&self, id: TokenId) -> Option<&Token> {
        self.index_of(id).map(|idx| &self.tokens[idx])
    }

    pub fn token_mut(&mut self, id: TokenId) -> Option<&mut Token> {
        self.index_of(id).map(move |idx| &mut self.tokens[idx])
    }

    /// Number of regular (non-empty) tokens.
    pub fn word_count(&self) -> usize {
        self.tokens.iter().filter(|t| !t.is_empty_node()).count()
    }

    /// Remove every enhanced-layer entry.
    pub fn clear_enhanced(&mut self) {
        for token in &mut self.tokens {
            token.deps.clear();
        }
    }
}

impl fmt::Display for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for comment in &self.comments {
            writeln!(f, "{}", comment)?;
        }
        let mut ranges = self.multiword.iter().peekable();
        for (idx, token) in self.tokens.iter().enumerate() {
            while let Some(range) = ranges.next_if(|r| r.before <= idx) {
                writeln!(f, "{}", range.line)?;
            }
            writeln!(f, "{}", token)?;
        }
        for range in ranges {
            writeln!(f, "{}", range.line)?;
        }
        writeln!(f)
    }
}

fn invalid(line: usize, field: &'static str, value: &str) -> ParseError {
    ParseError::InvalidField {
        line,
        field,
        value: value.to_owned(),
    }
}

fn optional(column: &str) -> Option<&str> {
    if column == "_" {
        None
    } else {
        Some(column)
    }
}

fn parse_token(line_no: usize, columns: &[&str]) -> Result<Token, ParseError> {
    let id: TokenId = columns[0]
        .parse()
        .map_err(|_| invalid(line_no, "ID", columns[0]))?;
    let feats = columns[5]
        .parse()
        .map_err(|_| invalid(line_no, "FEATS", columns[5]))?;
    let head = match optional(columns[6]) {
        None => None,
        Some(h) => Some(h.parse().map_err(|_| invalid(line_no, "HEAD", h))?),
    };
    let deprel = optional(columns[7]).map(str::to_owned);
    let deps = parse_deps(columns[8]).map_err(|_| invalid(line_no, "DEPS", columns[8]))?;

    if id.is_empty_node() && (head.is_some() || deprel.is_some()) {
        return Err(ParseError::Structure {
            line: line_no,
            message: format!("empty node {} must not have a basic head or relation", id),
        });
    }

    Ok(Token {
        id,
        form: columns[1].to_owned(),
        lemma: columns[2].to_owned(),
        upos: columns[3].to_owned(),
        xpos: columns[4].to_owned(),
        feats,
        head,
        deprel,
        deps,
        misc: columns[9].to_owned(),
    })
}

fn is_range_id(id: &str) -> bool {
    match id.split_once('-') {
        Some((a, b)) => parse_index(a).is_some() && parse_index(b).is_some(),
        None => false,
    }
}

#[derive(Default)]
struct Block {
    sentence: Sentence,
    lines: Vec<usize>,
    start: usize,
}

impl Block {
    fn is_empty(&self) -> bool {
        self.sentence.comments.is_empty()
            && self.sentence.tokens.is_empty()
            && self.sentence.multiword.is_empty()
    }

    fn finish(self) -> Result<Sentence, ParseError> {
        let Block {
            sentence,
            lines,
            start,
        } = self;

        let mut expected_major = 1;
        let mut last_major = 0;
        let mut last_minor = 0;
        for (token, &line) in sentence.tokens.iter().zip(&lines) {
            let id = token.id;
            if id.is_empty_node() {
                if id.major != last_major || id.minor != last_minor + 1 {
                    return Err(ParseError::Structure {
                        line,
                        message: format!("empty node {} out of sequence", id),
                    });
                }
                last_minor = id.minor;
            } else {
                if id.major != expected_major {
                    return Err(ParseError::Structure {
                        line,
                        message: format!("expected token {}, found {}", expected_major, id),
                    });
                }
                expected_major += 1;
                last_major = id.major;
                last_minor = 0;
            }
        }

        let exists = |node: Node| match node {
            Node::Root => true,
            Node::Word(id) => sentence.index_of(id).is_some(),
        };
        for (token, &line) in sentence.tokens.iter().zip(&lines) {
            if let Some(head) = token.head {
                if !exists(head) {
                    return Err(ParseError::DanglingHead {
                        line,
                        field: "HEAD",
                        target: head.to_string(),
                    });
                }
            }
            if let Some(dep) = token.deps.iter().find(|d| !exists(d.head)) {
                return Err(ParseError::DanglingHead {
                    line,
                    field: "DEPS",
                    target: dep.head.to_string(),
                });
            }
        }

        if sentence.tokens.is_empty() && !sentence.multiword.is_empty() {
            return Err(ParseError::Structure {
                line: start,
                message: "multiword range without tokens".into(),
            });
        }

        Ok(sentence)
    }
}

/// Parse a complete CoNLL-U document. Either every sentence parses or an
/// error is returned.
pub fn parse_corpus(input: &str) -> Result<Vec<Sentence>, ParseError> {
    let mut sentences = Vec::new();
    let mut block = Block::default();

    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        if line.is_empty() {
            if !block.is_empty() {
                sentences.push(std::mem::take(&mut block).finish()?);
            }
            continue;
        }
        if block.is_empty() {
            block.start = line_no;
        }

        if line.starts_with('#') {
            if !block.sentence.tokens.is_empty() || !block.sentence.multiword.is_empty() {
                return Err(ParseError::Structure {
                    line: line_no,
                    message: "comment line inside a token block".into(),
                });
            }
            block.sentence.comments.push(line.to_owned());
            continue;
        }

        let columns: Vec<&str> = line.split('\t').collect();
        if columns.len() != 10 {
            return Err(ParseError::ColumnCount {
                line: line_no,
                found: columns.len(),
            });
        }

        if is_range_id(columns[0]) {
            block.sentence.multiword.push(MultiwordRange {
                before: block.sentence.tokens.len(),
                line: line.to_owned(),
            });
            continue;
        }

        let token = parse_token(line_no, &columns)?;
        block.sentence.tokens.push(token);
        block.lines.push(line_no);
    }

    if !block.is_empty() {
        sentences.push(block.finish()?);
    }

    Ok(sentences)
}

/// Render sentences as CoNLL-U. Each sentence is followed by a blank line.
pub fn write_corpus(sentences: &[Sentence]) -> String {
    let mut out = String::new();
    for sentence in sentences {
        out.push_str(&sentence.to_string());
    }
    out
}

pub fn read_corpus<R: Read>(mut reader: R) -> Result<Vec<Sentence>, ParseError> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    parse_corpus(&text)
}

pub fn write_corpus_to<W: Write>(mut writer: W, sentences: &[Sentence]) -> io::Result<()> {
    for sentence in sentences {
        write!(writer, "{}", sentence)?;
    }
    writer.flush()
}
