//! Token embeddings supplied from outside the process.
//!
//! Sidecar files hold one record per token:
//!
//! ```text
//! layers=2 dim=3
//! s1<TAB>1<TAB>0.1 0.2 0.3 0.4 0.5 0.6
//! ```
//!
//! The header is optional (one layer, dimension taken from the first
//! record). Values are layer-major: all of layer 0, then layer 1, and so on.

use std::borrow::Cow;
use std::collections::HashMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::conllu::{Sentence, TokenId};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("no embedding for sentence {sentence}, token {token}")]
    Missing { sentence: String, token: String },

    #[error("embedding file line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Key under which a sentence's vectors are stored: its `sent_id`, or its
/// 1-based position in the corpus prefixed with `#`.
pub fn sentence_key(s: &Sentence, index: usize) -> String {
    s.sent_id()
        .map(str::to_owned)
        .unwrap_or_else(|| format!("#{}", index + 1))
}

pub trait EmbeddingProvider: Sync {
    fn layers(&self) -> usize;

    fn dim(&self) -> usize;

    /// `layers() * dim()` values, layer-major.
    fn lookup(
        &self,
        sentence: &Sentence,
        index: usize,
        token: TokenId,
    ) -> Result<Cow<'_, [f64]>, EmbeddingError>;
}

/// Vectors loaded from a sidecar file.
#[derive(Clone, Debug, Default)]
pub struct SidecarEmbeddings {
    layers: usize,
    dim: usize,
    vectors: HashMap<(String, TokenId), Vec<f64>>,
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let mut layers = None;
    let mut dim = None;
    for part in line.split_whitespace() {
        let (key, value) = part.split_once('=')?;
        match key {
            "layers" => layers = value.parse().ok(),
            "dim" => dim = value.parse().ok(),
            _ => return None,
        }
    }
    Some((layers?, dim?))
}

impl SidecarEmbeddings {
    pub fn parse(text: &str) -> Result<Self, EmbeddingError> {
        let mut layers = 1;
        let mut width: Option<usize> = None;
        let mut vectors = HashMap::new();

        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            if idx == 0 && line.starts_with("layers=") {
                let (l, d) = parse_header(line).ok_or_else(|| EmbeddingError::Parse {
                    line: line_no,
                    message: format!("malformed header `{}`", line),
                })?;
                if l == 0 || d == 0 {
                    return Err(EmbeddingError::Parse {
                        line: line_no,
                        message: "layers and dim must be positive".into(),
                    });
                }
                layers = l;
                width = Some(l * d);
                continue;
            }

            let mut fields = line.splitn(3, '\t');
            let (Some(sent), Some(token), Some(values)) = (fields.next(), fields.next(), fields.next())
            else {
                return Err(EmbeddingError::Parse {
                    line: line_no,
                    message: "expected sent_id<TAB>token_id<TAB>values".into(),
                });
            };
            let token: TokenId = token.parse().map_err(|_| EmbeddingError::Parse {
                line: line_no,
                message: format!("invalid token id `{}`", token),
            })?;
            let values = values
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| EmbeddingError::Parse {
                    line: line_no,
                    message: e.to_string(),
                })?;
            let expected = *width.get_or_insert(values.len());
            if values.len() != expected || expected == 0 {
                return Err(EmbeddingError::Parse {
                    line: line_no,
                    message: format!("expected {} values, found {}", expected, values.len()),
                });
            }
            vectors.insert((sent.to_owned(), token), values);
        }

        let width = width.unwrap_or(0);
        Ok(SidecarEmbeddings {
            layers,
            dim: width / layers,
            vectors,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

impl EmbeddingProvider for SidecarEmbeddings {
    fn layers(&self) -> usize {
        self.layers
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn lookup(
        &self,
        sentence: &Sentence,
        index: usize,
        token: TokenId,
    ) -> Result<Cow<'_, [f64]>, EmbeddingError> {
        let key = sentence_key(sentence, index);
        match self.vectors.get(&(key, token)) {
            Some(v) => Ok(Cow::Borrowed(v.as_slice())),
            None => Err(EmbeddingError::Missing {
                sentence: sentence_key(sentence, index),
                token: token.to_string(),
            }),
        }
    }
}

/// Deterministic pseudo-random vectors derived from a hash of the
/// sentence key, token id and form. Intended for tests and toy runs.
#[derive(Clone, Copy, Debug)]
pub struct HashEmbeddings {
    pub layers: usize,
    pub dim: usize,
    pub seed: u64,
}

fn fnv1a(seed: u64, parts: &[&[u8]]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for part in parts {
        for &b in *part {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        hash ^= 0xff;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

impl HashEmbeddings {
    pub fn new(layers: usize, dim: usize, seed: u64) -> Self {
        HashEmbeddings { layers, dim, seed }
    }

    fn vector(&self, key: &str, token: TokenId, form: &str) -> Vec<f64> {
        let id = token.to_string();
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(
            self.seed,
            &[key.as_bytes(), id.as_bytes(), form.as_bytes()],
        ));
        (0..self.layers * self.dim)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect()
    }
}

impl EmbeddingProvider for HashEmbeddings {
    fn layers(&self) -> usize {
        self.layers
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn lookup(
        &self,
        sentence: &Sentence,
        index: usize,
        token: TokenId,
    ) -> Result<Cow<'_, [f64]>, EmbeddingError> {
        let key = sentence_key(sentence, index);
        let form = sentence
            .token(token)
            .map(|t| t.form.as_str())
            .ok_or_else(|| EmbeddingError::Missing {
                sentence: key.clone(),
                token: token.to_string(),
            })?;
        Ok(Cow::Owned(self.vector(&key, token, form)))
    }
}

/// Render vectors for every token of a corpus in sidecar format.
pub fn write_sidecar(
    corpus: &[Sentence],
    provider: &dyn EmbeddingProvider,
) -> Result<String, EmbeddingError> {
    let mut out = String::new();
    writeln!(out, "layers={} dim={}", provider.layers(), provider.dim()).unwrap();
    for (idx, s) in corpus.iter().enumerate() {
        let key = sentence_key(s, idx);
        for t in &s.tokens {
            let v = provider.lookup(s, idx, t.id)?;
            let values: Vec<String> = v.iter().map(|x| format!("{:?}", x)).collect();
            writeln!(out, "{}\t{}\t{}", key, t.id, values.join(" ")).unwrap();
        }
    }
    Ok(out)
}
