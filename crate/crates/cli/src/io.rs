//! Reading and writing corpora, models and id lists; `-` is stdin/stdout.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{Context, Result};
use conjprop::conllu::{parse_corpus, write_corpus, Sentence};

fn is_stdio(path: &Path) -> bool {
    path.as_os_str() == "-"
}

fn display(path: &Path) -> String {
    if is_stdio(path) {
        "<stdin>".into()
    } else {
        path.display().to_string()
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    let mut text = String::new();
    if is_stdio(path) {
        io::stdin().read_to_string(&mut text).context("reading <stdin>")?;
    } else {
        File::open(path)
            .and_then(|mut f| f.read_to_string(&mut text))
            .with_context(|| format!("reading {}", path.display()))?;
    }
    Ok(text)
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    if is_stdio(path) {
        let mut buf = Vec::new();
        io::stdin().read_to_end(&mut buf).context("reading <stdin>")?;
        Ok(buf)
    } else {
        std::fs::read(path).with_context(|| format!("reading {}", path.display()))
    }
}

pub fn read_corpus(path: &Path) -> Result<Vec<Sentence>> {
    let text = read_text(path)?;
    parse_corpus(&text).with_context(|| format!("{}", display(path)))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = if is_stdio(path) { "<stdout>".to_owned() } else { path.display().to_string() };
    let result = if is_stdio(path) {
        let stdout = io::stdout();
        let mut lock = stdout.lock();
        lock.write_all(bytes).and_then(|_| lock.flush())
    } else {
        File::create(path).and_then(|f| {
            let mut w = BufWriter::new(f);
            w.write_all(bytes)?;
            w.flush()
        })
    };
    result.with_context(|| format!("writing {}", name))
}

pub fn write_corpus_file(path: &Path, corpus: &[Sentence]) -> Result<()> {
    write_bytes(path, write_corpus(corpus).as_bytes())
}

/// One id per line; blank lines and `#` comments are skipped.
pub fn read_id_list(path: &Path) -> Result<BTreeSet<String>> {
    Ok(read_text(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect())
}
