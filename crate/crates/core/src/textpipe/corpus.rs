use std::fs;
use std::path::{Path, PathBuf};

use super::vocab::Vocabulary;
use crate::error::{Error, Result};

/// A document as lowercased whitespace tokens, one inner list per sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawDocument {
    pub sentences: Vec<Vec<String>>,
}

/// A document as token ids. Never empty; never holds an empty sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub sentences: Vec<Vec<u32>>,
}

impl Document {
    pub fn new(sentences: Vec<Vec<u32>>) -> Result<Self> {
        if sentences.is_empty() || sentences.iter().any(Vec::is_empty) {
            return Err(Error::Ingestion("document with no sentences or an empty sentence".into()));
        }
        Ok(Self { sentences })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// Split raw bytes into documents (blank-line separated) of sentences (lines).
pub fn segment_documents(raw: &[u8]) -> Result<Vec<RawDocument>> {
    let text = std::str::from_utf8(raw).map_err(|e| {
        Error::Ingestion(format!("invalid UTF-8 at byte offset {}", e.valid_up_to()))
    })?;
    let mut docs = Vec::new();
    let mut current: Vec<Vec<String>> = Vec::new();
    for line in text.lines() {
        let tokens: Vec<String> = line.split_whitespace().map(str::to_lowercase).collect();
        if tokens.is_empty() {
            if !current.is_empty() {
                docs.push(RawDocument {
                    sentences: std::mem::take(&mut current),
                });
            }
        } else {
            current.push(tokens);
        }
    }
    if !current.is_empty() {
        docs.push(RawDocument { sentences: current });
    }
    Ok(docs)
}

pub fn read_corpus_files<P: AsRef<Path>>(paths: &[P]) -> Result<Vec<RawDocument>> {
    let mut docs = Vec::new();
    for p in paths {
        let p = p.as_ref();
        let bytes = fs::read(p)?;
        let mut d = segment_documents(&bytes)
            .map_err(|e| Error::Ingestion(format!("{}: {e}", p.display())))?;
        docs.append(&mut d);
    }
    Ok(docs)
}

/// Every regular file in `dir`, in file-name order.
pub fn read_corpus_dir(dir: &Path) -> Result<Vec<RawDocument>> {
    if !dir.is_dir() {
        return Err(Error::Ingestion(format!("corpus directory {} not found", dir.display())));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let docs = read_corpus_files(&paths)?;
    if docs.is_empty() {
        return Err(Error::Ingestion(format!("corpus directory {} holds no documents", dir.display())));
    }
    Ok(docs)
}

pub fn encode_documents(vocab: &Vocabulary, raw: &[RawDocument]) -> Vec<Document> {
    raw.iter()
        .map(|d| Document {
            sentences: d.sentences.iter().map(|s| vocab.encode(s)).collect(),
        })
        .collect()
}
