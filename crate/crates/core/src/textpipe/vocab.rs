use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::corpus::{read_corpus_files, RawDocument};
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const MASK: u32 = 1;
pub const SEP: u32 = 2;
pub const CLS0: u32 = 3;

/// Token ↔ id map with reserved ids for the control tokens.
///
/// Layout: `[PAD]=0, [MASK]=1, [SEP]=2, [CLS0]=3, [C1]..[CK]=4..3+K,
/// [UNK]=4+K`, then corpus tokens by descending frequency.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    k: usize,
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    fn reserved(k: usize) -> Vec<String> {
        let mut names: Vec<String> = ["[PAD]", "[MASK]", "[SEP]", "[CLS0]"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        names.extend((1..=k).map(|i| format!("[C{i}]")));
        names.push("[UNK]".to_string());
        names
    }

    /// Build from already segmented documents.
    pub fn from_documents(docs: &[RawDocument], max_size: usize, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        if max_size <= k + 8 {
            return Err(Error::Config(format!(
                "vocabulary size {max_size} must exceed K + 8 = {}",
                k + 8
            )));
        }
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for tok in docs.iter().flat_map(|d| d.sentences.iter().flatten()) {
            *counts.entry(tok.as_str()).or_default() += 1;
        }
        if counts.is_empty() {
            return Err(Error::Ingestion("corpus contains no tokens".into()));
        }
        let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut id_to_token = Self::reserved(k);
        let room = max_size - id_to_token.len();
        id_to_token.extend(ranked.into_iter().take(room).map(|(t, _)| t.to_string()));
        Ok(Self::from_tokens(id_to_token, k))
    }

    fn from_tokens(id_to_token: Vec<String>, k: usize) -> Self {
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self {
            k,
            token_to_id,
            id_to_token,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    /// Id of `[Ck]`, `k` in `1..=K`.
    pub fn cls_id(&self, k: usize) -> u32 {
        debug_assert!((1..=self.k).contains(&k));
        CLS0 + k as u32
    }

    pub fn unk_id(&self) -> u32 {
        4 + self.k as u32
    }

    /// First id that a text token can map to (the `[UNK]` id).
    pub fn first_text_id(&self) -> u32 {
        self.unk_id()
    }

    /// Control tokens: padding, mask, separator and every CLS token.
    pub fn is_special(&self, id: u32) -> bool {
        id < self.unk_id()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(self.unk_id())
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// `token<TAB>id` lines, in id order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.id_to_token.iter().enumerate() {
            let _ = writeln!(out, "{t}\t{i}");
        }
        out
    }

    pub fn from_tsv(text: &str, k: usize) -> Result<Self> {
        let mut tokens = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (tok, id) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::Ingestion(format!("vocabulary line {}: missing tab", n + 1)))?;
            let id: usize = id
                .parse()
                .map_err(|_| Error::Ingestion(format!("vocabulary line {}: bad id {id:?}", n + 1)))?;
            if id != tokens.len() {
                return Err(Error::Ingestion(format!(
                    "vocabulary line {}: expected id {}, found {id}",
                    n + 1,
                    tokens.len()
                )));
            }
            tokens.push(tok.to_string());
        }
        let reserved = Self::reserved(k);
        if tokens.len() < reserved.len() || tokens[..reserved.len()] != reserved[..] {
            return Err(Error::Ingestion(format!(
                "vocabulary does not start with the reserved tokens for K={k}"
            )));
        }
        Ok(Self::from_tokens(tokens, k))
    }
}

/// Read the corpus files and build a vocabulary of at most `max_size` ids.
pub fn build_vocab<P: AsRef<Path>>(corpus_paths: &[P], max_size: usize, k: usize) -> Result<Vocabulary> {
    let docs = read_corpus_files(corpus_paths)?;
    if docs.is_empty() {
        return Err(Error::Ingestion("empty corpus".into()));
    }
    Vocabulary::from_documents(&docs, max_size, k)
}
