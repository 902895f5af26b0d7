//! Corpus ingestion, the toy vocabulary, and contrastive batch construction.
//!
//! Corpora are UTF-8 text with one sentence per line and blank lines between
//! documents. Batches are made of two or three equally sized parts; row `i`
//! of each part comes from the same document, each part holding the pair of
//! sentences that immediately follows the previous part's pair.

mod batch;
mod corpus;
mod tfidf;
mod vocab;

pub use batch::{
    apply_mlm_masking, apply_sentence_order_swap, build_contrastive_batch,
    sample_contrastive_batch, BatchConfig, BatchMode, ContrastiveBatch, MlmTarget, RowSource,
};
pub use corpus::{
    encode_documents, read_corpus_dir, read_corpus_files, segment_documents, Document,
    RawDocument,
};
pub use tfidf::{compute_tfidf_targets, TfidfTable};
pub use vocab::{build_vocab, Vocabulary, CLS0, MASK, PAD, SEP};
