//! SNLI ingestion and feature preparation.

pub mod batch;
pub mod embeddings;
pub mod features;
pub mod parse;
pub mod snli;
pub mod vocab;

pub use batch::{build_batch, Batch, SideBatch};
pub use embeddings::{load_embeddings, EmbeddingTable};
pub use features::{featurize, featurize_all, featurize_frozen, ProcessedExample, SentenceFeatures, MAX_WORD_CHARS};
pub use parse::{extract_pos, Leaf};
pub use snli::{parse_snli_line, read_snli_jsonl, Label, RawExample, ReadStats};
pub use vocab::{Index, Vocab, PAD, UNK};
