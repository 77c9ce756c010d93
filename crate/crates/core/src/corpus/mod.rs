//! Mention records, vocabularies, context windows and a synthetic corpus
//! generator.

use std::path::PathBuf;

use thiserror::Error;

mod record;
pub mod synth;
mod vocab;
mod window;

pub use record::{auto_annotate, load_jsonl, parse_jsonl, write_jsonl, MentionRecord, RawRecord, RecordError};
pub use synth::{synth_corpus, SynthConfig, SynthCorpus, SynthError, TypMode};
pub use vocab::{build_vocab, load_embeddings, lookup, Channel, IdMap, Pretrained, Vocab, PAD, PAD_TOKEN, UNK, UNK_TOKEN};
pub use window::{window, window_positions, Slot, WindowPositions, WindowedExample, MAX_MENTION_LEN};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {kind}")]
    Record { line: usize, kind: RecordError },
    #[error("embeddings line {line}: expected {expected} values, found {found}")]
    EmbeddingDim { line: usize, expected: usize, found: usize },
    #[error("embeddings line {line}: unparsable value")]
    EmbeddingParse { line: usize },
    #[error("corpus has no tokens")]
    EmptyCorpus,
}
