//! Tokenization and fixed-size chunking of input documents.

mod chunk;
mod corpus;
mod tokenize;

pub use chunk::{chunk, n_chunks, Chunk};
pub use corpus::{load_corpus, load_jsonl, CorpusRecord};
pub use tokenize::{split_words, TokenSequence, Tokenizer, Vocabulary, DEFAULT_VOCAB_SIZE};
