//! Corpus and model persistence plus the synthetic corpus generator.

pub mod columns;
pub mod container;
pub mod corpus;
pub mod standoff;
pub mod synth;

pub use columns::{format_token_columns, parse_token_columns, parse_token_columns_str, write_token_columns, ColumnSentence};
pub use container::{ModelContainer, NamedTensor, FORMAT_VERSION, MAGIC};
pub use corpus::{
    tokenize, AnnotatedCorpus, KeyPhrase, LexiconTagger, RelationInstance, Schema, Sentence, Token,
    DEFAULT_CLASSES, DEFAULT_RELATIONS, UNKNOWN_POS,
};
pub use standoff::{
    format_annotations, load_corpus, parse_annotations_against, parse_annotations_against_str, parse_standoff, parse_standoff_str,
    write_corpus, write_standoff, CorpusPaths, WriteOptions, CORPUS_STEM,
};
pub use synth::{generate_synthetic, RelationBinding, SynthGrammar, Template};
