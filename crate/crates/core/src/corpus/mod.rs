//! Corpus model, loaders, the base-corpus generator and shortcut injection.

mod data;
mod generate;
mod inject;
mod vocab;

pub use data::{
    decode_text, encode_text, load_corpus, read_examples, tokenize, write_examples, Corpus,
    CorpusFormat, Example, Provenance, Split,
};
pub use generate::{generate_base_corpus, GeneratorConfig};
pub use inject::{
    inject_distractor, inject_shortcuts, make_synthetic_example, make_synthetic_pair,
    make_synthetic_with_label, InjectionConfig, ShortcutKind, ShortcutSpec, ShortcutTokens,
};
pub use vocab::{SpecialToken, TokenId, Vocab, SPECIAL_TOKENS};
