//! Tokenization, chat templating, pair padding, and anchor resolution.

mod anchors;
mod pair;
mod template;
mod tokenizer;

pub use anchors::resolve_anchors;
pub use pair::{pad_pair, tokenize_pair, TokenizedPair};
pub use template::{ChatTemplate, TemplateId, DEFAULT_SYSTEM_PROMPT};
pub use tokenizer::{BpeTokenizer, Tokenizer, ToyTokenizer, TOY_ALPHABET};

use crate::model::ModelBundle;
use thiserror::Error;

/// Render `user_text` through the chat template and tokenize with the
/// bundle's tokenizer. The resulting sequence ends at the position where the
/// assistant's next token would be predicted.
pub fn render_and_tokenize(
    bundle: &ModelBundle,
    template: &ChatTemplate,
    user_text: &str,
) -> Result<Vec<u32>, TextError> {
    bundle.tokenizer().encode(&template.render(user_text))
}

#[derive(Debug, Error)]
pub enum TextError {
    #[error("symbol {symbol:?} at char offset {offset} is not in the toy tokenizer alphabet")]
    UnmappableSymbol { symbol: char, offset: usize },
    #[error("cannot pad an empty token sequence")]
    EmptySequence,
    #[error("tokenizer declares neither a pad token nor an EOS fallback")]
    NoPadToken,
    #[error("no {side} anchor resolves to a single token under this tokenizer")]
    NoValidAnchors { side: &'static str },
    #[error("failed to read tokenizer file {path}: {source}")]
    TokenizerFileRead {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse tokenizer file {path}: {reason}")]
    TokenizerFileParse { path: String, reason: String },
    #[error("token {token:?} is not in the vocabulary")]
    UnknownToken { token: String },
}
