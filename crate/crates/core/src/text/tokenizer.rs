//! Tokenizers: a deterministic byte-level toy tokenizer for tests and a
//! byte-level BPE reader for real checkpoint tokenizer files.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TextError;

/// Master symbol table for the toy tokenizer. A toy tokenizer built with
/// vocab size `v` maps the first `v - 2` symbols (ids 0 and 1 are reserved
/// for pad and EOS). Lowercase text and basic punctuation come first so that
/// small vocabularies still cover ordinary prompt text.
pub const TOY_ALPHABET: &str =
    " abcdefghijklmnopqrstuvwxyz.,!?'ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789<|>_-:;\"()/+=*&^%$#@~[]{}\n";

pub const TOY_PAD_ID: u32 = 0;
pub const TOY_EOS_ID: u32 = 1;

/// Byte-level toy tokenizer: one id per printable symbol, no merges.
/// Id 0 is the pad token, id 1 is EOS, ids 2.. map symbols of
/// [`TOY_ALPHABET`] in order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyTokenizer {
    alphabet: String,
    #[serde(skip)]
    lookup: std::sync::OnceLock<HashMap<char, u32>>,
}

impl ToyTokenizer {
    /// Build a toy tokenizer whose alphabet is the largest prefix of
    /// [`TOY_ALPHABET`] that fits in `vocab_size` (two ids are reserved).
    pub fn new(vocab_size: usize) -> Self {
        let n_symbols = vocab_size.saturating_sub(2).min(TOY_ALPHABET.chars().count());
        let alphabet: String = TOY_ALPHABET.chars().take(n_symbols).collect();
        ToyTokenizer { alphabet, lookup: std::sync::OnceLock::new() }
    }

    pub fn from_alphabet(alphabet: String) -> Self {
        ToyTokenizer { alphabet, lookup: std::sync::OnceLock::new() }
    }

    pub fn alphabet(&self) -> &str {
        &self.alphabet
    }

    fn lookup(&self) -> &HashMap<char, u32> {
        self.lookup.get_or_init(|| {
            self.alphabet
                .chars()
                .enumerate()
                .map(|(i, c)| (c, i as u32 + 2))
                .collect()
        })
    }

    pub fn vocab_len(&self) -> usize {
        self.alphabet.chars().count() + 2
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u32>, TextError> {
        text.chars()
            .enumerate()
            .map(|(offset, symbol)| {
                self.lookup()
                    .get(&symbol)
                    .copied()
                    .ok_or(TextError::UnmappableSymbol { symbol, offset })
            })
            .collect()
    }

    pub fn token_label(&self, id: u32) -> String {
        match id {
            TOY_PAD_ID => "<pad>".to_string(),
            TOY_EOS_ID => "<eos>".to_string(),
            _ => self
                .alphabet
                .chars()
                .nth(id as usize - 2)
                .map(|c| c.to_string())
                .unwrap_or_else(|| format!("<{id}>")),
        }
    }
}

/// Byte-level BPE tokenizer loaded from a `tokenizer.json`-style definition
/// (vocab + merges + added tokens). Pre-tokenization is reduced to splitting
/// on added special tokens; merges are applied greedily by rank over each
/// remaining segment.
#[derive(Debug, Clone)]
pub struct BpeTokenizer {
    vocab: HashMap<String, u32>,
    merge_ranks: HashMap<(String, String), u32>,
    specials: Vec<(String, u32)>,
    byte_to_sym: [char; 256],
    pad_id: Option<u32>,
    eos_id: Option<u32>,
    id_to_token: HashMap<u32, String>,
    max_id: u32,
}

/// GPT-2 style printable remapping of raw bytes. Bytes that are printable
/// ASCII (minus space) map to themselves; everything else maps into a
/// contiguous range of Latin-1 supplement code points.
fn bytes_to_unicode() -> [char; 256] {
    let mut table = ['\0'; 256];
    let mut assigned = [false; 256];
    let keep: Vec<u8> = (b'!'..=b'~').chain(0xA1..=0xAC).chain(0xAE..=0xFF).collect();
    for &b in &keep {
        table[b as usize] = char::from_u32(b as u32).unwrap();
        assigned[b as usize] = true;
    }
    let mut next = 256u32;
    for b in 0..256usize {
        if !assigned[b] {
            table[b] = char::from_u32(next).unwrap();
            next += 1;
        }
    }
    table
}

#[derive(Deserialize)]
struct TokenizerFile {
    #[serde(default)]
    added_tokens: Vec<AddedToken>,
    model: BpeModelSection,
}

#[derive(Deserialize)]
struct AddedToken {
    id: u32,
    content: String,
}

#[derive(Deserialize)]
struct BpeModelSection {
    #[serde(default)]
    vocab: HashMap<String, u32>,
    #[serde(default)]
    merges: Vec<serde_json::Value>,
}

#[derive(Deserialize, Default)]
struct TokenizerConfigFile {
    #[serde(default)]
    pad_token: Option<serde_json::Value>,
    #[serde(default)]
    eos_token: Option<serde_json::Value>,
}

fn token_string(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Object(map) => {
            map.get("content").and_then(|c| c.as_str()).map(str::to_string)
        }
        _ => None,
    }
}

impl BpeTokenizer {
    /// Load from a tokenizer definition file. If a `tokenizer_config.json`
    /// exists next to it, pad/EOS token declarations are read from there.
    pub fn from_file(path: &Path) -> Result<Self, TextError> {
        let text = std::fs::read_to_string(path).map_err(|source| TextError::TokenizerFileRead {
            path: path.display().to_string(),
            source,
        })?;
        let parsed: TokenizerFile =
            serde_json::from_str(&text).map_err(|e| TextError::TokenizerFileParse {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;

        let mut vocab = parsed.model.vocab;
        let mut specials = Vec::new();
        for added in &parsed.added_tokens {
            vocab.entry(added.content.clone()).or_insert(added.id);
            specials.push((added.content.clone(), added.id));
        }
        // Longest-first so overlapping special markers split correctly.
        specials.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(&b.0)));

        let mut merge_ranks = HashMap::new();
        for (rank, merge) in parsed.model.merges.iter().enumerate() {
            let pair = match merge {
                serde_json::Value::String(s) => {
                    let mut it = s.splitn(2, ' ');
                    match (it.next(), it.next()) {
                        (Some(a), Some(b)) => Some((a.to_string(), b.to_string())),
                        _ => None,
                    }
                }
                serde_json::Value::Array(parts) if parts.len() == 2 => {
                    match (parts[0].as_str(), parts[1].as_str()) {
                        (Some(a), Some(b)) => Some((a.to_string(), b.to_string())),
                        _ => None,
                    }
                }
                _ => None,
            };
            let pair = pair.ok_or_else(|| TextError::TokenizerFileParse {
                path: path.display().to_string(),
                reason: format!("malformed merge entry at rank {rank}"),
            })?;
            merge_ranks.entry(pair).or_insert(rank as u32);
        }

        let mut pad_id = None;
        let mut eos_id = None;
        let config_path = path.with_file_name("tokenizer_config.json");
        if config_path.exists() {
            if let Ok(cfg_text) = std::fs::read_to_string(&config_path) {
                let cfg: TokenizerConfigFile = serde_json::from_str(&cfg_text).unwrap_or_default();
                pad_id = cfg
                    .pad_token
                    .as_ref()
                    .and_then(token_string)
                    .and_then(|t| vocab.get(&t).copied());
                eos_id = cfg
                    .eos_token
                    .as_ref()
                    .and_then(token_string)
                    .and_then(|t| vocab.get(&t).copied());
            }
        }

        let id_to_token: HashMap<u32, String> =
            vocab.iter().map(|(tok, &id)| (id, tok.clone())).collect();
        let max_id = vocab.values().copied().max().unwrap_or(0);

        Ok(BpeTokenizer {
            vocab,
            merge_ranks,
            specials,
            byte_to_sym: bytes_to_unicode(),
            pad_id,
            eos_id,
            id_to_token,
            max_id,
        })
    }

    pub fn vocab_len(&self) -> usize {
        self.max_id as usize + 1
    }

    fn encode_segment(&self, segment: &str) -> Result<Vec<u32>, TextError> {
        let mut symbols: Vec<String> = segment
            .bytes()
            .map(|b| self.byte_to_sym[b as usize].to_string())
            .collect();

        while symbols.len() > 1 {
            let mut best: Option<(u32, usize)> = None;
            for i in 0..symbols.len() - 1 {
                let key = (symbols[i].clone(), symbols[i + 1].clone());
                if let Some(&rank) = self.merge_ranks.get(&key) {
                    if best.map_or(true, |(r, _)| rank < r) {
                        best = Some((rank, i));
                    }
                }
            }
            let Some((_, i)) = best else { break };
            let merged = format!("{}{}", symbols[i], symbols[i + 1]);
            symbols[i] = merged;
            symbols.remove(i + 1);
        }

        symbols
            .into_iter()
            .map(|sym| {
                self.vocab
                    .get(&sym)
                    .copied()
                    .ok_or(TextError::UnknownToken { token: sym })
            })
            .collect()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u32>, TextError> {
        let mut ids = Vec::new();
        let mut rest = text;
        while !rest.is_empty() {
            // Earliest special wins; `specials` is sorted longest-first so a
            // tie at the same offset picks the longest marker.
            let mut hit: Option<(usize, usize, u32)> = None;
            for (special, id) in &self.specials {
                if let Some(pos) = rest.find(special.as_str()) {
                    if hit.map_or(true, |(p, _, _)| pos < p) {
                        hit = Some((pos, special.len(), *id));
                    }
                }
            }
            match hit {
                Some((pos, len, id)) => {
                    if pos > 0 {
                        ids.extend(self.encode_segment(&rest[..pos])?);
                    }
                    ids.push(id);
                    rest = &rest[pos + len..];
                }
                None => {
                    ids.extend(self.encode_segment(rest)?);
                    rest = "";
                }
            }
        }
        Ok(ids)
    }

    pub fn token_label(&self, id: u32) -> String {
        self.id_to_token
            .get(&id)
            .cloned()
            .unwrap_or_else(|| format!("<{id}>"))
    }
}

/// Tokenizer handle stored inside a model bundle.
#[derive(Debug, Clone)]
pub enum Tokenizer {
    Toy(ToyTokenizer),
    Bpe(BpeTokenizer),
}

impl Tokenizer {
    pub fn encode(&self, text: &str) -> Result<Vec<u32>, TextError> {
        match self {
            Tokenizer::Toy(t) => t.encode(text),
            Tokenizer::Bpe(t) => t.encode(text),
        }
    }

    pub fn vocab_len(&self) -> usize {
        match self {
            Tokenizer::Toy(t) => t.vocab_len(),
            Tokenizer::Bpe(t) => t.vocab_len(),
        }
    }

    pub fn pad_id(&self) -> Option<u32> {
        match self {
            Tokenizer::Toy(_) => Some(TOY_PAD_ID),
            Tokenizer::Bpe(t) => t.pad_id,
        }
    }

    pub fn eos_id(&self) -> Option<u32> {
        match self {
            Tokenizer::Toy(_) => Some(TOY_EOS_ID),
            Tokenizer::Bpe(t) => t.eos_id,
        }
    }

    /// Pad id with EOS fallback, used when aligning prompt pairs.
    pub fn pad_or_eos(&self) -> Result<u32, TextError> {
        self.pad_id().or_else(|| self.eos_id()).ok_or(TextError::NoPadToken)
    }

    /// Human-readable label for heatmap axes and debugging.
    pub fn token_label(&self, id: u32) -> String {
        match self {
            Tokenizer::Toy(t) => t.token_label(id),
            Tokenizer::Bpe(t) => t.token_label(id),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_encodes_bytes_one_to_one() {
        let tok = ToyTokenizer::new(64);
        let ids = tok.encode("ab").unwrap();
        // 'a' is the second alphabet symbol, ids start at 2.
        assert_eq!(ids, vec![3, 4]);
    }

    #[test]
    fn toy_encoding_is_deterministic() {
        let tok = ToyTokenizer::new(64);
        assert_eq!(tok.encode("hello world.").unwrap(), tok.encode("hello world.").unwrap());
    }

    #[test]
    fn toy_rejects_unmappable_symbols() {
        let tok = ToyTokenizer::new(64);
        let err = tok.encode("naïve").unwrap_err();
        match err {
            TextError::UnmappableSymbol { symbol, offset } => {
                assert_eq!(symbol, 'ï');
                assert_eq!(offset, 2);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn toy_small_vocab_truncates_alphabet() {
        let tok = ToyTokenizer::new(32);
        assert_eq!(tok.vocab_len(), 32);
        assert!(tok.encode("abc").is_ok());
        assert!(tok.encode("A").is_err());
    }

    #[test]
    fn toy_labels_round_trip() {
        let tok = ToyTokenizer::new(128);
        assert_eq!(tok.token_label(0), "<pad>");
        let ids = tok.encode("q").unwrap();
        assert_eq!(tok.token_label(ids[0]), "q");
    }

    fn tiny_bpe(dir: &Path) -> BpeTokenizer {
        // Vocabulary over plain ASCII symbols; merges build "ab" then "abc".
        let json = serde_json::json!({
            "added_tokens": [
                {"id": 100, "content": "<|sys|>", "special": true}
            ],
            "model": {
                "type": "BPE",
                "vocab": {"a": 0, "b": 1, "c": 2, "ab": 3, "abc": 4, " ": 5, "<|sys|>": 100},
                "merges": ["a b", "ab c"]
            }
        });
        let path = dir.join("tokenizer.json");
        std::fs::write(&path, serde_json::to_string(&json).unwrap()).unwrap();
        std::fs::write(
            dir.join("tokenizer_config.json"),
            r#"{"eos_token": "<|sys|>"}"#,
        )
        .unwrap();
        BpeTokenizer::from_file(&path).unwrap()
    }

    #[test]
    fn bpe_applies_merges_by_rank() {
        let dir = tempfile::tempdir().unwrap();
        let tok = tiny_bpe(dir.path());
        assert_eq!(tok.encode("abc").unwrap(), vec![4]);
        assert_eq!(tok.encode("abab").unwrap(), vec![3, 3]);
        assert_eq!(tok.encode("cba").unwrap(), vec![2, 1, 0]);
    }

    #[test]
    fn bpe_splits_on_special_tokens() {
        let dir = tempfile::tempdir().unwrap();
        let tok = tiny_bpe(dir.path());
        assert_eq!(tok.encode("a<|sys|>b").unwrap(), vec![0, 100, 1]);
        assert_eq!(tok.eos_id, Some(100));
        assert_eq!(tok.pad_id, None);
    }

    #[test]
    fn bpe_reports_unknown_symbols() {
        let dir = tempfile::tempdir().unwrap();
        let tok = tiny_bpe(dir.path());
        assert!(matches!(tok.encode("z").unwrap_err(), TextError::UnknownToken { .. }));
    }
}
