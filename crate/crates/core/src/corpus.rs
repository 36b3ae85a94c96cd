//! Prompt-pair corpus: loading, validation, and id-aligned access.
//!
//! The corpus file holds one JSON record per line with fields
//! (id, condition, domain, clean, corrupted). For every id there must be a
//! good_news and a negative_control record sharing an identical corrupted
//! text (the shared baseline) and an identical domain. Neutral steering
//! prompts live in a sibling `neutral_prompts.txt` (one per line); an
//! optional sibling `outcome_lexicon.txt` lists outcome words that neutral
//! prompts must not contain.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{Condition, Domain};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const NEUTRAL_FILE: &str = "neutral_prompts.txt";
pub const LEXICON_FILE: &str = "outcome_lexicon.txt";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {path}:{line}: {reason}")]
    Parse { path: String, line: usize, reason: String },
    #[error("duplicate record for id {id}, condition {condition}")]
    DuplicateRecord { id: u32, condition: Condition },
    #[error("id {id} is missing its {condition} record")]
    MissingCondition { id: u32, condition: Condition },
    #[error("id {id} violates the shared corrupted baseline: the two conditions disagree")]
    SharedBaselineViolation { id: u32 },
    #[error("id {id} has different domains across conditions")]
    DomainMismatch { id: u32 },
    #[error("id {id} has an empty `{field}` field")]
    EmptyField { id: u32, field: &'static str },
    #[error("id {id} has identical clean and corrupted text")]
    CleanEqualsCorrupted { id: u32 },
    #[error("neutral prompt {index} contains outcome word {word:?}")]
    NeutralOutcomeWord { index: usize, word: String },
    #[error("neutral prompt {index} is empty")]
    EmptyNeutralPrompt { index: usize },
}

/// One clean/corrupted text pair: the experimental unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPair {
    pub id: u32,
    pub condition: Condition,
    pub domain: Domain,
    pub clean: String,
    pub corrupted: String,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub pairs: Vec<PromptPair>,
    pub neutral_prompts: Vec<String>,
}

impl Corpus {
    pub fn ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.pairs.iter().map(|p| p.id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn pairs_for(&self, condition: Condition) -> Vec<&PromptPair> {
        let mut v: Vec<&PromptPair> =
            self.pairs.iter().filter(|p| p.condition == condition).collect();
        v.sort_by_key(|p| p.id);
        v
    }
}

fn validate(pairs: &[PromptPair], neutral: &[String], lexicon: &[String]) -> Result<(), CorpusError> {
    let mut by_id: BTreeMap<u32, BTreeMap<Condition, &PromptPair>> = BTreeMap::new();
    for pair in pairs {
        if pair.clean.trim().is_empty() {
            return Err(CorpusError::EmptyField { id: pair.id, field: "clean" });
        }
        if pair.corrupted.trim().is_empty() {
            return Err(CorpusError::EmptyField { id: pair.id, field: "corrupted" });
        }
        if pair.clean == pair.corrupted {
            return Err(CorpusError::CleanEqualsCorrupted { id: pair.id });
        }
        let slot = by_id.entry(pair.id).or_default();
        if slot.insert(pair.condition, pair).is_some() {
            return Err(CorpusError::DuplicateRecord { id: pair.id, condition: pair.condition });
        }
    }
    for (&id, conditions) in &by_id {
        let good = conditions
            .get(&Condition::GoodNews)
            .ok_or(CorpusError::MissingCondition { id, condition: Condition::GoodNews })?;
        let neg = conditions
            .get(&Condition::NegativeControl)
            .ok_or(CorpusError::MissingCondition { id, condition: Condition::NegativeControl })?;
        if good.corrupted != neg.corrupted {
            return Err(CorpusError::SharedBaselineViolation { id });
        }
        if good.domain != neg.domain {
            return Err(CorpusError::DomainMismatch { id });
        }
    }
    for (index, prompt) in neutral.iter().enumerate() {
        if prompt.trim().is_empty() {
            return Err(CorpusError::EmptyNeutralPrompt { index });
        }
        let lowered = prompt.to_lowercase();
        let words: Vec<&str> = lowered
            .split(|c: char| !c.is_alphanumeric() && c != '\'')
            .filter(|w| !w.is_empty())
            .collect();
        for lex in lexicon {
            if words.iter().any(|w| *w == lex.as_str()) {
                return Err(CorpusError::NeutralOutcomeWord { index, word: lex.clone() });
            }
        }
    }
    Ok(())
}

/// Resolve `path` to (corpus file, neutral file, lexicon file). `path` may
/// be the corpus file itself or a directory holding the standard file names.
fn resolve_paths(path: &Path) -> (PathBuf, PathBuf, PathBuf) {
    if path.is_dir() {
        (path.join(CORPUS_FILE), path.join(NEUTRAL_FILE), path.join(LEXICON_FILE))
    } else {
        let parent = path.parent().map(Path::to_path_buf).unwrap_or_default();
        (path.to_path_buf(), parent.join(NEUTRAL_FILE), parent.join(LEXICON_FILE))
    }
}

/// Load and fully validate a corpus. Validation failures name the offending
/// id and rule.
pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let (corpus_path, neutral_path, lexicon_path) = resolve_paths(path);

    let text = std::fs::read_to_string(&corpus_path)
        .map_err(|e| CorpusError::Io { path: corpus_path.display().to_string(), source: e })?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let pair: PromptPair = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
            path: corpus_path.display().to_string(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        pairs.push(pair);
    }

    let neutral_prompts = if neutral_path.exists() {
        let text = std::fs::read_to_string(&neutral_path)
            .map_err(|e| CorpusError::Io { path: neutral_path.display().to_string(), source: e })?;
        text.lines().map(str::to_string).filter(|l| !l.trim().is_empty()).collect()
    } else {
        Vec::new()
    };

    let lexicon = if lexicon_path.exists() {
        let text = std::fs::read_to_string(&lexicon_path)
            .map_err(|e| CorpusError::Io { path: lexicon_path.display().to_string(), source: e })?;
        text.lines()
            .map(|l| l.trim().to_lowercase())
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    } else {
        Vec::new()
    };

    validate(&pairs, &neutral_prompts, &lexicon)?;
    Ok(Corpus { pairs, neutral_prompts })
}

/// Write a corpus back out in the canonical layout (records sorted by id,
/// good_news before negative_control).
pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<(), CorpusError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CorpusError::Io { path: dir.display().to_string(), source: e })?;
    let mut pairs = corpus.pairs.clone();
    pairs.sort_by_key(|p| (p.id, p.condition));
    let mut out = String::new();
    for pair in &pairs {
        out.push_str(&serde_json::to_string(pair).expect("prompt pairs serialize"));
        out.push('\n');
    }
    let corpus_path = dir.join(CORPUS_FILE);
    std::fs::write(&corpus_path, out)
        .map_err(|e| CorpusError::Io { path: corpus_path.display().to_string(), source: e })?;
    let neutral_path = dir.join(NEUTRAL_FILE);
    let mut neutral = corpus.neutral_prompts.join("\n");
    if !neutral.is_empty() {
        neutral.push('\n');
    }
    std::fs::write(&neutral_path, neutral)
        .map_err(|e| CorpusError::Io { path: neutral_path.display().to_string(), source: e })?;
    Ok(())
}

/// One (good_news, negative_control) tuple per id, ordered by id. The
/// validated corpus guarantees both records exist and share a baseline.
pub fn align_by_id(corpus: &Corpus) -> Vec<(&PromptPair, &PromptPair)> {
    let mut by_id: BTreeMap<u32, (Option<&PromptPair>, Option<&PromptPair>)> = BTreeMap::new();
    for pair in &corpus.pairs {
        let slot = by_id.entry(pair.id).or_default();
        match pair.condition {
            Condition::GoodNews => slot.0 = Some(pair),
            Condition::NegativeControl => slot.1 = Some(pair),
        }
    }
    by_id
        .into_values()
        .filter_map(|(good, neg)| Some((good?, neg?)))
        .collect()
}
