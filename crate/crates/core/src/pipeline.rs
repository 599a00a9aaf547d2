//! Turn normalization, tokenization and CoNLL-style corpus I/O.
//!
//! Transcripts arrive lowercase and digit-free; normalization mirrors the
//! upstream sentencizer (capitalize the first letter, terminal period).

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{spans_to_tags, tags_to_spans, validate_spans, EntitySpan, Tag, TagScheme};

pub const REDACTED_TOKEN: &str = "[redacted]";

/// One speaker's contiguous utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: String,
    pub raw_text: String,
    pub tokens: Vec<String>,
    pub gold_spans: Option<Vec<EntitySpan>>,
}

impl Turn {
    pub fn new(
        speaker: impl Into<String>,
        raw_text: impl Into<String>,
        tokens: Vec<String>,
        gold_spans: Option<Vec<EntitySpan>>,
    ) -> Result<Self> {
        for tok in &tokens {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::data(format!("bad token {tok:?}")));
            }
        }
        if let Some(spans) = &gold_spans {
            validate_spans(spans, tokens.len())?;
        }
        Ok(Turn {
            speaker: speaker.into(),
            raw_text: raw_text.into(),
            tokens,
            gold_spans,
        })
    }

    /// Normalizes and tokenizes raw text into a turn in one step.
    pub fn from_raw(speaker: impl Into<String>, raw: &str) -> Result<Self> {
        let normalized = normalize_turn(raw)?;
        let tokens = tokenize(&normalized);
        Turn::new(speaker, normalized, tokens, None)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => f.write_str("train"),
            Split::Validation => f.write_str("validation"),
            Split::Test => f.write_str("test"),
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::config("split", format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub split: Split,
    pub turns: Vec<Turn>,
}

impl Corpus {
    pub fn new(split: Split, turns: Vec<Turn>) -> Self {
        Corpus { split, turns }
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }
}

/// Normalizes a raw turn: lowercase, collapse whitespace, uppercase the
/// first alphabetic character, append a terminal period when missing.
/// Digits are rejected outright; the transcript source never emits them.
pub fn normalize_turn(raw: &str) -> Result<String> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(Error::data("empty turn".to_string()));
    }
    for word in trimmed.split_whitespace() {
        if word.chars().any(|c| c.is_ascii_digit()) {
            return Err(Error::data(format!("digit in token {word:?}")));
        }
    }
    let collapsed = trimmed
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    // Capitalization only fires when the turn opens with a letter; a turn
    // opening with a bracketed token stays untouched.
    let mut out = String::with_capacity(collapsed.len() + 1);
    let mut chars = collapsed.chars();
    match chars.next() {
        Some(first) if first.is_alphabetic() => out.extend(first.to_uppercase()),
        Some(first) => out.push(first),
        None => {}
    }
    out.extend(chars);
    if !out.ends_with('.') {
        out.push('.');
    }
    Ok(out)
}

/// Whitespace tokenization with two extra rules: a terminal "." becomes its
/// own token, and the literal `[redacted]` token stays atomic.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens: Vec<String> = Vec::new();
    let words: Vec<&str> = text.split_whitespace().collect();
    for (i, word) in words.iter().enumerate() {
        let terminal = i == words.len() - 1;
        if terminal && word.len() > 1 && word.ends_with('.') && *word != REDACTED_TOKEN {
            tokens.push(word[..word.len() - 1].to_string());
            tokens.push(".".to_string());
        } else {
            tokens.push(word.to_string());
        }
    }
    tokens
}

/// Reads a two-column CoNLL file (`token<TAB>tag`, blank line between
/// turns, optional `# speaker=<label>` line). Tags are stored as BIO on
/// disk; gold spans are reconstructed from them.
pub fn read_conll(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_conll(&content, path)
}

pub fn parse_conll(content: &str, path: &Path) -> Result<Corpus> {
    let mut turns = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    let mut tags: Vec<Tag> = Vec::new();
    let mut speaker = String::new();

    let mut flush = |tokens: &mut Vec<String>,
                     tags: &mut Vec<Tag>,
                     speaker: &mut String,
                     line_no: usize|
     -> Result<()> {
        if tokens.is_empty() {
            return Ok(());
        }
        let seq = crate::schema::repair_tags(tags, TagScheme::Bio);
        if seq.tags != *tags {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: "ill-formed BIO tag sequence".to_string(),
            });
        }
        let spans = tags_to_spans(&seq);
        let raw = detokenize(tokens);
        let turn = Turn::new(std::mem::take(speaker), raw, std::mem::take(tokens), Some(spans))?;
        tags.clear();
        turns.push(turn);
        Ok(())
    };

    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            flush(&mut tokens, &mut tags, &mut speaker, line_no)?;
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(label) = rest.trim().strip_prefix("speaker=") {
                speaker = label.to_string();
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("expected 2 tab-separated fields, found {}", fields.len()),
            });
        }
        let tag: Tag = fields[1].parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: format!("unknown tag symbol `{}`", fields[1]),
        })?;
        if !tag.in_scheme(TagScheme::Bio) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("tag `{tag}` not in the BIO alphabet"),
            });
        }
        tokens.push(fields[0].to_string());
        tags.push(tag);
    }
    flush(&mut tokens, &mut tags, &mut speaker, content.lines().count())?;

    let split = split_from_path(path);
    Ok(Corpus::new(split, turns))
}

fn split_from_path(path: &Path) -> Split {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default();
    if stem.contains("validation") || stem.contains("valid") || stem.contains("dev") {
        Split::Validation
    } else if stem.contains("test") {
        Split::Test
    } else {
        Split::Train
    }
}

/// Writes a corpus in the on-disk BIO CoNLL form read by `read_conll`.
pub fn write_conll(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for turn in &corpus.turns {
        if !turn.speaker.is_empty() {
            out.push_str(&format!("# speaker={}\n", turn.speaker));
        }
        let spans = turn.gold_spans.clone().unwrap_or_default();
        let seq = spans_to_tags(turn.tokens.len(), &spans, TagScheme::Bio)?;
        for (token, tag) in turn.tokens.iter().zip(&seq.tags) {
            out.push_str(&format!("{token}\t{tag}\n"));
        }
        out.push('\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Joins tokens with single spaces, re-attaching a terminal "." token.
pub fn detokenize(tokens: &[String]) -> String {
    let mut out = String::new();
    for (i, tok) in tokens.iter().enumerate() {
        let terminal_period = tok == "." && i == tokens.len() - 1;
        if !out.is_empty() && !terminal_period {
            out.push(' ');
        }
        out.push_str(tok);
    }
    out
}
