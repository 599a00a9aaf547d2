//! Placeholder substitution over predicted spans, and fail-closed
//! redaction of whole corpora.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{detokenize, Corpus};
use crate::provider::EmbeddingProvider;
use crate::schema::{tags_to_spans, validate_spans, EntitySpan, EntityType};
use crate::tagger::train::decode_turn;
use crate::tagger::TaggerParams;

/// Emitted in place of a turn whose redaction could not be completed.
pub const REDACTION_FAILED: &str = "[REDACTION-FAILED]";

/// Entity type to placeholder string, e.g. NUMBERS -> "[NUMBER]".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, transparent)]
pub struct PlaceholderMap {
    pub placeholders: BTreeMap<EntityType, String>,
}

impl Default for PlaceholderMap {
    fn default() -> Self {
        use EntityType::*;
        let placeholders = [
            (Numbers, "[NUMBER]"),
            (Name, "[NAME]"),
            (Company, "[COMPANY]"),
            (Address, "[ADDRESS]"),
            (Email, "[EMAIL]"),
            (Spelling, "[SPELLING]"),
        ]
        .into_iter()
        .map(|(t, p)| (t, p.to_string()))
        .collect();
        PlaceholderMap { placeholders }
    }
}

impl PlaceholderMap {
    /// Every entity type must map to a non-empty bracketed placeholder.
    pub fn validate(&self) -> Result<()> {
        for ty in EntityType::ALL {
            match self.placeholders.get(&ty) {
                None => {
                    return Err(Error::config(
                        "placeholders",
                        format!("missing placeholder for {ty}"),
                    ))
                }
                Some(p) if p.len() < 3 || !p.starts_with('[') || !p.ends_with(']') => {
                    return Err(Error::config(
                        "placeholders",
                        format!("placeholder for {ty} must be bracketed and non-empty, got {p:?}"),
                    ))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    pub fn get(&self, ty: EntityType) -> &str {
        &self.placeholders[&ty]
    }
}

/// Merges adjacent spans of the same type (end of one == start of next)
/// into a single span. Input must already be sorted and disjoint.
fn merge_adjacent(spans: &[EntitySpan]) -> Vec<EntitySpan> {
    let mut merged: Vec<EntitySpan> = Vec::with_capacity(spans.len());
    for span in spans {
        match merged.last_mut() {
            Some(prev) if prev.entity_type == span.entity_type && prev.end == span.start => {
                prev.end = span.end;
            }
            _ => merged.push(span.clone()),
        }
    }
    merged
}

/// Replaces each span's tokens with one placeholder and rejoins the turn.
/// Adjacent same-type spans collapse to a single placeholder first.
pub fn redact(tokens: &[String], spans: &[EntitySpan], map: &PlaceholderMap) -> Result<String> {
    map.validate()?;
    validate_spans(spans, tokens.len())?;
    let merged = merge_adjacent(spans);
    let mut out: Vec<String> = Vec::with_capacity(tokens.len());
    let mut pos = 0usize;
    for span in &merged {
        out.extend(tokens[pos..span.start].iter().cloned());
        out.push(map.get(span.entity_type).to_string());
        pos = span.end;
    }
    out.extend(tokens[pos..].iter().cloned());
    Ok(detokenize(&out))
}

/// One redacted line per input turn, in corpus order. A turn that fails at
/// any stage (embedding, decoding, substitution) contributes the
/// [REDACTION-FAILED] sentinel instead of partially redacted text.
pub fn redact_corpus(
    params: &TaggerParams,
    provider: &mut dyn EmbeddingProvider,
    corpus: &Corpus,
    map: &PlaceholderMap,
) -> Vec<String> {
    provider.reset();
    corpus
        .turns
        .iter()
        .map(|turn| {
            redact_turn(params, provider, &turn.tokens, map)
                .unwrap_or_else(|_| REDACTION_FAILED.to_string())
        })
        .collect()
}

fn redact_turn(
    params: &TaggerParams,
    provider: &mut dyn EmbeddingProvider,
    tokens: &[String],
    map: &PlaceholderMap,
) -> Result<String> {
    let vectors = provider.embed_turn(tokens)?;
    let tags = decode_turn(params, &vectors)?;
    let spans = tags_to_spans(&tags);
    redact(tokens, &spans, map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use EntityType::*;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn single_span_substitution() {
        let tokens = toks(&["this", "is", "sam", "smith", "speaking", "."]);
        let spans = vec![EntitySpan::new(Name, 2, 4)];
        assert_eq!(
            redact(&tokens, &spans, &PlaceholderMap::default()).unwrap(),
            "this is [NAME] speaking."
        );
    }

    #[test]
    fn numbers_placeholder_is_singular() {
        let tokens = toks(&["reference", "five", "five", "nine", "."]);
        let spans = vec![EntitySpan::new(Numbers, 1, 4)];
        assert_eq!(
            redact(&tokens, &spans, &PlaceholderMap::default()).unwrap(),
            "reference [NUMBER]."
        );
    }

    #[test]
    fn adjacent_same_type_spans_collapse() {
        let tokens = toks(&["five", "five", "nine", "one", "."]);
        let spans = vec![
            EntitySpan::new(Numbers, 0, 2),
            EntitySpan::new(Numbers, 2, 4),
        ];
        assert_eq!(
            redact(&tokens, &spans, &PlaceholderMap::default()).unwrap(),
            "[NUMBER]."
        );
    }

    #[test]
    fn adjacent_different_types_stay_separate() {
        let tokens = toks(&["sam", "smith", "acme", "corp", "."]);
        let spans = vec![
            EntitySpan::new(Name, 0, 2),
            EntitySpan::new(Company, 2, 4),
        ];
        assert_eq!(
            redact(&tokens, &spans, &PlaceholderMap::default()).unwrap(),
            "[NAME] [COMPANY]."
        );
    }

    #[test]
    fn empty_span_list_round_trips_text() {
        let tokens = toks(&["hello", "there", "."]);
        assert_eq!(
            redact(&tokens, &[], &PlaceholderMap::default()).unwrap(),
            "hello there."
        );
    }

    #[test]
    fn out_of_range_span_is_rejected() {
        let tokens = toks(&["one", "."]);
        let spans = vec![EntitySpan::new(Name, 0, 5)];
        assert!(redact(&tokens, &spans, &PlaceholderMap::default()).is_err());
    }

    #[test]
    fn custom_placeholders_must_be_bracketed() {
        let mut map = PlaceholderMap::default();
        map.placeholders.insert(Name, "PERSON".into());
        assert!(map.validate().is_err());
        map.placeholders.insert(Name, "[PERSON]".into());
        assert!(map.validate().is_ok());
        let tokens = toks(&["hi", "sam", "."]);
        let spans = vec![EntitySpan::new(Name, 1, 2)];
        assert_eq!(redact(&tokens, &spans, &map).unwrap(), "hi [PERSON].");
    }

    #[test]
    fn missing_placeholder_is_a_config_error() {
        let mut map = PlaceholderMap::default();
        map.placeholders.remove(&Email);
        assert!(map.validate().is_err());
    }
}
