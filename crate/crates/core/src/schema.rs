//! Entity types, token-indexed spans, tag schemes (BIO / BILOU / IO) and the
//! codecs between span and tag representations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The six NPI/PII entity categories. `O` is not an entity type, only a tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityType {
    Numbers,
    Name,
    Company,
    Address,
    Email,
    Spelling,
}

impl EntityType {
    pub const ALL: [EntityType; 6] = [
        EntityType::Numbers,
        EntityType::Name,
        EntityType::Company,
        EntityType::Address,
        EntityType::Email,
        EntityType::Spelling,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EntityType::Numbers => "NUMBERS",
            EntityType::Name => "NAME",
            EntityType::Company => "COMPANY",
            EntityType::Address => "ADDRESS",
            EntityType::Email => "EMAIL",
            EntityType::Spelling => "SPELLING",
        }
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "NUMBERS" => Ok(EntityType::Numbers),
            "NAME" => Ok(EntityType::Name),
            "COMPANY" => Ok(EntityType::Company),
            "ADDRESS" => Ok(EntityType::Address),
            "EMAIL" => Ok(EntityType::Email),
            "SPELLING" => Ok(EntityType::Spelling),
            other => Err(Error::UnknownTag(other.to_string())),
        }
    }
}

/// A typed half-open token span within one turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntitySpan {
    pub entity_type: EntityType,
    pub start: usize,
    pub end: usize,
}

impl EntitySpan {
    pub fn new(entity_type: EntityType, start: usize, end: usize) -> Self {
        assert!(start < end, "span start must precede end");
        EntitySpan {
            entity_type,
            start,
            end,
        }
    }
}

/// Validates that spans are non-empty, in-bounds and mutually disjoint
/// (one label per word). Span order does not matter.
pub fn validate_spans(spans: &[EntitySpan], num_tokens: usize) -> Result<()> {
    let mut sorted: Vec<&EntitySpan> = spans.iter().collect();
    sorted.sort_by_key(|s| (s.start, s.end));
    for span in &sorted {
        if span.start >= span.end {
            return Err(Error::OverlappingSpans(format!(
                "empty span {}..{}",
                span.start, span.end
            )));
        }
        if span.end > num_tokens {
            return Err(Error::SpanOutOfRange {
                start: span.start,
                end: span.end,
                len: num_tokens,
            });
        }
    }
    for pair in sorted.windows(2) {
        if pair[1].start < pair[0].end {
            return Err(Error::OverlappingSpans(format!(
                "{} {}..{} overlaps {} {}..{}",
                pair[0].entity_type,
                pair[0].start,
                pair[0].end,
                pair[1].entity_type,
                pair[1].start,
                pair[1].end
            )));
        }
    }
    Ok(())
}

/// Per-token entity encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TagScheme {
    Bio,
    Bilou,
    Io,
}

impl TagScheme {
    /// Size of the tag alphabet: O plus the per-type prefixed tags.
    pub fn alphabet_size(&self) -> usize {
        match self {
            TagScheme::Bio => 1 + 2 * EntityType::ALL.len(),
            TagScheme::Bilou => 1 + 4 * EntityType::ALL.len(),
            TagScheme::Io => 1 + EntityType::ALL.len(),
        }
    }

    /// The full tag alphabet in canonical order: O first, then per entity
    /// type in `EntityType::ALL` order, prefixes grouped per type.
    pub fn alphabet(&self) -> Vec<Tag> {
        let mut tags = vec![Tag::Outside];
        for ty in EntityType::ALL {
            match self {
                TagScheme::Bio => {
                    tags.push(Tag::Begin(ty));
                    tags.push(Tag::Inside(ty));
                }
                TagScheme::Bilou => {
                    tags.push(Tag::Begin(ty));
                    tags.push(Tag::Inside(ty));
                    tags.push(Tag::Last(ty));
                    tags.push(Tag::Unit(ty));
                }
                TagScheme::Io => {
                    tags.push(Tag::Inside(ty));
                }
            }
        }
        tags
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            TagScheme::Bio => "BIO",
            TagScheme::Bilou => "BILOU",
            TagScheme::Io => "IO",
        }
    }
}

impl fmt::Display for TagScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TagScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "BIO" => Ok(TagScheme::Bio),
            "BILOU" => Ok(TagScheme::Bilou),
            "IO" => Ok(TagScheme::Io),
            other => Err(Error::config("scheme", format!("unknown scheme `{other}`"))),
        }
    }
}

/// One tag symbol. Which variants are legal depends on the scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tag {
    Outside,
    Begin(EntityType),
    Inside(EntityType),
    Last(EntityType),
    Unit(EntityType),
}

impl Tag {
    pub fn entity_type(&self) -> Option<EntityType> {
        match self {
            Tag::Outside => None,
            Tag::Begin(t) | Tag::Inside(t) | Tag::Last(t) | Tag::Unit(t) => Some(*t),
        }
    }

    pub fn in_scheme(&self, scheme: TagScheme) -> bool {
        match (self, scheme) {
            (Tag::Outside, _) => true,
            (Tag::Begin(_) | Tag::Inside(_), TagScheme::Bio) => true,
            (_, TagScheme::Bilou) => true,
            (Tag::Inside(_), TagScheme::Io) => true,
            _ => false,
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::Outside => f.write_str("O"),
            Tag::Begin(t) => write!(f, "B-{t}"),
            Tag::Inside(t) => write!(f, "I-{t}"),
            Tag::Last(t) => write!(f, "L-{t}"),
            Tag::Unit(t) => write!(f, "U-{t}"),
        }
    }
}

impl FromStr for Tag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "O" {
            return Ok(Tag::Outside);
        }
        let (prefix, ty) = s
            .split_once('-')
            .ok_or_else(|| Error::UnknownTag(s.to_string()))?;
        let ty: EntityType = ty.parse()?;
        match prefix {
            "B" => Ok(Tag::Begin(ty)),
            "I" => Ok(Tag::Inside(ty)),
            "L" => Ok(Tag::Last(ty)),
            "U" => Ok(Tag::Unit(ty)),
            _ => Err(Error::UnknownTag(s.to_string())),
        }
    }
}

/// A validated per-token tag assignment under a declared scheme.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagSequence {
    pub scheme: TagScheme,
    pub tags: Vec<Tag>,
}

impl TagSequence {
    /// Wraps raw tags after checking alphabet membership and transition
    /// legality under the scheme.
    pub fn new(scheme: TagScheme, tags: Vec<Tag>) -> Result<Self> {
        let seq = TagSequence { scheme, tags };
        seq.validate()?;
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    fn validate(&self) -> Result<()> {
        for tag in &self.tags {
            if !tag.in_scheme(self.scheme) {
                return Err(Error::UnknownTag(format!(
                    "{tag} not in {} alphabet",
                    self.scheme
                )));
            }
        }
        let mut prev: Option<Tag> = None;
        for (i, tag) in self.tags.iter().enumerate() {
            if !legal_transition(self.scheme, prev, *tag) {
                return Err(Error::UnknownTag(format!(
                    "illegal transition into {tag} at position {i}"
                )));
            }
            prev = Some(*tag);
        }
        if let Some(last) = prev {
            if matches!(self.scheme, TagScheme::Bilou)
                && matches!(last, Tag::Begin(_) | Tag::Inside(_))
            {
                return Err(Error::UnknownTag(format!(
                    "sequence ends mid-entity with {last}"
                )));
            }
        }
        Ok(())
    }
}

fn legal_transition(scheme: TagScheme, prev: Option<Tag>, next: Tag) -> bool {
    let open = match prev {
        Some(Tag::Begin(t)) | Some(Tag::Inside(t)) => match scheme {
            // In BILOU, B/I leave an entity open; in BIO, I may extend B/I.
            TagScheme::Bilou => Some(t),
            TagScheme::Bio => Some(t),
            TagScheme::Io => None,
        },
        _ => None,
    };
    match scheme {
        TagScheme::Io => true,
        TagScheme::Bio => match next {
            Tag::Inside(t) => open == Some(t),
            _ => true,
        },
        TagScheme::Bilou => match next {
            Tag::Inside(t) | Tag::Last(t) => open == Some(t),
            // B/U/O may not interrupt an open entity.
            _ => open.is_none(),
        },
    }
}

/// Encodes spans as per-token tags. Tokens outside all spans carry O.
pub fn spans_to_tags(
    num_tokens: usize,
    spans: &[EntitySpan],
    scheme: TagScheme,
) -> Result<TagSequence> {
    validate_spans(spans, num_tokens)?;
    let mut tags = vec![Tag::Outside; num_tokens];
    for span in spans {
        let ty = span.entity_type;
        let len = span.end - span.start;
        for (offset, slot) in tags[span.start..span.end].iter_mut().enumerate() {
            *slot = match scheme {
                TagScheme::Io => Tag::Inside(ty),
                TagScheme::Bio => {
                    if offset == 0 {
                        Tag::Begin(ty)
                    } else {
                        Tag::Inside(ty)
                    }
                }
                TagScheme::Bilou => {
                    if len == 1 {
                        Tag::Unit(ty)
                    } else if offset == 0 {
                        Tag::Begin(ty)
                    } else if offset == len - 1 {
                        Tag::Last(ty)
                    } else {
                        Tag::Inside(ty)
                    }
                }
            };
        }
    }
    TagSequence::new(scheme, tags)
}

/// Decodes tags back to spans. Exact inverse of `spans_to_tags` for BIO and
/// BILOU; under IO adjacent same-type runs merge into one span.
pub fn tags_to_spans(tags: &TagSequence) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    let mut open: Option<(EntityType, usize)> = None;
    let close = |open: &mut Option<(EntityType, usize)>, end: usize, out: &mut Vec<EntitySpan>| {
        if let Some((ty, start)) = open.take() {
            out.push(EntitySpan::new(ty, start, end));
        }
    };
    for (i, tag) in tags.tags.iter().enumerate() {
        match *tag {
            Tag::Outside => close(&mut open, i, &mut spans),
            Tag::Unit(t) => {
                close(&mut open, i, &mut spans);
                spans.push(EntitySpan::new(t, i, i + 1));
            }
            Tag::Begin(t) => {
                close(&mut open, i, &mut spans);
                open = Some((t, i));
            }
            Tag::Inside(t) => match open {
                Some((ot, _)) if ot == t => {}
                _ => {
                    close(&mut open, i, &mut spans);
                    open = Some((t, i));
                }
            },
            Tag::Last(t) => match open {
                Some((ot, start)) if ot == t => {
                    spans.push(EntitySpan::new(t, start, i + 1));
                    open = None;
                }
                _ => {
                    close(&mut open, i, &mut spans);
                    spans.push(EntitySpan::new(t, i, i + 1));
                }
            },
        }
    }
    close(&mut open, tags.tags.len(), &mut spans);
    spans
}

/// Re-encodes a tag sequence under another scheme via the span form.
/// BIO to BILOU and back is lossless; conversion into IO is lossy.
pub fn convert_scheme(tags: &TagSequence, target: TagScheme) -> Result<TagSequence> {
    let spans = tags_to_spans(tags);
    spans_to_tags(tags.len(), &spans, target)
}

/// Minimal-edit repair of a possibly ill-formed raw tag list: orphan I/L
/// tags are promoted to B/U, a type switch mid-entity closes the previous
/// entity. Total over the scheme alphabet; valid input is a fixpoint.
pub fn repair_tags(raw: &[Tag], scheme: TagScheme) -> TagSequence {
    let mut tags = Vec::with_capacity(raw.len());
    // Type of the entity currently open (B or I seen, not yet closed).
    let mut open: Option<EntityType> = None;
    for (i, &tag) in raw.iter().enumerate() {
        let last_of_run = |ty: EntityType| {
            raw.get(i + 1)
                .map(|next| match next {
                    Tag::Inside(t) | Tag::Last(t) => *t != ty,
                    _ => true,
                })
                .unwrap_or(true)
        };
        let fixed = match (scheme, tag) {
            (TagScheme::Io, _) => tag,
            (TagScheme::Bio, Tag::Inside(t)) if open != Some(t) => Tag::Begin(t),
            (TagScheme::Bilou, Tag::Last(t)) if open != Some(t) => Tag::Unit(t),
            (TagScheme::Bilou, Tag::Inside(t)) if open != Some(t) => {
                // Orphan continuation: starts a fresh entity here.
                if last_of_run(t) {
                    Tag::Unit(t)
                } else {
                    Tag::Begin(t)
                }
            }
            (TagScheme::Bilou, Tag::Inside(t)) if last_of_run(t) => Tag::Last(t),
            (TagScheme::Bilou, Tag::Begin(t)) if last_of_run(t) => Tag::Unit(t),
            _ => tag,
        };
        open = match fixed {
            Tag::Begin(t) => Some(t),
            Tag::Inside(t) if scheme == TagScheme::Bio => Some(t),
            Tag::Inside(t) if scheme == TagScheme::Bilou => Some(t),
            _ => None,
        };
        tags.push(fixed);
    }
    TagSequence::new(scheme, tags).expect("repair produces a valid sequence")
}

#[cfg(test)]
mod tests {
    use super::*;
    use EntityType::*;

    fn tag(s: &str) -> Tag {
        s.parse().unwrap()
    }

    fn tags(symbols: &[&str]) -> Vec<Tag> {
        symbols.iter().map(|s| tag(s)).collect()
    }

    #[test]
    fn alphabet_sizes() {
        assert_eq!(TagScheme::Bio.alphabet_size(), 13);
        assert_eq!(TagScheme::Bilou.alphabet_size(), 25);
        assert_eq!(TagScheme::Io.alphabet_size(), 7);
        for scheme in [TagScheme::Bio, TagScheme::Bilou, TagScheme::Io] {
            assert_eq!(scheme.alphabet().len(), scheme.alphabet_size());
        }
    }

    #[test]
    fn spans_to_tags_bio() {
        let seq = spans_to_tags(5, &[EntitySpan::new(Name, 2, 4)], TagScheme::Bio).unwrap();
        assert_eq!(seq.tags, tags(&["O", "O", "B-NAME", "I-NAME", "O"]));
    }

    #[test]
    fn spans_to_tags_empty() {
        for scheme in [TagScheme::Bio, TagScheme::Bilou, TagScheme::Io] {
            let seq = spans_to_tags(3, &[], scheme).unwrap();
            assert_eq!(seq.tags, vec![Tag::Outside; 3]);
        }
    }

    #[test]
    fn spans_to_tags_bilou() {
        let spans = [EntitySpan::new(Numbers, 0, 1), EntitySpan::new(Name, 2, 4)];
        let seq = spans_to_tags(4, &spans, TagScheme::Bilou).unwrap();
        assert_eq!(seq.tags, tags(&["U-NUMBERS", "O", "B-NAME", "L-NAME"]));
    }

    #[test]
    fn spans_to_tags_rejects_overlap() {
        let spans = [EntitySpan::new(Name, 0, 3), EntitySpan::new(Email, 2, 4)];
        assert!(matches!(
            spans_to_tags(5, &spans, TagScheme::Bio),
            Err(Error::OverlappingSpans(_))
        ));
    }

    #[test]
    fn spans_to_tags_rejects_out_of_range() {
        let spans = [EntitySpan::new(Name, 3, 6)];
        assert!(matches!(
            spans_to_tags(5, &spans, TagScheme::Bio),
            Err(Error::SpanOutOfRange { .. })
        ));
    }

    #[test]
    fn tags_to_spans_bio() {
        let seq = TagSequence::new(
            TagScheme::Bio,
            tags(&["O", "O", "B-NAME", "I-NAME", "O"]),
        )
        .unwrap();
        assert_eq!(tags_to_spans(&seq), vec![EntitySpan::new(Name, 2, 4)]);
    }

    #[test]
    fn tags_to_spans_io_merges_runs() {
        let seq = TagSequence::new(TagScheme::Io, tags(&["I-NAME", "I-NAME"])).unwrap();
        assert_eq!(tags_to_spans(&seq), vec![EntitySpan::new(Name, 0, 2)]);
    }

    #[test]
    fn io_adjacent_different_types_split() {
        let seq = TagSequence::new(TagScheme::Io, tags(&["I-NAME", "I-EMAIL"])).unwrap();
        assert_eq!(
            tags_to_spans(&seq),
            vec![EntitySpan::new(Name, 0, 1), EntitySpan::new(Email, 1, 2)]
        );
    }

    #[test]
    fn convert_bio_to_bilou() {
        let seq = TagSequence::new(TagScheme::Bio, tags(&["O", "B-NAME", "I-NAME"])).unwrap();
        let out = convert_scheme(&seq, TagScheme::Bilou).unwrap();
        assert_eq!(out.tags, tags(&["O", "B-NAME", "L-NAME"]));

        let seq = TagSequence::new(TagScheme::Bio, tags(&["B-NUMBERS"])).unwrap();
        let out = convert_scheme(&seq, TagScheme::Bilou).unwrap();
        assert_eq!(out.tags, tags(&["U-NUMBERS"]));
    }

    #[test]
    fn repair_orphan_inside() {
        let out = repair_tags(&tags(&["O", "I-NAME", "I-NAME"]), TagScheme::Bio);
        assert_eq!(out.tags, tags(&["O", "B-NAME", "I-NAME"]));
    }

    #[test]
    fn repair_type_switch() {
        let out = repair_tags(&tags(&["B-NAME", "I-EMAIL"]), TagScheme::Bio);
        assert_eq!(out.tags, tags(&["B-NAME", "B-EMAIL"]));
    }

    #[test]
    fn repair_is_fixpoint_on_valid_input() {
        let valid = tags(&["O", "B-NAME", "I-NAME", "O", "B-EMAIL"]);
        let out = repair_tags(&valid, TagScheme::Bio);
        assert_eq!(out.tags, valid);

        let valid = tags(&["U-NUMBERS", "B-NAME", "L-NAME", "O"]);
        let out = repair_tags(&valid, TagScheme::Bilou);
        assert_eq!(out.tags, valid);
    }

    #[test]
    fn repair_bilou_orphans() {
        let out = repair_tags(&tags(&["O", "L-NAME", "O"]), TagScheme::Bilou);
        assert_eq!(out.tags, tags(&["O", "U-NAME", "O"]));
        let out = repair_tags(&tags(&["I-NAME", "I-NAME", "O"]), TagScheme::Bilou);
        assert_eq!(out.tags, tags(&["B-NAME", "L-NAME", "O"]));
        let out = repair_tags(&tags(&["B-NAME", "O"]), TagScheme::Bilou);
        assert_eq!(out.tags, tags(&["U-NAME", "O"]));
    }

    #[test]
    fn tag_symbols_round_trip_strings() {
        for scheme in [TagScheme::Bio, TagScheme::Bilou, TagScheme::Io] {
            for tag in scheme.alphabet() {
                let s = tag.to_string();
                assert_eq!(s.parse::<Tag>().unwrap(), tag);
            }
        }
    }
}
