//! Deterministic synthetic call-center corpus generator with a
//! configurable ASR-noise model: confusion-pair misrecognitions, upstream
//! `[redacted]` number masking, and false starts.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::derive_seed;
use crate::pipeline::{Corpus, Split, Turn, REDACTED_TOKEN};
use crate::schema::{validate_spans, EntitySpan, EntityType};

/// Noise dials for the generator. All rates are probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Per-token probability of a confusion-pair substitution.
    pub misrecognition_rate: f64,
    /// Probability that a spoken number token arrives as "[redacted]".
    pub redaction_rate: f64,
    /// Per-turn probability of a duplicated sentence-initial fragment.
    pub false_start_rate: f64,
    /// Expected entities per turn.
    pub entity_density: f64,
    /// Per-turn probability of a turn consisting of SPELLING on its own.
    #[serde(default)]
    pub standalone_spelling_rate: f64,
    pub seed: u64,
}

/// Most entity clauses a single turn template can hold.
pub const MAX_ENTITIES_PER_TURN: usize = 3;

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            misrecognition_rate: 0.08,
            redaction_rate: 0.1,
            false_start_rate: 0.05,
            entity_density: 1.2,
            standalone_spelling_rate: 0.04,
            seed: 42,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, rate) in [
            ("misrecognition_rate", self.misrecognition_rate),
            ("redaction_rate", self.redaction_rate),
            ("false_start_rate", self.false_start_rate),
            ("standalone_spelling_rate", self.standalone_spelling_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::config(name, format!("rate {rate} outside [0, 1]")));
            }
        }
        if self.entity_density < 0.0 || !self.entity_density.is_finite() {
            return Err(Error::config("entity_density", "must be a finite non-negative number"));
        }
        if self.entity_density > MAX_ENTITIES_PER_TURN as f64 {
            return Err(Error::config(
                "entity_density",
                format!(
                    "templates hold at most {MAX_ENTITIES_PER_TURN} entities per turn, got {}",
                    self.entity_density
                ),
            ));
        }
        Ok(())
    }
}

/// (intended phrase, misrecognized phrase) substitution pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionTable {
    pub pairs: Vec<(Vec<String>, Vec<String>)>,
}

/// Attested confusions observed in live transcripts.
const ATTESTED_PAIRS: &[(&str, &str)] = &[
    ("why you're", "choir"),
    ("annie oakley", "i need oak leaves"),
    ("when did you want", "wendy jeff"),
];

/// Additional synthetic near-homophone pairs in the same spirit.
const SYNTHETIC_PAIRS: &[(&str, &str)] = &[
    ("i would like to", "i'd lie to"),
    ("account number", "a count number"),
    ("for your records", "four-year records"),
    ("can you hear me", "canyon ear me"),
    ("billing address", "bill in address"),
    ("last statement", "lass statement"),
    ("is that correct", "his hat correct"),
    ("one moment please", "one mormon please"),
    ("bear with me", "bare width me"),
    ("your balance is", "your valence is"),
    ("due date", "dew date"),
    ("passed due", "past dew"),
    ("payment plan", "pavement plan"),
    ("customer care", "customs are care"),
    ("verify your", "very fire"),
    ("social security", "so shall security"),
    ("date of birth", "day to birth"),
    ("mother's maiden name", "mothers may den aim"),
    ("routing number", "row ting number"),
    ("credit card", "credit guard"),
    ("debit card", "deb it guard"),
    ("on hold", "unsold"),
    ("transfer you", "trance fur you"),
    ("supervisor", "super visor"),
    ("technical support", "tech nickel support"),
    ("warranty", "war and tea"),
    ("insurance", "in sure ants"),
    ("premium", "pre me um"),
    ("deductible", "the duck table"),
    ("statement balance", "state mint balance"),
    ("minimum payment", "mini mum payment"),
    ("interest rate", "inter est rate"),
    ("late fee", "lay fee"),
    ("overdraft", "over draught"),
    ("wire transfer", "why her transfer"),
    ("direct deposit", "direct the posit"),
    ("cancel my", "can sell my"),
    ("subscription", "sub scrip shun"),
    ("renewal", "re new all"),
    ("confirmation", "confer may shun"),
    ("appointment", "a point mint"),
    ("available", "a veil able"),
    ("tomorrow morning", "tomorrow mourning"),
    ("this afternoon", "this after new"),
    ("next week", "necks weak"),
    ("thank you", "tank ewe"),
    ("you're welcome", "your well come"),
    ("have a great day", "have a grate day"),
    ("anything else", "any thin else"),
    ("speak with", "s peak with"),
    ("brilliant", "brill yet"),
    ("process the refund", "process the re fund"),
    ("mailing address", "may ling address"),
];

/// Single-token stand-ins used when no phrase in the table matches at a
/// substituted position.
const FALLBACK_MISHEARINGS: &[&str] = &[
    "choir", "leaves", "brilliant", "wendy", "dew", "bare", "guard", "visor", "mint", "ewe",
    "weak", "mourning", "veil", "shun", "draught", "valence", "canyon", "lass", "fur", "den",
];

impl ConfusionTable {
    /// The built-in table: attested pairs plus the synthetic ones.
    pub fn builtin() -> Self {
        let pairs = ATTESTED_PAIRS
            .iter()
            .chain(SYNTHETIC_PAIRS)
            .map(|(a, b)| (split_phrase(a), split_phrase(b)))
            .collect();
        ConfusionTable { pairs }
    }

    pub fn validate(&self) -> Result<()> {
        for (intended, misrecognized) in &self.pairs {
            for phrase in [intended, misrecognized] {
                if phrase.is_empty() {
                    return Err(Error::data("confusion table has an empty phrase"));
                }
                for tok in phrase {
                    if tok.is_empty()
                        || tok.chars().any(|c| c.is_ascii_digit() || c.is_uppercase())
                    {
                        return Err(Error::data(format!(
                            "confusion phrase token {tok:?} must be lowercase and digit-free"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Two-column TSV, `intended<TAB>misrecognized`, `#` comment lines.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = Vec::new();
        for (lineno, line) in content.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t');
            let (intended, misrecognized) = match (fields.next(), fields.next(), fields.next()) {
                (Some(a), Some(b), None) => (a, b),
                _ => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: lineno + 1,
                        message: "expected exactly two tab-separated columns".to_string(),
                    })
                }
            };
            pairs.push((split_phrase(intended), split_phrase(misrecognized)));
        }
        let table = ConfusionTable { pairs };
        table.validate()?;
        Ok(table)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from(
            "# Confusion pairs: intended<TAB>misrecognized.\n\
             # The first three pairs were observed in live transcripts; the rest\n\
             # are synthetic near-homophones added for coverage.\n",
        );
        for (intended, misrecognized) in &self.pairs {
            out.push_str(&format!("{}\t{}\n", intended.join(" "), misrecognized.join(" ")));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

fn split_phrase(phrase: &str) -> Vec<String> {
    phrase.split_whitespace().map(str::to_string).collect()
}

// --- vocabulary -----------------------------------------------------------

const DIGIT_WORDS: &[&str] = &[
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "oh",
];

const FIRST_NAMES: &[&str] = &[
    "james", "mary", "robert", "patricia", "michael", "linda", "william", "barbara", "david",
    "susan", "richard", "jessica", "joseph", "sarah", "thomas", "karen", "charles", "lisa",
    "daniel", "nancy", "matthew", "betty", "anthony", "margaret", "mark", "sandra", "donald",
    "ashley", "steven", "kimberly", "paul", "emily", "andrew", "donna", "joshua", "michelle",
    "kenneth", "carol", "kevin", "amanda",
];

const SURNAME_STEMS: &[&str] = &[
    "harri", "ander", "peter", "john", "robin", "gil", "thomp", "richard", "carl", "eric",
    "steven", "wil", "mor", "hol", "ash", "black", "whit", "under", "suther", "ruther",
    "gold", "silver", "stan", "craw", "win", "hart", "fair", "lock", "green", "wood",
];

const SURNAME_SUFFIXES: &[&str] = &[
    "son", "sen", "ston", "field", "ford", "worth", "berg", "man", "dale", "well",
];

const COMPANY_STEMS: &[&str] = &[
    "north", "gran", "stell", "bright", "clear", "silver", "blue", "iron", "summit", "atlas",
    "cedar", "crest", "harbor", "pinna", "vertex", "merid", "zen", "apex", "nova", "quill",
];

const COMPANY_SUFFIXES: &[&str] = &[
    "point", "view", "line", "stone", "tech", "wave", "path", "core", "mark", "gate",
];

const COMPANY_KINDS: &[&str] = &[
    "solutions", "services", "bank", "mutual", "telecom", "energy", "insurance", "financial",
    "group", "systems",
];

const STREET_NAMES: &[&str] = &[
    "maple", "oak", "elm", "cedar", "pine", "birch", "willow", "chestnut", "walnut", "spruce",
    "magnolia", "juniper", "sycamore", "hawthorn", "laurel", "aspen",
];

const STREET_TYPES: &[&str] = &["street", "road", "avenue", "lane", "drive", "court", "boulevard"];

const CITIES: &[&str] = &[
    "springfield", "riverton", "fairview", "greenville", "bristol", "clinton", "ashland",
    "milton", "georgetown", "salem", "madison", "arlington", "clayton", "dayton", "oxford",
];

const EMAIL_DOMAINS: &[&str] = &["gmail", "yahoo", "hotmail", "outlook", "aol", "icloud"];

const SPELLING_WORDS: &[&str] = &[
    "apple", "banana", "charlie", "delta", "echo", "foxtrot", "george", "hotel", "india",
    "juliet", "kilo", "lima", "mango", "november", "oscar", "papa", "quebec", "romeo",
    "sierra", "tango", "umbrella", "victor", "whiskey", "xylophone", "yankee", "zebra",
];

/// Entity-free clauses. Several reuse entity carrier phrases with no
/// entity following, so context alone cannot identify entity tokens.
const FILLER_CLAUSES: &[&str] = &[
    "thank you for calling how can i help you today",
    "let me pull up your account",
    "i'd like to make a payment on my bill",
    "can you verify your identity please",
    "one moment please while i check",
    "is there anything else i can help with",
    "i'm having trouble with my online login",
    "the payment did not go through last week",
    "please bear with me for a second",
    "i will transfer you to a supervisor",
    "my name is on the account already",
    "the reference number is missing from the letter",
    "i'm calling from home right now",
    "send it to the same address as before",
    "my email is not working at the moment",
    "the account number should be in the system",
    "when did you want the refund processed",
    "why you're seeing that charge is unclear",
    "that statement balance looks wrong to me",
    "i spoke with someone yesterday about this",
    "the billing address has not changed",
    "could you repeat that a little slower",
    "i need to update my contact details",
    "we appreciate your patience today",
];

// --- generation -----------------------------------------------------------

struct TurnDraft {
    tokens: Vec<String>,
    spans: Vec<EntitySpan>,
}

impl TurnDraft {
    fn new() -> Self {
        TurnDraft {
            tokens: Vec::new(),
            spans: Vec::new(),
        }
    }

    fn push_filler(&mut self, clause: &str) {
        self.tokens.extend(split_phrase(clause));
    }

    fn push_entity(&mut self, ty: EntityType, words: Vec<String>) {
        let start = self.tokens.len();
        self.tokens.extend(words);
        self.spans.push(EntitySpan::new(ty, start, self.tokens.len()));
    }
}

fn pick<'a, R: Rng>(rng: &mut R, items: &'a [&'a str]) -> &'a str {
    items[rng.gen_range(0..items.len())]
}

fn number_words<R: Rng>(rng: &mut R, len: usize, redaction_rate: f64) -> Vec<String> {
    (0..len)
        .map(|_| {
            if rng.gen::<f64>() < redaction_rate {
                REDACTED_TOKEN.to_string()
            } else {
                pick(rng, DIGIT_WORDS).to_string()
            }
        })
        .collect()
}

fn surname<R: Rng>(rng: &mut R) -> String {
    format!("{}{}", pick(rng, SURNAME_STEMS), pick(rng, SURNAME_SUFFIXES))
}

fn company_words<R: Rng>(rng: &mut R) -> Vec<String> {
    vec![
        format!("{}{}", pick(rng, COMPANY_STEMS), pick(rng, COMPANY_SUFFIXES)),
        pick(rng, COMPANY_KINDS).to_string(),
    ]
}

/// "<letter> as in <word>" clarifications, `count` of them.
fn spelling_words<R: Rng>(rng: &mut R, count: usize) -> Vec<String> {
    let mut out = Vec::new();
    for _ in 0..count {
        let word = pick(rng, SPELLING_WORDS);
        let letter = word.chars().next().unwrap();
        out.push(letter.to_string());
        out.push("as".to_string());
        out.push("in".to_string());
        out.push(word.to_string());
    }
    out
}

fn email_words<R: Rng>(rng: &mut R) -> Vec<String> {
    let local = pick(rng, FIRST_NAMES);
    let mut out = Vec::new();
    for (i, c) in local.chars().enumerate() {
        out.push(c.to_string());
        // Occasional inline clarification; the whole thing stays EMAIL
        // (single-label rule).
        if i == 0 && rng.gen::<f64>() < 0.2 {
            let word = SPELLING_WORDS
                .iter()
                .find(|w| w.starts_with(c))
                .copied()
                .unwrap_or("apple");
            out.push("as".to_string());
            out.push("in".to_string());
            out.push(word.to_string());
        }
    }
    out.push("at".to_string());
    out.push(pick(rng, EMAIL_DOMAINS).to_string());
    out.push("dot".to_string());
    out.push("com".to_string());
    out
}

fn address_words<R: Rng>(rng: &mut R, redaction_rate: f64) -> Vec<String> {
    let house_len = rng.gen_range(2..=4);
    let mut out = number_words(rng, house_len, redaction_rate);
    out.push(pick(rng, STREET_NAMES).to_string());
    out.push(pick(rng, STREET_TYPES).to_string());
    if rng.gen::<f64>() < 0.5 {
        out.push("in".to_string());
        out.push(pick(rng, CITIES).to_string());
    }
    out
}

fn entity_clause<R: Rng>(draft: &mut TurnDraft, ty: EntityType, noise: &NoiseConfig, rng: &mut R) {
    use EntityType::*;
    match ty {
        Numbers => {
            let prefix = pick(
                rng,
                &[
                    "the reference number is",
                    "my account number is",
                    "the card ends in",
                    "the confirmation code is",
                ],
            );
            draft.push_filler(prefix);
            let len = rng.gen_range(3..=8);
            draft.push_entity(Numbers, number_words(rng, len, noise.redaction_rate));
        }
        Name => {
            let prefix = pick(
                rng,
                &[
                    "my name is",
                    "this is",
                    "you are speaking with",
                    "the account holder is",
                ],
            );
            draft.push_filler(prefix);
            let words = vec![pick(rng, FIRST_NAMES).to_string(), surname(rng)];
            draft.push_entity(Name, words);
        }
        Company => {
            let prefix = pick(
                rng,
                &["i'm calling from", "this is", "on behalf of", "your provider is"],
            );
            draft.push_filler(prefix);
            let words = company_words(rng);
            draft.push_entity(Company, words);
        }
        Address => {
            let prefix = pick(
                rng,
                &["the billing address is", "i live at", "please ship it to"],
            );
            draft.push_filler(prefix);
            let words = address_words(rng, noise.redaction_rate);
            draft.push_entity(Address, words);
        }
        Email => {
            let prefix = pick(
                rng,
                &["my email is", "you can send it to", "the address on file is"],
            );
            draft.push_filler(prefix);
            let words = email_words(rng);
            draft.push_entity(Email, words);
        }
        Spelling => {
            let prefix = pick(rng, &["that's", "the last name is spelled", "it's spelled"]);
            draft.push_filler(prefix);
            let count = rng.gen_range(1..=3);
            let words = spelling_words(rng, count);
            draft.push_entity(Spelling, words);
        }
    }
}

/// Builds `num_turns` lowercase, digit-free turns with gold spans. Noise
/// (misrecognition, redaction, false starts) is applied before spans are
/// finalized, so every span aligns with the emitted tokens by
/// construction. Deterministic in the config seed; turn i depends only on
/// (seed, i), so a longer run extends a shorter one.
pub fn generate_corpus(
    num_turns: usize,
    noise: &NoiseConfig,
    table: &ConfusionTable,
) -> Result<Corpus> {
    noise.validate()?;
    table.validate()?;
    if num_turns == 0 {
        return Err(Error::config("turns", "num_turns must be at least 1"));
    }
    let mut turns = Vec::with_capacity(num_turns);
    for i in 0..num_turns {
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(noise.seed, i as u64));
        let mut draft = TurnDraft::new();

        if noise.standalone_spelling_rate > 0.0 && rng.gen::<f64>() < noise.standalone_spelling_rate
        {
            // A turn that is only a spelled clarification.
            let count = rng.gen_range(1..=3);
            draft.push_entity(EntityType::Spelling, spelling_words(&mut rng, count));
        } else {
            let base = noise.entity_density.floor();
            let extra = rng.gen::<f64>() < noise.entity_density - base;
            let k = ((base as usize) + usize::from(extra)).min(MAX_ENTITIES_PER_TURN);

            if k == 0 || rng.gen::<f64>() < 0.6 {
                draft.push_filler(pick(&mut rng, FILLER_CLAUSES));
            }
            for _ in 0..k {
                let ty = EntityType::ALL[rng.gen_range(0..EntityType::ALL.len())];
                entity_clause(&mut draft, ty, noise, &mut rng);
            }
            if rng.gen::<f64>() < 0.3 {
                draft.push_filler(pick(&mut rng, FILLER_CLAUSES));
            }
        }

        let (mut tokens, mut spans) = inject_noise(&draft.tokens, &draft.spans, noise, table, &mut rng);

        // False start: the speaker repeats the opening fragment. Skipped
        // when the turn opens inside an entity, so labels stay consistent.
        let opens_with_entity = spans.first().is_some_and(|s| s.start == 0);
        if !opens_with_entity && !tokens.is_empty() && rng.gen::<f64>() < noise.false_start_rate {
            let frag = rng.gen_range(1..=3.min(tokens.len()));
            let mut restarted: Vec<String> = tokens[..frag].to_vec();
            restarted.extend(tokens.iter().cloned());
            tokens = restarted;
            for span in &mut spans {
                span.start += frag;
                span.end += frag;
            }
        }

        validate_spans(&spans, tokens.len())?;
        let raw_text = tokens.join(" ");
        let speaker = if i % 2 == 0 { "agent" } else { "customer" };
        turns.push(Turn::new(speaker, raw_text, tokens, Some(spans))?);
    }
    Ok(Corpus::new(Split::Train, turns))
}

/// Applies confusion-pair substitutions and re-indexes the spans so they
/// cover the substituted surface forms. Each original position flips one
/// coin; on heads the longest table phrase starting there (and not
/// straddling a span boundary) is replaced, falling back to a single-token
/// mishearing. `[redacted]` tokens are upstream metadata and never
/// substituted. No span is dropped: replacements always emit at least one
/// token and widen or shrink the covering span accordingly.
pub fn inject_noise<R: Rng>(
    tokens: &[String],
    spans: &[EntitySpan],
    noise: &NoiseConfig,
    table: &ConfusionTable,
    rng: &mut R,
) -> (Vec<String>, Vec<EntitySpan>) {
    let (tokens, spans, _) = inject_noise_with_stats(tokens, spans, noise, table, rng);
    (tokens, spans)
}

/// As `inject_noise`, also returning how many original tokens were
/// replaced (for calibrating the empirical substitution frequency).
pub fn inject_noise_with_stats<R: Rng>(
    tokens: &[String],
    spans: &[EntitySpan],
    noise: &NoiseConfig,
    table: &ConfusionTable,
    rng: &mut R,
) -> (Vec<String>, Vec<EntitySpan>, usize) {
    // Region id per token: Some(span index) or None, used to keep
    // multi-token matches from straddling a span boundary.
    let region_of = |i: usize| spans.iter().position(|s| s.start <= i && i < s.end);

    let mut out: Vec<String> = Vec::with_capacity(tokens.len());
    // For each original index, the emitted range [start, end).
    let mut emitted: Vec<(usize, usize)> = Vec::with_capacity(tokens.len());
    let mut substituted = 0usize;

    let mut i = 0;
    while i < tokens.len() {
        let substitute = tokens[i] != REDACTED_TOKEN && rng.gen::<f64>() < noise.misrecognition_rate;
        if !substitute {
            let s = out.len();
            out.push(tokens[i].clone());
            emitted.push((s, s + 1));
            i += 1;
            continue;
        }

        // Longest intended phrase matching at i within one region.
        let region = region_of(i);
        let matched = table
            .pairs
            .iter()
            .filter(|(intended, _)| {
                let end = i + intended.len();
                end <= tokens.len()
                    && tokens[i..end].iter().map(String::as_str).eq(intended.iter().map(String::as_str))
                    && (i..end).all(|j| region_of(j) == region)
            })
            .max_by_key(|(intended, _)| intended.len());

        let s = out.len();
        let consumed = match matched {
            Some((intended, misrecognized)) => {
                out.extend(misrecognized.iter().cloned());
                intended.len()
            }
            None => {
                out.push(pick(rng, FALLBACK_MISHEARINGS).to_string());
                1
            }
        };
        let range = (s, out.len());
        for _ in 0..consumed {
            emitted.push(range);
        }
        substituted += consumed;
        i += consumed;
    }

    let new_spans = spans
        .iter()
        .map(|span| EntitySpan::new(span.entity_type, emitted[span.start].0, emitted[span.end - 1].1))
        .collect();
    (out, new_spans, substituted)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_noise(seed: u64) -> NoiseConfig {
        NoiseConfig {
            misrecognition_rate: 0.0,
            redaction_rate: 0.0,
            false_start_rate: 0.0,
            entity_density: 0.0,
            standalone_spelling_rate: 0.0,
            seed,
        }
    }

    #[test]
    fn fixed_seed_is_byte_identical() {
        let noise = NoiseConfig::default();
        let table = ConfusionTable::builtin();
        let a = generate_corpus(50, &noise, &table).unwrap();
        let b = generate_corpus(50, &noise, &table).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_noise_zero_density_means_clean_entity_free_turns() {
        let corpus = generate_corpus(30, &zero_noise(7), &ConfusionTable::builtin()).unwrap();
        for turn in &corpus.turns {
            assert_eq!(turn.gold_spans.as_deref(), Some(&[][..]));
            assert!(!turn.tokens.contains(&REDACTED_TOKEN.to_string()));
        }
    }

    #[test]
    fn redaction_rate_one_masks_every_number_token() {
        let noise = NoiseConfig {
            redaction_rate: 1.0,
            misrecognition_rate: 0.0,
            entity_density: 2.0,
            standalone_spelling_rate: 0.0,
            ..NoiseConfig::default()
        };
        let corpus = generate_corpus(80, &noise, &ConfusionTable::builtin()).unwrap();
        let mut saw_numbers = false;
        for turn in &corpus.turns {
            for span in turn.gold_spans.as_deref().unwrap() {
                if span.entity_type == EntityType::Numbers {
                    saw_numbers = true;
                    for tok in &turn.tokens[span.start..span.end] {
                        assert_eq!(tok, REDACTED_TOKEN);
                    }
                }
            }
        }
        assert!(saw_numbers);
    }

    #[test]
    fn no_digits_or_uppercase_and_spans_validate() {
        let corpus =
            generate_corpus(200, &NoiseConfig::default(), &ConfusionTable::builtin()).unwrap();
        for turn in &corpus.turns {
            for tok in &turn.tokens {
                assert!(
                    !tok.chars().any(|c| c.is_ascii_digit() || c.is_uppercase()),
                    "bad token {tok:?}"
                );
            }
            validate_spans(turn.gold_spans.as_deref().unwrap(), turn.tokens.len()).unwrap();
        }
    }

    #[test]
    fn misrecognition_zero_is_identity() {
        let tokens = split_phrase("why you're calling about the bill");
        let spans = vec![EntitySpan::new(EntityType::Company, 4, 6)];
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let (out_tokens, out_spans) =
            inject_noise(&tokens, &spans, &zero_noise(1), &ConfusionTable::builtin(), &mut rng);
        assert_eq!(out_tokens, tokens);
        assert_eq!(out_spans, spans);
    }

    #[test]
    fn phrase_shrink_shifts_downstream_spans() {
        // "why you're" -> "choir" shrinks the prefix by one; the span over
        // the last two tokens must shift left by one.
        let tokens = split_phrase("why you're with acme corp");
        let spans = vec![EntitySpan::new(EntityType::Company, 3, 5)];
        let noise = NoiseConfig {
            misrecognition_rate: 1.0,
            ..zero_noise(3)
        };
        let table = ConfusionTable {
            pairs: vec![(split_phrase("why you're"), split_phrase("choir"))],
        };
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        // With rate 1 every position substitutes; restrict the fallback
        // effect by checking the span still covers the company tokens'
        // emissions and validates.
        let (out_tokens, out_spans, _) =
            inject_noise_with_stats(&tokens, &spans, &noise, &table, &mut rng);
        assert_eq!(out_tokens[0], "choir");
        validate_spans(&out_spans, out_tokens.len()).unwrap();
        assert_eq!(out_spans[0].end - out_spans[0].start, 2);
        assert!(out_spans[0].start == 2, "span should shift left by one");
    }

    #[test]
    fn substitution_inside_span_widens_it() {
        let tokens = split_phrase("calling from annie oakley insurance");
        let spans = vec![EntitySpan::new(EntityType::Company, 2, 5)];
        let noise = NoiseConfig {
            misrecognition_rate: 1.0,
            ..zero_noise(5)
        };
        let table = ConfusionTable {
            pairs: vec![(split_phrase("annie oakley"), split_phrase("i need oak leaves"))],
        };
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let (out_tokens, out_spans) = inject_noise(&tokens, &spans, &noise, &table, &mut rng);
        validate_spans(&out_spans, out_tokens.len()).unwrap();
        // 3-token span became 4 substituted tokens + whatever the last
        // token fell back to; it must still cover "i need oak leaves".
        assert!(out_spans[0].end - out_spans[0].start >= 4);
        assert_eq!(&out_tokens[out_spans[0].start..out_spans[0].start + 4],
                   &["i", "need", "oak", "leaves"]);
    }

    #[test]
    fn empirical_substitution_frequency_tracks_the_rate() {
        let noise = NoiseConfig {
            misrecognition_rate: 0.08,
            redaction_rate: 0.0,
            false_start_rate: 0.0,
            entity_density: 1.0,
            standalone_spelling_rate: 0.0,
            seed: 11,
        };
        let table = ConfusionTable::builtin();
        let mut total = 0usize;
        let mut substituted = 0usize;
        let mut rng = ChaCha12Rng::seed_from_u64(noise.seed);
        let clean = zero_noise(11);
        let mut i = 0u64;
        while total < 12_000 {
            let mut turn_rng = ChaCha12Rng::seed_from_u64(derive_seed(99, i));
            i += 1;
            let mut draft = TurnDraft::new();
            draft.push_filler(pick(&mut turn_rng, FILLER_CLAUSES));
            entity_clause(&mut draft, EntityType::Name, &clean, &mut turn_rng);
            total += draft.tokens.len();
            let (_, _, n) =
                inject_noise_with_stats(&draft.tokens, &draft.spans, &noise, &table, &mut rng);
            substituted += n;
        }
        let freq = substituted as f64 / total as f64;
        let rel = (freq - 0.08).abs() / 0.08;
        assert!(rel < 0.2, "empirical frequency {freq} vs rate 0.08");
    }

    #[test]
    fn density_above_capacity_is_a_config_error() {
        let noise = NoiseConfig {
            entity_density: MAX_ENTITIES_PER_TURN as f64 + 0.5,
            ..NoiseConfig::default()
        };
        assert!(generate_corpus(1, &noise, &ConfusionTable::builtin()).is_err());
    }

    #[test]
    fn spelling_inside_email_keeps_the_email_label() {
        // Inline "as in" clarifications appear inside EMAIL spans across a
        // large sample; none may carry a SPELLING label.
        let noise = NoiseConfig {
            misrecognition_rate: 0.0,
            redaction_rate: 0.0,
            false_start_rate: 0.0,
            entity_density: 2.0,
            standalone_spelling_rate: 0.0,
            seed: 21,
        };
        let corpus = generate_corpus(400, &noise, &ConfusionTable::builtin()).unwrap();
        let mut saw_inline = false;
        for turn in &corpus.turns {
            for span in turn.gold_spans.as_deref().unwrap() {
                if span.entity_type == EntityType::Email {
                    let words = &turn.tokens[span.start..span.end];
                    if words.iter().any(|w| w == "as") {
                        saw_inline = true;
                    }
                }
            }
        }
        assert!(saw_inline, "expected at least one inline clarification");
    }

    #[test]
    fn standalone_spelling_turns_appear_under_the_flag() {
        let noise = NoiseConfig {
            standalone_spelling_rate: 1.0,
            misrecognition_rate: 0.0,
            false_start_rate: 0.0,
            ..NoiseConfig::default()
        };
        let corpus = generate_corpus(10, &noise, &ConfusionTable::builtin()).unwrap();
        for turn in &corpus.turns {
            let spans = turn.gold_spans.as_deref().unwrap();
            assert_eq!(spans.len(), 1);
            assert_eq!(spans[0].entity_type, EntityType::Spelling);
            assert_eq!((spans[0].start, spans[0].end), (0, turn.tokens.len()));
        }
    }

    #[test]
    fn table_round_trips_through_tsv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("confusions.tsv");
        let table = ConfusionTable::builtin();
        table.save(&path).unwrap();
        assert_eq!(ConfusionTable::load(&path).unwrap(), table);
    }

    #[test]
    fn malformed_tsv_reports_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tsv");
        std::fs::write(&path, "# ok\na b\n").unwrap();
        match ConfusionTable::load(&path).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
