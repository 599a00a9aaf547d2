//! Subword-aware static word vectors: a skip-gram negative-sampling trainer
//! with character n-gram composition, plus loading of external pretrained
//! vector files for comparison runs.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::cosine;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaticConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub min_count: usize,
    pub ngram_range: (usize, usize),
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for StaticConfig {
    fn default() -> Self {
        StaticConfig {
            dim: 100,
            window: 5,
            negatives: 5,
            epochs: 5,
            min_count: 2,
            ngram_range: (3, 6),
            learning_rate: 0.05,
            seed: 0,
        }
    }
}

/// A trained static vector store. `word_vectors` hold composed vectors
/// (word vector plus the sum of its n-gram vectors, fixed at training end);
/// `ngram_vectors` back out-of-vocabulary composition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorTable {
    pub dim: usize,
    pub word_vectors: BTreeMap<String, Vec<f64>>,
    pub ngram_vectors: BTreeMap<String, Vec<f64>>,
    pub ngram_range: (usize, usize),
    pub metadata: Option<StaticConfig>,
}

impl VectorTable {
    /// Composed vector for a word. In-vocabulary words return the stored
    /// vector; OOV words return the mean over all extracted n-grams, with
    /// unseen n-grams contributing zero to the sum (denominator counts
    /// every extracted n-gram). A word with no known n-grams maps to zero.
    pub fn vector_for(&self, word: &str) -> Array1<f64> {
        if let Some(v) = self.word_vectors.get(word) {
            return Array1::from_vec(v.clone());
        }
        let mut sum = Array1::zeros(self.dim);
        let ngrams = extract_ngrams(word, self.ngram_range);
        if ngrams.is_empty() || self.ngram_vectors.is_empty() {
            return sum;
        }
        for g in &ngrams {
            if let Some(v) = self.ngram_vectors.get(g) {
                for (s, x) in sum.iter_mut().zip(v) {
                    *s += x;
                }
            }
        }
        sum / ngrams.len() as f64
    }

    pub fn contains(&self, word: &str) -> bool {
        self.word_vectors.contains_key(word)
    }

    /// Top-k in-vocabulary neighbors by cosine, query excluded, ties broken
    /// lexicographically.
    pub fn nearest_neighbors(&self, word: &str, k: usize) -> Vec<(String, f64)> {
        let query = self.vector_for(word);
        let mut scored: Vec<(String, f64)> = self
            .word_vectors
            .iter()
            .filter(|(w, _)| w.as_str() != word)
            .map(|(w, v)| (w.clone(), cosine(&query, &Array1::from_vec(v.clone()))))
            .collect();
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        scored.truncate(k);
        scored
    }
}

/// Character n-grams of the boundary-bracketed word, n in `[min_n, max_n]`.
pub fn extract_ngrams(word: &str, (min_n, max_n): (usize, usize)) -> Vec<String> {
    let bracketed: Vec<char> = format!("<{word}>").chars().collect();
    let mut out = Vec::new();
    for n in min_n..=max_n {
        if n > bracketed.len() {
            break;
        }
        for start in 0..=bracketed.len() - n {
            out.push(bracketed[start..start + n].iter().collect());
        }
    }
    out
}

struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
    counts: Vec<u64>,
    ngrams: Vec<String>,
    ngram_index: HashMap<String, usize>,
    /// Per word, indices of its n-grams.
    word_ngrams: Vec<Vec<usize>>,
    /// Cumulative unigram^0.75 distribution for negative sampling.
    neg_cdf: Vec<f64>,
}

fn build_vocab(corpus: &[Vec<String>], config: &StaticConfig) -> Vocab {
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for sent in corpus {
        for tok in sent {
            *counts.entry(tok.as_str()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, u64)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= config.min_count as u64)
        .collect();
    // Frequent-first ordering, lexicographic tiebreak, for determinism.
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let words: Vec<String> = kept.iter().map(|(w, _)| w.to_string()).collect();
    let counts: Vec<u64> = kept.iter().map(|(_, c)| *c).collect();
    let index: HashMap<String, usize> = words
        .iter()
        .enumerate()
        .map(|(i, w)| (w.clone(), i))
        .collect();

    let mut ngrams = Vec::new();
    let mut ngram_index: HashMap<String, usize> = HashMap::new();
    let mut word_ngrams = Vec::with_capacity(words.len());
    for word in &words {
        let mut ids = Vec::new();
        for g in extract_ngrams(word, config.ngram_range) {
            let id = *ngram_index.entry(g.clone()).or_insert_with(|| {
                ngrams.push(g);
                ngrams.len() - 1
            });
            ids.push(id);
        }
        word_ngrams.push(ids);
    }

    let mut neg_cdf = Vec::with_capacity(words.len());
    let mut acc = 0.0;
    for &c in &counts {
        acc += (c as f64).powf(0.75);
        neg_cdf.push(acc);
    }

    Vocab {
        words,
        index,
        counts,
        ngrams,
        ngram_index,
        word_ngrams,
        neg_cdf,
    }
}

impl Vocab {
    fn sample_negative(&self, rng: &mut impl Rng) -> usize {
        let total = *self.neg_cdf.last().unwrap();
        let target = rng.gen_range(0.0..total);
        self.neg_cdf.partition_point(|&c| c <= target)
    }
}

/// Trains subword skip-gram vectors with negative sampling. Deterministic
/// for a fixed (corpus, config, seed).
pub fn train_static(corpus: &[Vec<String>], config: &StaticConfig) -> Result<VectorTable> {
    train_static_with_loss(corpus, config).map(|(t, _)| t)
}

/// As `train_static`, also returning the mean negative-sampling loss per
/// epoch.
pub fn train_static_with_loss(
    corpus: &[Vec<String>],
    config: &StaticConfig,
) -> Result<(VectorTable, Vec<f64>)> {
    if corpus.iter().all(|s| s.is_empty()) {
        return Err(Error::data("empty corpus for static embedding training"));
    }
    if config.dim < 2 {
        return Err(Error::config("dim", "must be at least 2"));
    }
    let (min_n, max_n) = config.ngram_range;
    if min_n < 1 || min_n > max_n {
        return Err(Error::config("ngram_range", "requires 1 <= min_n <= max_n"));
    }
    let vocab = build_vocab(corpus, config);
    if vocab.words.is_empty() {
        return Err(Error::data(format!(
            "no word occurs at least min_count={} times",
            config.min_count
        )));
    }

    let dim = config.dim;
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let bound = 0.5 / dim as f64;
    let mut word_in: Vec<Array1<f64>> = (0..vocab.words.len())
        .map(|_| Array1::from_shape_fn(dim, |_| rng.gen_range(-bound..bound)))
        .collect();
    let mut ngram_in: Vec<Array1<f64>> = (0..vocab.ngrams.len())
        .map(|_| Array1::from_shape_fn(dim, |_| rng.gen_range(-bound..bound)))
        .collect();
    let mut word_out: Vec<Array1<f64>> = (0..vocab.words.len())
        .map(|_| Array1::zeros(dim))
        .collect();

    let lr = config.learning_rate;
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _epoch in 0..config.epochs {
        let mut loss_sum = 0.0;
        let mut loss_count = 0u64;
        for sent in corpus {
            let ids: Vec<Option<usize>> = sent.iter().map(|t| vocab.index.get(t).copied()).collect();
            for (pos, center) in ids.iter().enumerate() {
                let Some(center) = *center else { continue };
                let window = rng.gen_range(1..=config.window.max(1));
                let lo = pos.saturating_sub(window);
                let hi = (pos + window + 1).min(ids.len());
                for ctx_pos in lo..hi {
                    if ctx_pos == pos {
                        continue;
                    }
                    let Some(context) = ids[ctx_pos] else { continue };
                    // Composed input vector: word vector + n-gram vectors.
                    let mut h = word_in[center].clone();
                    for &g in &vocab.word_ngrams[center] {
                        h += &ngram_in[g];
                    }
                    let mut d_h: Array1<f64> = Array1::zeros(dim);
                    let mut targets = Vec::with_capacity(1 + config.negatives);
                    targets.push((context, 1.0));
                    for _ in 0..config.negatives {
                        let neg = vocab.sample_negative(&mut rng);
                        if neg != context {
                            targets.push((neg, 0.0));
                        }
                    }
                    for (target, label) in targets {
                        let score = h.dot(&word_out[target]);
                        let p = crate::math::sigmoid(score);
                        loss_sum -= if label > 0.5 {
                            p.max(1e-12).ln()
                        } else {
                            (1.0 - p).max(1e-12).ln()
                        };
                        loss_count += 1;
                        let g = p - label;
                        d_h.scaled_add(g, &word_out[target]);
                        word_out[target].scaled_add(-lr * g, &h);
                    }
                    word_in[center].scaled_add(-lr, &d_h);
                    for &g in &vocab.word_ngrams[center] {
                        ngram_in[g].scaled_add(-lr, &d_h);
                    }
                }
            }
        }
        epoch_losses.push(loss_sum / loss_count.max(1) as f64);
    }

    let mut word_vectors = BTreeMap::new();
    for (i, word) in vocab.words.iter().enumerate() {
        let mut composed = word_in[i].clone();
        for &g in &vocab.word_ngrams[i] {
            composed += &ngram_in[g];
        }
        word_vectors.insert(word.clone(), composed.to_vec());
    }
    let mut ngram_vectors = BTreeMap::new();
    for (g, &i) in &vocab.ngram_index {
        ngram_vectors.insert(g.clone(), ngram_in[i].to_vec());
    }

    let _ = vocab.counts;
    Ok((
        VectorTable {
            dim,
            word_vectors,
            ngram_vectors,
            ngram_range: config.ngram_range,
            metadata: Some(config.clone()),
        },
        epoch_losses,
    ))
}

/// Saves the full table (with n-gram vectors) as JSON when the path ends in
/// `.json`, otherwise the plain text `word v1 .. vd` format at six decimal
/// places.
pub fn save_vectors(table: &VectorTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e == "json") {
        let json = serde_json::to_string(table).expect("table serializes");
        return fs::write(path, json).map_err(|e| Error::io(path, e));
    }
    let mut out = String::new();
    for (word, vec) in &table.word_vectors {
        out.push_str(word);
        for v in vec {
            out.push_str(&format!(" {v:.6}"));
        }
        out.push('\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Loads a vector table. JSON files restore the full trained table; plain
/// text files yield a table with empty `ngram_vectors` whose OOV fallback
/// is the zero vector.
pub fn load_vectors(path: impl AsRef<Path>) -> Result<VectorTable> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if content.trim_start().starts_with('{') {
        return serde_json::from_str(&content).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        });
    }
    let mut word_vectors = BTreeMap::new();
    let mut dim: Option<usize> = None;
    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let word = fields.next().unwrap().to_string();
        let values: std::result::Result<Vec<f64>, _> = fields.map(str::parse).collect();
        let values = values.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: format!("bad float: {e}"),
        })?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: format!("expected {d} components, found {}", values.len()),
                })
            }
            _ => {}
        }
        word_vectors.insert(word, values);
    }
    let dim = dim.ok_or_else(|| Error::data(format!("empty vector file {}", path.display())))?;
    Ok(VectorTable {
        dim,
        word_vectors,
        ngram_vectors: BTreeMap::new(),
        ngram_range: (3, 6),
        metadata: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_corpus() -> Vec<Vec<String>> {
        // Small but patterned: "cat(s)" share contexts and n-grams, the
        // word "xylophone" lives elsewhere.
        let mut corpus = Vec::new();
        for i in 0..250 {
            let animal = if i % 2 == 0 { "cat" } else { "cats" };
            corpus.push(
                format!("the {animal} sat on the mat")
                    .split_whitespace()
                    .map(String::from)
                    .collect(),
            );
            corpus.push(
                "he played the xylophone loudly in the band"
                    .split_whitespace()
                    .map(String::from)
                    .collect(),
            );
        }
        corpus
    }

    fn toy_config() -> StaticConfig {
        StaticConfig {
            dim: 30,
            window: 3,
            negatives: 5,
            epochs: 3,
            min_count: 2,
            ngram_range: (3, 6),
            learning_rate: 0.05,
            seed: 11,
        }
    }

    #[test]
    fn related_words_are_closer() {
        let table = train_static(&toy_corpus(), &toy_config()).unwrap();
        let cat = table.vector_for("cat");
        let cats = table.vector_for("cats");
        let xylo = table.vector_for("xylophone");
        assert!(cosine(&cat, &cats) > cosine(&cat, &xylo));
    }

    #[test]
    fn nearest_neighbors_excludes_query() {
        let table = train_static(&toy_corpus(), &toy_config()).unwrap();
        let neighbors = table.nearest_neighbors("cat", 3);
        assert!(neighbors.iter().all(|(w, _)| w != "cat"));
        assert!(neighbors.iter().any(|(w, _)| w == "cats"));
    }

    #[test]
    fn nearest_neighbors_k_exceeds_vocab() {
        let table = train_static(&toy_corpus(), &toy_config()).unwrap();
        let n = table.nearest_neighbors("cat", 10_000);
        assert_eq!(n.len(), table.word_vectors.len() - 1);
    }

    #[test]
    fn min_count_excludes_rare_words_but_ngrams_cover_them() {
        let mut corpus = toy_corpus();
        corpus.push(vec!["catsup".to_string()]);
        let table = train_static(&corpus, &toy_config()).unwrap();
        assert!(!table.contains("catsup"));
        // Embeddable through shared n-grams with cat/cats.
        assert!(table.vector_for("catsup").iter().any(|&v| v != 0.0));
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = toy_corpus();
        let a = train_static(&corpus, &toy_config()).unwrap();
        let b = train_static(&corpus, &toy_config()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn oov_with_no_known_ngrams_is_zero() {
        let table = train_static(&toy_corpus(), &toy_config()).unwrap();
        let v = table.vector_for("zzqqzzqq");
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn oov_matches_brute_force_ngram_mean() {
        let table = train_static(&toy_corpus(), &toy_config()).unwrap();
        let word = "catma";
        assert!(!table.contains(word));
        let ngrams = extract_ngrams(word, table.ngram_range);
        let mut expect = vec![0.0; table.dim];
        for g in &ngrams {
            if let Some(v) = table.ngram_vectors.get(g) {
                for (e, x) in expect.iter_mut().zip(v) {
                    *e += x;
                }
            }
        }
        for e in &mut expect {
            *e /= ngrams.len() as f64;
        }
        let got = table.vector_for(word);
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn epoch_loss_is_finite_and_decreases() {
        let (_, losses) = train_static_with_loss(&toy_corpus(), &toy_config()).unwrap();
        assert!(losses.iter().all(|l| l.is_finite()));
        assert!(losses.last().unwrap() < losses.first().unwrap());
    }

    #[test]
    fn rejects_bad_config_and_empty_corpus() {
        let cfg = toy_config();
        assert!(train_static(&[], &cfg).is_err());
        let mut bad = cfg.clone();
        bad.dim = 1;
        assert!(train_static(&toy_corpus(), &bad).is_err());
    }

    #[test]
    fn text_round_trip_within_precision() {
        let table = train_static(&toy_corpus(), &toy_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vecs.txt");
        save_vectors(&table, &path).unwrap();
        let back = load_vectors(&path).unwrap();
        assert!(back.ngram_vectors.is_empty());
        for (word, vec) in &table.word_vectors {
            for (a, b) in vec.iter().zip(&back.word_vectors[word]) {
                assert!((a - b).abs() < 1e-5);
            }
        }
        // Unseen word against an external-style table falls back to zero.
        assert!(back.vector_for("nonexistent").iter().all(|&v| v == 0.0));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let table = train_static(&toy_corpus(), &toy_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vecs.json");
        save_vectors(&table, &path).unwrap();
        assert_eq!(load_vectors(&path).unwrap(), table);
    }

    #[test]
    fn inconsistent_dimensionality_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        fs::write(&path, "a 1.0 2.0 3.0\nb 1.0 2.0 3.0 4.0 5.0\n").unwrap();
        match load_vectors(&path).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
