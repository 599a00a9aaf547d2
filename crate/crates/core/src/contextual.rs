//! Character-level language models (forward and backward) producing
//! per-token contextual string embeddings, plus mean pooling and stacking.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstm::{outer_add, LstmCell};
use crate::math::{init_matrix, logsumexp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharLmConfig {
    pub hidden_size: usize,
    pub sequence_length: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    #[serde(default = "default_char_embed_dim")]
    pub char_embed_dim: usize,
}

fn default_char_embed_dim() -> usize {
    32
}

impl Default for CharLmConfig {
    fn default() -> Self {
        CharLmConfig {
            hidden_size: 64,
            sequence_length: 128,
            batch_size: 16,
            epochs: 5,
            learning_rate: 0.5,
            seed: 0,
            char_embed_dim: 32,
        }
    }
}

pub const CHARLM_FORMAT_VERSION: u32 = 1;

/// A trained next-character LSTM language model over one direction of the
/// character stream. Index 0 of the vocabulary is the unknown-char slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharLm {
    pub version: u32,
    pub direction: Direction,
    pub hidden_size: usize,
    pub char_vocab: BTreeMap<char, usize>,
    pub char_embedding: Array2<f64>,
    pub cell: LstmCell,
    /// V x H projection back to the character vocabulary.
    pub proj: Array2<f64>,
    pub proj_bias: Array1<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharLmEpoch {
    pub train_loss: f64,
    pub val_loss: f64,
}

impl CharLm {
    fn char_index(&self, c: char) -> usize {
        *self.char_vocab.get(&c).unwrap_or(&0)
    }

    /// Hidden state after each character of `chars`, consumed in this
    /// model's direction but indexed in stream order.
    fn hidden_per_char(&self, chars: &[char]) -> Vec<Array1<f64>> {
        let ordered: Vec<char> = match self.direction {
            Direction::Forward => chars.to_vec(),
            Direction::Backward => chars.iter().rev().cloned().collect(),
        };
        let inputs: Vec<Array1<f64>> = ordered
            .iter()
            .map(|&c| self.char_embedding.row(self.char_index(c)).to_owned())
            .collect();
        let trace = self.cell.forward(&inputs, None);
        let mut states = trace.hidden_states();
        if self.direction == Direction::Backward {
            states.reverse();
        }
        states
    }

    /// Mean next-character cross-entropy over a character stream, in the
    /// model's own direction.
    pub fn cross_entropy(&self, stream: &[char]) -> f64 {
        let ordered: Vec<usize> = match self.direction {
            Direction::Forward => stream.iter().map(|&c| self.char_index(c)).collect(),
            Direction::Backward => stream.iter().rev().map(|&c| self.char_index(c)).collect(),
        };
        if ordered.len() < 2 {
            return 0.0;
        }
        let inputs: Vec<Array1<f64>> = ordered[..ordered.len() - 1]
            .iter()
            .map(|&i| self.char_embedding.row(i).to_owned())
            .collect();
        let trace = self.cell.forward(&inputs, None);
        let mut total = 0.0;
        for (t, step) in trace.steps.iter().enumerate() {
            let logits = self.proj.dot(&step.hidden) + &self.proj_bias;
            let logits_vec: Vec<f64> = logits.to_vec();
            let log_z = logsumexp(&logits_vec);
            total -= logits[ordered[t + 1]] - log_z;
        }
        total / trace.steps.len() as f64
    }
}

/// Character stream for a corpus: each turn is one document terminated by
/// a newline.
pub fn corpus_char_stream(turns: &[String]) -> Vec<char> {
    let mut stream = Vec::new();
    for turn in turns {
        stream.extend(turn.chars());
        stream.push('\n');
    }
    stream
}

/// Trains a next-character LSTM LM with truncated backpropagation over
/// `sequence_length` chunks and `batch_size` gradient accumulation. The
/// last tenth of the turns is held out for validation; the parameters from
/// the best validation epoch are returned.
pub fn train_char_lm(
    turns: &[String],
    direction: Direction,
    config: &CharLmConfig,
) -> Result<(CharLm, Vec<CharLmEpoch>)> {
    if turns.is_empty() {
        return Err(Error::data("empty corpus for char-LM training"));
    }
    let val_count = (turns.len() / 10).max(1).min(turns.len().saturating_sub(1));
    let (train_turns, val_turns) = turns.split_at(turns.len() - val_count);
    let train_turns = if train_turns.is_empty() { turns } else { train_turns };

    let mut vocab: BTreeMap<char, usize> = BTreeMap::new();
    for turn in turns {
        for c in turn.chars() {
            let next = vocab.len() + 1;
            vocab.entry(c).or_insert(next);
        }
    }
    let next = vocab.len() + 1;
    vocab.entry('\n').or_insert(next);
    let vocab_size = vocab.len() + 1;

    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let embed_dim = config.char_embed_dim;
    let hidden = config.hidden_size;
    let mut model = CharLm {
        version: CHARLM_FORMAT_VERSION,
        direction,
        hidden_size: hidden,
        char_vocab: vocab,
        char_embedding: init_matrix(vocab_size, embed_dim, embed_dim, &mut rng),
        cell: LstmCell::new(embed_dim, hidden, &mut rng),
        proj: init_matrix(vocab_size, hidden, hidden, &mut rng),
        proj_bias: Array1::zeros(vocab_size),
    };

    let stream = corpus_char_stream(train_turns);
    let ids: Vec<usize> = match direction {
        Direction::Forward => stream.iter().map(|&c| model.char_index(c)).collect(),
        Direction::Backward => stream.iter().rev().map(|&c| model.char_index(c)).collect(),
    };
    if ids.len() < 2 {
        return Err(Error::data("corpus too small for char-LM training"));
    }
    let val_stream = corpus_char_stream(val_turns);

    let seq_len = config.sequence_length.max(2);
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, CharLm)> = None;
    for _epoch in 0..config.epochs {
        let mut state: Option<(Array1<f64>, Array1<f64>)> = None;
        let mut grads = model.cell.zero_grads();
        let mut d_embed: Array2<f64> = Array2::zeros(model.char_embedding.dim());
        let mut d_proj: Array2<f64> = Array2::zeros(model.proj.dim());
        let mut d_proj_bias: Array1<f64> = Array1::zeros(vocab_size);
        let mut batch_chars = 0usize;
        let mut batch_chunks = 0usize;
        let mut epoch_loss = 0.0;
        let mut epoch_chars = 0usize;

        let mut start = 0usize;
        while start + 1 < ids.len() {
            let end = (start + seq_len).min(ids.len() - 1);
            let chunk_inputs: Vec<Array1<f64>> = ids[start..end]
                .iter()
                .map(|&i| model.char_embedding.row(i).to_owned())
                .collect();
            let targets = &ids[start + 1..end + 1];
            let state_ref = state.as_ref().map(|(h, c)| (h, c));
            let trace = model.cell.forward(&chunk_inputs, state_ref);

            let mut d_hidden = Vec::with_capacity(trace.steps.len());
            for (t, step) in trace.steps.iter().enumerate() {
                let logits = model.proj.dot(&step.hidden) + &model.proj_bias;
                let log_z = logsumexp(&logits.to_vec());
                epoch_loss += log_z - logits[targets[t]];
                let mut probs = logits.mapv(|v| (v - log_z).exp());
                probs[targets[t]] -= 1.0;
                outer_add(&mut d_proj, &probs, &step.hidden);
                d_proj_bias += &probs;
                d_hidden.push(model.proj.t().dot(&probs));
            }
            let state_ref = state.as_ref().map(|(h, c)| (h, c));
            let d_inputs = model.cell.backward(&trace, &d_hidden, state_ref, &mut grads);
            for (t, d_x) in d_inputs.iter().enumerate() {
                let mut row = d_embed.row_mut(ids[start + t]);
                row += d_x;
            }
            batch_chars += trace.steps.len();
            epoch_chars += trace.steps.len();
            batch_chunks += 1;
            // Truncated BPTT: the carried state is treated as constant.
            state = trace
                .last_hidden()
                .cloned()
                .zip(trace.last_cell().cloned());

            if batch_chunks == config.batch_size.max(1) || end + 1 >= ids.len() {
                let scale = config.learning_rate / batch_chars.max(1) as f64;
                model.cell.w_input.scaled_add(-scale, &grads.w_input);
                model.cell.w_recur.scaled_add(-scale, &grads.w_recur);
                model.cell.bias.scaled_add(-scale, &grads.bias);
                model.proj.scaled_add(-scale, &d_proj);
                model.proj_bias.scaled_add(-scale, &d_proj_bias);
                model.char_embedding.scaled_add(-scale, &d_embed);
                grads = model.cell.zero_grads();
                d_embed.fill(0.0);
                d_proj.fill(0.0);
                d_proj_bias.fill(0.0);
                batch_chars = 0;
                batch_chunks = 0;
            }
            start = end;
        }

        let train_loss = epoch_loss / epoch_chars.max(1) as f64;
        let val_loss = model.cross_entropy(&val_stream);
        history.push(CharLmEpoch {
            train_loss,
            val_loss,
        });
        if best.as_ref().map(|(l, _)| val_loss < *l).unwrap_or(true) {
            best = Some((val_loss, model.clone()));
        }
    }
    let (_, best_model) = best.expect("at least one epoch");
    Ok((best_model, history))
}

/// Per-token contextual vectors for one turn: the forward LM's hidden state
/// after the token's last character, concatenated with the backward LM's
/// hidden state after consuming back to the character before the token's
/// first character. Output width is 2 * hidden_size.
pub fn embed_tokens(
    forward: &CharLm,
    backward: &CharLm,
    tokens: &[String],
) -> Result<Vec<Array1<f64>>> {
    if forward.hidden_size != backward.hidden_size {
        return Err(Error::config(
            "hidden_size",
            format!(
                "forward LM has hidden_size {}, backward {}",
                forward.hidden_size, backward.hidden_size
            ),
        ));
    }
    if tokens.is_empty() {
        return Ok(Vec::new());
    }
    let text = tokens.join(" ");
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    let fwd_states = forward.hidden_per_char(&chars);
    let bwd_states = backward.hidden_per_char(&chars);

    let mut out = Vec::with_capacity(tokens.len());
    let mut pos = 0usize;
    for token in tokens {
        let len = token.chars().count();
        let start = pos;
        let end = pos + len;
        let fwd = &fwd_states[end - 1];
        let bwd = if start == 0 {
            &bwd_states[0]
        } else {
            &bwd_states[start - 1]
        };
        let mut v = Array1::zeros(2 * forward.hidden_size);
        v.slice_mut(ndarray::s![..forward.hidden_size]).assign(fwd);
        v.slice_mut(ndarray::s![forward.hidden_size..]).assign(bwd);
        out.push(v);
        pos = end + 1; // skip joining space
    }
    debug_assert!(pos == n + 1);
    Ok(out)
}

/// Per-word running means over contextual instance vectors. Single-writer:
/// concurrent updates to one memory are a caller error by contract.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PooledMemory {
    sums: BTreeMap<String, (Vec<f64>, u64)>,
}

impl PooledMemory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Accumulates one instance vector and returns the updated mean for
    /// the token. The first occurrence returns the instance itself.
    pub fn pooled_embed(&mut self, token: &str, instance: &Array1<f64>) -> Result<Array1<f64>> {
        match self.sums.get_mut(token) {
            Some((sum, count)) => {
                if sum.len() != instance.len() {
                    return Err(Error::config(
                        "pooled_embed",
                        format!(
                            "instance has dim {}, memory entries have dim {}",
                            instance.len(),
                            sum.len()
                        ),
                    ));
                }
                for (s, v) in sum.iter_mut().zip(instance.iter()) {
                    *s += v;
                }
                *count += 1;
                let c = *count as f64;
                Ok(Array1::from_iter(sum.iter().map(|s| s / c)))
            }
            None => {
                if let Some((any, _)) = self.sums.values().next() {
                    if any.len() != instance.len() {
                        return Err(Error::config(
                            "pooled_embed",
                            "instance dimensionality differs from memory entries",
                        ));
                    }
                }
                self.sums
                    .insert(token.to_string(), (instance.to_vec(), 1));
                Ok(instance.clone())
            }
        }
    }

    pub fn mean_for(&self, token: &str) -> Option<Array1<f64>> {
        self.sums
            .get(token)
            .map(|(sum, count)| Array1::from_iter(sum.iter().map(|s| s / *count as f64)))
    }

    pub fn reset(&mut self) {
        self.sums.clear();
    }
}

/// Concatenates vectors in list order.
pub fn stack(vectors: &[Array1<f64>]) -> Result<Array1<f64>> {
    if vectors.is_empty() {
        return Err(Error::config("stack", "empty vector list"));
    }
    let total: usize = vectors.iter().map(|v| v.len()).sum();
    let mut out = Array1::zeros(total);
    let mut pos = 0;
    for v in vectors {
        out.slice_mut(ndarray::s![pos..pos + v.len()]).assign(v);
        pos += v.len();
    }
    Ok(out)
}

pub fn save_char_lm(model: &CharLm, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string(model).expect("char LM serializes");
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_char_lm(path: impl AsRef<Path>) -> Result<CharLm> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let model: CharLm = serde_json::from_str(&content).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    if model.version != CHARLM_FORMAT_VERSION {
        return Err(Error::data(format!(
            "unsupported char-LM checkpoint version {}",
            model.version
        )));
    }
    Ok(model)
}
