//! SGD training of the BiLSTM-CRF over frozen embeddings, with per-epoch
//! validation and best-epoch model selection.

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::evaluate_tokens;
use crate::math::derive_seed;
use crate::pipeline::Corpus;
use crate::provider::EmbeddingProvider;
use crate::schema::{repair_tags, spans_to_tags, Tag, TagSequence};
use crate::tagger::network::{forward_emissions, loss_and_grads};
use crate::tagger::{apply_update, crf, TaggerConfig, TaggerGrads, TaggerParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_micro_f1: f64,
    pub val_token_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: TaggerParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Gold tag index sequence for one turn under the model's scheme.
fn gold_indices(
    turn: &crate::pipeline::Turn,
    config: &TaggerConfig,
    tag_index: &dyn Fn(Tag) -> usize,
) -> Result<Vec<usize>> {
    let spans = turn.gold_spans.clone().unwrap_or_default();
    let seq = spans_to_tags(turn.tokens.len(), &spans, config.scheme)?;
    Ok(seq.tags.iter().map(|&t| tag_index(t)).collect())
}

/// Viterbi-decodes one embedded turn into a repaired tag sequence.
pub fn decode_turn(params: &TaggerParams, token_vectors: &[Array1<f64>]) -> Result<TagSequence> {
    let cache = forward_emissions(params, token_vectors, false, 0)?;
    let (path, _) = crf::viterbi_decode(&cache.emissions, &params.transitions)?;
    let alphabet = params.config.scheme.alphabet();
    let raw: Vec<Tag> = path.into_iter().map(|i| alphabet[i]).collect();
    Ok(repair_tags(&raw, params.config.scheme))
}

/// Trains on `train_corpus`, validating each epoch on `val_corpus`, and
/// returns the parameters from the best validation micro-F1 epoch (ties go
/// to the earlier epoch). Deterministic for a fixed config seed.
pub fn train(
    config: &TaggerConfig,
    provider: &mut dyn EmbeddingProvider,
    train_corpus: &Corpus,
    val_corpus: &Corpus,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_corpus.is_empty() {
        return Err(Error::data("empty training split"));
    }
    let mut params = TaggerParams::new(config, provider.dim())?;
    let alphabet = config.scheme.alphabet();
    let index_of = |tag: Tag| -> usize {
        alphabet
            .iter()
            .position(|&t| t == tag)
            .expect("tag from own alphabet")
    };

    // Embeddings are frozen, so each turn embeds once up front. The pooling
    // memory (if any) is reset and then filled corpus-order.
    provider.reset();
    let train_vectors: Vec<Vec<Array1<f64>>> = train_corpus
        .turns
        .iter()
        .map(|t| provider.embed_turn(&t.tokens))
        .collect::<Result<_>>()?;
    let val_vectors: Vec<Vec<Array1<f64>>> = val_corpus
        .turns
        .iter()
        .map(|t| provider.embed_turn(&t.tokens))
        .collect::<Result<_>>()?;
    let train_gold: Vec<Vec<usize>> = train_corpus
        .turns
        .iter()
        .map(|t| gold_indices(t, config, &index_of))
        .collect::<Result<_>>()?;
    let val_gold: Vec<TagSequence> = val_corpus
        .turns
        .iter()
        .map(|t| {
            spans_to_tags(
                t.tokens.len(),
                &t.gold_spans.clone().unwrap_or_default(),
                config.scheme,
            )
        })
        .collect::<Result<_>>()?;

    let mut velocity = (config.momentum > 0.0).then(|| TaggerGrads::zeros(&params));
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, TaggerParams)> = None;

    let mut order: Vec<usize> = (0..train_corpus.len()).collect();
    for epoch in 0..config.epochs {
        let epoch_seed = derive_seed(config.seed, epoch as u64);
        let mut rng = ChaCha12Rng::seed_from_u64(epoch_seed);
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut grads = TaggerGrads::zeros(&params);
        let mut in_batch = 0usize;
        for (step, &idx) in order.iter().enumerate() {
            if train_vectors[idx].is_empty() {
                continue;
            }
            let dropout_seed = derive_seed(epoch_seed, step as u64);
            epoch_loss += loss_and_grads(
                &params,
                &train_vectors[idx],
                &train_gold[idx],
                true,
                dropout_seed,
                &mut grads,
            )?;
            in_batch += 1;
            if in_batch == config.batch_size.max(1) || step + 1 == order.len() {
                apply_update(&mut params, &grads, velocity.as_mut());
                grads = TaggerGrads::zeros(&params);
                in_batch = 0;
            }
        }
        if !params.all_finite() {
            return Err(Error::data(format!(
                "non-finite parameters after epoch {epoch}; lower the learning rate"
            )));
        }

        let (micro_f1, token_acc) = validate(&params, &val_vectors, &val_gold)?;
        history.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / train_corpus.len() as f64,
            val_micro_f1: micro_f1,
            val_token_accuracy: token_acc,
        });
        if best.as_ref().map(|(f, _, _)| micro_f1 > *f).unwrap_or(true) {
            best = Some((micro_f1, epoch, params.clone()));
        }
    }

    let (_, best_epoch, best_params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        params: best_params,
        history,
        best_epoch,
    })
}

fn validate(
    params: &TaggerParams,
    val_vectors: &[Vec<Array1<f64>>],
    val_gold: &[TagSequence],
) -> Result<(f64, f64)> {
    if val_vectors.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut preds = Vec::with_capacity(val_vectors.len());
    for vectors in val_vectors {
        preds.push(decode_turn(params, vectors)?);
    }
    let report = evaluate_tokens(val_gold, &preds)?;
    let total: usize = val_gold.iter().map(|g| g.len()).sum();
    let correct: usize = val_gold
        .iter()
        .zip(&preds)
        .map(|(g, p)| g.tags.iter().zip(&p.tags).filter(|(a, b)| a == b).count())
        .sum();
    Ok((
        report.micro.f1,
        correct as f64 / total.max(1) as f64,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{Split, Turn};
    use crate::provider::RandomProvider;
    use crate::schema::{EntitySpan, EntityType, TagScheme};

    fn tiny_corpus() -> Corpus {
        let mut turns = Vec::new();
        for i in 0..6 {
            let name = if i % 2 == 0 { "john" } else { "jane" };
            turns.push(
                Turn::new(
                    "s",
                    format!("my name is {name}"),
                    vec!["my".into(), "name".into(), "is".into(), name.into()],
                    Some(vec![EntitySpan::new(EntityType::Name, 3, 4)]),
                )
                .unwrap(),
            );
        }
        Corpus::new(Split::Train, turns)
    }

    fn tiny_config(epochs: usize) -> TaggerConfig {
        TaggerConfig {
            scheme: TagScheme::Bio,
            num_bilstm_layers: 1,
            lstm_hidden: 6,
            fc_width: 8,
            fc_depth: 2,
            dropout_rate: 0.0,
            learning_rate: 0.05,
            batch_size: 1,
            epochs,
            use_bias: true,
            momentum: 0.0,
            seed: 17,
        }
    }

    #[test]
    fn identical_seeds_identical_histories() {
        let corpus = tiny_corpus();
        let config = tiny_config(3);
        let mut p1 = RandomProvider::new(10, 3);
        let mut p2 = RandomProvider::new(10, 3);
        let a = train(&config, &mut p1, &corpus, &corpus).unwrap();
        let b = train(&config, &mut p2, &corpus, &corpus).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn zero_learning_rate_leaves_params_unchanged() {
        let corpus = tiny_corpus();
        let mut config = tiny_config(3);
        config.learning_rate = 0.0;
        let mut provider = RandomProvider::new(10, 3);
        let initial = TaggerParams::new(&config, provider.dim()).unwrap();
        let outcome = train(&config, &mut provider, &corpus, &corpus).unwrap();
        assert_eq!(outcome.params, initial);
        let first = outcome.history.first().unwrap();
        assert!(outcome
            .history
            .iter()
            .all(|r| r.val_micro_f1 == first.val_micro_f1));
    }

    #[test]
    fn empty_training_split_is_a_data_error() {
        let empty = Corpus::new(Split::Train, Vec::new());
        let mut provider = RandomProvider::new(10, 3);
        assert!(train(&tiny_config(1), &mut provider, &empty, &empty).is_err());
    }

    #[test]
    fn loss_decreases_on_tiny_overfit() {
        let corpus = tiny_corpus();
        let config = tiny_config(30);
        let mut provider = RandomProvider::new(10, 3);
        let outcome = train(&config, &mut provider, &corpus, &corpus).unwrap();
        let first = outcome.history.first().unwrap().train_loss;
        let last = outcome.history.last().unwrap().train_loss;
        assert!(last < first, "loss did not decrease: {first} -> {last}");
    }
}
