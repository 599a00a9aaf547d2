//! Evaluation metrics (token-level and strict-span P/R/F1, confusion
//! matrix) and the deterministic parallel grid-search harness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::derive_seed;
use crate::pipeline::Corpus;
use crate::provider::EmbeddingProvider;
use crate::schema::{EntitySpan, EntityType, TagScheme, TagSequence};
use crate::tagger::train::train;
use crate::tagger::TaggerConfig;

/// Pooled counts and derived scores for one class (entity type or O).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ClassMetrics {
    pub fn from_counts(label: impl Into<String>, tp: u64, fp: u64, fn_: u64) -> Self {
        let precision = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if tp + fn_ == 0 {
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        ClassMetrics {
            label: label.into(),
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            precision,
            recall,
            f1: f1_score(precision, recall),
        }
    }
}

/// F1 = 2PR/(P+R), zero when P+R is zero.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Token-level evaluation report. The headline micro average pools entity
/// classes only; the O-inclusive figure is reported alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenReport {
    /// O first, then the entity classes.
    pub per_class: Vec<ClassMetrics>,
    /// Micro average over entity classes, excluding O.
    pub micro: ClassMetrics,
    /// Micro average including the O class, for transparency.
    pub micro_including_o: ClassMetrics,
}

const NUM_CLASSES: usize = 7; // O + six entity types

fn class_index(ty: Option<EntityType>) -> usize {
    match ty {
        None => 0,
        Some(t) => 1 + EntityType::ALL.iter().position(|&x| x == t).unwrap(),
    }
}

fn class_label(idx: usize) -> String {
    if idx == 0 {
        "O".to_string()
    } else {
        EntityType::ALL[idx - 1].to_string()
    }
}

fn check_alignment(gold: &[TagSequence], pred: &[TagSequence]) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::data(format!(
            "gold has {} turns, pred has {}",
            gold.len(),
            pred.len()
        )));
    }
    for (turn, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::Alignment {
                turn,
                gold: g.len(),
                pred: p.len(),
            });
        }
    }
    Ok(())
}

/// Per-class and micro-averaged token metrics. Tags collapse to their
/// entity type (or O) before counting; a token is a TP for class c when
/// gold and pred both collapse to c.
pub fn evaluate_tokens(gold: &[TagSequence], pred: &[TagSequence]) -> Result<TokenReport> {
    check_alignment(gold, pred)?;
    let matrix = count_matrix(gold, pred);
    let mut per_class = Vec::with_capacity(NUM_CLASSES);
    for c in 0..NUM_CLASSES {
        let tp = matrix[c][c];
        let fp: u64 = (0..NUM_CLASSES).filter(|&g| g != c).map(|g| matrix[g][c]).sum();
        let fn_: u64 = (0..NUM_CLASSES).filter(|&p| p != c).map(|p| matrix[c][p]).sum();
        per_class.push(ClassMetrics::from_counts(class_label(c), tp, fp, fn_));
    }
    let pool = |classes: &[usize]| {
        let tp: u64 = classes.iter().map(|&c| per_class[c].true_positives).sum();
        let fp: u64 = classes.iter().map(|&c| per_class[c].false_positives).sum();
        let fn_: u64 = classes.iter().map(|&c| per_class[c].false_negatives).sum();
        (tp, fp, fn_)
    };
    let entity_classes: Vec<usize> = (1..NUM_CLASSES).collect();
    let all_classes: Vec<usize> = (0..NUM_CLASSES).collect();
    let (tp, fp, fn_) = pool(&entity_classes);
    let micro = ClassMetrics::from_counts("Micro Average", tp, fp, fn_);
    let (tp, fp, fn_) = pool(&all_classes);
    let micro_including_o = ClassMetrics::from_counts("Micro Average (incl. O)", tp, fp, fn_);
    Ok(TokenReport {
        per_class,
        micro,
        micro_including_o,
    })
}

fn count_matrix(gold: &[TagSequence], pred: &[TagSequence]) -> [[u64; NUM_CLASSES]; NUM_CLASSES] {
    let mut matrix = [[0u64; NUM_CLASSES]; NUM_CLASSES];
    for (g, p) in gold.iter().zip(pred) {
        for (gt, pt) in g.tags.iter().zip(&p.tags) {
            matrix[class_index(gt.entity_type())][class_index(pt.entity_type())] += 1;
        }
    }
    matrix
}

/// Confusion matrix over collapsed classes: cell (i, j) counts tokens with
/// gold class i predicted as class j. Row order: O then entity types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn cell(&self, gold: Option<EntityType>, pred: Option<EntityType>) -> u64 {
        self.counts[class_index(gold)][class_index(pred)]
    }
}

pub fn confusion_matrix(gold: &[TagSequence], pred: &[TagSequence]) -> Result<ConfusionMatrix> {
    check_alignment(gold, pred)?;
    let matrix = count_matrix(gold, pred);
    Ok(ConfusionMatrix {
        labels: (0..NUM_CLASSES).map(class_label).collect(),
        counts: matrix.iter().map(|row| row.to_vec()).collect(),
    })
}

/// Strict span metrics: a predicted span is a TP only when type, start and
/// end all match a gold span exactly.
pub fn evaluate_spans(gold: &[Vec<EntitySpan>], pred: &[Vec<EntitySpan>]) -> Vec<ClassMetrics> {
    let mut tp = [0u64; 6];
    let mut fp = [0u64; 6];
    let mut fn_ = [0u64; 6];
    for (g_turn, p_turn) in gold.iter().zip(pred) {
        for p in p_turn {
            let idx = class_index(Some(p.entity_type)) - 1;
            if g_turn.contains(p) {
                tp[idx] += 1;
            } else {
                fp[idx] += 1;
            }
        }
        for g in g_turn {
            if !p_turn.contains(g) {
                fn_[class_index(Some(g.entity_type)) - 1] += 1;
            }
        }
    }
    EntityType::ALL
        .iter()
        .enumerate()
        .map(|(i, ty)| ClassMetrics::from_counts(ty.to_string(), tp[i], fp[i], fn_[i]))
        .collect()
}

/// Plain-text report table: per-class rows plus the micro averages, one
/// decimal percentage point.
pub fn format_report(report: &TokenReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<24} {:>9} {:>9} {:>9}\n",
        "Entity Type", "Precision", "Recall", "F1"
    ));
    let fmt_row = |m: &ClassMetrics| {
        format!(
            "{:<24} {:>9.1} {:>9.1} {:>9.1}\n",
            m.label,
            m.precision * 100.0,
            m.recall * 100.0,
            m.f1 * 100.0
        )
    };
    for m in &report.per_class {
        out.push_str(&fmt_row(m));
    }
    out.push_str(&fmt_row(&report.micro));
    out.push_str(&fmt_row(&report.micro_including_o));
    out
}

/// Grid-search space. Defaults mirror the searched ranges: epochs sampled
/// from [5, 50], dropout 0 to 0.5 in 0.1 steps, 5 to 20 stacked layers in
/// steps of 5, and all three tag encodings. Learning rate, batch size,
/// fully-connected width and bias stay fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub epochs_min: usize,
    pub epochs_max: usize,
    pub dropouts: Vec<f64>,
    pub num_bilstm_layers: Vec<usize>,
    pub schemes: Vec<TagScheme>,
    pub lstm_hidden: usize,
    pub fc_width: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            epochs_min: 5,
            epochs_max: 50,
            dropouts: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            num_bilstm_layers: vec![5, 10, 15, 20],
            schemes: vec![TagScheme::Bio, TagScheme::Bilou, TagScheme::Io],
            lstm_hidden: 32,
            fc_width: 30,
            learning_rate: 0.001,
            batch_size: 1,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_min == 0 || self.epochs_min > self.epochs_max {
            return Err(Error::config("epochs", "requires 1 <= epochs_min <= epochs_max"));
        }
        if self.dropouts.iter().any(|&d| !(0.0..=0.5).contains(&d)) {
            return Err(Error::config("dropouts", "searched dropout must lie in [0, 0.5]"));
        }
        if self.dropouts.is_empty() || self.num_bilstm_layers.is_empty() || self.schemes.is_empty()
        {
            return Err(Error::config("grid", "every axis needs at least one value"));
        }
        Ok(())
    }

    /// Cartesian product of the discrete axes, in a fixed enumeration
    /// order; epochs are sampled per point from the point's derived seed.
    pub fn points(&self, seed: u64) -> Vec<GridPoint> {
        let mut points = Vec::new();
        let mut index = 0u64;
        for &scheme in &self.schemes {
            for &layers in &self.num_bilstm_layers {
                for &dropout in &self.dropouts {
                    let point_seed = derive_seed(seed, index);
                    let mut rng = ChaCha12Rng::seed_from_u64(point_seed);
                    let epochs = rng.gen_range(self.epochs_min..=self.epochs_max);
                    points.push(GridPoint {
                        index: index as usize,
                        scheme,
                        num_bilstm_layers: layers,
                        dropout,
                        epochs,
                        seed: point_seed,
                    });
                    index += 1;
                }
            }
        }
        points
    }

    pub fn config_for(&self, point: &GridPoint) -> TaggerConfig {
        TaggerConfig {
            scheme: point.scheme,
            num_bilstm_layers: point.num_bilstm_layers,
            lstm_hidden: self.lstm_hidden,
            fc_width: self.fc_width,
            fc_depth: 2,
            dropout_rate: point.dropout,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: point.epochs,
            use_bias: true,
            momentum: 0.0,
            seed: point.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub index: usize,
    pub scheme: TagScheme,
    pub num_bilstm_layers: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl GridPoint {
    fn sort_key(&self) -> String {
        format!(
            "scheme={} layers={:02} dropout={:.1} epochs={:02}",
            self.scheme, self.num_bilstm_layers, self.dropout, self.epochs
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub point: GridPoint,
    pub val_micro_f1: Option<f64>,
    pub val_token_accuracy: Option<f64>,
    pub best_epoch: Option<usize>,
    pub error: Option<String>,
}

/// Runs every grid point, each with a seed derived from (run seed, point
/// index), and returns results ranked by validation micro-F1 (ties: fewer
/// epochs, then lexicographic config). Output is identical for any worker
/// count; a failed point is recorded with its error and the search
/// continues.
pub fn grid_search<F>(
    spec: &GridSpec,
    train_corpus: &Corpus,
    val_corpus: &Corpus,
    provider_factory: F,
    parallelism: usize,
    seed: u64,
) -> Result<Vec<GridResult>>
where
    F: Fn() -> Box<dyn EmbeddingProvider> + Sync,
{
    spec.validate()?;
    if parallelism == 0 {
        return Err(Error::config("workers", "parallelism must be at least 1"));
    }
    let points = spec.points(seed);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))?;

    let mut results: Vec<GridResult> = pool.install(|| {
        use rayon::prelude::*;
        points
            .par_iter()
            .map(|point| {
                let config = spec.config_for(point);
                let mut provider = provider_factory();
                match train(&config, provider.as_mut(), train_corpus, val_corpus) {
                    Ok(outcome) => {
                        let best = &outcome.history[outcome.best_epoch];
                        GridResult {
                            point: *point,
                            val_micro_f1: Some(best.val_micro_f1),
                            val_token_accuracy: Some(best.val_token_accuracy),
                            best_epoch: Some(outcome.best_epoch),
                            error: None,
                        }
                    }
                    Err(e) => GridResult {
                        point: *point,
                        val_micro_f1: None,
                        val_token_accuracy: None,
                        best_epoch: None,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect()
    });

    results.sort_by(|a, b| {
        let fa = a.val_micro_f1.unwrap_or(f64::NEG_INFINITY);
        let fb = b.val_micro_f1.unwrap_or(f64::NEG_INFINITY);
        fb.partial_cmp(&fa)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.point.epochs.cmp(&b.point.epochs))
            .then_with(|| a.point.sort_key().cmp(&b.point.sort_key()))
    });
    Ok(results)
}
