//! Embedding providers feeding the tagger: static tables, frozen random
//! vectors (a baseline), and contextual char-LM presets with optional
//! pooling and stacking.

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

use crate::contextual::{embed_tokens, stack, CharLm, PooledMemory};
use crate::error::{Error, Result};
use crate::math::{derive_seed, hash_str};
use crate::static_embeddings::VectorTable;

/// Source of frozen per-token vectors. Stateful only for pooled variants;
/// `reset` clears any pooling memory between evaluation runs.
pub trait EmbeddingProvider {
    fn dim(&self) -> usize;
    /// Stable identity of the underlying embedding artifacts; checkpoints
    /// refuse to decode against a different fingerprint.
    fn fingerprint(&self) -> String;
    fn embed_turn(&mut self, tokens: &[String]) -> Result<Vec<Array1<f64>>>;
    fn reset(&mut self) {}
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

pub struct StaticProvider {
    table: VectorTable,
    fingerprint: String,
}

impl StaticProvider {
    pub fn new(table: VectorTable) -> Self {
        let json = serde_json::to_vec(&table).expect("table serializes");
        let fingerprint = format!("static:{}", sha256_hex(&json));
        StaticProvider { table, fingerprint }
    }

    pub fn table(&self) -> &VectorTable {
        &self.table
    }
}

impl EmbeddingProvider for StaticProvider {
    fn dim(&self) -> usize {
        self.table.dim
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }

    fn embed_turn(&mut self, tokens: &[String]) -> Result<Vec<Array1<f64>>> {
        Ok(tokens.iter().map(|t| self.table.vector_for(t)).collect())
    }
}

/// Frozen random vectors, one per word form, derived from a seed. The
/// baseline control for the trained-embedding comparison.
pub struct RandomProvider {
    dim: usize,
    seed: u64,
}

impl RandomProvider {
    pub fn new(dim: usize, seed: u64) -> Self {
        RandomProvider { dim, seed }
    }
}

impl EmbeddingProvider for RandomProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> String {
        format!("random:dim={}:seed={}", self.dim, self.seed)
    }

    fn embed_turn(&mut self, tokens: &[String]) -> Result<Vec<Array1<f64>>> {
        Ok(tokens
            .iter()
            .map(|t| {
                let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(self.seed, hash_str(t)));
                let bound = 1.0 / (self.dim as f64).sqrt();
                Array1::from_shape_fn(self.dim, |_| rng.gen_range(-bound..bound))
            })
            .collect())
    }
}

/// The four contextual presets: plain, stacked with static vectors, pooled,
/// and pooled stacked with static vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextualPreset {
    Flair,
    FlairFasttext,
    FlairPooled,
    FlairPooledFasttext,
}

impl ContextualPreset {
    pub fn name(&self) -> &'static str {
        match self {
            ContextualPreset::Flair => "flair",
            ContextualPreset::FlairFasttext => "flair+fasttext",
            ContextualPreset::FlairPooled => "flair-pooled",
            ContextualPreset::FlairPooledFasttext => "flair-pooled+fasttext",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "flair" => Ok(ContextualPreset::Flair),
            "flair+fasttext" => Ok(ContextualPreset::FlairFasttext),
            "flair-pooled" => Ok(ContextualPreset::FlairPooled),
            "flair-pooled+fasttext" => Ok(ContextualPreset::FlairPooledFasttext),
            other => Err(Error::config(
                "preset",
                format!("unknown embedding preset `{other}`"),
            )),
        }
    }

    pub fn pooled(&self) -> bool {
        matches!(
            self,
            ContextualPreset::FlairPooled | ContextualPreset::FlairPooledFasttext
        )
    }

    pub fn stacked(&self) -> bool {
        matches!(
            self,
            ContextualPreset::FlairFasttext | ContextualPreset::FlairPooledFasttext
        )
    }
}

pub struct ContextualProvider {
    forward: CharLm,
    backward: CharLm,
    preset: ContextualPreset,
    static_table: Option<VectorTable>,
    memory: PooledMemory,
    fingerprint: String,
}

impl ContextualProvider {
    pub fn new(
        forward: CharLm,
        backward: CharLm,
        preset: ContextualPreset,
        static_table: Option<VectorTable>,
    ) -> Result<Self> {
        if forward.hidden_size != backward.hidden_size {
            return Err(Error::config(
                "hidden_size",
                "forward and backward LMs must share hidden_size",
            ));
        }
        if preset.stacked() && static_table.is_none() {
            return Err(Error::config(
                "preset",
                format!("preset `{}` needs a static vector table", preset.name()),
            ));
        }
        let mut hasher = Sha256::new();
        hasher.update(preset.name().as_bytes());
        hasher.update(serde_json::to_vec(&forward).expect("serializes"));
        hasher.update(serde_json::to_vec(&backward).expect("serializes"));
        if let Some(table) = &static_table {
            hasher.update(serde_json::to_vec(table).expect("serializes"));
        }
        let fingerprint = format!("contextual:{}:{:x}", preset.name(), hasher.finalize());
        Ok(ContextualProvider {
            forward,
            backward,
            preset,
            static_table,
            memory: PooledMemory::new(),
            fingerprint,
        })
    }
}

impl EmbeddingProvider for ContextualProvider {
    fn dim(&self) -> usize {
        let base = 2 * self.forward.hidden_size;
        base + self.static_table.as_ref().map_or(0, |t| t.dim)
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }

    fn embed_turn(&mut self, tokens: &[String]) -> Result<Vec<Array1<f64>>> {
        let contextual = embed_tokens(&self.forward, &self.backward, tokens)?;
        let mut out = Vec::with_capacity(tokens.len());
        for (token, instance) in tokens.iter().zip(contextual) {
            let base = if self.preset.pooled() {
                self.memory.pooled_embed(token, &instance)?
            } else {
                instance
            };
            let v = match &self.static_table {
                Some(table) => stack(&[base, table.vector_for(token)])?,
                None => base,
            };
            out.push(v);
        }
        Ok(out)
    }

    fn reset(&mut self) {
        self.memory.reset();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contextual::{train_char_lm, CharLmConfig, Direction};
    use crate::static_embeddings::{train_static, StaticConfig};

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn random_provider_is_deterministic_per_word() {
        let mut p = RandomProvider::new(8, 42);
        let a = p.embed_turn(&toks("hello world hello")).unwrap();
        assert_eq!(a[0], a[2]);
        assert_ne!(a[0], a[1]);
        let b = p.embed_turn(&toks("hello")).unwrap();
        assert_eq!(a[0], b[0]);
    }

    #[test]
    fn contextual_presets_dim_and_pooling() {
        let turns: Vec<String> = (0..30).map(|_| "my name is ann".to_string()).collect();
        let config = CharLmConfig {
            hidden_size: 8,
            sequence_length: 16,
            batch_size: 2,
            epochs: 1,
            learning_rate: 0.3,
            seed: 1,
            char_embed_dim: 6,
        };
        let (fwd, _) = train_char_lm(&turns, Direction::Forward, &config).unwrap();
        let (bwd, _) = train_char_lm(&turns, Direction::Backward, &config).unwrap();
        let static_corpus: Vec<Vec<String>> = turns.iter().map(|t| toks(t)).collect();
        let table = train_static(
            &static_corpus,
            &StaticConfig {
                dim: 10,
                epochs: 1,
                min_count: 1,
                ..StaticConfig::default()
            },
        )
        .unwrap();

        let mut plain =
            ContextualProvider::new(fwd.clone(), bwd.clone(), ContextualPreset::Flair, None)
                .unwrap();
        assert_eq!(plain.dim(), 16);
        let out = plain.embed_turn(&toks("my name is ann")).unwrap();
        assert_eq!(out[0].len(), 16);

        let stacked = ContextualProvider::new(
            fwd.clone(),
            bwd.clone(),
            ContextualPreset::FlairFasttext,
            Some(table.clone()),
        )
        .unwrap();
        assert_eq!(stacked.dim(), 26);

        let mut pooled =
            ContextualProvider::new(fwd.clone(), bwd.clone(), ContextualPreset::FlairPooled, None)
                .unwrap();
        // Pooled vectors for a repeated word drift toward the running mean,
        // so two passes over different contexts differ from the raw pass.
        let a = pooled.embed_turn(&toks("ann is here")).unwrap();
        let b = pooled.embed_turn(&toks("call ann now")).unwrap();
        assert_eq!(a[0].len(), 16);
        assert_eq!(b[1].len(), 16);
        pooled.reset();
        let c = pooled.embed_turn(&toks("ann is here")).unwrap();
        assert_eq!(a[0], c[0]);

        assert!(ContextualProvider::new(
            fwd,
            bwd,
            ContextualPreset::FlairFasttext,
            None
        )
        .is_err());
    }

    #[test]
    fn preset_names_round_trip() {
        for preset in [
            ContextualPreset::Flair,
            ContextualPreset::FlairFasttext,
            ContextualPreset::FlairPooled,
            ContextualPreset::FlairPooledFasttext,
        ] {
            assert_eq!(ContextualPreset::parse(preset.name()).unwrap(), preset);
        }
        assert!(ContextualPreset::parse("bert").is_err());
    }
}
