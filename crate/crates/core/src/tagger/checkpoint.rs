//! Versioned tagger checkpoints. A checkpoint refuses to decode against an
//! embedding provider whose fingerprint differs from the one recorded at
//! save time.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tagger::TaggerParams;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaggerCheckpoint {
    pub version: u32,
    /// Tag alphabet as serialized symbols, in CRF index order.
    pub tag_alphabet: Vec<String>,
    pub embedding_fingerprint: String,
    pub params: TaggerParams,
}

impl TaggerCheckpoint {
    pub fn new(params: TaggerParams, embedding_fingerprint: String) -> Self {
        let tag_alphabet = params
            .config
            .scheme
            .alphabet()
            .iter()
            .map(|t| t.to_string())
            .collect();
        TaggerCheckpoint {
            version: CHECKPOINT_FORMAT_VERSION,
            tag_alphabet,
            embedding_fingerprint,
            params,
        }
    }

    /// Unwraps the parameters after checking the provider fingerprint.
    pub fn open(self, provider_fingerprint: &str) -> Result<TaggerParams> {
        if self.embedding_fingerprint != provider_fingerprint {
            return Err(Error::config(
                "model",
                format!(
                    "checkpoint was trained against embedding fingerprint {} but the \
                     provider has {}",
                    self.embedding_fingerprint, provider_fingerprint
                ),
            ));
        }
        Ok(self.params)
    }
}

pub fn save_checkpoint(checkpoint: &TaggerCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string(checkpoint).expect("checkpoint serializes");
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TaggerCheckpoint> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let checkpoint: TaggerCheckpoint = serde_json::from_str(&content).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    if checkpoint.version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::data(format!(
            "unsupported checkpoint version {}",
            checkpoint.version
        )));
    }
    Ok(checkpoint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::TagScheme;
    use crate::tagger::TaggerConfig;

    fn params() -> TaggerParams {
        TaggerParams::new(
            &TaggerConfig {
                scheme: TagScheme::Io,
                num_bilstm_layers: 1,
                lstm_hidden: 3,
                fc_width: 4,
                fc_depth: 1,
                dropout_rate: 0.0,
                learning_rate: 0.001,
                batch_size: 1,
                epochs: 1,
                use_bias: true,
                momentum: 0.0,
                seed: 1,
            },
            5,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_and_fingerprint_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let p = params();
        let ckpt = TaggerCheckpoint::new(p.clone(), "static:abc".to_string());
        save_checkpoint(&ckpt, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.tag_alphabet.len(), 7);
        assert_eq!(loaded.clone().open("static:abc").unwrap(), p);
        assert!(loaded.open("static:other").is_err());
    }

    #[test]
    fn transitions_survive_json_including_neg_infinity() {
        let p = params();
        let json = serde_json::to_string(&TaggerCheckpoint::new(p.clone(), "x".into())).unwrap();
        let back: TaggerCheckpoint = serde_json::from_str(&json).unwrap();
        assert_eq!(back.params.transitions, p.transitions);
    }
}
