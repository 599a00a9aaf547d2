//! CLI contract tests: exit codes, error messages, and the fail-closed
//! redaction guarantee.

use std::process::Command;

use ndarray::Array1;
use redactor::error::Result;
use redactor::pipeline::{Corpus, Split, Turn};
use redactor::provider::EmbeddingProvider;
use redactor::redaction::{redact_corpus, PlaceholderMap, REDACTION_FAILED};
use redactor::schema::TagScheme;
use redactor::tagger::{TaggerConfig, TaggerParams};

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_redactor"))
}

#[test]
fn train_with_missing_corpus_exits_1_naming_the_field() {
    let out = binary()
        .args([
            "train",
            "--train", "/nonexistent/train.conll",
            "--val", "/nonexistent/val.conll",
            "--vectors", "/nonexistent/vecs.json",
            "--model", "/tmp/never-written.json",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("train"), "stderr should name the field: {stderr}");
}

#[test]
fn malformed_conll_exits_2_with_line_context() {
    let dir = tempfile::tempdir().unwrap();
    let gold = dir.path().join("gold.conll");
    std::fs::write(&gold, "hello\tO\nbroken line without tab\n").unwrap();
    let out = binary()
        .args(["eval", "--gold", gold.to_str().unwrap(), "--pred", gold.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("gold.conll:2"),
        "stderr should carry file and line: {stderr}"
    );
}

#[test]
fn eval_identical_files_reports_perfect_scores() {
    let dir = tempfile::tempdir().unwrap();
    let gold = dir.path().join("gold.conll");
    std::fs::write(
        &gold,
        "# speaker=agent\nmy\tO\nname\tO\nis\tO\njohn\tB-NAME\ndoe\tI-NAME\n\n",
    )
    .unwrap();
    let out = binary()
        .args(["eval", "--gold", gold.to_str().unwrap(), "--pred", gold.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    let name_row = stdout.lines().find(|l| l.starts_with("NAME")).unwrap();
    assert_eq!(name_row.matches("100.0").count(), 3, "row: {name_row}");
}

#[test]
fn invalid_noise_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let noise = dir.path().join("noise.json");
    std::fs::write(
        &noise,
        r#"{"misrecognition_rate": 1.5, "redaction_rate": 0.0, "false_start_rate": 0.0,
            "entity_density": 1.0, "seed": 1}"#,
    )
    .unwrap();
    let out = binary()
        .args([
            "gen-data", "--turns", "5",
            "--noise", noise.to_str().unwrap(),
            "--out", dir.path().join("out.conll").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

/// Provider that fails on a marker token, for exercising the fail-closed
/// path.
struct SabotagedProvider {
    dim: usize,
}

impl EmbeddingProvider for SabotagedProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> String {
        "sabotaged:test".to_string()
    }

    fn embed_turn(&mut self, tokens: &[String]) -> Result<Vec<Array1<f64>>> {
        if tokens.iter().any(|t| t == "poison") {
            return Err(redactor::Error::data("injected embedding failure"));
        }
        Ok(tokens.iter().map(|_| Array1::zeros(self.dim)).collect())
    }

    fn reset(&mut self) {}
}

#[test]
fn corrupted_turn_redacts_to_the_sentinel_only() {
    let config = TaggerConfig {
        scheme: TagScheme::Bio,
        num_bilstm_layers: 1,
        lstm_hidden: 4,
        fc_width: 4,
        fc_depth: 1,
        dropout_rate: 0.0,
        learning_rate: 0.001,
        batch_size: 1,
        epochs: 1,
        use_bias: true,
        momentum: 0.0,
        seed: 5,
    };
    let params = TaggerParams::new(&config, 6).unwrap();
    let mut provider = SabotagedProvider { dim: 6 };
    let turns = vec![
        Turn::new("a", "hello there", vec!["hello".into(), "there".into()], None).unwrap(),
        Turn::new("b", "poison turn", vec!["poison".into(), "turn".into()], None).unwrap(),
        Turn::new("a", "goodbye", vec!["goodbye".into()], None).unwrap(),
    ];
    let corpus = Corpus::new(Split::Test, turns);
    let lines = redact_corpus(&params, &mut provider, &corpus, &PlaceholderMap::default());
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[1], REDACTION_FAILED);
    assert_ne!(lines[0], REDACTION_FAILED);
    assert_ne!(lines[2], REDACTION_FAILED);
}
