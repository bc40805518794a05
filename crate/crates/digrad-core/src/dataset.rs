//! Labeled-text datasets: JSONL loading and the bundled toy sentiment corpus.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ClassId;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("dataset file is empty")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub text: String,
    pub label: ClassId,
}

/// Loads a JSONL dataset: one `{"text": ..., "label": ...}` object per line.
pub fn load_jsonl(path: &Path) -> Result<Vec<(String, ClassId)>, DatasetError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord =
            serde_json::from_str(&line).map_err(|source| DatasetError::Parse {
                line: idx + 1,
                source,
            })?;
        out.push((record.text, record.label));
    }
    if out.is_empty() {
        return Err(DatasetError::Empty);
    }
    Ok(out)
}

const POSITIVE: &[&str] = &[
    "good",
    "great",
    "excellent",
    "wonderful",
    "amazing",
    "delightful",
    "superb",
    "brilliant",
    "charming",
    "uplifting",
    "gripping",
    "stunning",
    "masterful",
    "heartfelt",
    "crisp",
    "luminous",
];

const NEGATIVE: &[&str] = &[
    "bad",
    "terrible",
    "awful",
    "horrible",
    "boring",
    "bland",
    "dull",
    "tedious",
    "clumsy",
    "dreadful",
    "grating",
    "hollow",
    "lifeless",
    "muddled",
    "sloppy",
    "wooden",
];

const NOUNS: &[&str] = &[
    "movie", "film", "plot", "story", "acting", "script", "cast", "ending", "pacing", "dialogue",
];

const FILLERS: &[&str] = &["really", "very", "quite", "truly", "utterly"];

/// Seeded toy sentiment corpus over disjoint positive/negative lexicons.
/// Labels alternate (0 = negative, 1 = positive) and sentiment words never
/// cross polarity, so the classes are linearly separable under mean pooling.
pub fn toy_corpus(n: usize, seed: u64) -> Vec<(String, ClassId)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = i % 2;
            (toy_sentence(&mut rng, label), label)
        })
        .collect()
}

fn pick<'a>(rng: &mut ChaCha8Rng, set: &[&'a str]) -> &'a str {
    set[rng.random_range(0..set.len())]
}

fn toy_sentence(rng: &mut ChaCha8Rng, label: ClassId) -> String {
    let adjectives = if label == 1 { POSITIVE } else { NEGATIVE };
    let mut words: Vec<String> = Vec::new();
    match rng.random_range(0..5) {
        0 => {
            words.extend([
                "the".into(),
                pick(rng, NOUNS).into(),
                "was".into(),
                pick(rng, adjectives).into(),
            ]);
        }
        1 => {
            words.extend([
                "the".into(),
                pick(rng, NOUNS).into(),
                "was".into(),
                pick(rng, FILLERS).into(),
                pick(rng, adjectives).into(),
            ]);
        }
        2 => {
            words.extend([
                "a".into(),
                pick(rng, adjectives).into(),
                pick(rng, NOUNS).into(),
                "with".into(),
                pick(rng, adjectives).into(),
                pick(rng, NOUNS).into(),
            ]);
        }
        3 => {
            words.extend([
                "the".into(),
                pick(rng, NOUNS).into(),
                "felt".into(),
                pick(rng, adjectives).into(),
                "and".into(),
                pick(rng, adjectives).into(),
            ]);
        }
        _ => {
            words.extend([
                "it".into(),
                "was".into(),
                "a".into(),
                pick(rng, FILLERS).into(),
                pick(rng, adjectives).into(),
                pick(rng, NOUNS).into(),
            ]);
        }
    }
    let mut sentence = words.join(" ");
    match rng.random_range(0..3) {
        0 => sentence.push_str(" ."),
        1 => sentence.push_str(" !"),
        _ => {}
    }
    sentence
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn toy_corpus_is_seeded_and_balanced() {
        let a = toy_corpus(50, 3);
        let b = toy_corpus(50, 3);
        assert_eq!(a, b);
        assert_ne!(a, toy_corpus(50, 4));
        assert_eq!(a.iter().filter(|(_, l)| *l == 1).count(), 25);
    }

    #[test]
    fn toy_polarities_never_mix() {
        for (text, label) in toy_corpus(200, 11) {
            let bad_set = if label == 1 { NEGATIVE } else { POSITIVE };
            for word in text.split_whitespace() {
                assert!(!bad_set.contains(&word), "{word:?} in {text:?}");
            }
        }
    }

    #[test]
    fn jsonl_roundtrip_and_errors() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "{{\"text\": \"good film\", \"label\": 1}}").unwrap();
        writeln!(file, "{{\"text\": \"bad film\", \"label\": 0}}").unwrap();
        let data = load_jsonl(file.path()).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data[0].0, "good film");

        let mut broken = tempfile::NamedTempFile::new().unwrap();
        writeln!(broken, "{{\"text\": \"ok\", \"label\": 1}}").unwrap();
        writeln!(broken, "not json").unwrap();
        match load_jsonl(broken.path()) {
            Err(DatasetError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected Parse, got {other:?}"),
        }
    }
}
