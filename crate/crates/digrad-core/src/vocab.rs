//! Vocabulary, tokenization, and the embedding table.
//!
//! Token ids are dense `0..|V|`. Id 0 is the pad token (the attribution
//! baseline) and id 1 is the unknown token; both are always present.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Dense token identifier.
pub type TokenId = usize;

pub const PAD_ID: TokenId = 0;
pub const UNK_ID: TokenId = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("no token in the corpus meets min_count={0}")]
    EmptyCorpus(usize),
    #[error("embedding file contains no rows")]
    EmptyEmbeddingFile,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: expected {expected} dimensions, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("embedding row {0} contains a non-finite value")]
    NonFiniteRow(usize),
    #[error("embedding dimensions disagree: {expected} vs {found}")]
    IncompatibleDimensions { expected: usize, found: usize },
    #[error("pad row (id 0) must be all zeros")]
    NonZeroPadRow,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A token id together with its surface form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub id: TokenId,
    pub surface: String,
}

/// Surface <-> id mapping with pad at 0 and unk at 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    surfaces: Vec<String>,
    ids: HashMap<String, TokenId>,
}

impl Vocab {
    /// Builds a vocabulary from non-special surfaces; pad and unk are prepended.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut surfaces = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let mut ids = HashMap::new();
        ids.insert(PAD_TOKEN.to_string(), PAD_ID);
        ids.insert(UNK_TOKEN.to_string(), UNK_ID);
        for word in words {
            let word = word.into();
            if ids.contains_key(&word) {
                continue;
            }
            ids.insert(word.clone(), surfaces.len());
            surfaces.push(word);
        }
        Vocab { surfaces, ids }
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn id(&self, surface: &str) -> Option<TokenId> {
        self.ids.get(surface).copied()
    }

    pub fn id_or_unk(&self, surface: &str) -> TokenId {
        self.id(surface).unwrap_or(UNK_ID)
    }

    pub fn surface(&self, id: TokenId) -> Option<&str> {
        self.surfaces.get(id).map(String::as_str)
    }

    pub fn token(&self, id: TokenId) -> Option<Token> {
        self.surface(id).map(|s| Token {
            id,
            surface: s.to_string(),
        })
    }

    pub fn surfaces(&self) -> &[String] {
        &self.surfaces
    }

    /// Pad and unk are special: they never appear in top-k selections and pad
    /// never appears in neighborhoods.
    pub fn is_special(id: TokenId) -> bool {
        id == PAD_ID || id == UNK_ID
    }

    /// Lowercased word/punctuation split; out-of-vocabulary surfaces map to unk.
    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        split_surfaces(text)
            .into_iter()
            .map(|s| self.id_or_unk(&s))
            .collect()
    }
}

/// Splits text into lowercased surfaces on whitespace and punctuation
/// boundaries. Each punctuation character becomes its own surface.
pub fn split_surfaces(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
        } else if ch.is_alphanumeric() {
            word.extend(ch.to_lowercase());
        } else {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            out.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// The embedding matrix: one D-dimensional row per token id.
///
/// Rows are finite and the pad row is all zeros; both are enforced at
/// construction and preserved by training (the pad row is frozen).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    vectors: Array2<f64>,
}

impl EmbeddingTable {
    pub fn new(vectors: Array2<f64>) -> Result<Self, VocabError> {
        for (i, row) in vectors.outer_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(VocabError::NonFiniteRow(i));
            }
        }
        if vectors.nrows() > PAD_ID && vectors.row(PAD_ID).iter().any(|&v| v != 0.0) {
            return Err(VocabError::NonZeroPadRow);
        }
        Ok(EmbeddingTable { vectors })
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn row(&self, id: TokenId) -> ArrayView1<'_, f64> {
        self.vectors.row(id)
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub(crate) fn vectors_mut(&mut self) -> &mut Array2<f64> {
        &mut self.vectors
    }

    /// Stacks the embedding rows for a token sequence into an n x D matrix.
    /// Returns `None` if any id is outside the table.
    pub fn embed(&self, tokens: &[TokenId]) -> Option<Array2<f64>> {
        if tokens.iter().any(|&t| t >= self.len()) {
            return None;
        }
        let mut out = Array2::zeros((tokens.len(), self.dim()));
        for (mut row, &t) in out.outer_iter_mut().zip(tokens) {
            row.assign(&self.row(t));
        }
        Some(out)
    }

    /// SHA-256 over the dimensions and the little-endian bytes of every entry.
    /// Used by checkpoints to detect a mismatched table.
    pub fn sha256(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.len() as u64).to_le_bytes());
        hasher.update((self.dim() as u64).to_le_bytes());
        for v in self.vectors.iter() {
            hasher.update(v.to_le_bytes());
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Builds a vocabulary and a randomly initialized table from a corpus.
///
/// Tokens occurring at least `min_count` times get ids by descending
/// frequency, ties broken lexicographically. Rows are drawn uniformly from
/// [-0.1, 0.1] with the given seed; the pad row is forced to zero.
pub fn build_vocab<'a, I>(
    corpus: I,
    min_count: usize,
    dim: usize,
    seed: u64,
) -> Result<(Vocab, EmbeddingTable), VocabError>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts: HashMap<String, usize> = HashMap::new();
    for text in corpus {
        for surface in split_surfaces(text) {
            *counts.entry(surface).or_insert(0) += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_count)
        .collect();
    if kept.is_empty() {
        return Err(VocabError::EmptyCorpus(min_count));
    }
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let vocab = Vocab::from_words(kept.into_iter().map(|(s, _)| s));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vectors = Array2::zeros((vocab.len(), dim));
    for mut row in vectors.outer_iter_mut() {
        for v in row.iter_mut() {
            *v = rng.random_range(-0.1..0.1);
        }
    }
    vectors.row_mut(PAD_ID).fill(0.0);
    Ok((vocab, EmbeddingTable::new(vectors)?))
}

/// Loads a GloVe-style plain text embedding file: one `surface v1 .. vD` line
/// per token. Pad and unk rows are synthesized (zero and mean of all rows)
/// when the file does not provide them.
pub fn load_embeddings(path: &Path) -> Result<(Vocab, EmbeddingTable), VocabError> {
    let reader = BufReader::new(File::open(path)?);
    let mut dim: Option<usize> = None;
    let mut words: Vec<(String, Vec<f64>)> = Vec::new();
    let mut unk_row: Option<Vec<f64>> = None;
    let mut seen: HashMap<String, ()> = HashMap::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            return Err(VocabError::Parse {
                line: line_no,
                msg: "blank line".to_string(),
            });
        }
        let mut fields = line.split_whitespace();
        let surface = fields.next().expect("non-empty line").to_string();
        let values: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>().map_err(|e| VocabError::Parse {
                    line: line_no,
                    msg: format!("bad value {f:?}: {e}"),
                })
            })
            .collect::<Result<_, _>>()?;
        if values.is_empty() {
            return Err(VocabError::Parse {
                line: line_no,
                msg: "no vector components".to_string(),
            });
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(VocabError::DimensionMismatch {
                    line: line_no,
                    expected: d,
                    found: values.len(),
                })
            }
            Some(_) => {}
        }
        if seen.contains_key(&surface) {
            continue; // first occurrence wins
        }
        seen.insert(surface.clone(), ());
        match surface.as_str() {
            PAD_TOKEN => {} // pad row is always forced to zero
            UNK_TOKEN => unk_row = Some(values),
            _ => words.push((surface, values)),
        }
    }

    let dim = dim.ok_or(VocabError::EmptyEmbeddingFile)?;
    if words.is_empty() && unk_row.is_none() {
        return Err(VocabError::EmptyEmbeddingFile);
    }

    let unk = unk_row.unwrap_or_else(|| {
        let mut mean = vec![0.0; dim];
        for (_, values) in &words {
            for (m, v) in mean.iter_mut().zip(values) {
                *m += v;
            }
        }
        if !words.is_empty() {
            for m in mean.iter_mut() {
                *m /= words.len() as f64;
            }
        }
        mean
    });

    let vocab = Vocab::from_words(words.iter().map(|(s, _)| s.clone()));
    let mut vectors = Array2::zeros((vocab.len(), dim));
    for (i, v) in unk.iter().enumerate() {
        vectors[[UNK_ID, i]] = *v;
    }
    for (w, (_, values)) in words.iter().enumerate() {
        for (i, v) in values.iter().enumerate() {
            vectors[[w + 2, i]] = *v;
        }
    }
    Ok((vocab, EmbeddingTable::new(vectors)?))
}

/// Replaces rows of `table` with the vectors a pretrained source provides for
/// the surfaces the two vocabularies share. The unknown row is taken from the
/// source as well; the pad row stays zero; surfaces only `vocab` knows keep
/// their rows from `table`.
pub fn overlay_embeddings(
    vocab: &Vocab,
    table: &EmbeddingTable,
    source_vocab: &Vocab,
    source_table: &EmbeddingTable,
) -> Result<EmbeddingTable, VocabError> {
    if table.dim() != source_table.dim() {
        return Err(VocabError::IncompatibleDimensions {
            expected: table.dim(),
            found: source_table.dim(),
        });
    }
    let mut vectors = table.vectors().clone();
    vectors
        .row_mut(UNK_ID)
        .assign(&source_table.row(UNK_ID));
    for id in 2..vocab.len() {
        let surface = vocab.surface(id).expect("dense ids");
        if let Some(source_id) = source_vocab.id(surface) {
            vectors.row_mut(id).assign(&source_table.row(source_id));
        }
    }
    EmbeddingTable::new(vectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn tokenize_splits_words_and_punctuation() {
        let vocab = Vocab::from_words(["the", "movie", "was", "good", "!"]);
        let ids = vocab.tokenize("The movie was good!");
        let back: Vec<&str> = ids.iter().map(|&i| vocab.surface(i).unwrap()).collect();
        assert_eq!(back, ["the", "movie", "was", "good", "!"]);
    }

    #[test]
    fn tokenize_empty_input() {
        let vocab = Vocab::from_words(["a"]);
        assert!(vocab.tokenize("").is_empty());
    }

    #[test]
    fn tokenize_oov_maps_to_unk() {
        let vocab = Vocab::from_words(["a"]);
        assert_eq!(vocab.tokenize("zxqv"), vec![UNK_ID]);
    }

    #[test]
    fn build_vocab_orders_by_frequency_then_surface() {
        let (vocab, table) = build_vocab(["a b", "a"], 1, 4, 0).unwrap();
        assert_eq!(vocab.surfaces(), ["<pad>", "<unk>", "a", "b"]);
        assert_eq!(table.len(), 4);
        assert!(table.row(PAD_ID).iter().all(|&v| v == 0.0));
        assert!(table.vectors().iter().all(|v| v.abs() <= 0.1));
    }

    #[test]
    fn build_vocab_min_count_can_empty_the_corpus() {
        assert!(matches!(
            build_vocab(["a b"], 2, 4, 0),
            Err(VocabError::EmptyCorpus(2))
        ));
    }

    #[test]
    fn build_vocab_is_deterministic() {
        let (v1, t1) = build_vocab(["a b c", "b c", "c"], 1, 8, 7).unwrap();
        let (v2, t2) = build_vocab(["a b c", "b c", "c"], 1, 8, 7).unwrap();
        assert_eq!(v1, v2);
        assert_eq!(t1.vectors(), t2.vectors());
    }

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_embeddings_synthesizes_special_rows() {
        let f = write_temp("a 1.0 0.0\nb 0.0 1.0\n");
        let (vocab, table) = load_embeddings(f.path()).unwrap();
        assert_eq!(table.dim(), 2);
        assert_eq!(table.len(), 4);
        assert_eq!(vocab.id("a"), Some(2));
        assert!(table.row(PAD_ID).iter().all(|&v| v == 0.0));
        // unk is the mean of all rows
        assert_eq!(table.row(UNK_ID).to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn load_embeddings_rejects_dimension_mismatch() {
        let f = write_temp("b 1.0 0.0\na 1.0\n");
        match load_embeddings(f.path()) {
            Err(VocabError::DimensionMismatch {
                line,
                expected,
                found,
            }) => {
                assert_eq!((line, expected, found), (2, 2, 1));
            }
            other => panic!("expected DimensionMismatch, got {other:?}"),
        }
    }

    #[test]
    fn load_embeddings_rejects_empty_file() {
        let f = write_temp("");
        assert!(matches!(
            load_embeddings(f.path()),
            Err(VocabError::EmptyEmbeddingFile)
        ));
    }

    #[test]
    fn load_embeddings_reports_parse_errors_with_line() {
        let f = write_temp("a 1.0\nb x\n");
        match load_embeddings(f.path()) {
            Err(VocabError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected Parse, got {other:?}"),
        }
    }

    #[test]
    fn table_rejects_non_finite_and_nonzero_pad() {
        let bad = Array2::from_shape_vec((2, 1), vec![0.0, f64::NAN]).unwrap();
        assert!(matches!(
            EmbeddingTable::new(bad),
            Err(VocabError::NonFiniteRow(1))
        ));
        let bad_pad = Array2::from_shape_vec((2, 1), vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            EmbeddingTable::new(bad_pad),
            Err(VocabError::NonZeroPadRow)
        ));
    }

    #[test]
    fn overlay_takes_shared_surfaces_from_the_source() {
        let (vocab, table) = build_vocab(["alpha beta gamma"], 1, 2, 0).unwrap();
        let f = write_temp("beta 7.0 8.0\nother 1.0 1.0\n");
        let (src_vocab, src_table) = load_embeddings(f.path()).unwrap();
        let merged = overlay_embeddings(&vocab, &table, &src_vocab, &src_table).unwrap();
        let beta = vocab.id("beta").unwrap();
        assert_eq!(merged.row(beta).to_vec(), vec![7.0, 8.0]);
        // unk comes from the source; alpha keeps its random row; pad stays zero
        assert_eq!(merged.row(UNK_ID).to_vec(), src_table.row(UNK_ID).to_vec());
        let alpha = vocab.id("alpha").unwrap();
        assert_eq!(merged.row(alpha).to_vec(), table.row(alpha).to_vec());
        assert!(merged.row(PAD_ID).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sha256_tracks_content() {
        let t1 = EmbeddingTable::new(Array2::zeros((3, 2))).unwrap();
        let mut v = Array2::zeros((3, 2));
        v[[2, 1]] = 1.0;
        let t2 = EmbeddingTable::new(v).unwrap();
        assert_ne!(t1.sha256(), t2.sha256());
        assert_eq!(t1.sha256(), t1.sha256());
    }
}
