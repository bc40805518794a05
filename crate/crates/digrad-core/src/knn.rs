//! Exact K-nearest-neighbor lists over the embedding table.
//!
//! The index is brute force, computed once and reusable across runs. Lists
//! exclude the owner token and the pad token, are ordered by non-decreasing
//! distance, and break ties by smaller token id.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::ArrayView1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vocab::{EmbeddingTable, TokenId, PAD_ID};

const INDEX_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum KnnError {
    #[error("index file version {0} is not supported")]
    UnsupportedVersion(u32),
    #[error("index header mismatch: {field} is {stored} but the table has {live}")]
    HeaderMismatch {
        field: &'static str,
        stored: usize,
        live: usize,
    },
    #[error("unknown distance metric {0:?}")]
    UnknownMetric(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("index parse: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    Euclidean,
    Cosine,
}

impl DistanceMetric {
    pub fn distance(self, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
        match self {
            DistanceMetric::Euclidean => a
                .iter()
                .zip(b.iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            DistanceMetric::Cosine => {
                let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
                let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na == 0.0 || nb == 0.0 {
                    // zero vectors carry no direction; treat them as orthogonal
                    1.0
                } else {
                    1.0 - dot / (na * nb)
                }
            }
        }
    }
}

impl std::fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DistanceMetric::Euclidean => write!(f, "euclidean"),
            DistanceMetric::Cosine => write!(f, "cosine"),
        }
    }
}

impl FromStr for DistanceMetric {
    type Err = KnnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "euclidean" => Ok(DistanceMetric::Euclidean),
            "cosine" => Ok(DistanceMetric::Cosine),
            other => Err(KnnError::UnknownMetric(other.to_string())),
        }
    }
}

/// Precomputed neighbor lists, one per token id. The pad token has an empty
/// list; every other list has exactly `min(k, |V|-2)` entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborIndex {
    k: usize,
    metric: DistanceMetric,
    dim: usize,
    neighbors: Vec<Vec<TokenId>>,
}

impl NeighborIndex {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn metric(&self) -> DistanceMetric {
        self.metric
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, id: TokenId) -> &[TokenId] {
        &self.neighbors[id]
    }

    pub fn save(&self, path: &Path) -> Result<(), KnnError> {
        let file = IndexFile {
            version: INDEX_FORMAT_VERSION,
            k: self.k,
            metric: self.metric,
            vocab_size: self.neighbors.len(),
            dim: self.dim,
            neighbors: self.neighbors.clone(),
        };
        let mut writer = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut writer, &file)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        Ok(())
    }

    /// Loads an index and validates its header against the live table.
    pub fn load(path: &Path, table: &EmbeddingTable) -> Result<Self, KnnError> {
        let reader = BufReader::new(File::open(path)?);
        let file: IndexFile = serde_json::from_reader(reader)?;
        if file.version != INDEX_FORMAT_VERSION {
            return Err(KnnError::UnsupportedVersion(file.version));
        }
        if file.vocab_size != table.len() {
            return Err(KnnError::HeaderMismatch {
                field: "vocab_size",
                stored: file.vocab_size,
                live: table.len(),
            });
        }
        if file.dim != table.dim() {
            return Err(KnnError::HeaderMismatch {
                field: "dim",
                stored: file.dim,
                live: table.dim(),
            });
        }
        if file.neighbors.len() != file.vocab_size {
            return Err(KnnError::HeaderMismatch {
                field: "neighbors",
                stored: file.neighbors.len(),
                live: file.vocab_size,
            });
        }
        Ok(NeighborIndex {
            k: file.k,
            metric: file.metric,
            dim: file.dim,
            neighbors: file.neighbors,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    version: u32,
    k: usize,
    metric: DistanceMetric,
    vocab_size: usize,
    dim: usize,
    neighbors: Vec<Vec<TokenId>>,
}

/// Exact nearest neighbors for every non-pad token, excluding the token
/// itself and pad. Construction parallelizes over tokens; the result is
/// independent of the parallelism degree.
pub fn build_knn_index(table: &EmbeddingTable, k: usize, metric: DistanceMetric) -> NeighborIndex {
    assert!(k >= 1, "k must be at least 1");
    assert!(table.len() >= 3, "need at least 3 tokens to build an index");
    let v = table.len();
    let neighbors: Vec<Vec<TokenId>> = (0..v)
        .into_par_iter()
        .map(|i| {
            if i == PAD_ID {
                return Vec::new();
            }
            let own = table.row(i);
            let mut candidates: Vec<(f64, TokenId)> = (0..v)
                .filter(|&j| j != i && j != PAD_ID)
                .map(|j| (metric.distance(own, table.row(j)), j))
                .collect();
            candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            candidates.truncate(k);
            candidates.into_iter().map(|(_, j)| j).collect()
        })
        .collect();
    NeighborIndex {
        k,
        metric,
        dim: table.dim(),
        neighbors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn table_from_rows(rows: &[&[f64]]) -> EmbeddingTable {
        let dim = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        EmbeddingTable::new(Array2::from_shape_vec((rows.len(), dim), flat).unwrap()).unwrap()
    }

    // pad, unk, then a=[0,0], b=[1,0], c=[3,0]
    fn line_table() -> EmbeddingTable {
        table_from_rows(&[
            &[0.0, 0.0],
            &[10.0, 10.0],
            &[0.0, 0.0],
            &[1.0, 0.0],
            &[3.0, 0.0],
        ])
    }

    #[test]
    fn knn_matches_hand_computed_distances() {
        let table = line_table();
        let index = build_knn_index(&table, 1, DistanceMetric::Euclidean);
        assert_eq!(index.neighbors(2), &[3]); // a -> b
        assert_eq!(index.neighbors(3), &[2]); // b -> a
        assert_eq!(index.neighbors(4), &[3]); // c -> b
    }

    #[test]
    fn list_length_clamps_to_vocab() {
        let table = line_table();
        let index = build_knn_index(&table, 10, DistanceMetric::Euclidean);
        for id in 1..table.len() {
            assert_eq!(index.neighbors(id).len(), 3); // min(10, 5 - 2) per token
        }
        assert!(index.neighbors(PAD_ID).is_empty());
    }

    #[test]
    fn equidistant_ties_prefer_smaller_id() {
        // b=[1,0] and c=[-1,0] are both at distance 1 from a=[0,0]
        let table = table_from_rows(&[
            &[0.0, 0.0],
            &[9.0, 9.0],
            &[0.0, 0.0],
            &[1.0, 0.0],
            &[-1.0, 0.0],
        ]);
        let index = build_knn_index(&table, 1, DistanceMetric::Euclidean);
        assert_eq!(index.neighbors(2), &[3]);
    }

    #[test]
    fn lists_exclude_self_and_pad() {
        let table = line_table();
        let index = build_knn_index(&table, 10, DistanceMetric::Euclidean);
        for id in 0..table.len() {
            assert!(!index.neighbors(id).contains(&id) || id == PAD_ID);
            assert!(!index.neighbors(id).contains(&PAD_ID));
        }
    }

    #[test]
    fn index_roundtrips_and_validates_header() {
        let table = line_table();
        let index = build_knn_index(&table, 2, DistanceMetric::Cosine);
        let file = tempfile::NamedTempFile::new().unwrap();
        index.save(file.path()).unwrap();
        let loaded = NeighborIndex::load(file.path(), &table).unwrap();
        assert_eq!(loaded, index);

        let other = table_from_rows(&[&[0.0], &[1.0], &[2.0]]);
        match NeighborIndex::load(file.path(), &other) {
            Err(KnnError::HeaderMismatch { field, .. }) => {
                assert!(field == "vocab_size" || field == "dim");
            }
            other => panic!("expected HeaderMismatch, got {other:?}"),
        }
    }

    #[test]
    fn serialization_is_deterministic() {
        let table = line_table();
        let index = build_knn_index(&table, 2, DistanceMetric::Euclidean);
        let f1 = tempfile::NamedTempFile::new().unwrap();
        let f2 = tempfile::NamedTempFile::new().unwrap();
        index.save(f1.path()).unwrap();
        index.save(f2.path()).unwrap();
        assert_eq!(
            std::fs::read(f1.path()).unwrap(),
            std::fs::read(f2.path()).unwrap()
        );
    }
}
