//! The differentiable classifier and the gradient-oracle contract.
//!
//! The classifier is deliberately small: embedding lookup, mean pooling over
//! positions, one tanh hidden layer, and a softmax output. It is the smallest
//! model whose gradients with respect to the embeddings are nonlinear, which
//! is what path attribution needs to be interesting. Anything that can
//! produce outputs and exact input gradients can stand in for it through the
//! [`GradientOracle`] trait.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;
use crate::vocab::{build_vocab, EmbeddingTable, Vocab, PAD_ID};

pub type ClassId = usize;

const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input has {found} columns but the model expects {expected}")]
    Shape { expected: usize, found: usize },
    #[error("input sequence is empty")]
    EmptyInput,
    #[error("target class {target} out of range for {classes} classes")]
    TargetOutOfRange { target: ClassId, classes: usize },
    #[error("batch element {index}: {source}")]
    Batch {
        index: usize,
        source: Box<ModelError>,
    },
    #[error("class {0} has no examples in the dataset")]
    DegenerateDataset(ClassId),
    #[error("training needs at least two classes, found {0}")]
    TooFewClasses(usize),
    #[error("no trainable examples after tokenization")]
    EmptyTrainingSet,
    #[error("checkpoint version {0} is not supported")]
    CheckpointVersion(u32),
    #[error("checkpoint refuses to load: stored table hash {stored} != computed {computed}")]
    TableHashMismatch { stored: String, computed: String },
    #[error("checkpoint is internally inconsistent: {0}")]
    CorruptCheckpoint(String),
    #[error(transparent)]
    Vocab(#[from] crate::vocab::VocabError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("checkpoint parse: {0}")]
    Json(#[from] serde_json::Error),
}

/// Which scalar the gradient is taken of: the post-softmax probability of the
/// target class, or its pre-softmax logit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputHead {
    Probability,
    Logit,
}

/// A point to differentiate at: one vector per word position.
#[derive(Debug, Clone)]
pub struct GradientRequest {
    pub points: Array2<f64>,
    pub target: ClassId,
    pub head: OutputHead,
}

/// Scalar model output at the point plus d(output)/d(input) per entry.
#[derive(Debug, Clone)]
pub struct GradientResponse {
    pub value: f64,
    pub grads: Array2<f64>,
}

/// Contract between attribution and any differentiable model: given a
/// sentence of word vectors and a target class, produce the scalar output and
/// exact per-dimension gradients for every position.
pub trait GradientOracle: Sync {
    fn dim(&self) -> usize;

    fn num_classes(&self) -> usize;

    /// Output distribution over classes for a sentence of word vectors.
    fn forward(&self, points: ArrayView2<'_, f64>) -> Result<Array1<f64>, ModelError>;

    fn gradient(&self, req: &GradientRequest) -> Result<GradientResponse, ModelError>;

    /// Elementwise `gradient`, preserving order. The first failing element
    /// aborts with its error and index.
    fn gradient_batch(&self, reqs: &[GradientRequest]) -> Result<Vec<GradientResponse>, ModelError> {
        reqs.iter()
            .enumerate()
            .map(|(index, req)| {
                self.gradient(req).map_err(|e| ModelError::Batch {
                    index,
                    source: Box::new(e),
                })
            })
            .collect()
    }

    /// Scalar output for the selected head without the gradients.
    fn value(
        &self,
        points: ArrayView2<'_, f64>,
        target: ClassId,
        head: OutputHead,
    ) -> Result<f64, ModelError> {
        let req = GradientRequest {
            points: points.to_owned(),
            target,
            head,
        };
        Ok(self.gradient(&req)?.value)
    }
}

/// Pooling over word positions. Only mean pooling is supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Mean,
}

/// embedding -> mean pool -> tanh hidden layer -> linear -> softmax
#[derive(Debug, Clone)]
pub struct Classifier {
    embedding: EmbeddingTable,
    w1: Array2<f64>, // hidden x dim
    b1: Array1<f64>,
    w2: Array2<f64>, // classes x hidden
    b2: Array1<f64>,
    pooling: Pooling,
}

impl Classifier {
    pub fn new(
        embedding: EmbeddingTable,
        w1: Array2<f64>,
        b1: Array1<f64>,
        w2: Array2<f64>,
        b2: Array1<f64>,
    ) -> Result<Self, ModelError> {
        if w1.ncols() != embedding.dim() {
            return Err(ModelError::Shape {
                expected: embedding.dim(),
                found: w1.ncols(),
            });
        }
        if w1.nrows() != b1.len() || w2.ncols() != w1.nrows() || w2.nrows() != b2.len() {
            return Err(ModelError::CorruptCheckpoint(
                "weight shapes disagree".to_string(),
            ));
        }
        let finite = w1.iter().all(|v| v.is_finite())
            && b1.iter().all(|v| v.is_finite())
            && w2.iter().all(|v| v.is_finite())
            && b2.iter().all(|v| v.is_finite());
        if !finite {
            return Err(ModelError::CorruptCheckpoint(
                "non-finite parameter".to_string(),
            ));
        }
        Ok(Classifier {
            embedding,
            w1,
            b1,
            w2,
            b2,
            pooling: Pooling::Mean,
        })
    }

    pub fn embedding(&self) -> &EmbeddingTable {
        &self.embedding
    }

    pub fn hidden_dim(&self) -> usize {
        self.b1.len()
    }

    pub fn pooling(&self) -> Pooling {
        self.pooling
    }

    fn check_points(&self, points: &ArrayView2<'_, f64>) -> Result<(), ModelError> {
        if points.ncols() != self.dim() {
            return Err(ModelError::Shape {
                expected: self.dim(),
                found: points.ncols(),
            });
        }
        if points.nrows() == 0 {
            return Err(ModelError::EmptyInput);
        }
        Ok(())
    }

    /// Pooled input, pre-activation, hidden activation, logits, probabilities.
    fn forward_parts(
        &self,
        points: &ArrayView2<'_, f64>,
    ) -> (Array1<f64>, Array1<f64>, Array1<f64>, Array1<f64>) {
        let pooled = points.mean_axis(Axis(0)).expect("non-empty input");
        let pre = self.w1.dot(&pooled) + &self.b1;
        let hidden = pre.mapv(f64::tanh);
        let logits = self.w2.dot(&hidden) + &self.b2;
        (pooled, hidden, logits.clone(), softmax(&logits))
    }

    pub fn logits(&self, points: ArrayView2<'_, f64>) -> Result<Array1<f64>, ModelError> {
        self.check_points(&points)?;
        let (_, _, logits, _) = self.forward_parts(&points);
        Ok(logits)
    }

    #[cfg(test)]
    #[allow(clippy::type_complexity)]
    pub(crate) fn params(&self) -> (&Array2<f64>, &Array1<f64>, &Array2<f64>, &Array1<f64>) {
        (&self.w1, &self.b1, &self.w2, &self.b2)
    }
}

fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp = logits.mapv(|z| (z - max).exp());
    let sum = exp.sum();
    exp / sum
}

impl GradientOracle for Classifier {
    fn dim(&self) -> usize {
        self.w1.ncols()
    }

    fn num_classes(&self) -> usize {
        self.b2.len()
    }

    fn forward(&self, points: ArrayView2<'_, f64>) -> Result<Array1<f64>, ModelError> {
        self.check_points(&points)?;
        let (_, _, _, probs) = self.forward_parts(&points);
        Ok(probs)
    }

    fn gradient(&self, req: &GradientRequest) -> Result<GradientResponse, ModelError> {
        let points = req.points.view();
        self.check_points(&points)?;
        if req.target >= self.num_classes() {
            return Err(ModelError::TargetOutOfRange {
                target: req.target,
                classes: self.num_classes(),
            });
        }
        let n = points.nrows();
        let (_, hidden, logits, probs) = self.forward_parts(&points);

        // d(scalar)/d(logits)
        let (value, dz) = match req.head {
            OutputHead::Probability => {
                let p_t = probs[req.target];
                let mut dz = probs.mapv(|p_c| -p_t * p_c);
                dz[req.target] += p_t;
                (p_t, dz)
            }
            OutputHead::Logit => {
                let mut dz = Array1::zeros(self.num_classes());
                dz[req.target] = 1.0;
                (logits[req.target], dz)
            }
        };

        let dpre = self.w2.t().dot(&dz) * hidden.mapv(|h| 1.0 - h * h);
        let dpooled = self.w1.t().dot(&dpre);
        // mean pooling spreads the pooled gradient evenly over positions
        let per_position = dpooled.mapv(|g| g / n as f64);
        let grads = Array2::from_shape_fn((n, self.dim()), |(_, j)| per_position[j]);
        Ok(GradientResponse { value, grads })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub min_count: usize,
    /// Fraction of the dataset held out for validation accuracy.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            learning_rate: 0.5,
            batch_size: 16,
            hidden_dim: 16,
            embed_dim: 16,
            min_count: 1,
            val_fraction: 0.2,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub vocab: Vocab,
    pub classifier: Classifier,
    pub report: TrainReport,
}

/// Minibatch SGD with cross-entropy over the whole model, embeddings
/// included. The pad embedding row stays frozen at zero. Fully seeded:
/// the same dataset and config always produce identical parameters.
pub fn train(examples: &[(String, ClassId)], cfg: &TrainConfig) -> Result<TrainOutcome, ModelError> {
    let (vocab, table) = build_vocab(
        examples.iter().map(|(t, _)| t.as_str()),
        cfg.min_count,
        cfg.embed_dim,
        seed::derive(cfg.seed, seed::STREAM_EMBED_INIT, 0),
    )?;
    train_with_vocab(examples, cfg, vocab, table)
}

/// [`train`] over a caller-supplied vocabulary and initial table, e.g. one
/// seeded from a pretrained embedding file. `cfg.embed_dim` and
/// `cfg.min_count` are ignored; the table decides.
pub fn train_with_vocab(
    examples: &[(String, ClassId)],
    cfg: &TrainConfig,
    vocab: Vocab,
    mut table: EmbeddingTable,
) -> Result<TrainOutcome, ModelError> {
    let classes = examples.iter().map(|(_, l)| l + 1).max().unwrap_or(0);
    if classes < 2 {
        return Err(ModelError::TooFewClasses(classes));
    }
    for class in 0..classes {
        if !examples.iter().any(|&(_, l)| l == class) {
            return Err(ModelError::DegenerateDataset(class));
        }
    }

    let tokenized: Vec<(Vec<usize>, ClassId)> = examples
        .iter()
        .map(|(text, label)| (vocab.tokenize(text), *label))
        .filter(|(tokens, _)| !tokens.is_empty())
        .collect();
    if tokenized.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }

    let mut order: Vec<usize> = (0..tokenized.len()).collect();
    let mut split_rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, seed::STREAM_SPLIT, 0));
    order.shuffle(&mut split_rng);
    let val_len = ((tokenized.len() as f64) * cfg.val_fraction.clamp(0.0, 0.9)) as usize;
    let (train_idx, val_idx) = order.split_at(tokenized.len() - val_len);

    let dim = table.dim();
    let hidden = cfg.hidden_dim;
    let mut init_rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, seed::STREAM_WEIGHT_INIT, 0));
    let s1 = 1.0 / (dim as f64).sqrt();
    let mut w1 = Array2::zeros((hidden, dim));
    for v in w1.iter_mut() {
        *v = init_rng.random_range(-s1..s1);
    }
    let mut b1 = Array1::zeros(hidden);
    let s2 = 1.0 / (hidden as f64).sqrt();
    let mut w2 = Array2::zeros((classes, hidden));
    for v in w2.iter_mut() {
        *v = init_rng.random_range(-s2..s2);
    }
    let mut b2 = Array1::zeros(classes);

    let mut epoch_log = Vec::with_capacity(cfg.epochs);
    let mut batch_order: Vec<usize> = train_idx.to_vec();
    for epoch in 0..cfg.epochs {
        let mut epoch_rng =
            ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, seed::STREAM_EPOCH, epoch as u64));
        batch_order.shuffle(&mut epoch_rng);
        let mut loss_sum = 0.0;
        for batch in batch_order.chunks(cfg.batch_size.max(1)) {
            let mut gw1 = Array2::zeros((hidden, dim));
            let mut gb1 = Array1::zeros(hidden);
            let mut gw2 = Array2::zeros((classes, hidden));
            let mut gb2 = Array1::zeros(classes);
            let mut gembed: Array2<f64> = Array2::zeros((table.len(), dim));
            for &i in batch {
                let (tokens, label) = &tokenized[i];
                let points = table.embed(tokens).expect("ids from this vocab");
                let n = points.nrows() as f64;
                let pooled = points.mean_axis(Axis(0)).expect("non-empty");
                let pre = w1.dot(&pooled) + &b1;
                let h = pre.mapv(f64::tanh);
                let logits = w2.dot(&h) + &b2;
                let probs = softmax(&logits);
                loss_sum += -probs[*label].max(1e-12).ln();

                let mut dz = probs;
                dz[*label] -= 1.0;
                for c in 0..classes {
                    gb2[c] += dz[c];
                    for j in 0..hidden {
                        gw2[[c, j]] += dz[c] * h[j];
                    }
                }
                let dpre = w2.t().dot(&dz) * h.mapv(|v| 1.0 - v * v);
                for j in 0..hidden {
                    gb1[j] += dpre[j];
                    for d in 0..dim {
                        gw1[[j, d]] += dpre[j] * pooled[d];
                    }
                }
                let dx = w1.t().dot(&dpre).mapv(|g| g / n);
                for &t in tokens {
                    if t == PAD_ID {
                        continue;
                    }
                    for d in 0..dim {
                        gembed[[t, d]] += dx[d];
                    }
                }
            }
            let scale = cfg.learning_rate / batch.len() as f64;
            w1 -= &(gw1 * scale);
            b1 -= &(gb1 * scale);
            w2 -= &(gw2 * scale);
            b2 -= &(gb2 * scale);
            {
                let vectors = table.vectors_mut();
                for t in 0..vectors.nrows() {
                    if t == PAD_ID {
                        continue;
                    }
                    for d in 0..dim {
                        vectors[[t, d]] -= scale * gembed[[t, d]];
                    }
                }
            }
        }

        let snapshot = Classifier::new(table.clone(), w1.clone(), b1.clone(), w2.clone(), b2.clone())?;
        let train_acc = accuracy(&snapshot, &tokenized, train_idx);
        epoch_log.push(EpochStats {
            epoch,
            loss: loss_sum / batch_order.len().max(1) as f64,
            train_accuracy: train_acc,
        });
    }

    let classifier = Classifier::new(table, w1, b1, w2, b2)?;
    let train_accuracy = accuracy(&classifier, &tokenized, train_idx);
    let val_accuracy = if val_idx.is_empty() {
        None
    } else {
        Some(accuracy(&classifier, &tokenized, val_idx))
    };
    Ok(TrainOutcome {
        vocab,
        classifier,
        report: TrainReport {
            epochs: epoch_log,
            train_accuracy,
            val_accuracy,
        },
    })
}

fn accuracy(model: &Classifier, data: &[(Vec<usize>, ClassId)], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let correct = idx
        .iter()
        .filter(|&&i| {
            let (tokens, label) = &data[i];
            let points = model.embedding().embed(tokens).expect("ids from vocab");
            let probs = model.forward(points.view()).expect("valid input");
            argmax(&probs) == *label
        })
        .count();
    correct as f64 / idx.len() as f64
}

pub fn argmax(values: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    dim: usize,
    hidden: usize,
    classes: usize,
    vocab: Vec<String>,
    embedding: Vec<Vec<f64>>,
    w1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    w2: Vec<Vec<f64>>,
    b2: Vec<f64>,
    table_sha256: String,
}

fn matrix_to_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<Array2<f64>, ModelError> {
    let nrows = rows.len();
    let ncols = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(ModelError::CorruptCheckpoint(format!(
            "{what} rows have uneven lengths"
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((nrows, ncols), flat)
        .map_err(|e| ModelError::CorruptCheckpoint(format!("{what}: {e}")))
}

/// Writes a versioned checkpoint: dimensions, class count, the vocabulary,
/// every parameter matrix, and a hash of the embedding table.
pub fn save_checkpoint(path: &Path, vocab: &Vocab, model: &Classifier) -> Result<(), ModelError> {
    let file = CheckpointFile {
        version: CHECKPOINT_FORMAT_VERSION,
        dim: model.dim(),
        hidden: model.hidden_dim(),
        classes: model.num_classes(),
        vocab: vocab.surfaces().to_vec(),
        embedding: matrix_to_rows(model.embedding().vectors()),
        w1: matrix_to_rows(&model.w1),
        b1: model.b1.to_vec(),
        w2: matrix_to_rows(&model.w2),
        b2: model.b2.to_vec(),
        table_sha256: model.embedding().sha256(),
    };
    let mut writer = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut writer, &file)?;
    writer.write_all(b"\n")?;
    writer.flush()?;
    Ok(())
}

/// Loads a checkpoint, recomputes the embedding table hash, and refuses to
/// load when it disagrees with the stored one.
pub fn load_checkpoint(path: &Path) -> Result<(Vocab, Classifier), ModelError> {
    let reader = BufReader::new(File::open(path)?);
    let file: CheckpointFile = serde_json::from_reader(reader)?;
    if file.version != CHECKPOINT_FORMAT_VERSION {
        return Err(ModelError::CheckpointVersion(file.version));
    }
    let embedding = rows_to_matrix(&file.embedding, "embedding")?;
    if embedding.nrows() != file.vocab.len() || embedding.ncols() != file.dim {
        return Err(ModelError::CorruptCheckpoint(
            "embedding shape disagrees with header".to_string(),
        ));
    }
    let table = EmbeddingTable::new(embedding)?;
    let computed = table.sha256();
    if computed != file.table_sha256 {
        return Err(ModelError::TableHashMismatch {
            stored: file.table_sha256,
            computed,
        });
    }
    let words: Vec<String> = file.vocab.iter().skip(2).cloned().collect();
    let vocab = Vocab::from_words(words);
    if vocab.surfaces() != file.vocab.as_slice() {
        return Err(ModelError::CorruptCheckpoint(
            "vocabulary does not start with pad/unk".to_string(),
        ));
    }
    let w1 = rows_to_matrix(&file.w1, "w1")?;
    let w2 = rows_to_matrix(&file.w2, "w2")?;
    if w1.nrows() != file.hidden || w2.nrows() != file.classes {
        return Err(ModelError::CorruptCheckpoint(
            "weight shapes disagree with header".to_string(),
        ));
    }
    let classifier = Classifier::new(
        table,
        w1,
        Array1::from_vec(file.b1),
        w2,
        Array1::from_vec(file.b2),
    )?;
    Ok((vocab, classifier))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::toy_corpus;
    use crate::testing::{finite_difference, random_classifier};

    fn small_points(n: usize, dim: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, dim), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_final_layer_gives_uniform_distribution() {
        let table = EmbeddingTable::new(Array2::zeros((4, 3))).unwrap();
        let model = Classifier::new(
            table,
            Array2::from_shape_fn((5, 3), |(i, j)| (i + j) as f64 * 0.1),
            Array1::zeros(5),
            Array2::zeros((3, 5)),
            Array1::zeros(3),
        )
        .unwrap();
        let probs = model.forward(Array2::zeros((2, 3)).view()).unwrap();
        for p in probs.iter() {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_pooling_is_order_invariant() {
        let model = random_classifier(6, 4, 8, 2, 3);
        let points = small_points(5, 4, 9);
        let mut perm = points.clone();
        perm.swap_axes(0, 0);
        let mut rows: Vec<_> = points.outer_iter().map(|r| r.to_owned()).collect();
        rows.reverse();
        for (i, r) in rows.iter().enumerate() {
            perm.row_mut(i).assign(r);
        }
        let a = model.forward(points.view()).unwrap();
        let b = model.forward(perm.view()).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn probability_head_is_softmax_of_logit_head() {
        let model = random_classifier(6, 4, 8, 3, 5);
        let points = small_points(3, 4, 11);
        let probs = model.forward(points.view()).unwrap();
        let logits = model.logits(points.view()).unwrap();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp = logits.mapv(|z| (z - max).exp());
        let sum = exp.sum();
        for (p, e) in probs.iter().zip(exp.iter()) {
            assert!((p - e / sum).abs() < 1e-9);
        }
        // probability simplex invariant
        assert!((probs.sum() - 1.0).abs() < 1e-9);
        assert!(probs.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn forward_rejects_shape_mismatch() {
        let model = random_classifier(6, 4, 8, 2, 3);
        assert!(matches!(
            model.forward(Array2::zeros((2, 5)).view()),
            Err(ModelError::Shape {
                expected: 4,
                found: 5
            })
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let model = random_classifier(8, 5, 7, 3, 17);
        for trial in 0..20 {
            let points = small_points(1 + trial % 4, 5, 100 + trial as u64);
            let req = GradientRequest {
                points: points.clone(),
                target: trial % 3,
                head: if trial % 2 == 0 {
                    OutputHead::Probability
                } else {
                    OutputHead::Logit
                },
            };
            let resp = model.gradient(&req).unwrap();
            let fd = finite_difference(&model, &points, req.target, req.head, 1e-4);
            for (a, b) in resp.grads.iter().zip(fd.iter()) {
                let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-4);
                assert!(rel < 1e-4, "rel error {rel} (ad {a}, fd {b})");
            }
        }
    }

    #[test]
    fn probability_gradients_sum_to_zero_over_classes() {
        let model = random_classifier(6, 4, 8, 3, 23);
        let points = small_points(3, 4, 29);
        let mut total = Array2::<f64>::zeros((3, 4));
        for target in 0..3 {
            let resp = model
                .gradient(&GradientRequest {
                    points: points.clone(),
                    target,
                    head: OutputHead::Probability,
                })
                .unwrap();
            total += &resp.grads;
        }
        for v in total.iter() {
            assert!(v.abs() < 1e-12, "softmax gradients must cancel, got {v}");
        }
    }

    #[test]
    fn batch_matches_singletons_and_handles_empty() {
        let model = random_classifier(6, 4, 8, 2, 31);
        let reqs: Vec<GradientRequest> = (0..4)
            .map(|i| GradientRequest {
                points: small_points(2, 4, 40 + i),
                target: (i % 2) as usize,
                head: OutputHead::Probability,
            })
            .collect();
        let batch = model.gradient_batch(&reqs).unwrap();
        for (req, resp) in reqs.iter().zip(&batch) {
            let single = model.gradient(req).unwrap();
            assert_eq!(single.value, resp.value);
            assert_eq!(single.grads, resp.grads);
        }
        // independent of partitioning
        let first = model.gradient_batch(&reqs[..2]).unwrap();
        assert_eq!(first[1].value, batch[1].value);
        assert!(model.gradient_batch(&[]).unwrap().is_empty());
    }

    #[test]
    fn batch_error_carries_index() {
        let model = random_classifier(6, 4, 8, 2, 37);
        let reqs = vec![
            GradientRequest {
                points: small_points(2, 4, 50),
                target: 0,
                head: OutputHead::Probability,
            },
            GradientRequest {
                points: small_points(2, 4, 51),
                target: 9,
                head: OutputHead::Probability,
            },
        ];
        match model.gradient_batch(&reqs) {
            Err(ModelError::Batch { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected Batch error, got {other:?}"),
        }
    }

    #[test]
    fn training_fits_a_separable_toy_set() {
        let data = toy_corpus(200, 3);
        let outcome = train(
            &data,
            &TrainConfig {
                epochs: 20,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        assert!(
            outcome.report.train_accuracy >= 0.95,
            "train accuracy {}",
            outcome.report.train_accuracy
        );
    }

    #[test]
    fn training_is_deterministic() {
        let data = toy_corpus(60, 5);
        let cfg = TrainConfig {
            epochs: 4,
            ..TrainConfig::default()
        };
        let a = train(&data, &cfg).unwrap();
        let b = train(&data, &cfg).unwrap();
        assert_eq!(a.classifier.w1, b.classifier.w1);
        assert_eq!(a.classifier.b2, b.classifier.b2);
        assert_eq!(
            a.classifier.embedding().vectors(),
            b.classifier.embedding().vectors()
        );
    }

    #[test]
    fn training_rejects_single_class() {
        let data: Vec<(String, ClassId)> =
            vec![("good movie".into(), 0), ("great film".into(), 0)];
        assert!(matches!(
            train(&data, &TrainConfig::default()),
            Err(ModelError::TooFewClasses(1))
        ));
        let gap: Vec<(String, ClassId)> = vec![("good".into(), 0), ("bad".into(), 2)];
        assert!(matches!(
            train(&gap, &TrainConfig::default()),
            Err(ModelError::DegenerateDataset(1))
        ));
    }

    #[test]
    fn pad_row_stays_frozen_through_training() {
        let data = toy_corpus(80, 9);
        let outcome = train(
            &data,
            &TrainConfig {
                epochs: 6,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let pad = outcome.classifier.embedding().row(PAD_ID);
        assert!(pad.iter().all(|&v| v == 0.0), "pad row must stay zero");
    }

    #[test]
    fn checkpoint_roundtrips_and_detects_tampering() {
        let data = toy_corpus(60, 11);
        let outcome = train(
            &data,
            &TrainConfig {
                epochs: 3,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let file = tempfile::NamedTempFile::new().unwrap();
        save_checkpoint(file.path(), &outcome.vocab, &outcome.classifier).unwrap();
        let (vocab, loaded) = load_checkpoint(file.path()).unwrap();
        assert_eq!(vocab, outcome.vocab);
        assert_eq!(loaded.w1, outcome.classifier.w1);
        assert_eq!(
            loaded.embedding().vectors(),
            outcome.classifier.embedding().vectors()
        );

        // flip one embedding entry; the stored hash no longer matches
        let text = std::fs::read_to_string(file.path()).unwrap();
        let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
        value["embedding"][2][0] = serde_json::json!(123.456);
        std::fs::write(file.path(), serde_json::to_string(&value).unwrap()).unwrap();
        assert!(matches!(
            load_checkpoint(file.path()),
            Err(ModelError::TableHashMismatch { .. })
        ));
    }

    #[test]
    fn checkpoint_rejects_unknown_version() {
        let data = toy_corpus(40, 13);
        let outcome = train(
            &data,
            &TrainConfig {
                epochs: 1,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let file = tempfile::NamedTempFile::new().unwrap();
        save_checkpoint(file.path(), &outcome.vocab, &outcome.classifier).unwrap();
        let text = std::fs::read_to_string(file.path()).unwrap();
        let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
        value["version"] = serde_json::json!(99);
        std::fs::write(file.path(), serde_json::to_string(&value).unwrap()).unwrap();
        assert!(matches!(
            load_checkpoint(file.path()),
            Err(ModelError::CheckpointVersion(99))
        ));
    }
}
