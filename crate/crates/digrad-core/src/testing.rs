//! Test support: closed-form oracles and generators used by the unit,
//! property, and acceptance suites. Not part of the library contract.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{
    Classifier, ClassId, GradientOracle, GradientRequest, GradientResponse, ModelError, OutputHead,
};
use crate::vocab::{EmbeddingTable, PAD_ID};

/// F(points) = w . meanpool(points) + b, exposed on both heads as-is.
/// Completeness holds exactly for any monotonic path on this oracle.
#[derive(Debug, Clone)]
pub struct LinearOracle {
    pub weights: Array1<f64>,
    pub bias: f64,
}

impl LinearOracle {
    pub fn random(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LinearOracle {
            weights: Array1::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0)),
            bias: rng.random_range(-0.5..0.5),
        }
    }

    fn scalar(&self, points: &ArrayView2<'_, f64>) -> f64 {
        let n = points.nrows() as f64;
        let mut acc = self.bias;
        for row in points.outer_iter() {
            acc += row.dot(&self.weights) / n;
        }
        acc
    }
}

impl GradientOracle for LinearOracle {
    fn dim(&self) -> usize {
        self.weights.len()
    }

    fn num_classes(&self) -> usize {
        2
    }

    fn forward(&self, points: ArrayView2<'_, f64>) -> Result<Array1<f64>, ModelError> {
        if points.ncols() != self.dim() {
            return Err(ModelError::Shape {
                expected: self.dim(),
                found: points.ncols(),
            });
        }
        let f = self.scalar(&points);
        Ok(Array1::from_vec(vec![f, -f]))
    }

    fn gradient(&self, req: &GradientRequest) -> Result<GradientResponse, ModelError> {
        let points = req.points.view();
        if points.ncols() != self.dim() {
            return Err(ModelError::Shape {
                expected: self.dim(),
                found: points.ncols(),
            });
        }
        let n = points.nrows();
        let sign = if req.target == 0 { 1.0 } else { -1.0 };
        let value = sign * self.scalar(&points);
        let grads = Array2::from_shape_fn((n, self.dim()), |(_, j)| {
            sign * self.weights[j] / n as f64
        });
        Ok(GradientResponse { value, grads })
    }
}

/// One-dimensional F(x) = x^2 of the pooled input; dF/dx_j = 2 pool(x) / n.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadraticOracle;

impl GradientOracle for QuadraticOracle {
    fn dim(&self) -> usize {
        1
    }

    fn num_classes(&self) -> usize {
        2
    }

    fn forward(&self, points: ArrayView2<'_, f64>) -> Result<Array1<f64>, ModelError> {
        let f = self.pool(&points);
        Ok(Array1::from_vec(vec![f * f, -f * f]))
    }

    fn gradient(&self, req: &GradientRequest) -> Result<GradientResponse, ModelError> {
        let points = req.points.view();
        let n = points.nrows();
        let pooled = self.pool(&points);
        let sign = if req.target == 0 { 1.0 } else { -1.0 };
        let grads = Array2::from_shape_fn((n, 1), |_| sign * 2.0 * pooled / n as f64);
        Ok(GradientResponse {
            value: sign * pooled * pooled,
            grads,
        })
    }
}

impl QuadraticOracle {
    fn pool(&self, points: &ArrayView2<'_, f64>) -> f64 {
        points.column(0).sum() / points.nrows() as f64
    }
}

/// Central finite differences of the selected head scalar, entry by entry.
/// Uses only `value`, never `gradient`, so it stays an independent check.
pub fn finite_difference(
    oracle: &dyn GradientOracle,
    points: &Array2<f64>,
    target: ClassId,
    head: OutputHead,
    h: f64,
) -> Array2<f64> {
    let mut grads = Array2::zeros(points.raw_dim());
    let mut work = points.clone();
    for i in 0..points.nrows() {
        for j in 0..points.ncols() {
            let orig = work[[i, j]];
            work[[i, j]] = orig + h;
            let plus = oracle.value(work.view(), target, head).expect("value");
            work[[i, j]] = orig - h;
            let minus = oracle.value(work.view(), target, head).expect("value");
            work[[i, j]] = orig;
            grads[[i, j]] = (plus - minus) / (2.0 * h);
        }
    }
    grads
}

/// A classifier with seeded random parameters over a seeded random table.
pub fn random_classifier(
    vocab_size: usize,
    dim: usize,
    hidden: usize,
    classes: usize,
    seed: u64,
) -> Classifier {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vectors = Array2::from_shape_fn((vocab_size, dim), |_| rng.random_range(-0.5..0.5));
    vectors.row_mut(PAD_ID).fill(0.0);
    let table = EmbeddingTable::new(vectors).expect("finite rows");
    let w1 = Array2::from_shape_fn((hidden, dim), |_| rng.random_range(-0.7..0.7));
    let b1 = Array1::from_shape_fn(hidden, |_| rng.random_range(-0.2..0.2));
    let w2 = Array2::from_shape_fn((classes, hidden), |_| rng.random_range(-0.7..0.7));
    let b2 = Array1::from_shape_fn(classes, |_| rng.random_range(-0.2..0.2));
    Classifier::new(table, w1, b1, w2, b2).expect("valid shapes")
}

/// A seeded random table whose rows cluster around centers at graded radii,
/// loosely shaped like pretrained word vectors: norms spread from near the
/// origin outward instead of forming a uniform blob or a hollow shell.
pub fn clustered_table(vocab_size: usize, dim: usize, clusters: usize, seed: u64) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clusters = clusters.max(1);
    let centers: Vec<Array1<f64>> = (0..clusters)
        .map(|ci| {
            let mut center = Array1::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0));
            let norm = center.dot(&center).sqrt().max(1e-9);
            let radius = if clusters == 1 {
                1.0
            } else {
                0.25 + 2.0 * ci as f64 / (clusters - 1) as f64
            };
            center *= radius / norm;
            center
        })
        .collect();
    let mut vectors = Array2::zeros((vocab_size, dim));
    for i in 1..vocab_size {
        let center = &centers[rng.random_range(0..centers.len())];
        for j in 0..dim {
            vectors[[i, j]] = center[j] + rng.random_range(-0.15..0.15);
        }
    }
    EmbeddingTable::new(vectors).expect("finite rows")
}
