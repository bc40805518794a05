//! Interpolation paths from the baseline to an input word embedding.
//!
//! The straight-line strategy places points at even fractions of the span.
//! The discretized strategies instead walk backwards from the input: each
//! step picks an anchor word from the current word's neighborhood (or at
//! random, for the ablation variants), then projects it into the region that
//! is coordinatewise between the current point and the baseline. Every
//! coordinate of every point stays weakly between the baseline and the input,
//! with a consistent ordering along the path, so a Riemann sum over the path
//! is well defined.

use std::str::FromStr;

use ndarray::{Array1, ArrayView1};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knn::NeighborIndex;
use crate::vocab::{EmbeddingTable, TokenId};

/// A point closer than this to its predecessor means the walk has stalled.
const STALL_EPSILON: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum PathError {
    #[error("vectors disagree on dimension: {0} vs {1}")]
    Shape(usize, usize),
    #[error("neighborhood is empty")]
    EmptyNeighborhood,
    #[error("token id {0} is outside the vocabulary of size {1}")]
    UnknownToken(TokenId, usize),
    #[error("strategy {0} requires a neighbor index")]
    MissingIndex(PathStrategy),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PathStrategy {
    #[serde(rename = "ig")]
    Ig,
    #[serde(rename = "dig-greedy")]
    DigGreedy,
    #[serde(rename = "dig-maxcount")]
    DigMaxCount,
    #[serde(rename = "dig-random-anchor")]
    DigRandomAnchor,
    #[serde(rename = "dig-random-neighbor")]
    DigRandomNeighbor,
}

impl PathStrategy {
    pub const ALL: [PathStrategy; 5] = [
        PathStrategy::Ig,
        PathStrategy::DigGreedy,
        PathStrategy::DigMaxCount,
        PathStrategy::DigRandomAnchor,
        PathStrategy::DigRandomNeighbor,
    ];

    /// Strategies that look tokens up in the K-nearest-neighbor index.
    pub fn needs_index(self) -> bool {
        matches!(
            self,
            PathStrategy::DigGreedy | PathStrategy::DigMaxCount | PathStrategy::DigRandomNeighbor
        )
    }

    pub fn is_random(self) -> bool {
        matches!(
            self,
            PathStrategy::DigRandomAnchor | PathStrategy::DigRandomNeighbor
        )
    }
}

impl std::fmt::Display for PathStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            PathStrategy::Ig => "ig",
            PathStrategy::DigGreedy => "dig-greedy",
            PathStrategy::DigMaxCount => "dig-maxcount",
            PathStrategy::DigRandomAnchor => "dig-random-anchor",
            PathStrategy::DigRandomNeighbor => "dig-random-neighbor",
        };
        write!(f, "{name}")
    }
}

impl FromStr for PathStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ig" => Ok(PathStrategy::Ig),
            "dig-greedy" => Ok(PathStrategy::DigGreedy),
            "dig-maxcount" => Ok(PathStrategy::DigMaxCount),
            "dig-random-anchor" => Ok(PathStrategy::DigRandomAnchor),
            "dig-random-neighbor" => Ok(PathStrategy::DigRandomNeighbor),
            other => Err(format!("unknown path strategy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathConfig {
    /// Number of Riemann steps m; a path has m+1 points before upsampling.
    pub steps: usize,
    pub strategy: PathStrategy,
    /// Midpoint-insertion passes applied after construction.
    pub upsample_factor: usize,
    /// Seed for the random strategies.
    pub seed: u64,
}

impl Default for PathConfig {
    fn default() -> Self {
        PathConfig {
            steps: 30,
            strategy: PathStrategy::Ig,
            upsample_factor: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PointProvenance {
    /// The baseline or the input itself.
    Endpoint,
    /// A point on the straight line.
    Linear,
    /// A monotonized anchor produced by a discretized strategy.
    MonotonizedAnchor,
    /// A midpoint inserted by upsampling.
    Upsampled,
}

/// Ordered points from the baseline (index 0) to the input (last index) for
/// one word, with per-point provenance and the number of coordinate clamps
/// that were needed to keep the sequence monotonic.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationPath {
    pub word: TokenId,
    pub strategy: PathStrategy,
    pub steps: usize,
    pub points: Vec<Array1<f64>>,
    pub provenance: Vec<PointProvenance>,
    pub clamped_dims: usize,
}

impl InterpolationPath {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn baseline(&self) -> ArrayView1<'_, f64> {
        self.points.first().expect("paths have two endpoints").view()
    }

    pub fn input(&self) -> ArrayView1<'_, f64> {
        self.points.last().expect("paths have two endpoints").view()
    }

    /// Points strictly between the endpoints.
    pub fn interior(&self) -> &[Array1<f64>] {
        if self.points.len() <= 2 {
            &[]
        } else {
            &self.points[1..self.points.len() - 1]
        }
    }

    /// The straight line x' + (k/m)(x - x'), k = 0..m, with the endpoints
    /// stored exactly.
    pub fn linear(
        word: TokenId,
        input: ArrayView1<'_, f64>,
        baseline: ArrayView1<'_, f64>,
        steps: usize,
    ) -> Result<Self, PathError> {
        if input.len() != baseline.len() {
            return Err(PathError::Shape(input.len(), baseline.len()));
        }
        assert!(steps >= 1, "steps must be at least 1");
        let mut points = Vec::with_capacity(steps + 1);
        let mut provenance = Vec::with_capacity(steps + 1);
        points.push(baseline.to_owned());
        provenance.push(PointProvenance::Endpoint);
        for k in 1..steps {
            let alpha = k as f64 / steps as f64;
            let point =
                Array1::from_shape_fn(input.len(), |i| baseline[i] + alpha * (input[i] - baseline[i]));
            points.push(point);
            provenance.push(PointProvenance::Linear);
        }
        points.push(input.to_owned());
        provenance.push(PointProvenance::Endpoint);
        Ok(InterpolationPath {
            word,
            strategy: PathStrategy::Ig,
            steps,
            points,
            provenance,
            clamped_dims: 0,
        })
    }
}

/// One record of the optional path dump: `{word, strategy, m, f, points, clamps}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathDumpRecord {
    pub word: TokenId,
    pub strategy: PathStrategy,
    pub m: usize,
    pub f: usize,
    pub points: Vec<Vec<f64>>,
    pub clamps: usize,
}

impl PathDumpRecord {
    pub fn from_path(path: &InterpolationPath, upsample_factor: usize) -> Self {
        PathDumpRecord {
            word: path.word,
            strategy: path.strategy,
            m: path.steps,
            f: upsample_factor,
            points: path.points.iter().map(|p| p.to_vec()).collect(),
            clamps: path.clamped_dims,
        }
    }
}

/// Dimensions of `a` that already lie weakly between the baseline and `w`
/// (boundaries inclusive, on either orientation).
pub fn monotonic_dims(
    a: ArrayView1<'_, f64>,
    w: ArrayView1<'_, f64>,
    baseline: ArrayView1<'_, f64>,
) -> Result<Vec<usize>, PathError> {
    if a.len() != w.len() || w.len() != baseline.len() {
        return Err(PathError::Shape(a.len(), w.len().max(baseline.len())));
    }
    Ok((0..a.len())
        .filter(|&i| {
            (baseline[i] <= a[i] && a[i] <= w[i]) || (baseline[i] >= a[i] && a[i] >= w[i])
        })
        .collect())
}

/// Keeps the monotonic dimensions of `a` and resets each non-monotonic one to
/// `w - (w - baseline)/m`, one step from `w` toward the baseline. The result
/// is coordinatewise between `w` and the baseline.
pub fn monotonize(
    a: ArrayView1<'_, f64>,
    w: ArrayView1<'_, f64>,
    baseline: ArrayView1<'_, f64>,
    steps: usize,
) -> Result<Array1<f64>, PathError> {
    assert!(steps >= 1, "steps must be at least 1");
    let mono = monotonic_dims(a, w, baseline)?;
    let mut is_mono = vec![false; a.len()];
    for i in mono {
        is_mono[i] = true;
    }
    Ok(Array1::from_shape_fn(a.len(), |i| {
        if is_mono[i] {
            a[i]
        } else {
            w[i] - (w[i] - baseline[i]) / steps as f64
        }
    }))
}

/// Picks the candidate whose monotonized form is closest to itself
/// (Euclidean; ties prefer the smaller token id) and returns the candidate
/// together with its monotonized form.
pub fn anchor_greedy(
    candidates: &[(TokenId, ArrayView1<'_, f64>)],
    w: ArrayView1<'_, f64>,
    baseline: ArrayView1<'_, f64>,
    steps: usize,
) -> Result<(TokenId, Array1<f64>, Array1<f64>), PathError> {
    if candidates.is_empty() {
        return Err(PathError::EmptyNeighborhood);
    }
    let mut best: Option<(f64, TokenId, ArrayView1<'_, f64>, Array1<f64>)> = None;
    for &(id, cand) in candidates {
        let projected = monotonize(cand, w, baseline, steps)?;
        let dist = cand
            .iter()
            .zip(projected.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let better = match &best {
            None => true,
            Some((d, i, _, _)) => dist < *d || (dist == *d && id < *i),
        };
        if better {
            best = Some((dist, id, cand, projected));
        }
    }
    let (_, id, anchor, projected) = best.expect("non-empty candidates");
    Ok((id, anchor.to_owned(), projected))
}

/// Picks the candidate with the most monotonic dimensions; ties prefer the
/// smaller token id.
pub fn anchor_maxcount(
    candidates: &[(TokenId, ArrayView1<'_, f64>)],
    w: ArrayView1<'_, f64>,
    baseline: ArrayView1<'_, f64>,
) -> Result<(TokenId, Array1<f64>), PathError> {
    if candidates.is_empty() {
        return Err(PathError::EmptyNeighborhood);
    }
    let mut best: Option<(usize, TokenId, ArrayView1<'_, f64>)> = None;
    for &(id, cand) in candidates {
        let count = monotonic_dims(cand, w, baseline)?.len();
        let better = match &best {
            None => true,
            Some((c, i, _)) => count > *c || (count == *c && id < *i),
        };
        if better {
            best = Some((count, id, cand));
        }
    }
    let (_, id, anchor) = best.expect("non-empty candidates");
    Ok((id, anchor.to_owned()))
}

fn gather_candidates<'t>(
    index: &NeighborIndex,
    table: &'t EmbeddingTable,
    word: TokenId,
) -> Vec<(TokenId, ArrayView1<'t, f64>)> {
    index
        .neighbors(word)
        .iter()
        .map(|&id| (id, table.row(id)))
        .collect()
}

/// Builds the interpolation path for one word.
///
/// Straight-line paths come from [`InterpolationPath::linear`]. Discretized
/// strategies start at the input and iterate m-1 times: select an anchor from
/// the current word's neighborhood (or at random), monotonize it against the
/// current point, record it, and continue from the anchor. The baseline is
/// prepended as the final point. Recorded coordinates are clamped into the
/// interval between the previous point and the baseline; the clamp count is
/// kept on the path.
///
/// Every path has exactly m+1 points before upsampling, so the paths of a
/// sentence can be traversed in lockstep. A walk that stops moving holds its
/// final position for the remaining steps (the repeated points contribute
/// zero-length Riemann segments), and a walk whose input already equals the
/// baseline never consults the neighborhood.
pub fn build_path(
    word: TokenId,
    table: &EmbeddingTable,
    index: Option<&NeighborIndex>,
    baseline: ArrayView1<'_, f64>,
    cfg: &PathConfig,
) -> Result<InterpolationPath, PathError> {
    if word >= table.len() {
        return Err(PathError::UnknownToken(word, table.len()));
    }
    if baseline.len() != table.dim() {
        return Err(PathError::Shape(baseline.len(), table.dim()));
    }
    assert!(cfg.steps >= 1, "steps must be at least 1");
    let input = table.row(word);
    let dim = table.dim();
    let m = cfg.steps;

    let mut path = if cfg.strategy == PathStrategy::Ig {
        InterpolationPath::linear(word, input, baseline, m)?
    } else if m == 1 {
        InterpolationPath {
            word,
            strategy: cfg.strategy,
            steps: m,
            points: vec![baseline.to_owned(), input.to_owned()],
            provenance: vec![PointProvenance::Endpoint, PointProvenance::Endpoint],
            clamped_dims: 0,
        }
    } else if input == baseline {
        // coincident endpoints: the walk has nowhere to go, so every point
        // sits on the baseline
        let mut degenerate = InterpolationPath::linear(word, input, baseline, m)?;
        degenerate.strategy = cfg.strategy;
        degenerate
    } else {
        if cfg.strategy.needs_index() && index.is_none() {
            return Err(PathError::MissingIndex(cfg.strategy));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut recorded: Vec<Array1<f64>> = Vec::with_capacity(m - 1);
        let mut clamps = 0usize;
        let mut current_word = word;
        let mut current = input.to_owned();
        for _ in 1..m {
            let (anchor_id, mut projected) = match cfg.strategy {
                PathStrategy::DigGreedy => {
                    let candidates =
                        gather_candidates(index.expect("checked above"), table, current_word);
                    let (id, _, projected) =
                        anchor_greedy(&candidates, current.view(), baseline, m)?;
                    (id, projected)
                }
                PathStrategy::DigMaxCount => {
                    let candidates =
                        gather_candidates(index.expect("checked above"), table, current_word);
                    let (id, anchor) = anchor_maxcount(&candidates, current.view(), baseline)?;
                    (id, monotonize(anchor.view(), current.view(), baseline, m)?)
                }
                PathStrategy::DigRandomAnchor => {
                    // anywhere in the vocabulary except pad
                    let id = rng.random_range(1..table.len());
                    (id, monotonize(table.row(id), current.view(), baseline, m)?)
                }
                PathStrategy::DigRandomNeighbor => {
                    let list = index.expect("checked above").neighbors(current_word);
                    if list.is_empty() {
                        return Err(PathError::EmptyNeighborhood);
                    }
                    let id = list[rng.random_range(0..list.len())];
                    (id, monotonize(table.row(id), current.view(), baseline, m)?)
                }
                PathStrategy::Ig => unreachable!("handled above"),
            };
            for i in 0..dim {
                let lo = baseline[i].min(current[i]);
                let hi = baseline[i].max(current[i]);
                if projected[i] < lo {
                    projected[i] = lo;
                    clamps += 1;
                } else if projected[i] > hi {
                    projected[i] = hi;
                    clamps += 1;
                }
            }
            let moved: f64 = projected
                .iter()
                .zip(current.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if moved < STALL_EPSILON {
                break;
            }
            recorded.push(projected.clone());
            current_word = anchor_id;
            current = projected;
        }
        // a stalled walk holds its position for the remaining steps
        while recorded.len() < m - 1 {
            recorded.push(current.clone());
        }

        let mut points = Vec::with_capacity(recorded.len() + 2);
        let mut provenance = Vec::with_capacity(recorded.len() + 2);
        points.push(baseline.to_owned());
        provenance.push(PointProvenance::Endpoint);
        for point in recorded.into_iter().rev() {
            points.push(point);
            provenance.push(PointProvenance::MonotonizedAnchor);
        }
        points.push(input.to_owned());
        provenance.push(PointProvenance::Endpoint);
        InterpolationPath {
            word,
            strategy: cfg.strategy,
            steps: m,
            points,
            provenance,
            clamped_dims: clamps,
        }
    };

    if cfg.upsample_factor > 0 {
        path = upsample(&path, cfg.upsample_factor);
    }
    Ok(path)
}

/// Inserts the midpoint of every consecutive pair, `factor` times. Each pass
/// grows a path of length L to 2L-1; endpoints are untouched.
pub fn upsample(path: &InterpolationPath, factor: usize) -> InterpolationPath {
    let mut out = path.clone();
    for _ in 0..factor {
        let mut points = Vec::with_capacity(out.points.len() * 2 - 1);
        let mut provenance = Vec::with_capacity(points.capacity());
        points.push(out.points[0].clone());
        provenance.push(out.provenance[0]);
        for i in 1..out.points.len() {
            let mid = (&out.points[i - 1] + &out.points[i]) / 2.0;
            points.push(mid);
            provenance.push(PointProvenance::Upsampled);
            points.push(out.points[i].clone());
            provenance.push(out.provenance[i]);
        }
        out.points = points;
        out.provenance = provenance;
    }
    out
}

/// A consecutive pair of points whose ordering in some dimension breaks the
/// baseline-to-input direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MonotonicityViolation {
    pub dim: usize,
    pub lower: usize,
    pub upper: usize,
}

/// Exhaustive per-dimension ordering check over consecutive points
/// (consecutive suffices by transitivity). Empty result means the path is
/// monotonic.
pub fn validate_path(path: &InterpolationPath) -> Vec<MonotonicityViolation> {
    let mut violations = Vec::new();
    if path.points.len() < 2 {
        return violations;
    }
    let baseline = path.baseline();
    let input = path.input();
    for dim in 0..baseline.len() {
        let ascending = baseline[dim] <= input[dim];
        for j in 1..path.points.len() {
            let prev = path.points[j - 1][dim];
            let next = path.points[j][dim];
            let ok = if ascending { prev <= next } else { prev >= next };
            if !ok {
                violations.push(MonotonicityViolation {
                    dim,
                    lower: j - 1,
                    upper: j,
                });
            }
        }
    }
    violations
}
