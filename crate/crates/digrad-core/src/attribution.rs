//! From paths and gradients to attributions.
//!
//! A word's attribution is a right-endpoint Riemann sum along its path:
//! sum over k of grad_i(x^k) * (x^k_i - x^{k-1}_i), with x^0 the baseline and
//! the last point the input. On the straight-line path this reproduces the
//! classic integrated-gradients sum exactly. Each word gets its own path, and
//! the paths are traversed in lockstep: the gradient at step k is evaluated
//! on the full sentence whose every position sits at its own k-th path point,
//! so step 0 is the all-pad sentence, the last step is the input, and the
//! completeness residual is pure integral-approximation error.

use std::str::FromStr;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knn::NeighborIndex;
use crate::model::{argmax, ClassId, GradientOracle, GradientRequest, ModelError, OutputHead};
use crate::paths::{build_path, validate_path, InterpolationPath, PathConfig, PathStrategy};
use crate::seed;
use crate::vocab::{EmbeddingTable, TokenId, Vocab, PAD_ID};

/// Guard for the completeness-residual denominator.
const DELTA_EPSILON: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error("sentence is empty")]
    EmptySentence,
    #[error("token id {0} outside vocabulary of size {1}")]
    UnknownToken(TokenId, usize),
    #[error("gradient count {grads} does not match path length {points}")]
    LengthMismatch { grads: usize, points: usize },
    #[error("word {word}: path violates monotonicity at {count} point pairs")]
    InvalidPath { word: usize, count: usize },
    #[error("model and table disagree on dimension: {model} vs {table}")]
    DimMismatch { model: usize, table: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Path(#[from] crate::paths::PathError),
}

/// Attribution methods: the straight-line baseline, the discretized
/// strategies, the two random ablations, and gradient-times-input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
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
    #[serde(rename = "grad-x-input")]
    GradXInput,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Ig,
        Method::DigGreedy,
        Method::DigMaxCount,
        Method::DigRandomAnchor,
        Method::DigRandomNeighbor,
        Method::GradXInput,
    ];

    /// The path strategy behind this method, if it integrates over a path.
    pub fn path_strategy(self) -> Option<PathStrategy> {
        match self {
            Method::Ig => Some(PathStrategy::Ig),
            Method::DigGreedy => Some(PathStrategy::DigGreedy),
            Method::DigMaxCount => Some(PathStrategy::DigMaxCount),
            Method::DigRandomAnchor => Some(PathStrategy::DigRandomAnchor),
            Method::DigRandomNeighbor => Some(PathStrategy::DigRandomNeighbor),
            Method::GradXInput => None,
        }
    }

    pub fn uses_path(self) -> bool {
        self.path_strategy().is_some()
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Method::Ig => "ig",
            Method::DigGreedy => "dig-greedy",
            Method::DigMaxCount => "dig-maxcount",
            Method::DigRandomAnchor => "dig-random-anchor",
            Method::DigRandomNeighbor => "dig-random-neighbor",
            Method::GradXInput => "grad-x-input",
        };
        write!(f, "{name}")
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ig" => Ok(Method::Ig),
            "dig-greedy" => Ok(Method::DigGreedy),
            "dig-maxcount" => Ok(Method::DigMaxCount),
            "dig-random-anchor" => Ok(Method::DigRandomAnchor),
            "dig-random-neighbor" => Ok(Method::DigRandomNeighbor),
            "grad-x-input" => Ok(Method::GradXInput),
            other => Err(format!("unknown attribution method {other:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttributionOptions {
    pub method: Method,
    /// Steps, upsampling factor, and the per-sentence seed. The strategy
    /// field is overridden by `method` for path methods.
    pub path: PathConfig,
    /// Attribute toward this class instead of the predicted one.
    pub target: Option<ClassId>,
    pub head: OutputHead,
}

impl AttributionOptions {
    pub fn new(method: Method) -> Self {
        AttributionOptions {
            method,
            path: PathConfig::default(),
            target: None,
            head: OutputHead::Probability,
        }
    }
}

/// Per-word and per-dimension attributions plus the bookkeeping needed to
/// judge them: endpoint outputs, completeness residual, word-approximation
/// error, and the full method configuration.
#[derive(Debug, Clone)]
pub struct AttributionReport {
    pub tokens: Vec<TokenId>,
    pub per_word: Vec<f64>,
    pub per_dim: Array2<f64>,
    pub f_input: f64,
    pub f_baseline: f64,
    pub delta_percent: f64,
    pub wae: Option<f64>,
    pub predicted: ClassId,
    pub target: ClassId,
    pub method: Method,
    pub steps: usize,
    pub upsample_factor: usize,
    pub neighborhood_k: Option<usize>,
    pub seed: u64,
    pub clamped_dims: usize,
}

/// One JSONL record of the report file. Token ids are resolved to surfaces so
/// the record stands alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRecord {
    pub sentence_index: usize,
    pub tokens: Vec<String>,
    pub method: Method,
    pub predicted: ClassId,
    pub target: ClassId,
    pub per_word: Vec<f64>,
    pub f_input: f64,
    pub f_baseline: f64,
    pub delta_percent: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wae: Option<f64>,
    pub steps: usize,
    pub upsample_factor: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub neighborhood_k: Option<usize>,
    pub seed: u64,
}

impl ReportRecord {
    pub fn new(report: &AttributionReport, vocab: &Vocab, sentence_index: usize) -> Self {
        ReportRecord {
            sentence_index,
            tokens: report
                .tokens
                .iter()
                .map(|&t| vocab.surface(t).unwrap_or("<?>").to_string())
                .collect(),
            method: report.method,
            predicted: report.predicted,
            target: report.target,
            per_word: report.per_word.clone(),
            f_input: report.f_input,
            f_baseline: report.f_baseline,
            delta_percent: report.delta_percent,
            wae: report.wae,
            steps: report.steps,
            upsample_factor: report.upsample_factor,
            neighborhood_k: report.neighborhood_k,
            seed: report.seed,
        }
    }
}

/// Right-endpoint Riemann sum along a path. `grads[k]` is the gradient of
/// the model output with respect to this word's dimensions, evaluated at path
/// point k; grads must cover every path point.
pub fn riemann_attribution(
    path: &InterpolationPath,
    grads: &[Array1<f64>],
) -> Result<Array1<f64>, AttributionError> {
    if grads.len() != path.points.len() {
        return Err(AttributionError::LengthMismatch {
            grads: grads.len(),
            points: path.points.len(),
        });
    }
    let dim = path.baseline().len();
    let mut acc = Array1::zeros(dim);
    for k in 1..path.points.len() {
        let step = &path.points[k] - &path.points[k - 1];
        acc = acc + &grads[k] * &step;
    }
    Ok(acc)
}

/// 100 * |sum of attributions - (F(x) - F(x'))| / max(|F(x) - F(x')|, 1e-8).
pub fn delta_percent(attribution_sum: f64, f_input: f64, f_baseline: f64) -> f64 {
    let gap = f_input - f_baseline;
    100.0 * (attribution_sum - gap).abs() / gap.abs().max(DELTA_EPSILON)
}

/// Recomputes the completeness residual of a finished report.
pub fn delta_percent_of(report: &AttributionReport) -> f64 {
    delta_percent(
        report.per_word.iter().sum(),
        report.f_input,
        report.f_baseline,
    )
}

/// Word-approximation error: per word, the mean Euclidean distance of its
/// interior path points to the nearest vocabulary row (pad excluded), then
/// the mean over words. Words whose paths have no interior points are
/// skipped; endpoints are exact vocabulary or pad vectors by construction.
pub fn wae(paths: &[InterpolationPath], table: &EmbeddingTable) -> f64 {
    let mut word_errors = Vec::new();
    for path in paths {
        let interior = path.interior();
        if interior.is_empty() {
            continue;
        }
        let mut sum = 0.0;
        for point in interior {
            let mut best = f64::INFINITY;
            for id in 0..table.len() {
                if id == PAD_ID {
                    continue;
                }
                let row = table.row(id);
                let d: f64 = row
                    .iter()
                    .zip(point.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if d < best {
                    best = d;
                }
            }
            sum += best;
        }
        word_errors.push(sum / interior.len() as f64);
    }
    if word_errors.is_empty() {
        0.0
    } else {
        word_errors.iter().sum::<f64>() / word_errors.len() as f64
    }
}

/// Attributes every word of a sentence with the requested method.
///
/// Path methods build one path per word against the pad baseline and walk
/// them in lockstep: one gradient evaluation per step, on the sentence whose
/// every position sits at its own path point for that step. `grad-x-input`
/// multiplies the input-point gradient by the input elementwise and has no
/// path, hence no word-approximation error. The target class defaults to the
/// predicted one.
pub fn attribute_sentence(
    oracle: &dyn GradientOracle,
    table: &EmbeddingTable,
    index: Option<&NeighborIndex>,
    tokens: &[TokenId],
    opts: &AttributionOptions,
) -> Result<AttributionReport, AttributionError> {
    if tokens.is_empty() {
        return Err(AttributionError::EmptySentence);
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t >= table.len()) {
        return Err(AttributionError::UnknownToken(bad, table.len()));
    }
    if oracle.dim() != table.dim() {
        return Err(AttributionError::DimMismatch {
            model: oracle.dim(),
            table: table.dim(),
        });
    }

    let n = tokens.len();
    let dim = table.dim();
    let input_points = table.embed(tokens).expect("ids checked above");
    let probs = oracle.forward(input_points.view())?;
    let predicted = argmax(&probs);
    let target = opts.target.unwrap_or(predicted);
    if target >= oracle.num_classes() {
        return Err(AttributionError::Model(ModelError::TargetOutOfRange {
            target,
            classes: oracle.num_classes(),
        }));
    }

    let f_input = oracle.value(input_points.view(), target, opts.head)?;
    let baseline_row = table.row(PAD_ID);
    let baseline_points = Array2::from_shape_fn((n, dim), |(_, j)| baseline_row[j]);
    let f_baseline = oracle.value(baseline_points.view(), target, opts.head)?;

    let mut per_dim = Array2::zeros((n, dim));
    let mut word_wae = None;
    let mut clamped = 0usize;

    match opts.method.path_strategy() {
        None => {
            let resp = oracle.gradient(&GradientRequest {
                points: input_points.clone(),
                target,
                head: opts.head,
            })?;
            per_dim = resp.grads * &input_points;
        }
        Some(strategy) => {
            let mut paths = Vec::with_capacity(n);
            for (word_pos, &token) in tokens.iter().enumerate() {
                let cfg = PathConfig {
                    steps: opts.path.steps,
                    strategy,
                    upsample_factor: opts.path.upsample_factor,
                    seed: seed::word_seed(opts.path.seed, word_pos),
                };
                let path = build_path(token, table, index, baseline_row, &cfg)?;
                let violations = validate_path(&path);
                if !violations.is_empty() {
                    return Err(AttributionError::InvalidPath {
                        word: word_pos,
                        count: violations.len(),
                    });
                }
                paths.push(path);
            }
            let len = paths[0].len();
            assert!(
                paths.iter().all(|p| p.len() == len),
                "paths of one sentence share a length by construction"
            );
            let requests: Vec<GradientRequest> = (0..len)
                .map(|k| {
                    let mut points = Array2::zeros((n, dim));
                    for (j, path) in paths.iter().enumerate() {
                        points.row_mut(j).assign(&path.points[k]);
                    }
                    GradientRequest {
                        points,
                        target,
                        head: opts.head,
                    }
                })
                .collect();
            let responses = oracle.gradient_batch(&requests)?;
            for (j, path) in paths.iter().enumerate() {
                let grads: Vec<Array1<f64>> = responses
                    .iter()
                    .map(|r| r.grads.row(j).to_owned())
                    .collect();
                let attr = riemann_attribution(path, &grads)?;
                per_dim.row_mut(j).assign(&attr);
                clamped += path.clamped_dims;
            }
            word_wae = Some(wae(&paths, table));
        }
    }

    let per_word: Vec<f64> = per_dim.outer_iter().map(|row| row.sum()).collect();
    let delta = delta_percent(per_word.iter().sum(), f_input, f_baseline);
    let neighborhood_k = match opts.method.path_strategy() {
        Some(s) if s.needs_index() => index.map(|ix| ix.k()),
        _ => None,
    };
    Ok(AttributionReport {
        tokens: tokens.to_vec(),
        per_word,
        per_dim,
        f_input,
        f_baseline,
        delta_percent: delta,
        wae: word_wae,
        predicted,
        target,
        method: opts.method,
        steps: opts.path.steps,
        upsample_factor: opts.path.upsample_factor,
        neighborhood_k,
        seed: opts.path.seed,
        clamped_dims: clamped,
    })
}
