//! Faithfulness metrics over attributed sentences.
//!
//! Log-odds masks the top-k% words with pad and keeps the sentence length;
//! comprehensiveness and sufficiency delete or keep them and shorten it. All
//! three compare post-softmax probabilities of the originally predicted
//! class.


use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

use crate::attribution::{
    attribute_sentence, AttributionError, AttributionOptions, AttributionReport, Method,
};
use crate::knn::NeighborIndex;
use crate::model::{argmax, GradientOracle, ModelError, OutputHead};
use crate::paths::PathConfig;
use crate::seed;
use crate::vocab::{EmbeddingTable, TokenId, Vocab, PAD_ID};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("no methods requested")]
    NoMethods,
    #[error("top-k percentage {0} outside (0, 100]")]
    BadKPercent(f64),
    #[error("sentence {index}: {source}")]
    Sentence {
        index: usize,
        source: AttributionError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Word positions selected for masking/deletion, ordered by descending
/// attribution (ties prefer the smaller position).
#[derive(Debug, Clone, PartialEq)]
pub struct TopKSelection {
    pub k_percent: f64,
    pub selected: Vec<usize>,
}

/// Ranks positions by score and takes `max(1, round(k% * n))` of them,
/// skipping special tokens. Round is half-up.
pub fn rank_topk(scores: &[f64], special: &[bool], k_percent: f64) -> TopKSelection {
    let n = scores.len();
    let count = ((k_percent / 100.0 * n as f64) + 0.5).floor() as usize;
    let count = count.max(1);
    let mut order: Vec<usize> = (0..n).filter(|&i| !special[i]).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(count);
    TopKSelection {
        k_percent,
        selected: order,
    }
}

/// Top-k% words of a report by per-word attribution.
pub fn select_topk(report: &AttributionReport, k_percent: f64) -> TopKSelection {
    let special: Vec<bool> = report
        .tokens
        .iter()
        .map(|&t| Vocab::is_special(t))
        .collect();
    rank_topk(&report.per_word, &special, k_percent)
}

fn predicted_and_prob(
    oracle: &dyn GradientOracle,
    table: &EmbeddingTable,
    tokens: &[TokenId],
) -> Result<(usize, f64), ModelError> {
    let points = table.embed(tokens).expect("caller-validated ids");
    let probs = oracle.forward(points.view())?;
    let predicted = argmax(&probs);
    Ok((predicted, probs[predicted]))
}

fn prob_of(
    oracle: &dyn GradientOracle,
    table: &EmbeddingTable,
    tokens: &[TokenId],
    class: usize,
) -> Result<f64, ModelError> {
    let points = table.embed(tokens).expect("caller-validated ids");
    Ok(oracle.forward(points.view())?[class])
}

fn all_pad(len: usize) -> Vec<TokenId> {
    vec![PAD_ID; len]
}

/// ln p(y-hat | selected words replaced by pad) - ln p(y-hat | sentence).
/// Length-preserving; lower is better.
pub fn log_odds(
    oracle: &dyn GradientOracle,
    table: &EmbeddingTable,
    tokens: &[TokenId],
    selection: &TopKSelection,
) -> Result<f64, EvalError> {
    let (predicted, p_before) = predicted_and_prob(oracle, table, tokens)?;
    let mut masked = tokens.to_vec();
    for &i in &selection.selected {
        masked[i] = PAD_ID;
    }
    let p_after = prob_of(oracle, table, &masked, predicted)?;
    Ok((p_after.max(1e-12) / p_before.max(1e-12)).ln())
}

/// p(y-hat | sentence) - p(y-hat | selected words deleted). An empty
/// remainder is evaluated as the all-pad sentence. Higher is better.
pub fn comprehensiveness(
    oracle: &dyn GradientOracle,
    table: &EmbeddingTable,
    tokens: &[TokenId],
    selection: &TopKSelection,
) -> Result<f64, EvalError> {
    let (predicted, p_before) = predicted_and_prob(oracle, table, tokens)?;
    let remainder: Vec<TokenId> = tokens
        .iter()
        .enumerate()
        .filter(|(i, _)| !selection.selected.contains(i))
        .map(|(_, &t)| t)
        .collect();
    let remainder = if remainder.is_empty() {
        all_pad(tokens.len())
    } else {
        remainder
    };
    let p_after = prob_of(oracle, table, &remainder, predicted)?;
    Ok(p_before - p_after)
}

/// p(y-hat | sentence) - p(y-hat | only the selected words, original order).
/// Lower is better.
pub fn sufficiency(
    oracle: &dyn GradientOracle,
    table: &EmbeddingTable,
    tokens: &[TokenId],
    selection: &TopKSelection,
) -> Result<f64, EvalError> {
    let (predicted, p_before) = predicted_and_prob(oracle, table, tokens)?;
    let mut keep: Vec<usize> = selection.selected.clone();
    keep.sort_unstable();
    let kept: Vec<TokenId> = keep.iter().map(|&i| tokens[i]).collect();
    let kept = if kept.is_empty() {
        all_pad(tokens.len())
    } else {
        kept
    };
    let p_after = prob_of(oracle, table, &kept, predicted)?;
    Ok(p_before - p_after)
}

/// Which metrics to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricSelection {
    pub log_odds: bool,
    pub comprehensiveness: bool,
    pub sufficiency: bool,
}

impl Default for MetricSelection {
    fn default() -> Self {
        MetricSelection {
            log_odds: true,
            comprehensiveness: true,
            sufficiency: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Steps, upsampling factor, and the master seed; per-sentence seeds are
    /// derived from it, so results do not depend on scheduling.
    pub path: PathConfig,
    pub head: OutputHead,
    pub metrics: MetricSelection,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            path: PathConfig::default(),
            head: OutputHead::Probability,
            metrics: MetricSelection::default(),
        }
    }
}

/// One aggregated row: a method at one k, averaged over the dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: Method,
    pub k_percent: f64,
    pub log_odds: Option<f64>,
    pub comprehensiveness: Option<f64>,
    pub sufficiency: Option<f64>,
    pub wae: Option<f64>,
    pub delta_percent: f64,
    pub n_sentences: usize,
}

/// Raw per-sentence values behind a [`MetricRow`], emitted for external
/// analysis (e.g. correlating log-odds with the word-approximation error).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawSentenceRecord {
    pub sentence_index: usize,
    pub method: Method,
    pub k_percent: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_odds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comprehensiveness: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sufficiency: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wae: Option<f64>,
    pub delta_percent: f64,
    pub predicted: usize,
    pub n_words: usize,
}

#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub rows: Vec<MetricRow>,
    pub raw: Vec<RawSentenceRecord>,
}

/// Attributes every sentence with every method and aggregates the metrics per
/// (method, k). Sentences are processed in parallel; per-sentence seeds come
/// from the master seed and the sentence index, and aggregation runs in input
/// order, so the output is deterministic.
pub fn evaluate_dataset(
    oracle: &dyn GradientOracle,
    table: &EmbeddingTable,
    index: Option<&NeighborIndex>,
    sentences: &[Vec<TokenId>],
    methods: &[Method],
    opts: &EvalOptions,
    k_percents: &[f64],
) -> Result<EvalOutput, EvalError> {
    if sentences.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    if methods.is_empty() {
        return Err(EvalError::NoMethods);
    }
    for &k in k_percents {
        if !(k > 0.0 && k <= 100.0) {
            return Err(EvalError::BadKPercent(k));
        }
    }

    let mut rows = Vec::new();
    let mut raw = Vec::new();
    for &method in methods {
        let reports: Vec<AttributionReport> = sentences
            .par_iter()
            .enumerate()
            .map(|(i, tokens)| {
                let options = AttributionOptions {
                    method,
                    path: PathConfig {
                        seed: seed::sentence_seed(opts.path.seed, i),
                        strategy: method.path_strategy().unwrap_or(opts.path.strategy),
                        ..opts.path
                    },
                    target: None,
                    head: opts.head,
                };
                attribute_sentence(oracle, table, index, tokens, &options)
                    .map_err(|source| EvalError::Sentence { index: i, source })
            })
            .collect::<Result<_, _>>()?;

        for &k in k_percents {
            let per_sentence: Vec<RawSentenceRecord> = reports
                .par_iter()
                .enumerate()
                .map(|(i, report)| {
                    let selection = select_topk(report, k);
                    let tokens = &sentences[i];
                    let lo = if opts.metrics.log_odds {
                        Some(log_odds(oracle, table, tokens, &selection)?)
                    } else {
                        None
                    };
                    let comp = if opts.metrics.comprehensiveness {
                        Some(comprehensiveness(oracle, table, tokens, &selection)?)
                    } else {
                        None
                    };
                    let suff = if opts.metrics.sufficiency {
                        Some(sufficiency(oracle, table, tokens, &selection)?)
                    } else {
                        None
                    };
                    Ok(RawSentenceRecord {
                        sentence_index: i,
                        method,
                        k_percent: k,
                        log_odds: lo,
                        comprehensiveness: comp,
                        sufficiency: suff,
                        wae: report.wae,
                        delta_percent: report.delta_percent,
                        predicted: report.predicted,
                        n_words: tokens.len(),
                    })
                })
                .collect::<Result<_, EvalError>>()?;

            let n = per_sentence.len();
            let mean_opt = |get: &dyn Fn(&RawSentenceRecord) -> Option<f64>| -> Option<f64> {
                let values: Vec<f64> = per_sentence.iter().filter_map(get).collect();
                if values.is_empty() {
                    None
                } else {
                    Some(values.iter().sum::<f64>() / values.len() as f64)
                }
            };
            rows.push(MetricRow {
                method,
                k_percent: k,
                log_odds: mean_opt(&|r| r.log_odds),
                comprehensiveness: mean_opt(&|r| r.comprehensiveness),
                sufficiency: mean_opt(&|r| r.sufficiency),
                wae: mean_opt(&|r| r.wae),
                delta_percent: per_sentence.iter().map(|r| r.delta_percent).sum::<f64>()
                    / n as f64,
                n_sentences: n,
            });
            raw.extend(per_sentence);
        }
    }
    Ok(EvalOutput { rows, raw })
}

fn csv_cell(value: Option<f64>) -> String {
    value.map(|v| format!("{v:.6}")).unwrap_or_default()
}

/// Writes the metrics CSV: a `#`-prefixed line with the resolved run
/// configuration, a header, then one row per (method, k).
pub fn write_metrics_csv<W: Write>(
    mut writer: W,
    rows: &[MetricRow],
    resolved_config: &str,
) -> std::io::Result<()> {
    writeln!(writer, "# config: {resolved_config}")?;
    writeln!(writer, "method,k,log_odds,comp,suff,wae,delta_percent,n")?;
    for row in rows {
        writeln!(
            writer,
            "{},{},{},{},{},{},{:.6},{}",
            row.method,
            row.k_percent,
            csv_cell(row.log_odds),
            csv_cell(row.comprehensiveness),
            csv_cell(row.sufficiency),
            csv_cell(row.wae),
            row.delta_percent,
            row.n_sentences
        )?;
    }
    Ok(())
}

/// Shape-recording oracle wrapper used to assert deletion semantics in tests.
#[doc(hidden)]
pub struct ShapeProbe<'a> {
    pub inner: &'a dyn GradientOracle,
    pub seen_lengths: std::sync::Mutex<Vec<usize>>,
}

impl<'a> ShapeProbe<'a> {
    pub fn new(inner: &'a dyn GradientOracle) -> Self {
        ShapeProbe {
            inner,
            seen_lengths: std::sync::Mutex::new(Vec::new()),
        }
    }
}

impl GradientOracle for ShapeProbe<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }
    fn forward(&self, points: ndarray::ArrayView2<'_, f64>) -> Result<ndarray::Array1<f64>, ModelError> {
        self.seen_lengths.lock().unwrap().push(points.nrows());
        self.inner.forward(points)
    }
    fn gradient(
        &self,
        req: &crate::model::GradientRequest,
    ) -> Result<crate::model::GradientResponse, ModelError> {
        self.inner.gradient(req)
    }
}
