//! The six subcommands. Every output artifact embeds the resolved run
//! configuration, and every command is deterministic given its config.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::Context;
use serde::Serialize;

use digrad_core::attribution::{
    attribute_sentence, AttributionOptions, Method, ReportRecord,
};
use digrad_core::dataset::{load_jsonl, toy_corpus};
use digrad_core::eval::{evaluate_dataset, write_metrics_csv, EvalOptions, MetricRow};
use digrad_core::knn::{build_knn_index, NeighborIndex};
use digrad_core::model::{
    load_checkpoint, save_checkpoint, train_with_vocab, ClassId, Classifier, OutputHead,
    TrainConfig,
};
use digrad_core::paths::{build_path, PathConfig, PathDumpRecord};
use digrad_core::seed;
use digrad_core::vocab::{build_vocab, load_embeddings, overlay_embeddings, Vocab, PAD_ID};
use rayon::prelude::*;

use crate::config::{ConfigError, RunConfig, Sweep};
use crate::error::{runtime, CliError};
use crate::render::render_html;

/// Bundled corpus sizes when no dataset file is given.
const TOY_TRAIN_SIZE: usize = 400;
const TOY_EVAL_SIZE: usize = 200;

fn config_err<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Config(ConfigError(msg.into())))
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match jobs {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(runtime)?;
            Ok(pool.install(f))
        }
    }
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&cfg.out)
        .with_context(|| format!("creating output directory {}", cfg.out.display()))
        .map_err(runtime)
}

fn jsonl_writer(path: &Path, cfg: &RunConfig) -> Result<BufWriter<File>, CliError> {
    let mut writer = BufWriter::new(
        File::create(path)
            .with_context(|| format!("creating {}", path.display()))
            .map_err(runtime)?,
    );
    writeln!(writer, "{{\"config\":{}}}", cfg.to_json()).map_err(runtime)?;
    Ok(writer)
}

fn write_jsonl_line<T: Serialize>(writer: &mut impl Write, value: &T) -> Result<(), CliError> {
    serde_json::to_writer(&mut *writer, value).map_err(runtime)?;
    writeln!(writer).map_err(runtime)?;
    Ok(())
}

fn load_dataset(cfg: &RunConfig, toy_size: usize) -> Result<Vec<(String, ClassId)>, CliError> {
    match &cfg.dataset {
        Some(path) => load_jsonl(path)
            .with_context(|| format!("loading dataset {}", path.display()))
            .map_err(runtime),
        None => {
            eprintln!("no dataset given; using the bundled toy corpus (n={toy_size}, seed={})", cfg.seed);
            Ok(toy_corpus(toy_size, cfg.seed))
        }
    }
}

fn load_model(cfg: &RunConfig) -> Result<(Vocab, Classifier), CliError> {
    let Some(path) = &cfg.checkpoint else {
        return config_err("this command needs --checkpoint (run `digrad train` first)");
    };
    load_checkpoint(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))
        .map_err(runtime)
}

/// Loads the index from --index (validating the header) or builds it with
/// the configured K and metric.
fn prepare_index(cfg: &RunConfig, model: &Classifier) -> Result<NeighborIndex, CliError> {
    match &cfg.index {
        Some(path) => NeighborIndex::load(path, model.embedding())
            .with_context(|| format!("loading index {}", path.display()))
            .map_err(runtime),
        None => Ok(build_knn_index(model.embedding(), cfg.knn, cfg.metric)),
    }
}

/// Tokenized non-empty sentences; indexes are positions in this list.
fn tokenize_dataset(vocab: &Vocab, data: &[(String, ClassId)]) -> Vec<Vec<usize>> {
    let mut skipped = 0usize;
    let sentences: Vec<Vec<usize>> = data
        .iter()
        .filter_map(|(text, _)| {
            let tokens = vocab.tokenize(text);
            if tokens.is_empty() {
                skipped += 1;
                None
            } else {
                Some(tokens)
            }
        })
        .collect();
    if skipped > 0 {
        eprintln!("skipped {skipped} sentence(s) that tokenize to nothing");
    }
    sentences
}

pub fn cmd_train(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load_dataset(cfg, TOY_TRAIN_SIZE)?;
    let train_cfg = TrainConfig {
        epochs: cfg.epochs,
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
        hidden_dim: cfg.hidden,
        embed_dim: cfg.embed_dim,
        min_count: cfg.min_count,
        val_fraction: cfg.val_fraction,
        seed: cfg.seed,
    };

    // vocabulary always comes from the corpus; a pretrained file only seeds
    // the vectors of the surfaces it knows
    let (source_vocab, source_table) = match &cfg.embeddings {
        Some(path) => {
            let loaded = load_embeddings(path)
                .with_context(|| format!("loading embeddings {}", path.display()))
                .map_err(runtime)?;
            (Some(loaded.0), Some(loaded.1))
        }
        None => (None, None),
    };
    let embed_dim = source_table
        .as_ref()
        .map(|t| t.dim())
        .unwrap_or(train_cfg.embed_dim);
    let (vocab, mut table) = build_vocab(
        data.iter().map(|(t, _)| t.as_str()),
        train_cfg.min_count,
        embed_dim,
        seed::derive(train_cfg.seed, seed::STREAM_EMBED_INIT, 0),
    )
    .map_err(runtime)?;
    if let (Some(sv), Some(st)) = (&source_vocab, &source_table) {
        table = overlay_embeddings(&vocab, &table, sv, st).map_err(runtime)?;
    }

    let outcome = train_with_vocab(&data, &train_cfg, vocab, table).map_err(runtime)?;

    ensure_out_dir(cfg)?;
    let checkpoint_path = cfg.out.join("model.json");
    save_checkpoint(&checkpoint_path, &outcome.vocab, &outcome.classifier).map_err(runtime)?;

    let log_path = cfg.out.join("train_log.jsonl");
    let mut log = jsonl_writer(&log_path, cfg)?;
    for epoch in &outcome.report.epochs {
        write_jsonl_line(&mut log, epoch)?;
    }
    #[derive(Serialize)]
    struct Final {
        final_train_accuracy: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        final_val_accuracy: Option<f64>,
    }
    write_jsonl_line(
        &mut log,
        &Final {
            final_train_accuracy: outcome.report.train_accuracy,
            final_val_accuracy: outcome.report.val_accuracy,
        },
    )?;
    log.flush().map_err(runtime)?;

    println!(
        "trained on {} sentences: train accuracy {:.3}{}",
        data.len(),
        outcome.report.train_accuracy,
        outcome
            .report
            .val_accuracy
            .map(|v| format!(", validation accuracy {v:.3}"))
            .unwrap_or_default()
    );
    println!("checkpoint: {}", checkpoint_path.display());
    println!("training log: {}", log_path.display());
    Ok(())
}

pub fn cmd_index(cfg: &RunConfig) -> Result<(), CliError> {
    let table = if cfg.checkpoint.is_some() {
        load_model(cfg)?.1.embedding().clone()
    } else if let Some(path) = &cfg.embeddings {
        load_embeddings(path)
            .with_context(|| format!("loading embeddings {}", path.display()))
            .map_err(runtime)?
            .1
    } else {
        return config_err("index needs --checkpoint or --embeddings");
    };
    let index = with_pool(cfg.jobs, || build_knn_index(&table, cfg.knn, cfg.metric))?;
    ensure_out_dir(cfg)?;
    let path = cfg.out.join("index.json");
    index.save(&path).map_err(runtime)?;
    println!(
        "indexed {} tokens (K={}, metric={}): {}",
        table.len(),
        cfg.knn,
        cfg.metric,
        path.display()
    );
    Ok(())
}

fn needs_index(methods: &[Method]) -> bool {
    methods
        .iter()
        .any(|m| m.path_strategy().is_some_and(|s| s.needs_index()))
}

pub fn cmd_attribute(cfg: &RunConfig) -> Result<(), CliError> {
    let (vocab, model) = load_model(cfg)?;
    let data = load_dataset(cfg, TOY_EVAL_SIZE)?;
    let sentences = tokenize_dataset(&vocab, &data);
    if sentences.is_empty() {
        return config_err("dataset has no attributable sentences");
    }
    let index = if needs_index(&cfg.methods) {
        Some(prepare_index(cfg, &model)?)
    } else {
        None
    };

    type SentenceOut = (Vec<ReportRecord>, Vec<PathDumpRecord>);
    let results: Result<Vec<SentenceOut>, CliError> = with_pool(cfg.jobs, || {
        sentences
            .par_iter()
            .enumerate()
            .map(|(i, tokens)| {
                let mut records = Vec::with_capacity(cfg.methods.len());
                let mut dumps = Vec::new();
                for &method in &cfg.methods {
                    let opts = AttributionOptions {
                        method,
                        path: PathConfig {
                            steps: cfg.steps,
                            upsample_factor: cfg.factor,
                            seed: seed::sentence_seed(cfg.seed, i),
                            ..PathConfig::default()
                        },
                        target: None,
                        head: OutputHead::Probability,
                    };
                    let report = attribute_sentence(
                        &model,
                        model.embedding(),
                        index.as_ref(),
                        tokens,
                        &opts,
                    )
                    .with_context(|| format!("attributing sentence {i} with {method}"))
                    .map_err(runtime)?;
                    records.push(ReportRecord::new(&report, &vocab, i));
                    if cfg.dump_paths {
                        if let Some(strategy) = method.path_strategy() {
                            for (pos, &token) in tokens.iter().enumerate() {
                                let word_cfg = PathConfig {
                                    steps: cfg.steps,
                                    strategy,
                                    upsample_factor: cfg.factor,
                                    seed: seed::word_seed(
                                        seed::sentence_seed(cfg.seed, i),
                                        pos,
                                    ),
                                };
                                let path = build_path(
                                    token,
                                    model.embedding(),
                                    index.as_ref(),
                                    model.embedding().row(PAD_ID),
                                    &word_cfg,
                                )
                                .map_err(runtime)?;
                                dumps.push(PathDumpRecord::from_path(&path, cfg.factor));
                            }
                        }
                    }
                }
                Ok((records, dumps))
            })
            .collect()
    })?;
    let results = results?;

    ensure_out_dir(cfg)?;
    let report_path = cfg.out.join("reports.jsonl");
    let mut writer = jsonl_writer(&report_path, cfg)?;
    for (records, _) in &results {
        for record in records {
            write_jsonl_line(&mut writer, record)?;
        }
    }
    writer.flush().map_err(runtime)?;
    if cfg.dump_paths {
        let dump_path = cfg.out.join("paths.jsonl");
        let mut writer = jsonl_writer(&dump_path, cfg)?;
        for (_, dumps) in &results {
            for dump in dumps {
                write_jsonl_line(&mut writer, dump)?;
            }
        }
        writer.flush().map_err(runtime)?;
        println!("path dump: {}", dump_path.display());
    }
    println!(
        "attributed {} sentences x {} methods: {}",
        sentences.len(),
        cfg.methods.len(),
        report_path.display()
    );
    Ok(())
}

fn print_rows(rows: &[MetricRow]) {
    let cell = |v: Option<f64>| v.map(|x| format!("{x:+.4}")).unwrap_or_else(|| "-".into());
    for row in rows {
        println!(
            "method={} k={} lo={} comp={} suff={} wae={} delta%={:.3} n={}",
            row.method,
            row.k_percent,
            cell(row.log_odds),
            cell(row.comprehensiveness),
            cell(row.sufficiency),
            cell(row.wae),
            row.delta_percent,
            row.n_sentences
        );
    }
}

fn warn_high_delta(rows: &[MetricRow]) {
    let mut warned = Vec::new();
    for row in rows {
        if row.delta_percent > 5.0 && !warned.contains(&row.method) {
            eprintln!(
                "warning: mean Delta% for {} is {:.2} (above the 5% threshold); \
                 consider a larger -f or -m",
                row.method, row.delta_percent
            );
            warned.push(row.method);
        }
    }
}

fn run_evaluation(
    cfg: &RunConfig,
    model: &Classifier,
    index: Option<&NeighborIndex>,
    sentences: &[Vec<usize>],
    metrics_path: &Path,
    raw_path: &Path,
) -> Result<Vec<MetricRow>, CliError> {
    let opts = EvalOptions {
        path: PathConfig {
            steps: cfg.steps,
            upsample_factor: cfg.factor,
            seed: cfg.seed,
            ..PathConfig::default()
        },
        head: OutputHead::Probability,
        metrics: cfg.metrics,
    };
    let output = with_pool(cfg.jobs, || {
        evaluate_dataset(
            model,
            model.embedding(),
            index,
            sentences,
            &cfg.methods,
            &opts,
            &cfg.topk,
        )
    })?
    .map_err(runtime)?;

    let mut csv = BufWriter::new(File::create(metrics_path).map_err(runtime)?);
    write_metrics_csv(&mut csv, &output.rows, &cfg.to_json()).map_err(runtime)?;
    csv.flush().map_err(runtime)?;

    let mut raw = jsonl_writer(raw_path, cfg)?;
    for record in &output.raw {
        write_jsonl_line(&mut raw, record)?;
    }
    raw.flush().map_err(runtime)?;
    Ok(output.rows)
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    let (vocab, model) = load_model(cfg)?;
    let data = load_dataset(cfg, TOY_EVAL_SIZE)?;
    let sentences = tokenize_dataset(&vocab, &data);
    if sentences.is_empty() {
        return config_err("dataset has no attributable sentences");
    }
    let index = if needs_index(&cfg.methods) {
        Some(prepare_index(cfg, &model)?)
    } else {
        None
    };
    ensure_out_dir(cfg)?;
    let metrics_path = cfg.out.join("metrics.csv");
    let raw_path = cfg.out.join("raw.jsonl");
    let rows = run_evaluation(
        cfg,
        &model,
        index.as_ref(),
        &sentences,
        &metrics_path,
        &raw_path,
    )?;
    print_rows(&rows);
    warn_high_delta(&rows);
    println!("metrics: {}", metrics_path.display());
    println!("raw per-sentence records: {}", raw_path.display());
    Ok(())
}

pub fn cmd_sweep(cfg: &RunConfig) -> Result<(), CliError> {
    let Some(sweep) = &cfg.sweep else {
        return config_err("sweep needs --sweep, e.g. --sweep m=10,30,100,300");
    };
    let (vocab, model) = load_model(cfg)?;
    let data = load_dataset(cfg, TOY_EVAL_SIZE)?;
    let sentences = tokenize_dataset(&vocab, &data);
    if sentences.is_empty() {
        return config_err("dataset has no attributable sentences");
    }
    if matches!(sweep, Sweep::Knn(_)) && cfg.index.is_some() {
        return config_err("a K sweep rebuilds the index; it cannot use a fixed --index");
    }
    let base_index = if needs_index(&cfg.methods) && !matches!(sweep, Sweep::Knn(_)) {
        Some(prepare_index(cfg, &model)?)
    } else {
        None
    };
    ensure_out_dir(cfg)?;

    let mut points: Vec<(String, RunConfig)> = Vec::new();
    match sweep {
        Sweep::Steps(values) => {
            for &v in values {
                let mut c = cfg.clone();
                c.steps = v;
                points.push((format!("m{v}"), c));
            }
        }
        Sweep::Factor(values) => {
            for &v in values {
                let mut c = cfg.clone();
                c.factor = v;
                points.push((format!("f{v}"), c));
            }
        }
        Sweep::Knn(values) => {
            for &v in values {
                let mut c = cfg.clone();
                c.knn = v;
                points.push((format!("K{v}"), c));
            }
        }
        Sweep::TopK(values) => {
            for &v in values {
                let mut c = cfg.clone();
                c.topk = vec![v];
                points.push((format!("k{v}"), c));
            }
        }
    }

    for (slug, point_cfg) in &points {
        let index = if needs_index(&point_cfg.methods) {
            match (&base_index, sweep) {
                (_, Sweep::Knn(_)) => Some(prepare_index(point_cfg, &model)?),
                (Some(ix), _) => Some(ix.clone()),
                (None, _) => None,
            }
        } else {
            None
        };
        let metrics_path = point_cfg.out.join(format!("metrics_{slug}.csv"));
        let raw_path = point_cfg.out.join(format!("raw_{slug}.jsonl"));
        let rows = run_evaluation(
            point_cfg,
            &model,
            index.as_ref(),
            &sentences,
            &metrics_path,
            &raw_path,
        )?;
        println!("--- {} = {slug}", sweep.param_name());
        print_rows(&rows);
        warn_high_delta(&rows);
    }
    println!("wrote {} sweep points under {}", points.len(), cfg.out.display());
    Ok(())
}

pub fn cmd_render(cfg: &RunConfig) -> Result<(), CliError> {
    let Some(report_path) = &cfg.report else {
        return config_err("render needs --report pointing at a reports.jsonl file");
    };
    let reader = BufReader::new(File::open(report_path).map_err(runtime)?);
    ensure_out_dir(cfg)?;
    let mut pages = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(runtime)?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .with_context(|| format!("{}:{line_no}: invalid JSON", report_path.display()))
            .map_err(runtime)?;
        if value.get("config").is_some() {
            continue;
        }
        let record: ReportRecord = serde_json::from_value(value)
            .with_context(|| format!("{}:{line_no}: not a report record", report_path.display()))
            .map_err(runtime)?;
        let html = render_html(&record);
        let path = cfg
            .out
            .join(format!("sentence_{}_{}.html", record.sentence_index, record.method));
        std::fs::write(&path, html).map_err(runtime)?;
        pages += 1;
    }
    println!("rendered {pages} page(s) under {}", cfg.out.display());
    Ok(())
}

