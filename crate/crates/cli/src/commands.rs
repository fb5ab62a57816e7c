//! Subcommand implementations and the artifact-file conventions they share.
//!
//! Every command reads inputs from explicit flags, writes outputs under
//! `--out-dir`, and keeps a fixed file layout: `vocab.txt`,
//! `pretrained.ckpt`, `relevance.ckpt`, `student*.ckpt`, `features.idx`,
//! plus JSON and text reports next to them.

use std::io::{BufRead, Write as _};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use fsk_core::baselines::{build_lexical_index, LexicalIndex};
use fsk_core::catalog::{load_catalog, load_queryset, FeatureCatalog, QueryKind, QueryRecord};
use fsk_core::encoder::{init_params, load_checkpoint, save_checkpoint, EncoderConfig};
use fsk_core::evalkit::{
    evaluate, hits_at_k, render_report, Bm25Engine, EvalOptions, EvalReport, FtsEngine, KCut,
    NeuralEngine, SearchEngine,
};
use fsk_core::fingerprint::{catalog_fingerprint, model_fingerprint, to_hex};
use fsk_core::fixtures;
use fsk_core::index::{build_index, load_index, save_index, SearchResult};
use fsk_core::tokenizer::{build_vocab, load_vocab, save_vocab, Vocab};
use fsk_core::trainers::{
    distill as run_distill, mlm_pretrain, train_relevance, ContrastiveHyper, DistillHyper,
    MlmHyper, TrainReport,
};
use fsk_core::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::DEFAULT_SEED;

const VOCAB_TARGET: u32 = 500;
const MAX_SEQ_LEN: u32 = 48;
const VOCAB_FILE: &str = "vocab.txt";

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::format(format!("cannot serialize report: {e}")))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Parse a hyperparameter JSON file, or fall back to defaults.
fn load_hyper<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::format(format!("hyperparameter file {}: {e}", path.display())))
}

/// Encoder shape from the `--layers`/`--dim` flags. The head count is the
/// largest of 4, 2, 1 that divides the dimension evenly.
fn encoder_shape(layers: u32, dim: u32, vocab_size: u32, max_seq_len: u32) -> Result<EncoderConfig> {
    let heads = if dim % 4 == 0 {
        4
    } else if dim % 2 == 0 {
        2
    } else {
        1
    };
    let config =
        EncoderConfig { layers, hidden: dim, heads, ffn_dim: dim * 2, vocab_size, max_seq_len };
    config.validate()?;
    Ok(config)
}

/// Vocabulary resolution used by every command that needs one: an explicit
/// `--vocab` path wins, then an existing `vocab.txt` under the output
/// directory, otherwise a fresh vocabulary is built from the catalog texts
/// and saved there.
fn obtain_vocab(
    explicit: Option<&Path>,
    out_dir: &Path,
    catalog: &FeatureCatalog,
) -> Result<Vocab> {
    if let Some(path) = explicit {
        return load_vocab(path);
    }
    let default_path = out_dir.join(VOCAB_FILE);
    if default_path.is_file() {
        return load_vocab(&default_path);
    }
    let texts = fixtures::catalog_texts(catalog);
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let vocab = build_vocab(&refs, VOCAB_TARGET)?;
    ensure_dir(out_dir)?;
    save_vocab(&vocab, &default_path)?;
    println!("built vocabulary ({} tokens) -> {}", vocab.size(), default_path.display());
    Ok(vocab)
}

fn check_vocab_matches(vocab: &Vocab, config: &EncoderConfig, what: &str) -> Result<()> {
    if vocab.size() != config.vocab_size {
        return Err(Error::config(format!(
            "vocabulary has {} tokens but the {what} expects {}; pass the \
             vocabulary the model was trained with via --vocab",
            vocab.size(),
            config.vocab_size
        )));
    }
    Ok(())
}

fn short_hex(fp: &[u8; 32]) -> String {
    to_hex(fp)[..12].to_string()
}

fn print_epoch_losses(report: &TrainReport) {
    for (i, loss) in report.epoch_losses.iter().enumerate() {
        println!("  epoch {:>3}: loss {loss:.6}", i + 1);
    }
}

/// Queries grouped by kind, preserving first-appearance order, so mixed
/// files still evaluate one homogeneous group at a time.
fn group_by_kind(queries: Vec<QueryRecord>) -> Vec<Vec<QueryRecord>> {
    let mut groups: Vec<Vec<QueryRecord>> = Vec::new();
    for q in queries {
        match groups.iter_mut().find(|g| g[0].kind == q.kind) {
            Some(g) => g.push(q),
            None => groups.push(vec![q]),
        }
    }
    groups
}

/// Fraction of queries whose gold ids appear in the top `cut` of a full
/// ranking, for each cut.
fn hits_at_cuts(
    engine: &dyn SearchEngine,
    queries: &[QueryRecord],
    cuts: &[KCut],
) -> Result<Vec<f64>> {
    let depth = engine.doc_count().max(1);
    let mut counts = vec![0usize; cuts.len()];
    for q in queries {
        let ids: Vec<String> =
            engine.search(&q.text, depth)?.hits.into_iter().map(|h| h.id).collect();
        for (slot, cut) in cuts.iter().enumerate() {
            if hits_at_k(&ids, &q.gold_ids, *cut)? {
                counts[slot] += 1;
            }
        }
    }
    Ok(counts.iter().map(|c| *c as f64 / queries.len() as f64).collect())
}

// validate

#[derive(Args)]
pub struct ValidateArgs {
    /// Catalog JSON file to check.
    #[arg(long)]
    catalog: PathBuf,
    /// Optional queryset (JSON lines) checked against the catalog.
    #[arg(long)]
    queryset: Option<PathBuf>,
}

pub fn validate(args: ValidateArgs) -> Result<()> {
    let catalog = load_catalog(&args.catalog)?;
    let pairs = catalog.synthesize_pairs();
    println!(
        "catalog {}: {} entries, {} training pairs, fingerprint {}",
        args.catalog.display(),
        catalog.len(),
        pairs.len(),
        short_hex(&catalog_fingerprint(&catalog))
    );
    if let Some(path) = &args.queryset {
        let queries = load_queryset(path, &catalog)?;
        let count_of = |kind: QueryKind| queries.iter().filter(|q| q.kind == kind).count();
        println!(
            "queryset {}: {} queries ({} exact-keyword, {} relaxed-keyword, {} sentence)",
            path.display(),
            queries.len(),
            count_of(QueryKind::ExactKeyword),
            count_of(QueryKind::RelaxedKeyword),
            count_of(QueryKind::Sentence),
        );
    }
    Ok(())
}

// pretrain

#[derive(Args)]
pub struct PretrainArgs {
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Explicit vocabulary; defaults to <out-dir>/vocab.txt or a fresh build.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    layers: u32,
    #[arg(long, default_value_t = 64)]
    dim: u32,
    /// Overrides the seed from --config and the default.
    #[arg(long)]
    seed: Option<u64>,
    /// JSON file with pretraining hyperparameters.
    #[arg(long)]
    config: Option<PathBuf>,
}

pub fn pretrain(args: PretrainArgs, verbose: bool) -> Result<()> {
    let catalog = load_catalog(&args.catalog)?;
    ensure_dir(&args.out_dir)?;
    let vocab = obtain_vocab(args.vocab.as_deref(), &args.out_dir, &catalog)?;
    let config = encoder_shape(args.layers, args.dim, vocab.size(), MAX_SEQ_LEN)?;
    let mut hyper: MlmHyper = load_hyper(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        hyper.seed = seed;
    }
    let params = init_params::<f32>(&config, hyper.seed)?;
    let texts = fixtures::catalog_texts(&catalog);
    let (params, report) = mlm_pretrain(params, &config, &vocab, &texts, &hyper)?;
    if verbose {
        print_epoch_losses(&report);
    }
    let ckpt = args.out_dir.join("pretrained.ckpt");
    save_checkpoint(&params, &config, &ckpt)?;
    write_json(&args.out_dir.join("pretrain_report.json"), &report)?;
    let accuracy = report
        .masked_accuracy
        .map(|a| format!("{:.1}% masked-token accuracy, ", a * 100.0))
        .unwrap_or_default();
    println!(
        "pretrained {} epochs in {:.1}s: final loss {:.4}, {accuracy}wrote {}",
        report.epoch_losses.len(),
        report.wall_seconds,
        report.final_loss,
        ckpt.display()
    );
    Ok(())
}

// train

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Explicit vocabulary; defaults to <out-dir>/vocab.txt or a fresh build.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Start from this checkpoint (e.g. pretrained.ckpt) instead of random
    /// initialization; its stored shape wins over --layers/--dim.
    #[arg(long)]
    from: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    layers: u32,
    #[arg(long, default_value_t = 64)]
    dim: u32,
    /// Overrides the seed from --config and the default.
    #[arg(long)]
    seed: Option<u64>,
    /// JSON file with contrastive training hyperparameters.
    #[arg(long)]
    config: Option<PathBuf>,
}

pub fn train(args: TrainArgs, verbose: bool) -> Result<()> {
    let catalog = load_catalog(&args.catalog)?;
    ensure_dir(&args.out_dir)?;
    let vocab = obtain_vocab(args.vocab.as_deref(), &args.out_dir, &catalog)?;
    let mut hyper: ContrastiveHyper = load_hyper(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        hyper.seed = seed;
    }
    let (params, config) = match &args.from {
        Some(path) => {
            let (params, config) = load_checkpoint(path)?;
            check_vocab_matches(&vocab, &config, "checkpoint")?;
            (params, config)
        }
        None => {
            let config = encoder_shape(args.layers, args.dim, vocab.size(), MAX_SEQ_LEN)?;
            (init_params::<f32>(&config, hyper.seed)?, config)
        }
    };
    let pairs = catalog.synthesize_pairs();
    let (params, report) = train_relevance(params, &config, &vocab, &pairs, &hyper)?;
    if verbose {
        print_epoch_losses(&report);
    }
    let ckpt = args.out_dir.join("relevance.ckpt");
    save_checkpoint(&params, &config, &ckpt)?;
    write_json(&args.out_dir.join("train_report.json"), &report)?;
    println!(
        "trained on {} pairs for {} epochs in {:.1}s: loss {:.4} -> {:.4}, wrote {}",
        pairs.len(),
        report.epoch_losses.len(),
        report.wall_seconds,
        report.epoch_losses.first().copied().unwrap_or(f64::NAN),
        report.final_loss,
        ckpt.display()
    );
    Ok(())
}

// distill

/// Knobs accepted in a distillation --config file. The student shape always
/// comes from --layers/--dim.
#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DistillOverrides {
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    epochs: Option<usize>,
    seed: Option<u64>,
    projection: Option<bool>,
}

#[derive(Args)]
pub struct DistillArgs {
    /// Teacher checkpoint to compress.
    #[arg(long)]
    teacher: PathBuf,
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Explicit vocabulary; defaults to <out-dir>/vocab.txt or a fresh build.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Student depth.
    #[arg(long, default_value_t = 1)]
    layers: u32,
    /// Student hidden dimension.
    #[arg(long, default_value_t = 32)]
    dim: u32,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON file with distillation hyperparameters.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn build_distill_hyper(
    teacher_config: &EncoderConfig,
    student_config: EncoderConfig,
    corpus: Vec<String>,
    overrides: &DistillOverrides,
    seed_flag: Option<u64>,
) -> DistillHyper {
    let mut hyper = DistillHyper {
        projection: student_config.hidden != teacher_config.hidden,
        student_config,
        corpus,
        batch_size: 16,
        learning_rate: 1e-3,
        epochs: 40,
        seed: DEFAULT_SEED,
    };
    if let Some(v) = overrides.batch_size {
        hyper.batch_size = v;
    }
    if let Some(v) = overrides.learning_rate {
        hyper.learning_rate = v;
    }
    if let Some(v) = overrides.epochs {
        hyper.epochs = v;
    }
    if let Some(v) = overrides.seed {
        hyper.seed = v;
    }
    if let Some(v) = overrides.projection {
        hyper.projection = v;
    }
    if let Some(seed) = seed_flag {
        hyper.seed = seed;
    }
    hyper
}

pub fn distill(args: DistillArgs, verbose: bool) -> Result<()> {
    let (teacher_params, teacher_config) = load_checkpoint(&args.teacher)?;
    let catalog = load_catalog(&args.catalog)?;
    ensure_dir(&args.out_dir)?;
    let vocab = obtain_vocab(args.vocab.as_deref(), &args.out_dir, &catalog)?;
    check_vocab_matches(&vocab, &teacher_config, "teacher checkpoint")?;

    let student_config =
        encoder_shape(args.layers, args.dim, vocab.size(), teacher_config.max_seq_len)?;
    let (teacher_count, _) = teacher_config.param_count();
    let (student_count, _) = student_config.param_count();
    if student_count >= teacher_count {
        eprintln!(
            "warning: student has {student_count} parameters, not fewer than \
             the teacher's {teacher_count}"
        );
    }

    let overrides: DistillOverrides = load_hyper(args.config.as_deref())?;
    let hyper = build_distill_hyper(
        &teacher_config,
        student_config,
        fixtures::catalog_texts(&catalog),
        &overrides,
        args.seed,
    );
    let (student, report) = run_distill(&teacher_params, &teacher_config, &vocab, &hyper)?;
    if verbose {
        print_epoch_losses(&report);
    }
    let ckpt = args.out_dir.join("student.ckpt");
    save_checkpoint(&student, &hyper.student_config, &ckpt)?;
    write_json(&args.out_dir.join("distill_report.json"), &report)?;
    println!(
        "distilled to {student_count}/{teacher_count} parameters ({:.1}%) in {:.1}s: \
         mse {:.6} -> {:.6}, wrote {}",
        100.0 * student_count as f64 / teacher_count as f64,
        report.wall_seconds,
        report.epoch_losses.first().copied().unwrap_or(f64::NAN),
        report.final_loss,
        ckpt.display()
    );
    Ok(())
}

// sweep

#[derive(Args)]
pub struct SweepArgs {
    /// Teacher checkpoint every student is distilled from.
    #[arg(long)]
    teacher: PathBuf,
    #[arg(long)]
    catalog: PathBuf,
    /// Queryset the trade-off table is scored on.
    #[arg(long)]
    queryset: PathBuf,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Student shapes as LAYERSxDIM, comma-separated.
    #[arg(long, default_value = "2x32,1x32,1x16")]
    sizes: String,
    /// Distillation epochs for every student.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON file with distillation hyperparameters applied to every row.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Serialize)]
struct SweepRow {
    model: String,
    layers: u32,
    dim: u32,
    params: u64,
    checkpoint_bytes: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    hits_pct: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn parse_sizes(arg: &str) -> Result<Vec<(u32, u32)>> {
    let mut sizes = Vec::new();
    for part in arg.split(',') {
        let part = part.trim();
        let (l, d) = part
            .split_once('x')
            .ok_or_else(|| Error::config(format!("bad size {part:?}; expected LAYERSxDIM")))?;
        let layers: u32 = l
            .parse()
            .map_err(|_| Error::config(format!("bad layer count in size {part:?}")))?;
        let dim: u32 =
            d.parse().map_err(|_| Error::config(format!("bad dimension in size {part:?}")))?;
        sizes.push((layers, dim));
    }
    if sizes.is_empty() {
        return Err(Error::config("no student sizes given"));
    }
    Ok(sizes)
}

fn render_sweep(rows: &[SweepRow], cuts: &[KCut]) -> String {
    let mut header = vec![
        "model".to_string(),
        "layers".to_string(),
        "dim".to_string(),
        "params".to_string(),
        "size_kb".to_string(),
    ];
    for cut in cuts {
        header.push(format!("hits{}", cut.label()));
    }
    let mut table: Vec<(Vec<String>, Option<String>)> = vec![(header, None)];
    for row in rows {
        let mut cells = vec![
            row.model.clone(),
            row.layers.to_string(),
            row.dim.to_string(),
            row.params.to_string(),
            format!("{:.1}", row.checkpoint_bytes as f64 / 1024.0),
        ];
        if let Some(hits) = &row.hits_pct {
            cells.extend(hits.iter().map(|h| format!("{h:.1}")));
        }
        table.push((cells, row.error.as_ref().map(|e| format!("failed: {e}"))));
    }
    let columns = table[0].0.len();
    let mut widths = vec![0usize; columns];
    for (cells, _) in &table {
        for (i, cell) in cells.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    for (cells, note) in &table {
        let mut line = String::new();
        for (i, cell) in cells.iter().enumerate() {
            if i > 0 {
                line.push_str("  ");
            }
            if i == 0 {
                line.push_str(&format!("{cell:<width$}", width = widths[0]));
            } else {
                line.push_str(&format!("{cell:>width$}", width = widths[i]));
            }
        }
        if let Some(note) = note {
            for width in &widths[cells.len()..] {
                line.push_str(&" ".repeat(width + 2));
            }
            line.push_str("  ");
            line.push_str(note);
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

pub fn sweep(args: SweepArgs) -> Result<()> {
    let (teacher_params, teacher_config) = load_checkpoint(&args.teacher)?;
    let catalog = load_catalog(&args.catalog)?;
    ensure_dir(&args.out_dir)?;
    let vocab = obtain_vocab(args.vocab.as_deref(), &args.out_dir, &catalog)?;
    check_vocab_matches(&vocab, &teacher_config, "teacher checkpoint")?;
    let queries = load_queryset(&args.queryset, &catalog)?;
    if queries.is_empty() {
        return Err(Error::validation("queryset is empty"));
    }
    let sizes = parse_sizes(&args.sizes)?;
    let mut overrides: DistillOverrides = load_hyper(args.config.as_deref())?;
    if args.epochs.is_some() {
        overrides.epochs = args.epochs;
    }
    let cuts = [KCut::At(5), KCut::At(10), KCut::At(20)];

    let mut rows = Vec::new();
    let teacher_index = build_index(&teacher_params, &teacher_config, &vocab, &catalog)?;
    let teacher_engine = NeuralEngine {
        index: &teacher_index,
        params: &teacher_params,
        config: &teacher_config,
        vocab: &vocab,
        threshold: None,
    };
    let teacher_hits = hits_at_cuts(&teacher_engine, &queries, &cuts)?;
    let (teacher_count, teacher_bytes) = teacher_config.param_count();
    rows.push(SweepRow {
        model: "teacher".to_string(),
        layers: teacher_config.layers,
        dim: teacher_config.hidden,
        params: teacher_count,
        checkpoint_bytes: teacher_bytes,
        hits_pct: Some(teacher_hits.iter().map(|h| (h * 1000.0).round() / 10.0).collect()),
        error: None,
    });

    for (layers, dim) in sizes {
        let model = format!("student-{layers}x{dim}");
        let row = (|| -> Result<SweepRow> {
            let student_config =
                encoder_shape(layers, dim, vocab.size(), teacher_config.max_seq_len)?;
            let hyper = build_distill_hyper(
                &teacher_config,
                student_config,
                fixtures::catalog_texts(&catalog),
                &overrides,
                args.seed,
            );
            let (student, _) = run_distill(&teacher_params, &teacher_config, &vocab, &hyper)?;
            let ckpt = args.out_dir.join(format!("student_{layers}x{dim}.ckpt"));
            save_checkpoint(&student, &hyper.student_config, &ckpt)?;
            let bytes = std::fs::metadata(&ckpt).map_err(|e| io_err(&ckpt, e))?.len();
            let index = build_index(&student, &hyper.student_config, &vocab, &catalog)?;
            let engine = NeuralEngine {
                index: &index,
                params: &student,
                config: &hyper.student_config,
                vocab: &vocab,
                threshold: None,
            };
            let hits = hits_at_cuts(&engine, &queries, &cuts)?;
            let (count, _) = hyper.student_config.param_count();
            Ok(SweepRow {
                model: model.clone(),
                layers,
                dim,
                params: count,
                checkpoint_bytes: bytes,
                hits_pct: Some(hits.iter().map(|h| (h * 1000.0).round() / 10.0).collect()),
                error: None,
            })
        })();
        match row {
            Ok(row) => rows.push(row),
            Err(err) => {
                eprintln!("warning: {model} failed: {err}");
                let (count, bytes) = encoder_shape(layers, dim, vocab.size(), MAX_SEQ_LEN)
                    .map(|c| c.param_count())
                    .unwrap_or((0, 0));
                rows.push(SweepRow {
                    model,
                    layers,
                    dim,
                    params: count,
                    checkpoint_bytes: bytes,
                    hits_pct: None,
                    error: Some(err.to_string()),
                });
            }
        }
    }

    let table = render_sweep(&rows, &cuts);
    print!("{table}");
    write_text(&args.out_dir.join("sweep.txt"), &table)?;
    write_json(&args.out_dir.join("sweep.json"), &rows)?;
    println!("wrote {} and sweep.json", args.out_dir.join("sweep.txt").display());
    Ok(())
}

// index

#[derive(Args)]
pub struct IndexArgs {
    /// Encoder checkpoint used to embed the catalog.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long)]
    vocab: Option<PathBuf>,
}

pub fn index(args: IndexArgs) -> Result<()> {
    let (params, config) = load_checkpoint(&args.checkpoint)?;
    let catalog = load_catalog(&args.catalog)?;
    ensure_dir(&args.out_dir)?;
    let vocab = obtain_vocab(args.vocab.as_deref(), &args.out_dir, &catalog)?;
    check_vocab_matches(&vocab, &config, "checkpoint")?;
    let index = build_index(&params, &config, &vocab, &catalog)?;
    let path = args.out_dir.join("features.idx");
    save_index(&index, &path)?;
    println!(
        "indexed {} features at dimension {}, fingerprint {}, wrote {}",
        index.len(),
        index.dim(),
        short_hex(index.fingerprint()),
        path.display()
    );
    Ok(())
}

// search

#[derive(Args)]
pub struct SearchArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Enables the feature-path column, and the lexical baselines for
    /// --compare.
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// One-shot query; without it the command reads queries interactively.
    #[arg(long)]
    query: Option<String>,
    #[arg(long, default_value_t = 5)]
    topk: usize,
    /// Drop hits with cosine similarity below this value.
    #[arg(long)]
    threshold: Option<f64>,
    /// Comma-separated baselines to show next to the neural ranking
    /// (fts, bm25).
    #[arg(long)]
    compare: Option<String>,
}

enum Baseline {
    Fts,
    Bm25,
}

impl Baseline {
    fn name(&self) -> &'static str {
        match self {
            Baseline::Fts => "fts",
            Baseline::Bm25 => "bm25",
        }
    }

    fn search(&self, lexical: &LexicalIndex, query: &str, k: usize) -> Result<SearchResult> {
        match self {
            Baseline::Fts => fsk_core::baselines::fts_search(lexical, query, k),
            Baseline::Bm25 => fsk_core::baselines::bm25_search(lexical, query, k),
        }
    }
}

fn parse_baselines(arg: &str) -> Result<Vec<Baseline>> {
    arg.split(',')
        .map(|name| match name.trim() {
            "fts" => Ok(Baseline::Fts),
            "bm25" => Ok(Baseline::Bm25),
            other => Err(Error::config(format!(
                "unknown baseline {other:?}; choose from fts, bm25"
            ))),
        })
        .collect()
}

/// Render one or more rankings side by side, one column per engine.
fn render_rankings(columns: &[(String, Vec<(String, f64)>)]) -> String {
    let rows = columns.iter().map(|(_, hits)| hits.len()).max().unwrap_or(0);
    let widths: Vec<usize> = columns
        .iter()
        .map(|(name, hits)| {
            hits.iter()
                .map(|(id, _)| id.len())
                .chain([name.len().saturating_sub(8)])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    out.push_str("rank");
    for ((name, _), width) in columns.iter().zip(&widths) {
        out.push_str(&format!("  {:<w$}", name, w = width + 8));
    }
    out.push('\n');
    for row in 0..rows {
        out.push_str(&format!("{:>4}", row + 1));
        for ((_, hits), width) in columns.iter().zip(&widths) {
            match hits.get(row) {
                Some((id, score)) => {
                    out.push_str(&format!("  {:<w$}  {score:>6.3}", id, w = width))
                }
                None => out.push_str(&format!("  {:w$}", "", w = width + 8)),
            }
        }
        out.push('\n');
    }
    if rows == 0 {
        out.push_str("(no hits)\n");
    }
    out
}

pub fn search(args: SearchArgs) -> Result<()> {
    let index = load_index(&args.index)?;
    let (params, config) = load_checkpoint(&args.checkpoint)?;
    let vocab = load_vocab(&args.vocab)?;
    let baselines = match &args.compare {
        Some(arg) => parse_baselines(arg)?,
        None => Vec::new(),
    };
    let catalog = match &args.catalog {
        Some(path) => Some(load_catalog(path)?),
        None if baselines.is_empty() => None,
        None => {
            return Err(Error::config(
                "--compare needs --catalog to build the lexical baselines",
            ))
        }
    };
    let lexical = if baselines.is_empty() {
        None
    } else {
        Some(build_lexical_index(catalog.as_ref().expect("checked above")))
    };
    // With the catalog at hand, label hits by their menu path; the bare id
    // still prints when there is no catalog or when comparison columns
    // would get too wide.
    let label = |id: String| -> String {
        match catalog.as_ref().filter(|_| baselines.is_empty()).and_then(|c| c.get(&id)) {
            Some(entry) => format!("{id} ({})", entry.index_text()),
            None => id,
        }
    };

    let run_query = |query: &str| -> Result<String> {
        let neural =
            fsk_core::index::search(&index, &params, &config, &vocab, query, args.topk, args.threshold)?;
        let mut columns = vec![(
            "neural".to_string(),
            neural.hits.into_iter().map(|h| (label(h.id), h.score)).collect::<Vec<_>>(),
        )];
        if let Some(lexical) = &lexical {
            for baseline in &baselines {
                let result = baseline.search(lexical, query, args.topk)?;
                columns.push((
                    baseline.name().to_string(),
                    result.hits.into_iter().map(|h| (h.id, h.score)).collect(),
                ));
            }
        }
        Ok(render_rankings(&columns))
    };

    match &args.query {
        Some(query) => {
            print!("{}", run_query(query)?);
            Ok(())
        }
        None => {
            let stdin = std::io::stdin();
            let mut lines = stdin.lock().lines();
            loop {
                print!("query> ");
                std::io::stdout().flush().map_err(|e| io_err(Path::new("stdout"), e))?;
                let Some(line) = lines.next() else {
                    println!();
                    return Ok(());
                };
                let line = line.map_err(|e| io_err(Path::new("stdin"), e))?;
                let query = line.trim();
                if query.is_empty() {
                    continue;
                }
                match run_query(query) {
                    Ok(rendering) => print!("{rendering}"),
                    Err(err @ Error::Config(_)) => eprintln!("error: {err}"),
                    Err(err) => return Err(err),
                }
            }
        }
    }
}

// eval

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long)]
    queryset: PathBuf,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Needed when the neural engine is evaluated.
    #[arg(long)]
    index: Option<PathBuf>,
    /// Needed when the neural engine is evaluated.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Comma-separated engines to score (neural, fts, bm25).
    #[arg(long, default_value = "neural,fts,bm25")]
    engines: String,
    /// Depth for keyword precision/recall/F1.
    #[arg(long, default_value_t = 5)]
    topk: usize,
    /// Cosine threshold applied to the neural engine.
    #[arg(long)]
    threshold: Option<f64>,
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let catalog = load_catalog(&args.catalog)?;
    let queries = load_queryset(&args.queryset, &catalog)?;
    if queries.is_empty() {
        return Err(Error::validation("queryset is empty"));
    }
    ensure_dir(&args.out_dir)?;

    let engine_names: Vec<&str> = args.engines.split(',').map(str::trim).collect();
    for name in &engine_names {
        if !matches!(*name, "neural" | "fts" | "bm25") {
            return Err(Error::config(format!(
                "unknown engine {name:?}; choose from neural, fts, bm25"
            )));
        }
    }

    let neural_parts = if engine_names.contains(&"neural") {
        let index_path = args.index.as_deref().ok_or_else(|| {
            Error::config("evaluating the neural engine needs --index")
        })?;
        let ckpt_path = args.checkpoint.as_deref().ok_or_else(|| {
            Error::config("evaluating the neural engine needs --checkpoint")
        })?;
        let index = load_index(index_path)?;
        let (params, config) = load_checkpoint(ckpt_path)?;
        let vocab = obtain_vocab(args.vocab.as_deref(), &args.out_dir, &catalog)?;
        check_vocab_matches(&vocab, &config, "checkpoint")?;
        Some((index, params, config, vocab))
    } else {
        None
    };
    let lexical = if engine_names.iter().any(|n| matches!(*n, "fts" | "bm25")) {
        Some(build_lexical_index(&catalog))
    } else {
        None
    };

    let mut options = EvalOptions {
        prf_k: args.topk,
        catalog_fingerprint: to_hex(&catalog_fingerprint(&catalog)),
        ..EvalOptions::default()
    };
    if let Some((_, _, config, vocab)) = &neural_parts {
        options.model_fingerprint = Some(to_hex(&model_fingerprint(config, vocab)));
    }

    let groups = group_by_kind(queries);
    let mut reports: Vec<EvalReport> = Vec::new();
    for name in &engine_names {
        for group in &groups {
            let report = match *name {
                "neural" => {
                    let (index, params, config, vocab) =
                        neural_parts.as_ref().expect("neural artifacts loaded above");
                    let engine = NeuralEngine {
                        index,
                        params,
                        config,
                        vocab,
                        threshold: args.threshold,
                    };
                    evaluate(&engine, group, &options)?
                }
                "fts" => {
                    let engine =
                        FtsEngine { index: lexical.as_ref().expect("lexical index built above") };
                    evaluate(&engine, group, &options)?
                }
                _ => {
                    let engine =
                        Bm25Engine { index: lexical.as_ref().expect("lexical index built above") };
                    evaluate(&engine, group, &options)?
                }
            };
            reports.push(report);
        }
    }

    let text = render_report(&reports);
    print!("{text}");
    write_text(&args.out_dir.join("eval_report.txt"), &text)?;
    write_json(&args.out_dir.join("eval_report.json"), &reports)?;
    println!("wrote {} and eval_report.json", args.out_dir.join("eval_report.txt").display());
    Ok(())
}

// demo

#[derive(Args)]
pub struct DemoArgs {
    #[arg(long, default_value = "demo-out")]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

pub fn demo(args: DemoArgs, verbose: bool) -> Result<()> {
    let seed = args.seed.unwrap_or(DEFAULT_SEED);
    let catalog = fixtures::bundled_catalog();
    ensure_dir(&args.out_dir)?;
    write_text(&args.out_dir.join("catalog.json"), fixtures::CATALOG_JSON)?;

    let step = Instant::now();
    let texts = fixtures::catalog_texts(&catalog);
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let vocab = build_vocab(&refs, VOCAB_TARGET)?;
    save_vocab(&vocab, &args.out_dir.join(VOCAB_FILE))?;
    println!(
        "[1/5] vocabulary: {} tokens from {} catalog texts ({:.1}s)",
        vocab.size(),
        texts.len(),
        step.elapsed().as_secs_f64()
    );

    let step = Instant::now();
    let config = encoder_shape(2, 64, vocab.size(), MAX_SEQ_LEN)?;
    let params = init_params::<f32>(&config, seed)?;
    let pairs = catalog.synthesize_pairs();
    let hyper = ContrastiveHyper {
        batch_size: 16,
        negatives_per_positive: 4,
        temperature: 0.05,
        learning_rate: 2e-3,
        epochs: 80,
        seed,
    };
    let (params, report) = train_relevance(params, &config, &vocab, &pairs, &hyper)?;
    if verbose {
        print_epoch_losses(&report);
    }
    save_checkpoint(&params, &config, &args.out_dir.join("relevance.ckpt"))?;
    write_json(&args.out_dir.join("train_report.json"), &report)?;
    println!(
        "[2/5] training: {} pairs, {} epochs, loss {:.3} -> {:.3} ({:.1}s)",
        pairs.len(),
        report.epoch_losses.len(),
        report.epoch_losses.first().copied().unwrap_or(f64::NAN),
        report.final_loss,
        step.elapsed().as_secs_f64()
    );

    let step = Instant::now();
    let index = build_index(&params, &config, &vocab, &catalog)?;
    save_index(&index, &args.out_dir.join("features.idx"))?;
    println!(
        "[3/5] index: {} features at dimension {} ({:.1}s)",
        index.len(),
        index.dim(),
        step.elapsed().as_secs_f64()
    );

    let step = Instant::now();
    let options = EvalOptions {
        catalog_fingerprint: to_hex(&catalog_fingerprint(&catalog)),
        model_fingerprint: Some(to_hex(&model_fingerprint(&config, &vocab))),
        ..EvalOptions::default()
    };
    let neural = NeuralEngine { index: &index, params: &params, config: &config, vocab: &vocab, threshold: None };
    let lexical = build_lexical_index(&catalog);
    let fts = FtsEngine { index: &lexical };
    let bm25 = Bm25Engine { index: &lexical };
    let querysets = [
        fixtures::exact_queries(&catalog),
        fixtures::relaxed_queries(&catalog),
        fixtures::sentence_queries(&catalog),
    ];
    let mut reports = Vec::new();
    let engines: [&dyn SearchEngine; 3] = [&neural, &fts, &bm25];
    for engine in engines {
        for queries in &querysets {
            reports.push(evaluate(engine, queries, &options)?);
        }
    }
    let text = render_report(&reports);
    write_text(&args.out_dir.join("eval_report.txt"), &text)?;
    write_json(&args.out_dir.join("eval_report.json"), &reports)?;
    println!("[4/5] evaluation ({:.1}s):", step.elapsed().as_secs_f64());
    print!("{text}");

    println!("[5/5] sample searches:");
    for query in [
        "Touch sensitivity",
        "notification sound",
        "sound notification",
        "how do i get a visual alert when an important noise happens around me",
    ] {
        let result = fsk_core::index::search(&index, &params, &config, &vocab, query, 3, None)?;
        let hits: Vec<String> =
            result.hits.iter().map(|h| format!("{} ({:.3})", h.id, h.score)).collect();
        println!("  {query:?} -> {}", hits.join(", "));
    }
    println!("artifacts in {}", args.out_dir.display());
    Ok(())
}
