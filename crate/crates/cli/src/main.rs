mod config;
mod manifest;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use earlyrisk::classifiers::{
    message_matrix, train_metadata_model, CnnPredictor, EnsemblePredictor, LabelOracle,
    LogisticConfig, MetaModel, MetadataPredictor, Predictor,
};
use earlyrisk::corpus::{
    audit_timestamp_leak, generate_synthetic_corpus, load_corpus, save_corpus, LeakReport,
};
use earlyrisk::embeddings::{evaluate_analogies, load_embeddings, AnalogyDataset, AnalogyReport};
use earlyrisk::metadata::{write_features_csv, MetadataConfig};
use earlyrisk::metrics::{
    metric_report, write_comparison_csv, DecisionLog, MetricReport, ReportConfig, TableRow,
};
use earlyrisk::neuralnet::{
    train_with, write_loss_curve, CnnConfig, CnnModel, Optimizer, TrainConfig,
};
use earlyrisk::simulator::{
    run_simulation, sweep_thresholds, write_trace_jsonl, DecisionPolicy, PolicyMode, SweepTable,
    DEFAULT_CHUNKS,
};
use earlyrisk::{Error, Result};

use config::FileConfig;
use manifest::ManifestBuilder;

#[derive(Debug, Parser)]
#[command(
    name = "earlyrisk",
    version,
    about = "Early risk detection on chronological text streams"
)]
struct Cli {
    /// Seed for every random choice of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Report format written to stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Worker threads for per-user parallelism (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// JSON settings file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory with replacement lexicons (falls back to $EARLYRISK_LEXICON_DIR).
    #[arg(long, global = true)]
    lexicon_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded synthetic labeled corpus as JSON lines.
    GenCorpus(GenCorpusArgs),
    /// Compute the 27 metadata features per user as CSV.
    ExtractFeatures(ExtractArgs),
    /// Train the metadata logistic regression.
    TrainMeta(TrainMetaArgs),
    /// Train the document CNN on word vectors.
    TrainCnn(TrainCnnArgs),
    /// Replay the chunked release protocol and write the decision log.
    Simulate(SimulateArgs),
    /// Run the simulation for several thresholds.
    Sweep(SweepArgs),
    /// Score a decision log.
    Score(ScoreArgs),
    /// Nearest neighbours of a token by cosine similarity.
    EmbedNn(EmbedNnArgs),
    /// Word-analogy accuracy of a vector file.
    EmbedAnalogy(EmbedAnalogyArgs),
    /// Check whether the latest-post timestamp alone predicts the label.
    AuditLeak(AuditLeakArgs),
}

#[derive(Debug, Args)]
struct GenCorpusArgs {
    #[arg(long)]
    positive: usize,
    #[arg(long)]
    negative: usize,
    #[arg(long)]
    out: PathBuf,
    /// Make negative users' last posts systematically later.
    #[arg(long)]
    timestamp_leak: bool,
    #[arg(long)]
    min_messages: Option<usize>,
    #[arg(long)]
    max_messages: Option<usize>,
    /// Round message counts up to a multiple of this value.
    #[arg(long)]
    message_step: Option<usize>,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Hold the month feature at zero.
    #[arg(long)]
    no_month: bool,
}

#[derive(Debug, Args)]
struct TrainMetaArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    l2_weight: Option<f64>,
    #[arg(long)]
    no_month: bool,
}

#[derive(Debug, Args)]
struct TrainCnnArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    vectors: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Read at most this many vectors.
    #[arg(long)]
    vector_limit: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    seq_len: Option<usize>,
    /// Use at most this many (earliest) documents per user.
    #[arg(long)]
    max_docs_per_user: Option<usize>,
    /// Also write the per-epoch loss as CSV.
    #[arg(long)]
    loss_curve: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OptimizerArg {
    PlainSgd,
    AdaptiveMoment,
}

#[derive(Debug, Args)]
struct PredictorArgs {
    /// Metadata model from `train-meta`.
    #[arg(long)]
    meta_model: Option<PathBuf>,
    /// CNN model from `train-cnn`; needs `--vectors`.
    #[arg(long)]
    cnn_model: Option<PathBuf>,
    #[arg(long)]
    vectors: Option<PathBuf>,
    #[arg(long)]
    vector_limit: Option<usize>,
    /// Use the ground-truth labels as scores.
    #[arg(long)]
    oracle: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PolicyArg {
    Threshold,
    Wait,
}

impl From<PolicyArg> for PolicyMode {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Threshold => PolicyMode::Threshold,
            PolicyArg::Wait => PolicyMode::Wait,
        }
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    predictor: PredictorArgs,
    #[arg(long, value_enum)]
    policy: Option<PolicyArg>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    chunks: Option<usize>,
    /// Decision log CSV.
    #[arg(long)]
    out: PathBuf,
    /// Per-chunk trace as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Also write the metric report here, in `--format`.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    predictor: PredictorArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    thresholds: Vec<f64>,
    #[arg(long, value_enum)]
    policy: Option<PolicyArg>,
    #[arg(long)]
    chunks: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// Decision log CSV with columns user_id,truth,verdict,k,n_d.
    #[arg(long)]
    log: PathBuf,
    /// Cut-offs for the absolute sigmoid cost.
    #[arg(long, value_delimiter = ',')]
    erde: Vec<f64>,
    /// Cut-offs (percent read) for the percentage sigmoid cost.
    #[arg(long, value_delimiter = ',')]
    erde_pct: Vec<f64>,
    /// Add the linear cost variant.
    #[arg(long)]
    linear: bool,
    #[arg(long)]
    c_fp: Option<f64>,
    #[arg(long)]
    c_fn: Option<f64>,
    #[arg(long)]
    c_tp: Option<f64>,
    /// Median posts per user used by the latency-weighted F1.
    #[arg(long)]
    median_posts: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EmbedNnArgs {
    #[arg(long)]
    vectors: PathBuf,
    #[arg(long)]
    token: String,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long)]
    vector_limit: Option<usize>,
}

#[derive(Debug, Args)]
struct EmbedAnalogyArgs {
    #[arg(long)]
    vectors: PathBuf,
    #[arg(long)]
    questions: PathBuf,
    #[arg(long)]
    vector_limit: Option<usize>,
}

#[derive(Debug, Args)]
struct AuditLeakArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value_t = 0.6)]
    warn_threshold: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Context {
    seed: u64,
    format: Format,
    file: FileConfig,
    lexicon_dir: Option<PathBuf>,
}

impl Context {
    fn metadata_config(&self, no_month: bool) -> MetadataConfig {
        let mut m = self.file.metadata.unwrap_or_default();
        if no_month {
            m.include_month = false;
        }
        m
    }

    fn report_config(&self) -> ReportConfig {
        self.file.report.clone().unwrap_or_default()
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn print(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::io("<stdout>", e))
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn csv_text(write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<String> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

fn render_report(
    report: &MetricReport,
    model: &str,
    threshold: Option<f64>,
    format: Format,
) -> Result<String> {
    match format {
        Format::Json => report.to_json(),
        Format::Text => Ok(report.to_text()),
        Format::Csv => csv_text(|buf| {
            write_comparison_csv(
                buf,
                &[TableRow {
                    model,
                    threshold,
                    report,
                }],
            )
        }),
    }
}

fn render_sweep(table: &SweepTable, model: &str, format: Format) -> Result<String> {
    match format {
        Format::Json => json(table),
        Format::Csv => {
            let rows: Vec<TableRow> = table
                .rows
                .iter()
                .map(|r| TableRow {
                    model,
                    threshold: Some(r.threshold),
                    report: &r.report,
                })
                .collect();
            csv_text(|buf| write_comparison_csv(buf, &rows))
        }
        Format::Text => {
            let mut out = String::new();
            for r in &table.rows {
                let (head, cells) = r.report.table_cells();
                let cols: Vec<String> = head
                    .iter()
                    .zip(&cells)
                    .map(|(h, c)| format!("{h}={c}"))
                    .collect();
                out.push_str(&format!("p > {}  {}", r.threshold, cols.join("  ")));
                if !r.best.is_empty() {
                    out.push_str(&format!("  best: {}", r.best.join(",")));
                }
                out.push('\n');
            }
            Ok(out)
        }
    }
}

fn render_leak(report: &LeakReport, format: Format) -> Result<String> {
    match format {
        Format::Json => json(report),
        Format::Csv => csv_text(|buf| {
            let mut w = csv::Writer::from_writer(buf);
            w.write_record(["f1", "precision", "recall", "decision_boundary", "warning"])?;
            w.write_record([
                format!("{:.2}", report.f1),
                format!("{:.2}", report.precision),
                format!("{:.2}", report.recall),
                report
                    .decision_boundary
                    .map(|b| format!("{b:.0}"))
                    .unwrap_or_default(),
                report.warning.clone().unwrap_or_default(),
            ])?;
            w.flush().map_err(|e| Error::io("<stdout>", e))
        }),
        Format::Text => {
            let mut out = format!(
                "F1 {:.2}  P {:.2}  R {:.2}\n",
                report.f1, report.precision, report.recall
            );
            if let Some(b) = report.decision_boundary {
                let side = if report.later_is_positive {
                    "after"
                } else {
                    "before"
                };
                out.push_str(&format!("positive when the latest post is {side} {b:.0}\n"));
            }
            if let Some(w) = &report.warning {
                out.push_str(&format!("warning: {w}\n"));
            }
            Ok(out)
        }
    }
}

fn render_analogies(report: &AnalogyReport, format: Format) -> Result<String> {
    match format {
        Format::Json => json(report),
        Format::Csv => Ok(format!(
            "section,correct,attempted,skipped,accuracy\nsemantic,{},{},{},{}\nsyntactic,{},{},{},{}\ntotal,{},{},{},{}\n",
            report.semantic.correct,
            report.semantic.attempted,
            report.semantic.skipped,
            report.semantic_pct,
            report.syntactic.correct,
            report.syntactic.attempted,
            report.syntactic.skipped,
            report.syntactic_pct,
            report.total.correct,
            report.total.attempted,
            report.total.skipped,
            report.total_pct
        )),
        Format::Text => Ok(format!(
            "semantic {}%  syntactic {}%  total {}%  ({} of {} answered, {} skipped)\n",
            report.semantic_pct,
            report.syntactic_pct,
            report.total_pct,
            report.total.correct,
            report.total.attempted,
            report.total.skipped
        )),
    }
}

fn gen_corpus(ctx: &Context, a: &GenCorpusArgs) -> Result<()> {
    let mut profile = ctx.file.generator.clone().unwrap_or_default();
    if a.timestamp_leak {
        profile.timestamp_leak = true;
    }
    if let Some(v) = a.min_messages {
        profile.min_messages = v;
    }
    if let Some(v) = a.max_messages {
        profile.max_messages = v;
    }
    if let Some(v) = a.message_step {
        profile.message_count_step = v;
    }
    let users = generate_synthetic_corpus(a.positive, a.negative, ctx.seed, &profile)?;
    save_corpus(&a.out, &users)?;
    #[derive(Serialize)]
    struct Snapshot<'a> {
        positive: usize,
        negative: usize,
        profile: &'a earlyrisk::corpus::GeneratorProfile,
    }
    let mut m = ManifestBuilder::new(
        "gen-corpus",
        &Snapshot {
            positive: a.positive,
            negative: a.negative,
            profile: &profile,
        },
    )?;
    m.seed("generator", ctx.seed).output(&a.out);
    m.finish()?;
    print(&format!(
        "wrote {} users to {}\n",
        users.len(),
        a.out.display()
    ))
}

fn extract_features(ctx: &Context, a: &ExtractArgs) -> Result<()> {
    let users = load_corpus_any(&a.corpus)?;
    let metadata = ctx.metadata_config(a.no_month);
    let extractor = config::extractor(ctx.lexicon_dir.as_deref(), metadata)?;
    let vectors = extractor.extract_all(&users);
    let rows: Vec<(&str, _)> = users
        .iter()
        .map(|u| u.user_id.as_str())
        .zip(vectors)
        .collect();
    let mut w = create(&a.out)?;
    write_features_csv(&mut w, &rows)?;
    w.flush().map_err(|e| Error::io(&a.out, e))?;
    let mut m = ManifestBuilder::new("extract-features", &metadata)?;
    m.input(&a.corpus)?.output(&a.out);
    m.finish()?;
    print(&format!(
        "wrote features for {} users to {}\n",
        rows.len(),
        a.out.display()
    ))
}

fn load_corpus_any(path: &Path) -> Result<Vec<earlyrisk::corpus::UserRecord>> {
    earlyrisk::corpus::load_corpus_with(path, false)
}

fn train_meta(ctx: &Context, a: &TrainMetaArgs) -> Result<()> {
    let users = load_corpus(&a.corpus)?;
    let mut cfg = ctx.file.logistic.unwrap_or_default();
    if let Some(v) = a.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.l2_weight {
        cfg.l2_weight = v;
    }
    let metadata = ctx.metadata_config(a.no_month);
    let extractor = config::extractor(ctx.lexicon_dir.as_deref(), metadata)?;
    let model = train_metadata_model(&extractor, &users, &cfg)?;
    model.save_json(&a.out)?;
    #[derive(Serialize)]
    struct Snapshot {
        logistic: LogisticConfig,
        metadata: MetadataConfig,
    }
    let mut m = ManifestBuilder::new(
        "train-meta",
        &Snapshot {
            logistic: cfg,
            metadata,
        },
    )?;
    m.input(&a.corpus)?.output(&a.out);
    m.finish()?;
    print(&format!(
        "trained on {} users; model written to {}\n",
        users.len(),
        a.out.display()
    ))
}

fn train_cnn(ctx: &Context, a: &TrainCnnArgs) -> Result<()> {
    let users = load_corpus(&a.corpus)?;
    let table = load_embeddings(&a.vectors, a.vector_limit)?;
    let tokenizer = config::tokenizer(ctx.lexicon_dir.as_deref())?;
    let section = &ctx.file.cnn;
    let mut cnn = CnnConfig::new(table.dim());
    cnn.seed = ctx.seed;
    if let Some(v) = a.seq_len.or(section.seq_len) {
        cnn.seq_len = v;
    }
    if let Some(v) = section.n_filters {
        cnn.n_filters = v;
    }
    if let Some(v) = section.filter_height {
        cnn.filter_height = v;
    }
    if let Some(v) = section.fc_sizes {
        cnn.fc_sizes = v;
    }
    if let Some(v) = a.dropout.or(section.dropout_rate) {
        cnn.dropout_rate = v;
    }
    let mut train = ctx.file.train.clone().unwrap_or_default();
    train.seed = ctx.seed;
    if let Some(v) = a.epochs {
        train.epochs = v;
    }
    if let Some(v) = a.batch_size {
        train.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        train.learning_rate = v;
    }
    if let Some(o) = a.optimizer {
        train.optimizer = match o {
            OptimizerArg::PlainSgd => Optimizer::PlainSgd,
            OptimizerArg::AdaptiveMoment => Optimizer::AdaptiveMoment,
        };
    }

    let cap = a.max_docs_per_user.unwrap_or(usize::MAX);
    let mut examples = Vec::new();
    for (ui, u) in users.iter().enumerate() {
        let label = usize::from(u.require_label()?.as_u8());
        let docs = u
            .messages
            .iter()
            .enumerate()
            .filter(|(_, m)| !m.is_empty())
            .take(cap);
        examples.extend(docs.map(|(mi, _)| (ui, mi, label)));
    }
    let model = CnnModel::new(cnn.clone())?;
    let seq_len = cnn.seq_len;
    let outcome = train_with(
        model,
        examples.len(),
        |i| {
            let (ui, mi, label) = examples[i];
            Ok((
                message_matrix(&tokenizer, &table, &users[ui].messages[mi], seq_len),
                label,
            ))
        },
        &train,
    )?;
    outcome.model.save_json(&a.out)?;

    #[derive(Serialize)]
    struct Snapshot<'a> {
        network: &'a CnnConfig,
        training: &'a TrainConfig,
        max_docs_per_user: Option<usize>,
        vector_limit: Option<usize>,
    }
    let mut m = ManifestBuilder::new(
        "train-cnn",
        &Snapshot {
            network: &cnn,
            training: &train,
            max_docs_per_user: a.max_docs_per_user,
            vector_limit: a.vector_limit,
        },
    )?;
    m.seed("init", cnn.seed).seed("training", train.seed);
    m.input(&a.corpus)?.input(&a.vectors)?.output(&a.out);
    if let Some(p) = &a.loss_curve {
        let mut w = create(p)?;
        write_loss_curve(&mut w, &outcome.loss_curve)?;
        w.flush().map_err(|e| Error::io(p, e))?;
        m.output(p);
    }
    m.finish()?;
    let last = outcome.loss_curve.last().copied().unwrap_or(f64::NAN);
    print(&format!(
        "trained on {} documents; final epoch loss {last:.4}; model written to {}\n",
        examples.len(),
        a.out.display()
    ))
}

/// Builds the predictor selected by the flags and names it for reports.
fn build_predictor(
    ctx: &Context,
    a: &PredictorArgs,
    m: &mut ManifestBuilder,
) -> Result<(Box<dyn Predictor + Send>, String)> {
    if a.oracle {
        return Ok((Box::new(LabelOracle), "oracle".into()));
    }
    let meta = match &a.meta_model {
        Some(p) => {
            m.input(p)?;
            let model = MetaModel::load_json(p)?;
            let extractor = config::extractor(ctx.lexicon_dir.as_deref(), model.metadata)?;
            Some(MetadataPredictor::new(extractor, model)?)
        }
        None => None,
    };
    let cnn = match (&a.cnn_model, &a.vectors) {
        (Some(model), Some(vectors)) => {
            m.input(model)?.input(vectors)?;
            let net = CnnModel::load_json(model)?;
            let table = load_embeddings(vectors, a.vector_limit)?;
            Some(CnnPredictor::new(
                net,
                table,
                config::tokenizer(ctx.lexicon_dir.as_deref())?,
            )?)
        }
        (Some(_), None) => return Err(Error::Argument("--cnn-model needs --vectors".into())),
        _ => None,
    };
    Ok(match (meta, cnn) {
        (Some(first), Some(second)) => (
            Box::new(EnsemblePredictor { first, second }),
            "ensemble".into(),
        ),
        (Some(p), None) => (Box::new(p), "meta-lr".into()),
        (None, Some(p)) => (Box::new(p), "cnn".into()),
        (None, None) => {
            return Err(Error::Argument(
                "choose a predictor: --meta-model, --cnn-model with --vectors, or --oracle".into(),
            ))
        }
    })
}

fn simulate(ctx: &Context, a: &SimulateArgs) -> Result<()> {
    let users = load_corpus(&a.corpus)?;
    let file = &ctx.file.policy;
    let policy = DecisionPolicy {
        threshold: a.threshold.or(file.threshold).unwrap_or(0.5),
        mode: a
            .policy
            .map(PolicyMode::from)
            .or(file.mode)
            .unwrap_or(PolicyMode::Threshold),
        n_chunks: a.chunks.or(file.n_chunks).unwrap_or(DEFAULT_CHUNKS),
    };
    policy.validate()?;
    let report_cfg = ctx.report_config();
    #[derive(Serialize)]
    struct Snapshot<'a> {
        policy: &'a DecisionPolicy,
        report: &'a ReportConfig,
    }
    let mut m = ManifestBuilder::new(
        "simulate",
        &Snapshot {
            policy: &policy,
            report: &report_cfg,
        },
    )?;
    m.input(&a.corpus)?;
    let (predictor, name) = build_predictor(ctx, &a.predictor, &mut m)?;
    let result = run_simulation(&users, &predictor, &policy)?;

    let mut w = create(&a.out)?;
    result.log.write_csv(&mut w)?;
    w.flush().map_err(|e| Error::io(&a.out, e))?;
    m.output(&a.out);
    if let Some(p) = &a.trace {
        write_trace_jsonl(create(p)?, &result.trace)?;
        m.output(p);
    }
    let report = metric_report(&result.log, &report_cfg)?;
    let label = if policy.mode == PolicyMode::Wait {
        format!("{name} wait")
    } else {
        name
    };
    let rendered = render_report(&report, &label, Some(policy.threshold), ctx.format)?;
    if let Some(p) = &a.report {
        write_file(p, rendered.as_bytes())?;
        m.output(p);
    }
    m.finish()?;
    print(&rendered)
}

fn sweep(ctx: &Context, a: &SweepArgs) -> Result<()> {
    let users = load_corpus(&a.corpus)?;
    let mode = a
        .policy
        .map(PolicyMode::from)
        .or(ctx.file.policy.mode)
        .unwrap_or(PolicyMode::Threshold);
    let n_chunks = a
        .chunks
        .or(ctx.file.policy.n_chunks)
        .unwrap_or(DEFAULT_CHUNKS);
    let report_cfg = ctx.report_config();
    #[derive(Serialize)]
    struct Snapshot<'a> {
        thresholds: &'a [f64],
        mode: PolicyMode,
        n_chunks: usize,
        report: &'a ReportConfig,
    }
    let mut m = ManifestBuilder::new(
        "sweep",
        &Snapshot {
            thresholds: &a.thresholds,
            mode,
            n_chunks,
            report: &report_cfg,
        },
    )?;
    m.input(&a.corpus)?;
    let (predictor, name) = build_predictor(ctx, &a.predictor, &mut m)?;
    let table = sweep_thresholds(
        &users,
        &predictor,
        &a.thresholds,
        mode,
        n_chunks,
        &report_cfg,
    )?;
    let rendered = render_sweep(&table, &name, ctx.format)?;
    if let Some(p) = &a.out {
        write_file(p, rendered.as_bytes())?;
        m.output(p);
        m.finish()?;
    }
    print(&rendered)
}

fn score(ctx: &Context, a: &ScoreArgs) -> Result<()> {
    let file = fs::File::open(&a.log).map_err(|e| Error::io(&a.log, e))?;
    let log = DecisionLog::read_csv(file)?;
    let mut cfg = if a.erde.is_empty() && a.erde_pct.is_empty() {
        ctx.report_config()
    } else {
        ReportConfig {
            median_posts: ctx.file.report.as_ref().and_then(|r| r.median_posts),
            ..ReportConfig::with_cutoffs(&a.erde, &a.erde_pct)
        }
    };
    if a.linear {
        cfg.erde.push(earlyrisk::metrics::ErdeSpec {
            variant: earlyrisk::metrics::ErdeVariant::Linear,
            o: 0.0,
        });
    }
    if let Some(v) = a.c_fp {
        cfg.c_fp = Some(v);
    }
    if let Some(v) = a.c_fn {
        cfg.c_fn = v;
    }
    if let Some(v) = a.c_tp {
        cfg.c_tp = v;
    }
    if let Some(v) = a.median_posts {
        cfg.median_posts = Some(v);
    }
    let report = metric_report(&log, &cfg)?;
    let rendered = render_report(&report, "log", None, ctx.format)?;
    if let Some(p) = &a.out {
        write_file(p, rendered.as_bytes())?;
        let mut m = ManifestBuilder::new("score", &cfg)?;
        m.input(&a.log)?.output(p);
        m.finish()?;
    }
    print(&rendered)
}

fn embed_nn(ctx: &Context, a: &EmbedNnArgs) -> Result<()> {
    let table = load_embeddings(&a.vectors, a.vector_limit)?;
    let hits = table.nearest_neighbors(&a.token, a.k)?;
    let text = match ctx.format {
        Format::Json => {
            #[derive(Serialize)]
            struct Hit<'a> {
                token: &'a str,
                cosine: f64,
            }
            let v: Vec<Hit> = hits
                .iter()
                .map(|(t, c)| Hit {
                    token: t,
                    cosine: *c,
                })
                .collect();
            json(&v)?
        }
        Format::Csv => csv_text(|buf| {
            let mut w = csv::Writer::from_writer(buf);
            w.write_record(["token", "cosine"])?;
            for (t, c) in &hits {
                w.write_record([t.clone(), format!("{c:.6}")])?;
            }
            w.flush().map_err(|e| Error::io("<stdout>", e))
        })?,
        Format::Text => hits.iter().map(|(t, c)| format!("{c:.4}  {t}\n")).collect(),
    };
    print(&text)
}

fn embed_analogy(ctx: &Context, a: &EmbedAnalogyArgs) -> Result<()> {
    let table = load_embeddings(&a.vectors, a.vector_limit)?;
    let data = AnalogyDataset::load(&a.questions)?;
    let report = evaluate_analogies(&table, &data)?;
    print(&render_analogies(&report, ctx.format)?)
}

fn audit_leak(ctx: &Context, a: &AuditLeakArgs) -> Result<()> {
    let train = load_corpus(&a.train)?;
    let test = load_corpus(&a.test)?;
    let report = audit_timestamp_leak(&train, &test, a.warn_threshold)?;
    let rendered = render_leak(&report, ctx.format)?;
    if let Some(p) = &a.out {
        write_file(p, rendered.as_bytes())?;
        #[derive(Serialize)]
        struct Snapshot {
            warn_threshold: f64,
        }
        let mut m = ManifestBuilder::new(
            "audit-leak",
            &Snapshot {
                warn_threshold: a.warn_threshold,
            },
        )?;
        m.input(&a.train)?.input(&a.test)?.output(p);
        m.finish()?;
    }
    if let Some(w) = &report.warning {
        eprintln!("warning: {w}");
    }
    print(&rendered)
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(Error::Argument("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Argument(format!("cannot size the worker pool: {e}")))?;
    }
    let ctx = Context {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        format: cli.format,
        lexicon_dir: config::lexicon_dir(cli.lexicon_dir.as_deref(), &file),
        file,
    };
    match &cli.command {
        Command::GenCorpus(a) => gen_corpus(&ctx, a),
        Command::ExtractFeatures(a) => extract_features(&ctx, a),
        Command::TrainMeta(a) => train_meta(&ctx, a),
        Command::TrainCnn(a) => train_cnn(&ctx, a),
        Command::Simulate(a) => simulate(&ctx, a),
        Command::Sweep(a) => sweep(&ctx, a),
        Command::Score(a) => score(&ctx, a),
        Command::EmbedNn(a) => embed_nn(&ctx, a),
        Command::EmbedAnalogy(a) => embed_analogy(&ctx, a),
        Command::AuditLeak(a) => audit_leak(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    ExitCode::SUCCESS
                }
                _ => {
                    let _ = e.print();
                    ExitCode::from(1)
                }
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
