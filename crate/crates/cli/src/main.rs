mod transport;

use std::fs::{self, File};
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use kcc_core::corpus::{build_corpus, corpus_stats, NormalizationConfig};
use kcc_core::eval::{evaluate, make_split, render_report, SplitConfig, SplitMode, TestQueries};
use kcc_core::index::{IdfVariant, IndexOptions, TfIdfIndex};
use kcc_core::ingest::{
    fetch_all, load_corpus_file, load_csv, partition_window, save_csv, save_jsonl, write_rejects, FetchSpec,
    LoadReport,
};
use kcc_core::seed::seed_corpus;
use kcc_core::{step, DialoguePolicy, DialogueSession, QaDocument};
use kcc_gateway::GatewayConfig;

use transport::HttpTransport;

#[derive(Parser)]
#[command(name = "kccbot", version, about = "Retrieval-based Q&A bot over Kisan Call Center logs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load KCC rows from CSV exports or the KKMS endpoint and write a clean corpus.
    Ingest(IngestArgs),
    /// Summarize a corpus by season, sector, query type and category.
    Stats {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Build a TF-IDF index snapshot from a corpus.
    BuildIndex {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        norm: NormArgs,
        /// Use ln(N / (1 + df)) instead of ln(N / df).
        #[arg(long)]
        smoothed_idf: bool,
    },
    /// Print df and idf for a term in an index snapshot.
    Dump {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        term: String,
    },
    /// Chat with the engine on stdin/stdout.
    Chat {
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Run the HTTP gateway.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        port: Option<u16>,
    },
    /// Split, index and score a corpus; writes confusion and confidence tables.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(clap::Args)]
struct NormArgs {
    /// Stopword file, one token per line; replaces the built-in list.
    #[arg(long)]
    stopwords: Option<PathBuf>,
    #[arg(long)]
    min_token_len: Option<usize>,
}

impl NormArgs {
    fn config(&self) -> Result<NormalizationConfig> {
        let mut config = NormalizationConfig::default();
        if let Some(n) = self.min_token_len {
            config = NormalizationConfig::new(config.stopwords().clone(), n, config.strip_chars().clone());
        }
        if let Some(p) = &self.stopwords {
            config = config.with_stopword_file(p).with_context(|| format!("reading {}", p.display()))?;
        }
        Ok(config)
    }
}

#[derive(clap::Args)]
struct EngineArgs {
    /// Index snapshot; takes precedence over --corpus.
    #[arg(long)]
    index: Option<PathBuf>,
    /// Corpus file (CSV or JSONL). Defaults to the bundled seed corpus.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Helpline number, used when no policy file is given.
    #[arg(long)]
    call_center_number: Option<String>,
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(clap::Args)]
struct IngestArgs {
    /// KCC CSV exports.
    #[arg(long = "csv", num_args = 1..)]
    csv: Vec<PathBuf>,
    /// Fetch from the KKMS endpoint over this state code.
    #[arg(long, requires_all = ["districts", "months", "years"])]
    state: Option<String>,
    #[arg(long, value_delimiter = ',')]
    districts: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    months: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    years: Vec<String>,
    #[arg(long, default_value_t = 30)]
    timeout_secs: u64,
    #[arg(long, default_value_t = 4)]
    parallel: usize,
    /// Keep only the most recent N calendar years.
    #[arg(long)]
    window_years: Option<u32>,
    /// Output corpus, line-delimited JSON.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    rejects: Option<PathBuf>,
    /// Also write the kept rows as a KCC-format CSV.
    #[arg(long)]
    export_csv: Option<PathBuf>,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 0.7)]
    threshold: f64,
    #[arg(long)]
    out: PathBuf,
    /// Probe with one-token-dropped or shuffled copies instead of verbatim ones.
    #[arg(long)]
    perturb: bool,
    /// Keep test documents in the index and score response by document id.
    #[arg(long)]
    in_index: bool,
    #[arg(long)]
    svg: bool,
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(io::stderr)
        .init();
    match Cli::parse().command {
        Command::Ingest(args) => ingest(args),
        Command::Stats { corpus, format } => stats(corpus.as_deref(), format),
        Command::BuildIndex { corpus, out, norm, smoothed_idf } => {
            let normalization = norm.config()?;
            let docs = load_docs(corpus.as_deref(), &normalization)?;
            let idf = if smoothed_idf { IdfVariant::SmoothedDenominator } else { IdfVariant::Standard };
            let index = TfIdfIndex::build(&docs, IndexOptions { idf, normalization })?;
            index.save(&out)?;
            let zero = index.zero_vector_docs().len();
            println!(
                "{}",
                serde_json::json!({
                    "docs": index.n_docs(),
                    "terms": index.vocabulary_size(),
                    "zero_vector_docs": zero,
                    "out": out,
                })
            );
            Ok(())
        }
        Command::Dump { index, term } => {
            let index = TfIdfIndex::load(&index)?;
            match index.dump_term(&term) {
                Some(info) => println!("{}", serde_json::to_string_pretty(&info)?),
                None => bail!("term {term:?} is not in the vocabulary"),
            }
            Ok(())
        }
        Command::Chat { engine } => chat(engine),
        Command::Serve { config, port } => {
            let mut config = GatewayConfig::load(config.as_deref())?;
            if let Some(p) = port {
                config.listen_port = p;
            }
            tokio::runtime::Runtime::new()?.block_on(kcc_gateway::run(config))?;
            Ok(())
        }
        Command::Eval(args) => eval(args),
    }
}

fn load_records(corpus: Option<&Path>) -> Result<LoadReport> {
    Ok(match corpus {
        Some(p) => load_corpus_file(p).with_context(|| format!("loading {}", p.display()))?,
        None => seed_corpus()?,
    })
}

fn load_docs(corpus: Option<&Path>, config: &NormalizationConfig) -> Result<Vec<QaDocument>> {
    let report = load_records(corpus)?;
    if !report.rejects.is_empty() {
        tracing::warn!(rejected = report.rejects.len(), "rows failed validation");
    }
    let built = build_corpus(&report.records, config)?;
    if built.excluded > 0 {
        tracing::warn!(excluded = built.excluded, "queries normalized to nothing");
    }
    Ok(built.docs)
}

fn ingest(args: IngestArgs) -> Result<()> {
    let mut report = LoadReport::default();
    for path in &args.csv {
        report.extend(load_csv(path).with_context(|| format!("loading {}", path.display()))?);
    }
    let mut failed = 0;
    if let Some(state) = &args.state {
        let mut specs = Vec::new();
        for d in &args.districts {
            for y in &args.years {
                for m in &args.months {
                    specs.push(FetchSpec::new(state.as_str(), d.as_str(), m.as_str(), y.as_str())?);
                }
            }
        }
        let transport = HttpTransport::new(Duration::from_secs(args.timeout_secs))?;
        for result in fetch_all(&specs, &transport, args.parallel) {
            match result {
                Ok(r) => report.extend(r),
                Err(e) => {
                    failed += 1;
                    tracing::error!(error = %e, "fetch failed");
                }
            }
        }
    }
    if args.csv.is_empty() && args.state.is_none() {
        bail!("give --csv files or --state/--districts/--months/--years to fetch");
    }

    let seen = report.rows_seen();
    let (kept, outside) = match args.window_years {
        Some(y) => partition_window(report.records, y),
        None => (report.records, Vec::new()),
    };
    save_jsonl(&args.out, &kept)?;
    if let Some(p) = &args.rejects {
        write_rejects(File::create(p)?, &report.rejects)?;
    }
    if let Some(p) = &args.export_csv {
        save_csv(p, &kept)?;
    }
    println!(
        "{}",
        serde_json::json!({
            "rows_seen": seen,
            "kept": kept.len(),
            "rejected": report.rejects.len(),
            "outside_window": outside.len(),
            "failed_fetches": failed,
        })
    );
    Ok(())
}

fn stats(corpus: Option<&Path>, format: Format) -> Result<()> {
    let stats = corpus_stats(&load_records(corpus)?.records);
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&stats)?),
        Format::Csv => stats.write_csv(io::stdout().lock())?,
    }
    Ok(())
}

fn chat(args: EngineArgs) -> Result<()> {
    let mut policy = match (&args.policy, &args.call_center_number) {
        (Some(p), _) => DialoguePolicy::load(p).with_context(|| format!("loading {}", p.display()))?,
        (None, Some(n)) => DialoguePolicy::new(n.as_str())?,
        (None, None) => bail!("give --policy or --call-center-number"),
    };
    if let Some(t) = args.threshold {
        policy = policy.with_threshold(t)?;
    }
    let index = match &args.index {
        Some(p) => TfIdfIndex::load(p)?,
        None => kcc_core::build_index(&load_docs(args.corpus.as_deref(), &NormalizationConfig::default())?)?,
    };

    let mut out = BufWriter::new(io::stdout().lock());
    let mut session = DialogueSession::new("local");
    for line in io::stdin().lock().lines() {
        let line = line?;
        if line.trim() == "/quit" {
            break;
        }
        let (next, reply) = step(session, &line, &index, &policy)?;
        session = next;
        for text in &reply.texts {
            writeln!(out, "bot> {text}")?;
        }
        match reply.confidence {
            Some(c) => writeln!(out, "     [{:?} {:.0}% -> {}]", reply.kind, c * 100.0, session.state)?,
            None => writeln!(out, "     [{:?} -> {}]", reply.kind, session.state)?,
        }
        out.flush()?;
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let normalization = NormalizationConfig::default();
    let docs = load_docs(args.corpus.as_deref(), &normalization)?;
    let config = SplitConfig {
        test_fraction: args.test_fraction,
        seed: args.seed,
        mode: if args.in_index { SplitMode::InIndex } else { SplitMode::Holdout },
        queries: if args.perturb { TestQueries::Perturbed } else { TestQueries::Verbatim },
    };
    let split = make_split(&docs, &config)?;
    let index = TfIdfIndex::build(&split.train_docs, IndexOptions { normalization, ..Default::default() })?;
    let report = evaluate(&split, &index, args.threshold)?;
    fs::create_dir_all(&args.out)?;
    let written = render_report(&report, &args.out, args.svg)?;
    println!(
        "{}",
        serde_json::json!({
            "n_test": report.n_test,
            "accuracy": report.accuracy,
            "response_accuracy": report.response_accuracy,
            "answered_rate": report.answered_rate,
            "files": written,
        })
    );
    Ok(())
}
