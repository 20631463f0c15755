use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use bioqa::config::RunConfig;
use bioqa::corpus::Corpus;
use bioqa::eval::{evaluate, load_submission, load_testset};
use bioqa::index::{Bm25Index, Bm25Params};
use bioqa::run::{verify_replay, Phase, Runtime};
use bioqa::{parse_query, render_query, validate_query, Error};

#[derive(Parser)]
#[command(name = "bioqa", version, about = "Retrieval-augmented biomedical question answering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Add line-delimited JSON documents to a corpus directory.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        /// JSONL files with {"doc_id", "title", "abstract"} records.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    #[command(subcommand)]
    Index(IndexCommand),
    #[command(subcommand)]
    Query(QueryCommand),
    /// Run the retrieval pipeline only and write one trace per question.
    Retrieve {
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        traces_out: PathBuf,
    },
    #[command(subcommand)]
    Run(RunCommand),
    /// Score a submission against a gold test set.
    Eval {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    #[command(subcommand)]
    Replay(ReplayCommand),
}

#[derive(Subcommand)]
enum IndexCommand {
    /// Build a BM25 index from a corpus directory.
    Build {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.2)]
        k1: f64,
        #[arg(long, default_value_t = 0.75)]
        b: f64,
    },
    /// Print ranked doc_id and score lines for a query.
    Search {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(long, default_value_t = 10)]
        limit: usize,
    },
}

#[derive(Subcommand)]
enum QueryCommand {
    /// Validate a query and print its canonical form.
    Check { text: String },
}

#[derive(Clone, Copy, ValueEnum)]
enum BMode {
    Snippets,
    Abstracts,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    questions: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides `workers` from the config.
    #[arg(long)]
    workers: Option<usize>,
    /// Answer every model call from this transcript instead of the configured backends.
    #[arg(long)]
    replay: Option<PathBuf>,
}

#[derive(Subcommand)]
enum RunCommand {
    /// Phase A+: retrieve, answer, fall back to external sources.
    Aplus(RunArgs),
    /// Phase B: answer from provided snippets or referenced abstracts.
    B {
        #[arg(long, value_enum)]
        mode: BMode,
        #[command(flatten)]
        args: RunArgs,
    },
}

#[derive(Subcommand)]
enum ReplayCommand {
    /// Check that a transcript reproduces every call in a run manifest.
    Verify {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        transcript: PathBuf,
    },
}

/// Exit status: 0 success, 1 per-question failures, 2 configuration or input error.
enum Outcome {
    Ok,
    Failures,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Failures) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Error> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn dispatch(command: Command) -> Result<Outcome, Error> {
    match command {
        Command::Ingest { corpus, inputs } => {
            let mut c = if corpus.join(bioqa::corpus::DOCUMENTS_FILE).exists() {
                Corpus::open(&corpus)?
            } else {
                Corpus::new()
            };
            for input in &inputs {
                let r = c.ingest_path(input)?;
                println!(
                    "{}: {} records, {} stored, {} replaced, {} rejected",
                    input.display(),
                    r.records,
                    r.count,
                    r.replaced,
                    r.rejected
                );
            }
            c.save(&corpus)?;
            println!("corpus {}: {} documents", corpus.display(), c.len());
            Ok(Outcome::Ok)
        }
        Command::Index(IndexCommand::Build { corpus, out, k1, b }) => {
            let c = Corpus::open(&corpus)?;
            let index = Bm25Index::build(&c, Bm25Params::new(k1, b)?)?;
            index.save(&out)?;
            c.save(&out)?;
            println!(
                "indexed {} documents, {} posting lists -> {}",
                index.doc_count(),
                index.posting_list_count(),
                out.display()
            );
            Ok(Outcome::Ok)
        }
        Command::Index(IndexCommand::Search { index, query, limit }) => {
            let report = validate_query(&query);
            if !report.ok {
                for issue in &report.issues {
                    eprintln!("{}: {} at {}..{}", issue.code, issue.message, issue.span.start, issue.span.end);
                }
                return Err(Error::Query(bioqa::query::QueryError::InvalidAst("query failed validation".into())));
            }
            let ast = parse_query(&query).map_err(bioqa::query::QueryError::from)?;
            let idx = Bm25Index::load(&index)?;
            let mut out = std::io::stdout().lock();
            for hit in idx.execute_query(&ast, limit)? {
                let _ = writeln!(out, "{}\t{:.6}", hit.doc_id, hit.score);
            }
            Ok(Outcome::Ok)
        }
        Command::Query(QueryCommand::Check { text }) => {
            let report = validate_query(&text);
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            if report.ok {
                let ast = parse_query(&text).map_err(bioqa::query::QueryError::from)?;
                println!("{}", render_query(&ast));
                Ok(Outcome::Ok)
            } else {
                Ok(Outcome::Failures)
            }
        }
        Command::Retrieve { questions, index, config, traces_out } => {
            let mut loaded = RunConfig::load(&config)?;
            loaded.config.index =
                Some(std::path::absolute(&index).map_err(|e| Error::io(index.display().to_string(), e))?);
            if loaded.config.corpus.is_none() {
                loaded.config.corpus = loaded.config.index.clone();
            }
            let rt = Runtime::new(&loaded, Phase::APlus, None)?;
            let qs = load_testset(&questions)?;
            std::fs::create_dir_all(&traces_out).map_err(|e| Error::io(traces_out.display().to_string(), e))?;
            let traces = rt.retrieve_all(&qs, loaded.config.workers);
            for t in &traces {
                write_json(&traces_out.join(format!("{}.json", t.question_id)), t)?;
                println!("{}\t{} rounds\t{} docs", t.question_id, t.refinement_rounds.len(), t.final_docs.len());
            }
            Ok(Outcome::Ok)
        }
        Command::Run(cmd) => {
            let (phase, args) = match cmd {
                RunCommand::Aplus(args) => (Phase::APlus, args),
                RunCommand::B { mode: BMode::Snippets, args } => (Phase::BSnippets, args),
                RunCommand::B { mode: BMode::Abstracts, args } => (Phase::BAbstracts, args),
            };
            let loaded = RunConfig::load(&args.config)?;
            let workers = args.workers.unwrap_or(loaded.config.workers);
            if workers == 0 {
                return Err(Error::Config("--workers must be positive".into()));
            }
            let rt = Runtime::new(&loaded, phase, args.replay.as_deref())?;
            let qs = load_testset(&args.questions)?;
            let output = rt.run(&qs, phase, workers);
            output.write(&args.out)?;
            println!(
                "{} questions, {} answered, {} model calls -> {}",
                qs.len(),
                qs.len() - output.failures(),
                output.manifest.total_calls,
                args.out.display()
            );
            for id in &output.manifest.unanswered {
                eprintln!("unanswered: {id}");
            }
            Ok(if output.failures() > 0 { Outcome::Failures } else { Outcome::Ok })
        }
        Command::Eval { gold, pred, report } => {
            let g = load_testset(&gold)?;
            let p = load_submission(&pred)?;
            let r = evaluate(&g, &p)?;
            write_json(&report, &r)?;
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            print!("{}", r.to_table());
            Ok(Outcome::Ok)
        }
        Command::Replay(ReplayCommand::Verify { manifest, transcript }) => {
            let check = verify_replay(&manifest, &transcript)?;
            println!(
                "{} calls checked, {} missing, {} mismatched",
                check.calls,
                check.missing.len(),
                check.mismatched.len()
            );
            for d in &check.missing {
                println!("missing\t{d}");
            }
            for d in &check.mismatched {
                println!("mismatch\t{d}");
            }
            Ok(if check.ok() { Outcome::Ok } else { Outcome::Failures })
        }
    }
}
