use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dynjoin::bench::{bench, write_csv, BenchConfig, BenchError};
use dynjoin::gen::{gen_calibrated, gen_stream, GenError, GenSpec, RelSpec, StreamKind};
use dynjoin::plan::{to_dot, to_json, verdict_line};
use dynjoin::run::{run_file, CsvSink, Mode, RunConfig, RunError};
use dynjoin::stream::write_stream;
use dynjoin_core::gyo::{build_plan, classify, Verdict};
use dynjoin_core::query::{parse, Gcq};

#[derive(Parser)]
#[command(name = "dynjoin", version, about = "Maintain inequality-join query results under update streams")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlanFormat {
    Dot,
    Json,
}

#[derive(Subcommand)]
enum Cmd {
    /// Classify a query and print its plan.
    Plan {
        /// File holding one query.
        query: PathBuf,
        #[arg(long, value_enum, default_value = "dot")]
        format: PlanFormat,
    },
    /// Replay a stream, writing deltas (push) or snapshots (pull).
    Run {
        /// File holding one query.
        #[arg(long)]
        query: PathBuf,
        /// Event CSV: `+|-,relation,multiplicity,values...`.
        #[arg(long)]
        stream: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Pull mode: also enumerate after every K events.
        #[arg(long, value_name = "K")]
        enumerate_every: Option<u64>,
        /// Output file; standard output if absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Reject acyclic queries that are not free-connex instead of
        /// materializing them.
        #[arg(long)]
        no_fallback: bool,
        /// Write the run report as JSON here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Generate a seeded update stream.
    GenStream {
        #[arg(long, value_enum)]
        kind: StreamKind,
        /// `NAME:ARITY[:iCOL][:sCOL]...`, comma separated.
        #[arg(long, required_unless_present = "query", conflicts_with = "query")]
        relations: Option<String>,
        /// Take relations and inequality columns from this query.
        #[arg(long)]
        query: Option<PathBuf>,
        /// Number of events, split evenly over the relations.
        #[arg(long)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        domain: i64,
        /// Target fraction of the cross product in the result (needs --query).
        #[arg(long)]
        selectivity: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a benchmark grid from a TOML config and write CSV.
    Bench {
        /// TOML file: seed, domain, runs, sizes, kinds, engines and `[[query]]` tables.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// An error and the exit code it maps to.
struct Failure(u8, String);

const USAGE: u8 = 1;
const UNSUPPORTED: u8 = 2;
const DATA: u8 = 3;
/// The reader of standard output went away; not an error.
const CLOSED: u8 = 0;

fn output(e: io::Error) -> Failure {
    if e.kind() == io::ErrorKind::BrokenPipe {
        Failure(CLOSED, String::new())
    } else {
        data(e)
    }
}

fn data(e: impl std::fmt::Display) -> Failure {
    Failure(DATA, e.to_string())
}

fn read_query(path: &Path) -> Result<Gcq, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    parse(&text).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| data(format!("{}: {e}", path.display())))
}

fn plan(path: &Path, format: PlanFormat) -> Result<(), Failure> {
    let q = read_query(path)?;
    let v = classify(&q);
    let mut out = io::stdout().lock();
    writeln!(out, "{}", verdict_line(&v)).map_err(output)?;
    if v == Verdict::Cyclic {
        return Err(Failure(UNSUPPORTED, "cyclic queries are not supported".into()));
    }
    let pair = build_plan(&q).map_err(data)?;
    match format {
        PlanFormat::Dot => write!(out, "{}", to_dot(&pair)),
        PlanFormat::Json => writeln!(out, "{}", serde_json::to_string_pretty(&to_json(&pair)).expect("plain json")),
    }
    .map_err(output)
}

fn run_error(e: RunError) -> Failure {
    match e {
        RunError::Cyclic | RunError::NotFreeConnex { .. } => Failure(UNSUPPORTED, e.to_string()),
        RunError::Sink(e) => output(e),
        _ => data(e),
    }
}

#[allow(clippy::too_many_arguments)]
fn run(
    query: &Path,
    stream: &Path,
    mode: Mode,
    every: Option<u64>,
    out: Option<&Path>,
    no_fallback: bool,
    report: Option<&Path>,
) -> Result<(), Failure> {
    let q = read_query(query)?;
    let mut cfg = RunConfig::new(q.clone(), mode);
    cfg.enumerate_every = every;
    cfg.allow_fallback = !no_fallback;
    let writer: Box<dyn Write> = match out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    let mut sink = CsvSink::new(writer, q.out()).map_err(data)?;
    let rep = run_file(&cfg, stream, &mut sink).map_err(run_error)?;
    sink.finish().map_err(output)?.flush().map_err(output)?;
    eprintln!("{rep}");
    if let Some(p) = report {
        let mut w = create(p)?;
        serde_json::to_writer_pretty(&mut w, &rep).map_err(data)?;
        w.flush().map_err(data)?;
    }
    Ok(())
}

fn gen_error(e: GenError) -> Failure {
    match e {
        GenError::BadSpec(_) | GenError::DomainTooSmall { .. } => Failure(USAGE, e.to_string()),
        GenError::Rep(_) => data(e),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.cmd {
        Cmd::Plan { query, format } => plan(&query, format),
        Cmd::Run {
            query,
            stream,
            mode,
            enumerate_every,
            out,
            no_fallback,
            report,
        } => run(
            &query,
            &stream,
            mode,
            enumerate_every,
            out.as_deref(),
            no_fallback,
            report.as_deref(),
        ),
        Cmd::GenStream {
            kind,
            relations,
            query,
            size,
            seed,
            domain,
            selectivity,
            out,
        } => (|| {
            let (spec, q) = match (&relations, &query) {
                (Some(_), _) if selectivity.is_some() => {
                    return Err(Failure(
                        USAGE,
                        "--selectivity calibrates against a query; pass --query instead of --relations".into(),
                    ))
                }
                (Some(r), _) => {
                    let relations = RelSpec::parse_list(r).map_err(gen_error)?;
                    (
                        GenSpec {
                            kind,
                            relations,
                            size,
                            domain,
                            seed,
                            selectivity: None,
                        },
                        None,
                    )
                }
                (None, Some(p)) => {
                    let q = read_query(p)?;
                    (
                        GenSpec {
                            selectivity,
                            ..GenSpec::for_query(&q, kind, size, domain, seed)
                        },
                        Some(q),
                    )
                }
                (None, None) => unreachable!("clap requires one of them"),
            };
            let events = match (&q, spec.selectivity) {
                (Some(q), Some(_)) => {
                    let c = gen_calibrated(&spec, q).map_err(gen_error)?;
                    eprintln!("selectivity {:.6} (shift {:.1})", c.measured, c.shift);
                    c.events
                }
                _ => gen_stream(&spec).map_err(gen_error)?,
            };
            write_stream(create(&out)?, &events).map_err(data)?.flush().map_err(data)
        })(),
        Cmd::Bench { config, out } => (|| {
            let text = std::fs::read_to_string(&config).map_err(|e| data(format!("{}: {e}", config.display())))?;
            let cfg = BenchConfig::from_toml(&text).map_err(|e| match e {
                BenchError::Config(_) => Failure(USAGE, e.to_string()),
                e => data(e),
            })?;
            let rows = bench(&cfg).map_err(data)?;
            write_csv(create(&out)?, &rows).map_err(data)?.flush().map_err(data)
        })(),
    };
    match result {
        Ok(()) | Err(Failure(CLOSED, _)) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
