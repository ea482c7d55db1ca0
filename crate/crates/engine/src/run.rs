//! Replaying an update stream against a query in push or pull mode.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::path::Path;
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use dynjoin_core::gmr::{Hyperedge, Value};
use dynjoin_core::gyo::{classify, Verdict};
use dynjoin_core::query::{Database, Gcq};
use dynjoin_core::trep::{MaterializedView, TRep, TRepError};

use crate::hist::Histogram;
use crate::plan::verdict_line;
use crate::stream::{csv_io, plain, StreamError, StreamEvent, StreamReader};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Emit the change of the result after every event.
    Push,
    /// Maintain only; emit the whole result at trigger points.
    Pull,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub query: Gcq,
    pub mode: Mode,
    /// In pull mode, also enumerate after every `k` events. The result is
    /// always enumerated once at the end.
    pub enumerate_every: Option<u64>,
    /// Serve acyclic queries that are not free-connex from a materialized
    /// projection.
    pub allow_fallback: bool,
    pub track_latency: bool,
    pub track_memory: bool,
}

impl RunConfig {
    pub fn new(query: Gcq, mode: Mode) -> Self {
        RunConfig {
            query,
            mode,
            enumerate_every: None,
            allow_fallback: true,
            track_latency: true,
            track_memory: true,
        }
    }
}

pub trait Sink {
    fn delta(&mut self, seq: u64, tuple: &[Value], mult: i64) -> io::Result<()>;
    fn snapshot_tuple(&mut self, seq: u64, tuple: &[Value], mult: i64) -> io::Result<()>;
    fn snapshot_end(&mut self, _seq: u64, _tuples: u64) -> io::Result<()> {
        Ok(())
    }
}

pub struct NullSink;

impl Sink for NullSink {
    fn delta(&mut self, _: u64, _: &[Value], _: i64) -> io::Result<()> {
        Ok(())
    }

    fn snapshot_tuple(&mut self, _: u64, _: &[Value], _: i64) -> io::Result<()> {
        Ok(())
    }
}

/// Writes `delta,SEQ,MULT,v1,...` and `snapshot,SEQ,MULT,v1,...` rows after
/// a `#` header naming the output columns.
pub struct CsvSink<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> CsvSink<W> {
    pub fn new(mut out: W, columns: &Hyperedge) -> io::Result<Self> {
        let cols: Vec<&str> = columns.iter().map(|v| v.as_str()).collect();
        writeln!(out, "# kind,seq,mult,{}", cols.join(","))?;
        Ok(CsvSink {
            inner: csv::WriterBuilder::new().has_headers(false).flexible(true).from_writer(out),
        })
    }

    fn row(&mut self, kind: &str, seq: u64, t: &[Value], m: i64) -> io::Result<()> {
        let mut rec = vec![kind.to_string(), seq.to_string(), m.to_string()];
        rec.extend(t.iter().map(plain));
        self.inner.write_record(&rec).map_err(csv_io)
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.inner.flush()?;
        self.inner.into_inner().map_err(|e| e.into_error())
    }
}

impl<W: Write> Sink for CsvSink<W> {
    fn delta(&mut self, seq: u64, t: &[Value], m: i64) -> io::Result<()> {
        self.row("delta", seq, t, m)
    }

    fn snapshot_tuple(&mut self, seq: u64, t: &[Value], m: i64) -> io::Result<()> {
        self.row("snapshot", seq, t, m)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("the query is cyclic and cannot be maintained")]
    Cyclic,
    #[error("the query is not free-connex (it would be with output {minimal_out}) and the fallback is disabled")]
    NotFreeConnex { minimal_out: Hyperedge },
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error("event {seq}: relation {relation} does not occur in the query")]
    UnknownRelation { seq: u64, relation: String },
    #[error("event {seq}: {source}")]
    Event { seq: u64, source: TRepError },
    #[error(transparent)]
    Rep(#[from] TRepError),
    #[error("writing output: {0}")]
    Sink(#[from] io::Error),
}

#[derive(Clone, Debug, Default, serde::Serialize)]
pub struct RunReport {
    pub verdict: String,
    pub fallback: bool,
    pub events: u64,
    pub inserts: u64,
    pub deletes: u64,
    pub delta_tuples: u64,
    pub snapshots: u64,
    pub snapshot_tuples: u64,
    /// Per event: the update plus, in push mode, emitting its delta.
    pub latency: Histogram,
    pub peak_live_tuples: usize,
    pub final_live_tuples: usize,
    pub update_ms: f64,
    pub enumerate_ms: f64,
}

impl std::fmt::Display for RunReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let us = |d: Duration| d.as_secs_f64() * 1e6;
        writeln!(
            f,
            "plan: {}{}",
            self.verdict,
            if self.fallback { " (materialized fallback)" } else { "" }
        )?;
        writeln!(f, "events: {} ({} inserts, {} deletes)", self.events, self.inserts, self.deletes)?;
        writeln!(f, "delta tuples: {}", self.delta_tuples)?;
        writeln!(f, "snapshots: {} ({} tuples)", self.snapshots, self.snapshot_tuples)?;
        writeln!(
            f,
            "latency us: p50 {:.1}, p99 {:.1}, max {:.1}",
            us(self.latency.quantile(0.5)),
            us(self.latency.quantile(0.99)),
            us(self.latency.max())
        )?;
        writeln!(f, "update ms: {:.3}, enumerate ms: {:.3}", self.update_ms, self.enumerate_ms)?;
        write!(f, "live tuples: peak {}, final {}", self.peak_live_tuples, self.final_live_tuples)
    }
}

enum Maintainer {
    Rep(TRep),
    View(MaterializedView),
}

impl Maintainer {
    fn live_tuples(&self) -> usize {
        match self {
            Maintainer::Rep(r) => r.live_tuples(),
            Maintainer::View(v) => v.live_tuples(),
        }
    }

    fn snapshot(&self, seq: u64, sink: &mut dyn Sink) -> Result<u64, RunError> {
        let mut n = 0;
        match self {
            Maintainer::Rep(r) => r.for_each(|t, m| {
                n += 1;
                sink.snapshot_tuple(seq, t, m).map_err(RunError::from)
            })?,
            Maintainer::View(v) => {
                for (t, m) in v.view().sorted() {
                    n += 1;
                    sink.snapshot_tuple(seq, &t, m)?;
                }
            }
        }
        sink.snapshot_end(seq, n)?;
        Ok(n)
    }
}

/// Replays `events` from an empty database.
pub fn run<I>(cfg: &RunConfig, events: I, sink: &mut dyn Sink) -> Result<RunReport, RunError>
where
    I: IntoIterator<Item = Result<StreamEvent, StreamError>>,
{
    let q = &cfg.query;
    let verdict = classify(q);
    let mut db = Database::new();
    db.declare_query(q).map_err(TRepError::from)?;
    let mut m = match &verdict {
        Verdict::Cyclic => return Err(RunError::Cyclic),
        Verdict::FreeConnex => Maintainer::Rep(TRep::for_query(q, &db)?),
        Verdict::Acyclic { minimal_out } if !cfg.allow_fallback => {
            return Err(RunError::NotFreeConnex {
                minimal_out: minimal_out.clone(),
            })
        }
        Verdict::Acyclic { .. } => Maintainer::View(MaterializedView::build(q, &db)?),
    };
    let known: BTreeMap<&str, usize> = q.atoms().iter().map(|a| (&*a.relation, a.arity())).collect();
    let mut rep = RunReport {
        verdict: verdict_line(&verdict),
        fallback: matches!(m, Maintainer::View(_)),
        peak_live_tuples: m.live_tuples(),
        ..RunReport::default()
    };
    let mut update_time = Duration::ZERO;
    let mut enum_time = Duration::ZERO;
    let mut last_snapshot = None;
    for ev in events {
        let ev = ev?;
        let seq = ev.seq;
        if !known.contains_key(ev.relation.as_str()) {
            return Err(RunError::UnknownRelation {
                seq,
                relation: ev.relation,
            });
        }
        let u = ev.to_update();
        let at_event = |source| RunError::Event { seq, source };
        let start = Instant::now();
        match (&mut m, cfg.mode) {
            (Maintainer::Rep(r), Mode::Push) => {
                let d = r.update(&u).map_err(at_event)?;
                let mid = Instant::now();
                update_time += mid - start;
                r.for_each_delta(&d, |t, mult| {
                    rep.delta_tuples += 1;
                    sink.delta(seq, t, mult).map_err(RunError::from)
                })?;
                enum_time += mid.elapsed();
            }
            (Maintainer::Rep(r), Mode::Pull) => {
                r.apply(&u).map_err(at_event)?;
                update_time += start.elapsed();
            }
            (Maintainer::View(v), mode) => {
                let d = v.update(&u).map_err(at_event)?;
                let mid = Instant::now();
                update_time += mid - start;
                if mode == Mode::Push {
                    for (t, mult) in d.sorted() {
                        rep.delta_tuples += 1;
                        sink.delta(seq, &t, mult)?;
                    }
                    enum_time += mid.elapsed();
                }
            }
        }
        if cfg.track_latency {
            rep.latency.record(start.elapsed());
        }
        rep.events += 1;
        if ev.mult > 0 {
            rep.inserts += 1;
        } else {
            rep.deletes += 1;
        }
        if cfg.track_memory {
            rep.peak_live_tuples = rep.peak_live_tuples.max(m.live_tuples());
        }
        if cfg.mode == Mode::Pull && cfg.enumerate_every.is_some_and(|k| k > 0 && rep.events % k == 0) {
            let s = Instant::now();
            rep.snapshot_tuples += m.snapshot(seq, sink)?;
            enum_time += s.elapsed();
            rep.snapshots += 1;
            last_snapshot = Some(rep.events);
        }
    }
    if cfg.mode == Mode::Pull && last_snapshot != Some(rep.events) {
        let s = Instant::now();
        rep.snapshot_tuples += m.snapshot(rep.events, sink)?;
        enum_time += s.elapsed();
        rep.snapshots += 1;
    }
    rep.final_live_tuples = m.live_tuples();
    rep.peak_live_tuples = rep.peak_live_tuples.max(rep.final_live_tuples);
    rep.update_ms = update_time.as_secs_f64() * 1e3;
    rep.enumerate_ms = enum_time.as_secs_f64() * 1e3;
    Ok(rep)
}

/// Runs with a reader thread that parses `stream` and hands events over a
/// bounded channel.
pub fn run_file(cfg: &RunConfig, stream: &Path, sink: &mut dyn Sink) -> Result<RunReport, RunError> {
    let file = std::fs::File::open(stream).map_err(StreamError::from)?;
    let (tx, rx) = mpsc::sync_channel::<Result<StreamEvent, StreamError>>(4096);
    let reader = thread::spawn(move || {
        for ev in StreamReader::new(io::BufReader::new(file)) {
            if tx.send(ev).is_err() {
                break;
            }
        }
    });
    let out = run(cfg, rx.iter(), sink);
    drop(rx);
    reader.join().expect("stream reader panicked");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use dynjoin_core::query::parse;

    #[test]
    fn empty_stream_in_pull_mode_enumerates_once() {
        let q = parse("SELECT * FROM r(a,b), s(b,c) WHERE a < c").unwrap();
        let mut out = Vec::new();
        let mut sink = CsvSink::new(&mut out, q.out()).unwrap();
        let rep = run(&RunConfig::new(q, Mode::Pull), std::iter::empty(), &mut sink).unwrap();
        sink.finish().unwrap();
        assert_eq!(rep.snapshots, 1);
        assert_eq!(rep.snapshot_tuples, 0);
        assert_eq!(String::from_utf8(out).unwrap(), "# kind,seq,mult,a,b,c\n");
    }

    #[test]
    fn cyclic_and_unknown_inputs_fail() {
        let tri = parse("SELECT * FROM r(x,y), s(y,z), t(x,z)").unwrap();
        assert!(matches!(
            run(&RunConfig::new(tri, Mode::Push), std::iter::empty(), &mut NullSink),
            Err(RunError::Cyclic)
        ));
        let q = parse("SELECT x,u FROM r(x,y), s(y,z,w), t(u,v) WHERE x < z AND w < u").unwrap();
        let mut cfg = RunConfig::new(q.clone(), Mode::Push);
        cfg.allow_fallback = false;
        assert!(matches!(
            run(&cfg, std::iter::empty(), &mut NullSink),
            Err(RunError::NotFreeConnex { .. })
        ));
        let ev = StreamEvent::insert(1, "zz", vec![Value::Int(1)]);
        let err = run(&RunConfig::new(q, Mode::Push), [Ok(ev)], &mut NullSink).unwrap_err();
        assert!(matches!(err, RunError::UnknownRelation { seq: 1, .. }));
    }
}
