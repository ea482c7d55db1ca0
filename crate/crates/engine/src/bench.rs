//! Benchmark harness: generated streams, the maintained representation
//! against the naive baseline, one CSV row per (query, stream, engine).

use std::time::Instant;

use dynjoin_core::gmr::Hyperedge;
use dynjoin_core::gyo::{classify, Verdict};
use dynjoin_core::query::{parse, Database, Gcq};
use dynjoin_core::trep::{MaterializedView, TRep, TRepError};
use serde::{Deserialize, Serialize};

use crate::gen::{gen_stream, GenError, GenSpec, StreamKind};
use crate::naive::NaiveEngine;
use crate::stream::StreamEvent;
use crate::workload::shape_text;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    Trep,
    Naive,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuerySpec {
    pub name: String,
    /// Query text; defaults to the built-in shape called `name`.
    pub text: Option<String>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_domain")]
    pub domain: i64,
    /// Repetitions per cell; update times are reported as the median.
    #[serde(default = "one")]
    pub runs: usize,
    pub sizes: Vec<usize>,
    #[serde(default = "default_kinds")]
    pub kinds: Vec<StreamKind>,
    #[serde(default = "default_engines")]
    pub engines: Vec<EngineKind>,
    /// The naive engine materializes the result; it is skipped above this
    /// stream size.
    #[serde(default = "default_naive_max")]
    pub naive_max_size: usize,
    /// Outputs enumerated when measuring the enumeration gap.
    #[serde(default = "default_gap_sample")]
    pub gap_sample: u64,
    #[serde(rename = "query")]
    pub queries: Vec<QuerySpec>,
}

fn default_domain() -> i64 {
    200
}
fn one() -> usize {
    1
}
fn default_kinds() -> Vec<StreamKind> {
    vec![StreamKind::Random]
}
fn default_engines() -> Vec<EngineKind> {
    vec![EngineKind::Trep, EngineKind::Naive]
}
fn default_naive_max() -> usize {
    2000
}
fn default_gap_sample() -> u64 {
    100_000
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub query: String,
    pub kind: String,
    pub size: usize,
    pub engine: EngineKind,
    pub update_ms: f64,
    pub peak_live_tuples: usize,
    /// Largest number of index probes between two consecutive outputs, over
    /// at most `gap_sample` outputs.
    pub max_probe_gap: Option<u64>,
    /// `|Q(db)|` after the stream, counting multiplicities.
    pub result_size: i64,
    /// Whether the engine's final result equals the other engine's.
    pub agrees: Option<bool>,
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("config: {0}")]
    Config(String),
    #[error("query {name}: {msg}")]
    Query { name: String, msg: String },
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Rep(#[from] TRepError),
}

impl BenchConfig {
    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        let cfg: BenchConfig = toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        if cfg.runs == 0 || cfg.queries.is_empty() {
            return Err(BenchError::Config("need at least one run and one query".into()));
        }
        Ok(cfg)
    }
}

fn query_of(spec: &QuerySpec) -> Result<Gcq, BenchError> {
    let err = |msg: String| BenchError::Query {
        name: spec.name.clone(),
        msg,
    };
    let text = match &spec.text {
        Some(t) => t.as_str(),
        None => shape_text(&spec.name).ok_or_else(|| err("no text and no built-in shape of that name".into()))?,
    };
    let q = parse(text).map_err(|e| err(e.to_string()))?;
    if classify(&q) == Verdict::Cyclic {
        return Err(err("cyclic".into()));
    }
    Ok(q)
}

enum Stop {
    Limit,
    Rep(TRepError),
}

impl From<TRepError> for Stop {
    fn from(e: TRepError) -> Self {
        Stop::Rep(e)
    }
}

/// The largest number of probes spent before an output, between two
/// outputs, or after the last one, enumerating at most `limit` outputs.
/// Returns the gap and the number of outputs seen.
pub fn max_probe_gap(rep: &TRep, limit: u64) -> Result<(u64, u64), TRepError> {
    rep.reset_probes();
    let (mut last, mut gap, mut seen) = (0u64, 0u64, 0u64);
    let r = rep.for_each(|_, _| {
        let p = rep.probe_count();
        gap = gap.max(p - last);
        last = p;
        seen += 1;
        if seen >= limit {
            Err(Stop::Limit)
        } else {
            Ok(())
        }
    });
    match r {
        Ok(()) => gap = gap.max(rep.probe_count() - last),
        Err(Stop::Limit) => {}
        Err(Stop::Rep(e)) => return Err(e),
    }
    Ok((gap, seen))
}

/// `|Q(db)|` without enumerating: the reduct of the query with an empty
/// output holds a single count.
pub fn result_size(q: &Gcq, db: &Database) -> Result<i64, TRepError> {
    let counted = q.with_out(Hyperedge::empty())?;
    Ok(TRep::for_query(&counted, db)?.enumerate()?.total()?)
}

struct Measured {
    update_ms: f64,
    peak: usize,
    gap: Option<u64>,
    result: dynjoin_core::gmr::Gmr,
}

fn run_trep(q: &Gcq, events: &[StreamEvent], gap_sample: u64, want_result: bool) -> Result<Measured, BenchError> {
    let mut db = Database::new();
    db.declare_query(q).map_err(TRepError::from)?;
    let start = Instant::now();
    let mut peak = 0;
    if classify(q) == Verdict::FreeConnex {
        let mut rep = TRep::for_query(q, &db)?;
        for e in events {
            rep.apply(&e.to_update())?;
            peak = peak.max(rep.live_tuples());
        }
        let update_ms = start.elapsed().as_secs_f64() * 1e3;
        let (gap, _) = max_probe_gap(&rep, gap_sample)?;
        let result = if want_result {
            rep.enumerate()?
        } else {
            dynjoin_core::gmr::Gmr::new(q.out().clone())
        };
        Ok(Measured {
            update_ms,
            peak,
            gap: Some(gap),
            result,
        })
    } else {
        let mut mv = MaterializedView::build(q, &db)?;
        for e in events {
            mv.update(&e.to_update())?;
            peak = peak.max(mv.live_tuples());
        }
        Ok(Measured {
            update_ms: start.elapsed().as_secs_f64() * 1e3,
            peak,
            gap: None,
            result: mv.view().clone(),
        })
    }
}

fn run_naive(q: &Gcq, events: &[StreamEvent]) -> Result<Measured, BenchError> {
    let mut eng = NaiveEngine::new(q).map_err(TRepError::from)?;
    let start = Instant::now();
    let mut peak = 0;
    for e in events {
        eng.update(&e.relation, e.values.clone(), e.mult).map_err(TRepError::from)?;
        peak = peak.max(eng.live_tuples());
    }
    Ok(Measured {
        update_ms: start.elapsed().as_secs_f64() * 1e3,
        peak,
        gap: None,
        result: eng.view().clone(),
    })
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

/// Runs every cell of the grid in order.
pub fn bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>, BenchError> {
    let mut rows = Vec::new();
    for qs in &cfg.queries {
        let q = query_of(qs)?;
        for &kind in &cfg.kinds {
            for &size in &cfg.sizes {
                let spec = GenSpec::for_query(&q, kind, size, cfg.domain, cfg.seed);
                let events = gen_stream(&spec)?;
                let db = crate::gen::database_of(&q, &events)?;
                let count = result_size(&q, &db)?;
                let naive_on = cfg.engines.contains(&EngineKind::Naive) && size <= cfg.naive_max_size;
                let mut trep = None;
                if cfg.engines.contains(&EngineKind::Trep) {
                    let mut times = Vec::new();
                    let mut last = None;
                    for _ in 0..cfg.runs {
                        let m = run_trep(&q, &events, cfg.gap_sample, naive_on)?;
                        times.push(m.update_ms);
                        last = Some(m);
                    }
                    let m = last.unwrap();
                    trep = Some((median(times), m));
                }
                let mut naive = None;
                if naive_on {
                    let mut times = Vec::new();
                    let mut last = None;
                    for _ in 0..cfg.runs {
                        let m = run_naive(&q, &events)?;
                        times.push(m.update_ms);
                        last = Some(m);
                    }
                    naive = Some((median(times), last.unwrap()));
                }
                let agree = match (&trep, &naive) {
                    (Some((_, a)), Some((_, b))) => Some(a.result == b.result),
                    _ => None,
                };
                let kind_name = format!("{kind:?}").to_lowercase();
                for (engine, cell) in [(EngineKind::Trep, trep), (EngineKind::Naive, naive)] {
                    if let Some((ms, m)) = cell {
                        rows.push(BenchRow {
                            query: qs.name.clone(),
                            kind: kind_name.clone(),
                            size,
                            engine,
                            update_ms: ms,
                            peak_live_tuples: m.peak,
                            max_probe_gap: m.gap,
                            result_size: count,
                            agrees: agree,
                        });
                    }
                }
            }
        }
    }
    Ok(rows)
}

pub fn write_csv<W: std::io::Write>(out: W, rows: &[BenchRow]) -> std::io::Result<W> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(crate::stream::csv_io)?;
    }
    w.flush()?;
    w.into_inner().map_err(|e| e.into_error())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn a_small_grid_agrees_across_engines() {
        let cfg = BenchConfig::from_toml(
            r#"
            seed = 3
            domain = 20
            sizes = [60, 120]
            [[query]]
            name = "q4"
            [[query]]
            name = "q10"
            [[query]]
            name = "pairs"
            text = "SELECT x,z FROM e(x,y), f(y,z) WHERE x < z"
            "#,
        )
        .unwrap();
        let rows = bench(&cfg).unwrap();
        assert_eq!(rows.len(), 3 * 2 * 2);
        assert!(rows.iter().all(|r| r.agrees == Some(true)), "{rows:?}");
        let q10 = rows.iter().find(|r| r.query == "q10" && r.engine == EngineKind::Trep).unwrap();
        assert_eq!(q10.max_probe_gap, None);
        let csv = String::from_utf8(write_csv(Vec::new(), &rows).unwrap()).unwrap();
        assert!(csv.starts_with("query,kind,size,engine,update_ms,peak_live_tuples,max_probe_gap,result_size,agrees\n"));
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(BenchConfig::from_toml("sizes = [1]\n[[query]]\nname = \"q1\"\nbogus = 1\n").is_err());
        let cfg = BenchConfig::from_toml("sizes = [10]\n[[query]]\nname = \"nope\"\n").unwrap();
        assert!(matches!(bench(&cfg), Err(BenchError::Query { .. })));
    }
}
