#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::io;

use common::*;
use dynjoin::gen::{gen_stream, GenSpec, StreamKind};
use dynjoin::run::{run, Mode, RunConfig, RunError, Sink};
use dynjoin::stream::StreamEvent;
use dynjoin::workload::shape;
use dynjoin_core::gmr::{Gmr, Hyperedge, Value};
use dynjoin_core::query::{naive_eval, parse, Database, Gcq};
use rand::Rng;

/// Sums deltas and keeps every snapshot.
struct Collect {
    deltas: Gmr,
    snapshots: Vec<(u64, Gmr)>,
    schema: Hyperedge,
}

impl Collect {
    fn new(q: &Gcq) -> Self {
        Collect {
            deltas: Gmr::new(q.out().clone()),
            snapshots: Vec::new(),
            schema: q.out().clone(),
        }
    }
}

impl Sink for Collect {
    fn delta(&mut self, _: u64, t: &[Value], m: i64) -> io::Result<()> {
        self.deltas.apply_single(t.to_vec(), m).map_err(io::Error::other)
    }

    fn snapshot_tuple(&mut self, seq: u64, t: &[Value], m: i64) -> io::Result<()> {
        if !matches!(self.snapshots.last(), Some((s, _)) if *s == seq) {
            self.snapshots.push((seq, Gmr::new(self.schema.clone())));
        }
        let g = &mut self.snapshots.last_mut().unwrap().1;
        assert!(!g.contains(t), "snapshot repeats {t:?}");
        g.apply_single(t.to_vec(), m).map_err(io::Error::other)
    }

    fn snapshot_end(&mut self, seq: u64, tuples: u64) -> io::Result<()> {
        if tuples == 0 {
            self.snapshots.push((seq, Gmr::new(self.schema.clone())));
        }
        Ok(())
    }
}

fn ok(evs: Vec<StreamEvent>) -> impl Iterator<Item = Result<StreamEvent, dynjoin::stream::StreamError>> {
    evs.into_iter().map(Ok)
}

/// Random inserts and deletes that keep the database positive.
fn random_events(rng: &mut rand_chacha::ChaCha8Rng, q: &Gcq, n: usize, domain: i64) -> Vec<StreamEvent> {
    let mut db = Database::new();
    db.declare_query(q).unwrap();
    let mut out = Vec::new();
    for i in 0..n {
        let u = random_single_update(rng, q, &db, domain);
        db.apply(&u).unwrap();
        let (r, row, m) = u.entries().remove(0);
        out.push(StreamEvent {
            seq: i as u64 + 1,
            relation: r.to_string(),
            mult: m,
            values: row,
        });
    }
    out
}

fn db_after(q: &Gcq, evs: &[StreamEvent]) -> Database {
    let mut db = Database::new();
    db.declare_query(q).unwrap();
    for e in evs {
        db.apply(&e.to_update()).unwrap();
    }
    db
}

#[test]
fn running_example_replayed_as_inserts() {
    let q = parse("SELECT y,z,w,u FROM r(x,y), s(y,z,w), t(u,v) WHERE x < z AND w < u").unwrap();
    let rows: [(&str, &[i64]); 9] = [
        ("r", &[2, 2]),
        ("r", &[3, 2]),
        ("r", &[2, 1]),
        ("s", &[1, 2, 2]),
        ("s", &[1, 3, 3]),
        ("s", &[2, 4, 6]),
        ("t", &[2, 3]),
        ("t", &[4, 6]),
        ("t", &[4, 5]),
    ];
    let evs: Vec<StreamEvent> = rows
        .iter()
        .enumerate()
        .map(|(i, (r, v))| StreamEvent::insert(i as u64 + 1, r, v.iter().map(|&x| Value::Int(x)).collect()))
        .collect();
    let mut sink = Collect::new(&q);
    let rep = run(&RunConfig::new(q.clone(), Mode::Push), ok(evs.clone()), &mut sink).unwrap();
    assert_eq!(rep.events, 9);
    assert!(!rep.fallback);
    let want = naive_eval(&q, &db_after(&q, &evs)).unwrap();
    assert!(!want.is_empty());
    assert_eq!(sink.deltas, want);
}

#[test]
fn push_deltas_add_up_and_pull_snapshots_match() {
    let mut rng = rng(500);
    for case in 0..60 {
        let domain = rng.gen_range(3..=10);
        let q = random_acyclic_query(&mut rng, 3, 2, domain);
        let evs = random_events(&mut rng, &q, 40, domain);
        let mut push = Collect::new(&q);
        let rep = run(&RunConfig::new(q.clone(), Mode::Push), ok(evs.clone()), &mut push).unwrap();
        assert_eq!(push.deltas, naive_eval(&q, &db_after(&q, &evs)).unwrap(), "case {case}: {q}");
        assert_eq!(rep.latency.count(), 40);

        let mut cfg = RunConfig::new(q.clone(), Mode::Pull);
        cfg.enumerate_every = Some(7);
        let mut pull = Collect::new(&q);
        let rep = run(&cfg, ok(evs.clone()), &mut pull).unwrap();
        assert_eq!(rep.snapshots, 6);
        assert_eq!(pull.snapshots.len(), 6);
        for (seq, snap) in &pull.snapshots {
            let want = naive_eval(&q, &db_after(&q, &evs[..*seq as usize])).unwrap();
            assert_eq!(snap, &want, "case {case} at {seq}: {q}");
        }
        assert_eq!(pull.snapshots.last().unwrap().0, 40);
    }
}

#[test]
fn non_free_connex_shapes_use_the_fallback() {
    let q = shape("q10").unwrap();
    let spec = GenSpec::for_query(&q, StreamKind::Random, 150, 12, 4);
    let evs = gen_stream(&spec).unwrap();
    let mut sink = Collect::new(&q);
    let rep = run(&RunConfig::new(q.clone(), Mode::Push), ok(evs.clone()), &mut sink).unwrap();
    assert!(rep.fallback);
    assert!(rep.verdict.starts_with("ACYCLIC minimal_out="));
    assert_eq!(sink.deltas, naive_eval(&q, &db_after(&q, &evs)).unwrap());
}

#[test]
fn deleting_a_missing_row_aborts_at_that_event() {
    let q = parse("SELECT * FROM r(a,b), s(b,c) WHERE a < c").unwrap();
    let evs = vec![
        StreamEvent::insert(1, "r", vec![Value::Int(1), Value::Int(2)]),
        StreamEvent {
            seq: 2,
            relation: "s".into(),
            mult: -1,
            values: vec![Value::Int(2), Value::Int(5)],
        },
    ];
    let err = run(
        &RunConfig::new(q, Mode::Push),
        ok(evs),
        &mut Collect::new(&parse("SELECT * FROM r(a,b), s(b,c)").unwrap()),
    )
    .unwrap_err();
    assert!(matches!(err, RunError::Event { seq: 2, .. }), "{err}");
}

#[test]
fn peak_live_tuples_grow_with_the_stream() {
    let q = shape("q4").unwrap();
    let small = gen_stream(&GenSpec::for_query(&q, StreamKind::Random, 300, 200, 1)).unwrap();
    let large = gen_stream(&GenSpec::for_query(&q, StreamKind::Random, 600, 200, 1)).unwrap();
    let mut cfg = RunConfig::new(q.clone(), Mode::Pull);
    cfg.track_latency = false;
    let a = run(&cfg, ok(small), &mut Collect::new(&q)).unwrap();
    let b = run(&cfg, ok(large), &mut Collect::new(&q)).unwrap();
    assert!(a.peak_live_tuples >= 300 && b.peak_live_tuples > a.peak_live_tuples);
    assert_eq!(a.latency.count(), 0);
}
