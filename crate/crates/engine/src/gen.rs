//! Seeded update-stream generators.
//!
//! A random stream of size N over k relations holds N/k insertions per
//! relation, shuffled, with distinct rows per relation and values uniform on
//! `1..=domain`. A temporal stream uses the same shuffle, but every column
//! that takes part in an inequality receives the event's position in the
//! stream, so those columns strictly increase.
//!
//! A target selectivity is reached by calibration rather than a closed form:
//! inequality columns are drawn from a wide range and relation `i` is shifted
//! by `i * shift`; the shift is bisected until `|Q(db)| / Π|R|` measured on a
//! generated sample is as close to the target as the search gets.

use std::collections::{BTreeMap, HashSet};

use dynjoin_core::gmr::{Hyperedge, Value};
use dynjoin_core::query::{Database, Gcq, Predicate};
use dynjoin_core::trep::{TRep, TRepError};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::stream::StreamEvent;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum StreamKind {
    Random,
    Temporal,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelSpec {
    pub name: String,
    pub arity: usize,
    /// Columns compared by inequalities.
    pub ineq: Vec<usize>,
    /// Columns holding strings (`s1`, `s2`, ...) instead of integers.
    pub strings: Vec<usize>,
}

impl RelSpec {
    /// Parses a comma-separated list of `NAME:ARITY[:iCOL][:sCOL]...`, e.g.
    /// `R:3:i0,S:3:i0:s2`.
    pub fn parse_list(text: &str) -> Result<Vec<RelSpec>, GenError> {
        let bad = |m: String| GenError::BadSpec(m);
        text.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|item| {
                let mut parts = item.split(':');
                let name = parts.next().unwrap_or_default().to_string();
                let arity = parts
                    .next()
                    .and_then(|a| a.parse().ok())
                    .ok_or_else(|| bad(format!("{item}: expected NAME:ARITY")))?;
                let mut r = RelSpec {
                    name,
                    arity,
                    ineq: Vec::new(),
                    strings: Vec::new(),
                };
                for tag in parts {
                    let col = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("{item}: bad column tag {tag}")));
                    match tag.split_at_checked(1) {
                        Some(("i", c)) => r.ineq.push(col(c)?),
                        Some(("s", c)) => r.strings.push(col(c)?),
                        _ => return Err(bad(format!("{item}: bad column tag {tag}"))),
                    }
                }
                Ok(r)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenSpec {
    pub kind: StreamKind,
    pub relations: Vec<RelSpec>,
    pub size: usize,
    pub domain: i64,
    pub seed: u64,
    /// Target fraction of the cross product that satisfies the query.
    pub selectivity: Option<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum GenError {
    #[error("invalid generator spec: {0}")]
    BadSpec(String),
    #[error("relation {relation} has only {capacity} distinct rows but needs {needed}")]
    DomainTooSmall { relation: String, capacity: u64, needed: usize },
    #[error(transparent)]
    Rep(#[from] TRepError),
}

/// Width of the range inequality columns are drawn from under calibration.
const WIDE: i64 = 1_000_000;
/// Largest sample the calibration search generates.
const CALIBRATION_SIZE: usize = 6000;

impl GenSpec {
    /// One relation per distinct relation of `q`, in order of first use, with
    /// the columns of inequality-compared variables marked.
    pub fn for_query(q: &Gcq, kind: StreamKind, size: usize, domain: i64, seed: u64) -> GenSpec {
        let mut ineq_vars: Vec<&str> = Vec::new();
        for p in q.preds() {
            if let Predicate::VarVar { lhs, op, rhs } = p {
                if op.is_inequality() {
                    ineq_vars.push(lhs.as_str());
                    ineq_vars.push(rhs.as_str());
                }
            }
        }
        let mut relations: Vec<RelSpec> = Vec::new();
        for a in q.atoms() {
            let idx = match relations.iter().position(|r| *r.name == *a.relation) {
                Some(i) => i,
                None => {
                    relations.push(RelSpec {
                        name: a.relation.to_string(),
                        arity: a.arity(),
                        ineq: Vec::new(),
                        strings: Vec::new(),
                    });
                    relations.len() - 1
                }
            };
            for (c, v) in a.args.iter().enumerate() {
                if ineq_vars.contains(&v.as_str()) && !relations[idx].ineq.contains(&c) {
                    relations[idx].ineq.push(c);
                }
            }
        }
        GenSpec {
            kind,
            relations,
            size,
            domain,
            seed,
            selectivity: None,
        }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: String| Err(GenError::BadSpec(m));
        if self.relations.is_empty() {
            return bad("no relations".into());
        }
        if self.domain < 1 {
            return bad(format!("domain must be at least 1, got {}", self.domain));
        }
        let mut names = HashSet::new();
        for r in &self.relations {
            if r.name.is_empty() || !names.insert(&r.name) {
                return bad(format!("relation names must be non-empty and distinct: {:?}", r.name));
            }
            for &c in r.ineq.iter().chain(&r.strings) {
                if c >= r.arity {
                    return bad(format!("{}: column {c} out of range", r.name));
                }
            }
            if r.ineq.iter().any(|c| r.strings.contains(c)) {
                return bad(format!("{}: inequality columns must be integers", r.name));
            }
        }
        if let Some(s) = self.selectivity {
            if !(s > 0.0 && s <= 1.0) {
                return bad(format!("selectivity must lie in (0, 1], got {s}"));
            }
            if self.kind == StreamKind::Temporal {
                return bad("selectivity applies to random streams only".into());
            }
        }
        Ok(())
    }

    fn counts(&self) -> Vec<usize> {
        let k = self.relations.len();
        (0..k).map(|i| self.size / k + usize::from(i < self.size % k)).collect()
    }
}

/// Generates the stream. A spec with a selectivity target needs the query;
/// use [`gen_calibrated`].
pub fn gen_stream(spec: &GenSpec) -> Result<Vec<StreamEvent>, GenError> {
    spec.validate()?;
    if spec.selectivity.is_some() {
        return Err(GenError::BadSpec(
            "a selectivity target needs the query to calibrate against".into(),
        ));
    }
    generate(spec, None)
}

fn generate(spec: &GenSpec, shift: Option<f64>) -> Result<Vec<StreamEvent>, GenError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let counts = spec.counts();
    let temporal = spec.kind == StreamKind::Temporal;
    for (r, &n) in spec.relations.iter().zip(&counts) {
        if temporal && !r.ineq.is_empty() {
            continue;
        }
        let per_col = |c: usize| -> u64 {
            if shift.is_some() && r.ineq.contains(&c) {
                WIDE as u64
            } else {
                spec.domain as u64
            }
        };
        let capacity = (0..r.arity).fold(1u64, |acc, c| acc.saturating_mul(per_col(c)));
        if capacity < n as u64 {
            return Err(GenError::DomainTooSmall {
                relation: r.name.clone(),
                capacity,
                needed: n,
            });
        }
    }
    let mut order: Vec<usize> = counts.iter().enumerate().flat_map(|(i, &n)| std::iter::repeat(i).take(n)).collect();
    order.shuffle(&mut rng);
    let mut seen: Vec<HashSet<Vec<Value>>> = vec![HashSet::new(); spec.relations.len()];
    let mut out = Vec::with_capacity(order.len());
    for (j, &ri) in order.iter().enumerate() {
        let r = &spec.relations[ri];
        let row = loop {
            let row: Vec<Value> = (0..r.arity)
                .map(|c| {
                    if r.ineq.contains(&c) {
                        match (temporal, shift) {
                            (true, _) => Value::Int(j as i64 + 1),
                            (false, Some(s)) => Value::Int(rng.gen_range(1..=WIDE) + (ri as f64 * s).round() as i64),
                            (false, None) => Value::Int(rng.gen_range(1..=spec.domain)),
                        }
                    } else if r.strings.contains(&c) {
                        Value::str(&format!("s{}", rng.gen_range(1..=spec.domain)))
                    } else {
                        Value::Int(rng.gen_range(1..=spec.domain))
                    }
                })
                .collect();
            if seen[ri].insert(row.clone()) {
                break row;
            }
        };
        out.push(StreamEvent::insert(j as u64 + 1, &r.name, row));
    }
    Ok(out)
}

/// Loads the insertions of `events` into a fresh database for `q`.
pub fn database_of(q: &Gcq, events: &[StreamEvent]) -> Result<Database, GenError> {
    let mut db = Database::new();
    db.declare_query(q).map_err(TRepError::from)?;
    for e in events {
        db.apply(&e.to_update()).map_err(TRepError::from)?;
    }
    Ok(db)
}

/// `|Q(db)| / Π|R|` over the atoms of `q`, counting multiplicities.
pub fn selectivity(q: &Gcq, db: &Database) -> Result<f64, GenError> {
    let mut denom = 1f64;
    for a in q.atoms() {
        let n: i64 = db.relation(&a.relation).map_or(0, |r| r.iter().map(|(_, m)| m).sum());
        denom *= n as f64;
    }
    if denom == 0.0 {
        return Ok(0.0);
    }
    let count = TRep::for_query(&q.with_out(Hyperedge::empty()).map_err(TRepError::from)?, db)?
        .enumerate()?
        .total()
        .map_err(TRepError::from)?;
    Ok(count as f64 / denom)
}

#[derive(Clone, Debug)]
pub struct Calibrated {
    pub events: Vec<StreamEvent>,
    pub shift: f64,
    /// Selectivity of the returned stream.
    pub measured: f64,
}

/// Generates a random stream whose selectivity for `q` approximates
/// `spec.selectivity`.
pub fn gen_calibrated(spec: &GenSpec, q: &Gcq) -> Result<Calibrated, GenError> {
    spec.validate()?;
    let target = spec.selectivity.ok_or_else(|| GenError::BadSpec("no selectivity target".into()))?;
    let have: BTreeMap<&str, usize> = spec.relations.iter().map(|r| (r.name.as_str(), r.arity)).collect();
    for a in q.atoms() {
        if have.get(&*a.relation) != Some(&a.arity()) {
            return Err(GenError::BadSpec(format!(
                "relation {} of the query is not generated with arity {}",
                a.relation,
                a.arity()
            )));
        }
    }
    let sample = GenSpec {
        size: spec.size.min(CALIBRATION_SIZE),
        ..spec.clone()
    };
    let measure = |s: f64| -> Result<f64, GenError> { selectivity(q, &database_of(q, &generate(&sample, Some(s))?)?) };
    let bound = WIDE as f64;
    let (mut lo, mut hi) = (-bound, bound);
    let (f_lo, f_hi) = (measure(lo)?, measure(hi)?);
    let rising = f_hi >= f_lo;
    let mut best = if (f_lo - target).abs() <= (f_hi - target).abs() {
        (lo, f_lo)
    } else {
        (hi, f_hi)
    };
    for _ in 0..40 {
        let mid = (lo + hi) / 2.0;
        let f = measure(mid)?;
        if (f - target).abs() < (best.1 - target).abs() {
            best = (mid, f);
        }
        if (f < target) == rising {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let events = generate(spec, Some(best.0))?;
    let measured = if spec.size == sample.size {
        best.1
    } else {
        selectivity(q, &database_of(q, &events)?)?
    };
    Ok(Calibrated {
        events,
        shift: best.0,
        measured,
    })
}
