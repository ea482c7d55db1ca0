//! Relations with signed integer multiplicities (GMRs) over named variables,
//! and the algebra every other module is built from.
//!
//! Tuples are plain value vectors laid out in the canonical (sorted) order of
//! their schema, so two tuples over the same hyperedge hash and compare
//! independently of how they were written down.

use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::borrow::Borrow;
use core::cmp::Ordering;
use core::fmt;

use crate::query::Predicate;
use crate::Map;

/// A scalar: 64-bit integer or string.
///
/// The derived order sorts all integers before all strings. It exists so that
/// tuples can be printed and indexed canonically; predicate evaluation goes
/// through [`Value::compare`], which refuses to compare across kinds.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Int(i64),
    Str(Arc<str>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ValueKind {
    Int,
    Str,
}

/// Two values of different kinds were compared.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("cannot compare {0} with {1}")]
pub struct TypeMismatch(pub Value, pub Value);

impl Value {
    pub fn str(s: &str) -> Self {
        Value::Str(Arc::from(s))
    }

    pub fn kind(&self) -> ValueKind {
        match self {
            Value::Int(_) => ValueKind::Int,
            Value::Str(_) => ValueKind::Str,
        }
    }

    pub fn compare(&self, other: &Value) -> Result<Ordering, TypeMismatch> {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => Ok(a.cmp(b)),
            (Value::Str(a), Value::Str(b)) => Ok(a.cmp(b)),
            _ => Err(TypeMismatch(self.clone(), other.clone())),
        }
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::str(v)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Str(s) => {
                f.write_str("\"")?;
                for c in s.chars() {
                    match c {
                        '"' => f.write_str("\\\"")?,
                        '\\' => f.write_str("\\\\")?,
                        '\n' => f.write_str("\\n")?,
                        c => write!(f, "{c}")?,
                    }
                }
                f.write_str("\"")
            }
        }
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// A variable name.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(Arc<str>);

impl Var {
    pub fn new(name: &str) -> Self {
        Var(Arc::from(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for Var {
    fn from(v: &str) -> Self {
        Var::new(v)
    }
}

impl From<&Var> for Var {
    fn from(v: &Var) -> Self {
        v.clone()
    }
}

impl Borrow<str> for Var {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A finite set of variables, kept sorted. The derived order compares the
/// sorted variable lists lexicographically.
#[derive(Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Hyperedge(Vec<Var>);

impl Hyperedge {
    pub fn new<I, V>(vars: I) -> Self
    where
        I: IntoIterator<Item = V>,
        V: Into<Var>,
    {
        let mut v: Vec<Var> = vars.into_iter().map(Into::into).collect();
        v.sort();
        v.dedup();
        Hyperedge(v)
    }

    pub fn empty() -> Self {
        Hyperedge(Vec::new())
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }

    pub fn iter(&self) -> core::slice::Iter<'_, Var> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, v: &Var) -> bool {
        self.0.binary_search(v).is_ok()
    }

    /// Column of `v` in tuples over this hyperedge.
    pub fn position(&self, v: &Var) -> Option<usize> {
        self.0.binary_search(v).ok()
    }

    pub fn is_subset(&self, other: &Hyperedge) -> bool {
        self.0.iter().all(|v| other.contains(v))
    }

    pub fn union(&self, other: &Hyperedge) -> Hyperedge {
        Hyperedge::new(self.0.iter().chain(other.0.iter()))
    }

    pub fn intersect(&self, other: &Hyperedge) -> Hyperedge {
        Hyperedge(self.0.iter().filter(|v| other.contains(v)).cloned().collect())
    }

    pub fn minus(&self, other: &Hyperedge) -> Hyperedge {
        Hyperedge(self.0.iter().filter(|v| !other.contains(v)).cloned().collect())
    }

    pub fn is_disjoint(&self, other: &Hyperedge) -> bool {
        !self.0.iter().any(|v| other.contains(v))
    }

    /// Positions in `self` of each variable of `sub`. Panics if `sub` is not a
    /// subset; callers check schemas first.
    pub(crate) fn positions_of(&self, sub: &Hyperedge) -> Vec<usize> {
        sub.iter().map(|v| self.position(v).expect("variable outside schema")).collect()
    }
}

impl<'a> IntoIterator for &'a Hyperedge {
    type Item = &'a Var;
    type IntoIter = core::slice::Iter<'a, Var>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

impl fmt::Display for Hyperedge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            f.write_str(v.as_str())?;
        }
        f.write_str("}")
    }
}

impl fmt::Debug for Hyperedge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Values in the canonical order of some hyperedge.
pub type Tuple = Vec<Value>;

pub(crate) fn project_tuple(t: &[Value], cols: &[usize]) -> Tuple {
    cols.iter().map(|&c| t[c].clone()).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum GmrError {
    #[error("schema mismatch: expected {expected}, found {found}")]
    SchemaMismatch { expected: Hyperedge, found: Hyperedge },
    #[error("tuple has {found} values but schema {schema} has {} variables", schema.len())]
    Arity { schema: Hyperedge, found: usize },
    #[error("single-tuple update with multiplicity 0")]
    ZeroDelta,
    #[error("predicate variable {0} is not bound by the schema")]
    UnboundPredicateVariable(Var),
    #[error("multiplicity overflow")]
    Overflow,
    #[error(transparent)]
    TypeMismatch(#[from] TypeMismatch),
}

/// A generalized multiset relation: a finite map from tuples over `schema` to
/// non-zero signed multiplicities.
#[derive(Clone, PartialEq, Eq)]
pub struct Gmr {
    schema: Hyperedge,
    entries: Map<Tuple, i64>,
}

impl Gmr {
    pub fn new(schema: Hyperedge) -> Self {
        Gmr {
            schema,
            entries: Map::default(),
        }
    }

    /// Builds a GMR from `(tuple, multiplicity)` pairs, summing duplicates.
    pub fn from_entries<I>(schema: Hyperedge, entries: I) -> Result<Self, GmrError>
    where
        I: IntoIterator<Item = (Tuple, i64)>,
    {
        let mut g = Gmr::new(schema);
        for (t, m) in entries {
            g.check_arity(&t)?;
            g.add(t, m)?;
        }
        Ok(g)
    }

    pub fn schema(&self) -> &Hyperedge {
        &self.schema
    }

    /// Number of tuples in the support.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Multiplicity of `t`, 0 outside the support.
    pub fn get(&self, t: &[Value]) -> i64 {
        self.entries.get(t).copied().unwrap_or(0)
    }

    pub fn contains(&self, t: &[Value]) -> bool {
        self.entries.contains_key(t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Tuple, i64)> + '_ {
        self.entries.iter().map(|(t, m)| (t, *m))
    }

    /// Entries in canonical tuple order.
    pub fn sorted(&self) -> Vec<(Tuple, i64)> {
        let mut v: Vec<(Tuple, i64)> = self.entries.iter().map(|(t, m)| (t.clone(), *m)).collect();
        v.sort();
        v
    }

    pub fn is_positive(&self) -> bool {
        self.entries.values().all(|&m| m > 0)
    }

    /// Sum of all multiplicities.
    pub fn total(&self) -> Result<i64, GmrError> {
        self.entries
            .values()
            .try_fold(0i64, |acc, &m| acc.checked_add(m).ok_or(GmrError::Overflow))
    }

    fn check_arity(&self, t: &[Value]) -> Result<(), GmrError> {
        if t.len() != self.schema.len() {
            return Err(GmrError::Arity {
                schema: self.schema.clone(),
                found: t.len(),
            });
        }
        Ok(())
    }

    fn check_schema(&self, other: &Gmr) -> Result<(), GmrError> {
        if self.schema != other.schema {
            return Err(GmrError::SchemaMismatch {
                expected: self.schema.clone(),
                found: other.schema.clone(),
            });
        }
        Ok(())
    }

    /// Adds `m` to the multiplicity of `t`, evicting the entry if it reaches 0.
    /// Returns the new multiplicity. `t` must already have the right arity.
    pub(crate) fn add(&mut self, t: Tuple, m: i64) -> Result<i64, GmrError> {
        if m == 0 {
            return Ok(self.get(&t));
        }
        match self.entries.entry(t) {
            hashbrown::hash_map::Entry::Occupied(mut e) => {
                let n = e.get().checked_add(m).ok_or(GmrError::Overflow)?;
                if n == 0 {
                    e.remove();
                } else {
                    *e.get_mut() = n;
                }
                Ok(n)
            }
            hashbrown::hash_map::Entry::Vacant(e) => {
                e.insert(m);
                Ok(m)
            }
        }
    }

    /// In-place single-tuple insert (`m > 0`) or delete (`m < 0`).
    pub fn apply_single(&mut self, t: Tuple, m: i64) -> Result<(), GmrError> {
        if m == 0 {
            return Err(GmrError::ZeroDelta);
        }
        self.check_arity(&t)?;
        self.add(t, m).map(|_| ())
    }

    pub fn union(&self, other: &Gmr) -> Result<Gmr, GmrError> {
        self.check_schema(other)?;
        let mut out = self.clone();
        for (t, m) in other.iter() {
            out.add(t.clone(), m)?;
        }
        Ok(out)
    }

    pub fn negate(&self) -> Gmr {
        Gmr {
            schema: self.schema.clone(),
            entries: self.entries.iter().map(|(t, m)| (t.clone(), -m)).collect(),
        }
    }

    pub fn minus(&self, other: &Gmr) -> Result<Gmr, GmrError> {
        self.check_schema(other)?;
        let mut out = self.clone();
        for (t, m) in other.iter() {
            out.add(t.clone(), m.checked_neg().ok_or(GmrError::Overflow)?)?;
        }
        Ok(out)
    }

    pub fn project(&self, z: &Hyperedge) -> Result<Gmr, GmrError> {
        if !z.is_subset(&self.schema) {
            return Err(GmrError::SchemaMismatch {
                expected: self.schema.clone(),
                found: z.clone(),
            });
        }
        let cols = self.schema.positions_of(z);
        let mut out = Gmr::new(z.clone());
        for (t, m) in self.iter() {
            out.add(project_tuple(t, &cols), m)?;
        }
        Ok(out)
    }

    /// Natural join: tuples agreeing on the shared variables are combined and
    /// their multiplicities multiplied.
    pub fn join(&self, other: &Gmr) -> Result<Gmr, GmrError> {
        self.join_filtered(other, &[])
    }

    pub fn select(&self, preds: &[Predicate]) -> Result<Gmr, GmrError> {
        check_bound(&self.schema, preds)?;
        let mut out = Gmr::new(self.schema.clone());
        for (t, m) in self.iter() {
            if eval_all(preds, &self.schema, t)? {
                out.add(t.clone(), m)?;
            }
        }
        Ok(out)
    }

    pub fn theta_join(&self, other: &Gmr, preds: &[Predicate]) -> Result<Gmr, GmrError> {
        check_bound(&self.schema.union(&other.schema), preds)?;
        self.join_filtered(other, preds)
    }

    /// `π_{var(self)}(self ⋈_preds other)`.
    pub fn semijoin(&self, other: &Gmr, preds: &[Predicate]) -> Result<Gmr, GmrError> {
        self.theta_join(other, preds)?.project(&self.schema)
    }

    fn join_filtered(&self, other: &Gmr, preds: &[Predicate]) -> Result<Gmr, GmrError> {
        let schema = self.schema.union(&other.schema);
        let shared = self.schema.intersect(&other.schema);
        let lkey = self.schema.positions_of(&shared);
        let rkey = other.schema.positions_of(&shared);
        // Output column i comes from the left tuple if the variable is there.
        let layout: Vec<(bool, usize)> = schema
            .iter()
            .map(|v| match self.schema.position(v) {
                Some(p) => (true, p),
                None => (false, other.schema.position(v).unwrap()),
            })
            .collect();
        let mut groups: Map<Tuple, Vec<(&Tuple, i64)>> = Map::default();
        for (t, m) in other.iter() {
            groups.entry(project_tuple(t, &rkey)).or_default().push((t, m));
        }
        let mut out = Gmr::new(schema);
        for (l, lm) in self.iter() {
            let Some(group) = groups.get(&project_tuple(l, &lkey)) else {
                continue;
            };
            for &(r, rm) in group {
                let t: Tuple = layout
                    .iter()
                    .map(|&(left, p)| if left { l[p].clone() } else { r[p].clone() })
                    .collect();
                if !preds.is_empty() && !eval_all(preds, &out.schema, &t)? {
                    continue;
                }
                out.add(t, lm.checked_mul(rm).ok_or(GmrError::Overflow)?)?;
            }
        }
        Ok(out)
    }

    /// Parses the text form produced by `Display`.
    pub fn parse_text(text: &str) -> Result<Gmr, ParseGmrError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(ParseGmrError {
            line: 1,
            msg: "missing header".into(),
        })?;
        let vars = header.trim().strip_prefix("vars:").ok_or(ParseGmrError {
            line: 1,
            msg: "header must start with `vars:`".into(),
        })?;
        let names: Vec<&str> = vars.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        let schema = Hyperedge::new(names.iter().copied());
        if schema.len() != names.len() {
            return Err(ParseGmrError {
                line: 1,
                msg: "duplicate variable".into(),
            });
        }
        let mut g = Gmr::new(schema);
        for (i, line) in lines {
            let err = |msg: &str| ParseGmrError {
                line: i + 1,
                msg: msg.into(),
            };
            let fields = split_fields(line.trim()).map_err(err)?;
            if fields.len() != g.schema.len() + 1 {
                return Err(err("wrong number of fields"));
            }
            let (mult, vals) = fields.split_last().unwrap();
            let m: i64 = mult.trim().parse().map_err(|_| err("bad multiplicity"))?;
            let t: Tuple = vals.iter().map(|f| parse_value(f)).collect::<Result<_, _>>().map_err(err)?;
            g.apply_single(t, m).map_err(|e| err(&e.to_string()))?;
        }
        Ok(g)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {msg}")]
pub struct ParseGmrError {
    pub line: usize,
    pub msg: String,
}

/// Splits on `|` outside double-quoted strings.
fn split_fields(line: &str) -> Result<Vec<String>, &'static str> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut chars = line.chars();
    let mut quoted = false;
    while let Some(c) = chars.next() {
        match c {
            '\\' if quoted => {
                cur.push(c);
                cur.push(chars.next().ok_or("dangling escape")?);
            }
            '"' => {
                quoted = !quoted;
                cur.push(c);
            }
            '|' if !quoted => out.push(core::mem::take(&mut cur)),
            c => cur.push(c),
        }
    }
    if quoted {
        return Err("unterminated string");
    }
    out.push(cur);
    Ok(out)
}

/// Parses `123`, `-4` or a double-quoted string with `\"`, `\\`, `\n` escapes.
pub fn parse_value(field: &str) -> Result<Value, &'static str> {
    let f = field.trim();
    if let Some(body) = f.strip_prefix('"') {
        let body = body.strip_suffix('"').ok_or("unterminated string")?;
        let mut s = String::new();
        let mut chars = body.chars();
        while let Some(c) = chars.next() {
            if c == '\\' {
                match chars.next() {
                    Some('n') => s.push('\n'),
                    Some(c) => s.push(c),
                    None => return Err("dangling escape"),
                }
            } else {
                s.push(c);
            }
        }
        Ok(Value::str(&s))
    } else {
        f.parse::<i64>().map(Value::Int).map_err(|_| "bad value")
    }
}

impl fmt::Display for Gmr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("vars: ")?;
        for (i, v) in self.schema.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            f.write_str(v.as_str())?;
        }
        f.write_str("\n")?;
        for (t, m) in self.sorted() {
            for v in &t {
                write!(f, "{v}|")?;
            }
            writeln!(f, "{m}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Gmr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[", self.schema)?;
        for (i, (t, m)) in self.sorted().into_iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            f.write_str("(")?;
            for (j, v) in t.iter().enumerate() {
                if j > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{v}")?;
            }
            write!(f, ")->{m}")?;
        }
        f.write_str("]")
    }
}

fn check_bound(schema: &Hyperedge, preds: &[Predicate]) -> Result<(), GmrError> {
    for p in preds {
        if let Some(v) = p.vars().iter().find(|v| !schema.contains(v)) {
            return Err(GmrError::UnboundPredicateVariable(v.clone()));
        }
    }
    Ok(())
}

fn eval_all(preds: &[Predicate], schema: &Hyperedge, t: &[Value]) -> Result<bool, GmrError> {
    for p in preds {
        if !p.eval(|v| schema.position(v).map(|i| &t[i]))? {
            return Ok(false);
        }
    }
    Ok(true)
}
