//! Conjunctive queries with comparison predicates: syntax tree, a small text
//! language, databases and updates, and a naive evaluator used as the
//! reference semantics.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;
use core::hash::{Hash, Hasher};

use crate::gmr::{Gmr, GmrError, Hyperedge, Tuple, TypeMismatch, Value, Var};
use crate::gyo::HypergraphTriplet;
use crate::Map;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Ne,
}

impl CmpOp {
    pub fn holds(self, ord: Ordering) -> bool {
        match self {
            CmpOp::Lt => ord == Ordering::Less,
            CmpOp::Le => ord != Ordering::Greater,
            CmpOp::Gt => ord == Ordering::Greater,
            CmpOp::Ge => ord != Ordering::Less,
            CmpOp::Ne => ord != Ordering::Equal,
        }
    }

    /// The operator with its operands swapped: `a < b` iff `b > a`.
    pub fn flip(self) -> CmpOp {
        match self {
            CmpOp::Lt => CmpOp::Gt,
            CmpOp::Le => CmpOp::Ge,
            CmpOp::Gt => CmpOp::Lt,
            CmpOp::Ge => CmpOp::Le,
            CmpOp::Ne => CmpOp::Ne,
        }
    }

    pub fn is_inequality(self) -> bool {
        self != CmpOp::Ne
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Ne => "!=",
        }
    }
}

/// A boolean test over the values of `vars` (passed in canonical order).
pub type OpaqueFn = Arc<dyn Fn(&[Value]) -> bool + Send + Sync>;

/// A predicate over query variables. Opaque predicates are identified by
/// name alone; the other kinds structurally.
#[derive(Clone)]
pub enum Predicate {
    VarVar { lhs: Var, op: CmpOp, rhs: Var },
    VarConst { var: Var, op: CmpOp, value: Value },
    Opaque { name: Arc<str>, vars: Hyperedge, func: OpaqueFn },
}

impl Predicate {
    pub fn var_var(lhs: &str, op: CmpOp, rhs: &str) -> Self {
        Predicate::VarVar {
            lhs: Var::new(lhs),
            op,
            rhs: Var::new(rhs),
        }
    }

    pub fn var_const(var: &str, op: CmpOp, value: impl Into<Value>) -> Self {
        Predicate::VarConst {
            var: Var::new(var),
            op,
            value: value.into(),
        }
    }

    pub fn opaque<F>(name: &str, vars: Hyperedge, func: F) -> Self
    where
        F: Fn(&[Value]) -> bool + Send + Sync + 'static,
    {
        Predicate::Opaque {
            name: Arc::from(name),
            vars,
            func: Arc::new(func),
        }
    }

    pub fn vars(&self) -> Hyperedge {
        match self {
            Predicate::VarVar { lhs, rhs, .. } => Hyperedge::new([lhs, rhs]),
            Predicate::VarConst { var, .. } => Hyperedge::new([var]),
            Predicate::Opaque { vars, .. } => vars.clone(),
        }
    }

    /// Evaluates the predicate; `get` must bind every variable of the predicate.
    pub fn eval<'a>(&self, get: impl Fn(&Var) -> Option<&'a Value>) -> Result<bool, TypeMismatch> {
        let val = |v: &Var| get(v).expect("predicate variable not bound");
        match self {
            Predicate::VarVar { lhs, op, rhs } => Ok(op.holds(val(lhs).compare(val(rhs))?)),
            Predicate::VarConst { var, op, value } => Ok(op.holds(val(var).compare(value)?)),
            Predicate::Opaque { vars, func, .. } => {
                let args: Vec<Value> = vars.iter().map(|v| val(v).clone()).collect();
                Ok(func(&args))
            }
        }
    }

    pub fn rename(&self, f: impl Fn(&Var) -> Var) -> Predicate {
        match self {
            Predicate::VarVar { lhs, op, rhs } => Predicate::VarVar {
                lhs: f(lhs),
                op: *op,
                rhs: f(rhs),
            },
            Predicate::VarConst { var, op, value } => Predicate::VarConst {
                var: f(var),
                op: *op,
                value: value.clone(),
            },
            Predicate::Opaque { name, vars, func } => Predicate::Opaque {
                name: name.clone(),
                vars: Hyperedge::new(vars.iter().map(&f)),
                func: func.clone(),
            },
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Predicate::VarVar { .. } => 0,
            Predicate::VarConst { .. } => 1,
            Predicate::Opaque { .. } => 2,
        }
    }
}

impl PartialEq for Predicate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Predicate {}

impl PartialOrd for Predicate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Predicate {
    fn cmp(&self, other: &Self) -> Ordering {
        use Predicate::*;
        match (self, other) {
            (VarVar { lhs: a, op: o, rhs: b }, VarVar { lhs: c, op: p, rhs: d }) => (a, o, b).cmp(&(c, p, d)),
            (VarConst { var: a, op: o, value: v }, VarConst { var: b, op: p, value: w }) => (a, o, v).cmp(&(b, p, w)),
            (Opaque { name: a, .. }, Opaque { name: b, .. }) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl Hash for Predicate {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.rank().hash(state);
        match self {
            Predicate::VarVar { lhs, op, rhs } => (lhs, op, rhs).hash(state),
            Predicate::VarConst { var, op, value } => (var, op, value).hash(state),
            Predicate::Opaque { name, .. } => name.hash(state),
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::VarVar { lhs, op, rhs } => write!(f, "{lhs} {} {rhs}", op.symbol()),
            Predicate::VarConst { var, op, value } => write!(f, "{var} {} {value}", op.symbol()),
            Predicate::Opaque { name, vars, .. } => {
                write!(f, "{name}(")?;
                for (i, v) in vars.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str(")")
            }
        }
    }
}

impl fmt::Debug for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Union of the variables of a set of predicates.
pub fn pred_vars<'a>(preds: impl IntoIterator<Item = &'a Predicate>) -> Hyperedge {
    let mut vs: Vec<Var> = Vec::new();
    for p in preds {
        vs.extend(p.vars().iter().cloned());
    }
    Hyperedge::new(vs)
}

/// One atom `r(x1,...,xk)` of a query. `occurrence` numbers repeated uses of
/// the same relation in query order.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Atom {
    pub relation: Arc<str>,
    pub args: Vec<Var>,
    pub occurrence: usize,
}

impl Atom {
    pub fn new(relation: &str, args: &[&str]) -> Self {
        Atom {
            relation: Arc::from(relation),
            args: args.iter().map(|a| Var::new(a)).collect(),
            occurrence: 0,
        }
    }

    pub fn vars(&self) -> Hyperedge {
        Hyperedge::new(self.args.iter())
    }

    pub fn arity(&self) -> usize {
        self.args.len()
    }

    /// Relation name and argument list, ignoring the occurrence number.
    pub fn signature(&self) -> (&str, &[Var]) {
        (&self.relation, &self.args)
    }

    /// Maps a stored row of the relation to a tuple over `vars()`, or `None`
    /// if a repeated variable sees two different values.
    pub fn row_to_tuple(&self, row: &[Value]) -> Option<Tuple> {
        let vars = self.vars();
        let mut out: Vec<Option<&Value>> = vec![None; vars.len()];
        for (arg, val) in self.args.iter().zip(row) {
            let slot = &mut out[vars.position(arg).unwrap()];
            match slot {
                Some(prev) if *prev != val => return None,
                _ => *slot = Some(val),
            }
        }
        Some(out.into_iter().map(|v| v.unwrap().clone()).collect())
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.relation)?;
        for (i, v) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{v}")?;
        }
        f.write_str(")")
    }
}

impl fmt::Debug for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}#{}", self.occurrence)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum QueryError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("variable {0} does not occur in any atom")]
    Scope(Var),
    #[error("relation {relation} used with arities {a} and {b}")]
    Arity { relation: String, a: usize, b: usize },
    #[error("no data for relation {0}")]
    MissingRelation(String),
    #[error("update makes relation {0} non-positive")]
    NegativeDatabase(String),
    #[error(transparent)]
    TypeMismatch(#[from] TypeMismatch),
    #[error(transparent)]
    Gmr(#[from] GmrError),
}

/// A generalized conjunctive query `π_out σ_preds (atom_1 ⋈ ... ⋈ atom_n)`.
#[derive(Clone, PartialEq, Eq)]
pub struct Gcq {
    atoms: Vec<Atom>,
    preds: BTreeSet<Predicate>,
    out: Hyperedge,
}

impl Gcq {
    /// Checks scoping and arities and numbers repeated atoms.
    pub fn new(mut atoms: Vec<Atom>, preds: impl IntoIterator<Item = Predicate>, out: Hyperedge) -> Result<Self, QueryError> {
        let mut arity: BTreeMap<Arc<str>, usize> = BTreeMap::new();
        let mut seen: BTreeMap<Arc<str>, usize> = BTreeMap::new();
        for a in &mut atoms {
            if let Some(&k) = arity.get(&a.relation) {
                if k != a.arity() {
                    return Err(QueryError::Arity {
                        relation: a.relation.to_string(),
                        a: k,
                        b: a.arity(),
                    });
                }
            }
            arity.insert(a.relation.clone(), a.arity());
            let n = seen.entry(a.relation.clone()).or_insert(0);
            a.occurrence = *n;
            *n += 1;
        }
        let preds: BTreeSet<Predicate> = preds.into_iter().collect();
        let all = Hyperedge::new(atoms.iter().flat_map(|a| a.args.iter()));
        for v in out.iter().chain(pred_vars(&preds).iter()) {
            if !all.contains(v) {
                return Err(QueryError::Scope(v.clone()));
            }
        }
        Ok(Gcq { atoms, preds, out })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn preds(&self) -> &BTreeSet<Predicate> {
        &self.preds
    }

    pub fn out(&self) -> &Hyperedge {
        &self.out
    }

    /// All variables of all atoms.
    pub fn vars(&self) -> Hyperedge {
        Hyperedge::new(self.atoms.iter().flat_map(|a| a.args.iter()))
    }

    pub fn is_full(&self) -> bool {
        self.out == self.vars()
    }

    /// The same query with a different output set.
    pub fn with_out(&self, out: Hyperedge) -> Result<Gcq, QueryError> {
        Gcq::new(self.atoms.clone(), self.preds.iter().cloned(), out)
    }

    /// Hyperedges of the non-nullary atoms.
    pub fn hypergraph(&self) -> BTreeSet<Hyperedge> {
        self.atoms.iter().map(Atom::vars).filter(|e| !e.is_empty()).collect()
    }

    pub fn hypertrip(&self) -> HypergraphTriplet {
        HypergraphTriplet::new(self.hypergraph(), self.out.clone(), self.preds.iter().cloned())
    }

    /// Renders the query in the text syntax accepted by [`parse`].
    pub fn render(&self) -> String {
        let mut s = String::from("SELECT ");
        s.push_str(&join_display(self.out.iter(), ","));
        s.push_str(" FROM ");
        s.push_str(&join_display(self.atoms.iter(), ", "));
        if !self.preds.is_empty() {
            s.push_str(" WHERE ");
            s.push_str(&join_display(self.preds.iter(), " AND "));
        }
        s
    }
}

fn join_display<T: fmt::Display>(items: impl Iterator<Item = T>, sep: &str) -> String {
    let mut s = String::new();
    for (i, it) in items.enumerate() {
        if i > 0 {
            s.push_str(sep);
        }
        s.push_str(&it.to_string());
    }
    s
}

impl fmt::Display for Gcq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl fmt::Debug for Gcq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Rows of one relation with their multiplicities, stored positionally.
#[derive(Clone, PartialEq, Eq)]
pub struct Relation {
    arity: usize,
    rows: Map<Tuple, i64>,
}

impl Relation {
    pub fn new(arity: usize) -> Self {
        Relation {
            arity,
            rows: Map::default(),
        }
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, row: &[Value]) -> i64 {
        self.rows.get(row).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Tuple, i64)> + '_ {
        self.rows.iter().map(|(t, m)| (t, *m))
    }

    pub fn sorted(&self) -> Vec<(Tuple, i64)> {
        let mut v: Vec<(Tuple, i64)> = self.iter().map(|(t, m)| (t.clone(), m)).collect();
        v.sort();
        v
    }

    fn add(&mut self, row: Tuple, m: i64) -> Result<(), GmrError> {
        if m == 0 {
            return Ok(());
        }
        match self.rows.entry(row) {
            hashbrown::hash_map::Entry::Occupied(mut e) => {
                let n = e.get().checked_add(m).ok_or(GmrError::Overflow)?;
                if n == 0 {
                    e.remove();
                } else {
                    *e.get_mut() = n;
                }
            }
            hashbrown::hash_map::Entry::Vacant(e) => {
                e.insert(m);
            }
        }
        Ok(())
    }

    /// The relation seen through `atom`, as a GMR over the atom's variables.
    pub fn atom_gmr(&self, atom: &Atom) -> Gmr {
        let mut g = Gmr::new(atom.vars());
        for (row, m) in self.iter() {
            if let Some(t) = atom.row_to_tuple(row) {
                g.add(t, m).expect("multiplicity overflow in a projection that only copies");
            }
        }
        g
    }
}

impl fmt::Debug for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map().entries(self.sorted()).finish()
    }
}

macro_rules! relation_map {
    ($name:ident) => {
        impl $name {
            pub fn new() -> Self {
                $name { rels: BTreeMap::new() }
            }

            /// Registers an empty relation.
            pub fn declare(&mut self, relation: &str, arity: usize) -> Result<(), QueryError> {
                match self.rels.get(relation) {
                    Some(r) if r.arity != arity => Err(QueryError::Arity {
                        relation: relation.to_string(),
                        a: r.arity,
                        b: arity,
                    }),
                    Some(_) => Ok(()),
                    None => {
                        self.rels.insert(Arc::from(relation), Relation::new(arity));
                        Ok(())
                    }
                }
            }

            pub fn relation(&self, name: &str) -> Option<&Relation> {
                self.rels.get(name)
            }

            pub fn remove(&mut self, name: &str) -> Option<Relation> {
                self.rels.remove(name)
            }

            pub fn relations(&self) -> impl Iterator<Item = (&str, &Relation)> + '_ {
                self.rels.iter().map(|(k, v)| (&**k, v))
            }

            /// Total number of stored rows.
            pub fn size(&self) -> usize {
                self.rels.values().map(Relation::len).sum()
            }

            pub fn is_empty(&self) -> bool {
                self.rels.values().all(Relation::is_empty)
            }

            fn rel_mut(&mut self, relation: &str, arity: usize) -> Result<&mut Relation, QueryError> {
                self.declare(relation, arity)?;
                Ok(self.rels.get_mut(relation).unwrap())
            }
        }

        impl Default for $name {
            fn default() -> Self {
                Self::new()
            }
        }
    };
}

/// A positive database: every stored row has multiplicity > 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Database {
    rels: BTreeMap<Arc<str>, Relation>,
}

relation_map!(Database);

/// Per-relation signed changes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Update {
    rels: BTreeMap<Arc<str>, Relation>,
}

relation_map!(Update);

impl Update {
    /// Adds `m` copies of `row` (removes them if `m < 0`).
    pub fn add(&mut self, relation: &str, row: Tuple, m: i64) -> Result<(), QueryError> {
        let arity = row.len();
        self.rel_mut(relation, arity)?.add(row, m)?;
        Ok(())
    }

    pub fn single(relation: &str, row: Tuple, m: i64) -> Self {
        let mut u = Update::new();
        u.add(relation, row, m).expect("fresh update");
        u
    }

    /// Every changed row as `(relation, row, multiplicity)`, in canonical order.
    pub fn entries(&self) -> Vec<(Arc<str>, Tuple, i64)> {
        let mut out = Vec::new();
        for (name, rel) in &self.rels {
            for (t, m) in rel.sorted() {
                out.push((name.clone(), t, m));
            }
        }
        out
    }
}

impl Database {
    /// Inserts `m > 0` copies of `row`.
    pub fn insert(&mut self, relation: &str, row: Tuple, m: i64) -> Result<(), QueryError> {
        if m <= 0 {
            return Err(QueryError::NegativeDatabase(relation.to_string()));
        }
        let arity = row.len();
        self.rel_mut(relation, arity)?.add(row, m)?;
        Ok(())
    }

    /// Checks that `self + u` is positive without changing anything.
    pub fn check_update(&self, u: &Update) -> Result<(), QueryError> {
        for (name, delta) in u.relations() {
            let cur = self.relation(name);
            if let Some(r) = cur {
                if r.arity != delta.arity {
                    return Err(QueryError::Arity {
                        relation: name.to_string(),
                        a: r.arity,
                        b: delta.arity,
                    });
                }
            }
            for (row, m) in delta.iter() {
                let have = cur.map_or(0, |r| r.get(row));
                match have.checked_add(m) {
                    Some(n) if n >= 0 => {}
                    Some(_) => return Err(QueryError::NegativeDatabase(name.to_string())),
                    None => return Err(GmrError::Overflow.into()),
                }
            }
        }
        Ok(())
    }

    /// Applies `u`; on error nothing is changed.
    pub fn apply(&mut self, u: &Update) -> Result<(), QueryError> {
        self.check_update(u)?;
        for (name, delta) in u.relations() {
            let rel = self.rel_mut(name, delta.arity)?;
            for (row, m) in delta.iter() {
                rel.add(row.clone(), m)?;
            }
        }
        Ok(())
    }

    /// Declares every relation of `q` that is not present yet.
    pub fn declare_query(&mut self, q: &Gcq) -> Result<(), QueryError> {
        for a in q.atoms() {
            self.declare(&a.relation, a.arity())?;
        }
        Ok(())
    }
}

/// Evaluates `q` on `db` by backtracking over the atoms in query order,
/// checking each predicate as soon as its variables are bound.
pub fn naive_eval(q: &Gcq, db: &Database) -> Result<Gmr, QueryError> {
    let vars = q.vars();
    let rels: Vec<&Relation> = q
        .atoms()
        .iter()
        .map(|a| {
            db.relation(&a.relation)
                .ok_or_else(|| QueryError::MissingRelation(a.relation.to_string()))
        })
        .collect::<Result<_, _>>()?;
    for (a, r) in q.atoms().iter().zip(&rels) {
        if r.arity() != a.arity() {
            return Err(QueryError::Arity {
                relation: a.relation.to_string(),
                a: r.arity(),
                b: a.arity(),
            });
        }
    }
    // Column of each atom argument in the assignment vector, and for each
    // atom the argument positions already bound by earlier atoms.
    let slots: Vec<Vec<usize>> = q
        .atoms()
        .iter()
        .map(|a| a.args.iter().map(|v| vars.position(v).unwrap()).collect())
        .collect();
    let mut bound = vec![false; vars.len()];
    let mut preds_at: Vec<Vec<&Predicate>> = vec![Vec::new(); q.atoms().len()];
    let mut pending: Vec<&Predicate> = q.preds().iter().collect();
    let mut indexes: Vec<Map<Tuple, Vec<(&Tuple, i64)>>> = Vec::new();
    let mut key_cols: Vec<Vec<usize>> = Vec::new();
    for (i, s) in slots.iter().enumerate() {
        let key: Vec<usize> = (0..s.len()).filter(|&j| bound[s[j]]).collect();
        let mut idx: Map<Tuple, Vec<(&Tuple, i64)>> = Map::default();
        for (row, m) in rels[i].iter() {
            idx.entry(key.iter().map(|&j| row[j].clone()).collect()).or_default().push((row, m));
        }
        indexes.push(idx);
        key_cols.push(key);
        for &c in s {
            bound[c] = true;
        }
        pending.retain(|p| {
            if p.vars().iter().all(|v| bound[vars.position(v).unwrap()]) {
                preds_at[i].push(p);
                false
            } else {
                true
            }
        });
    }
    let out_cols = vars.positions_of(q.out());
    let mut out = Gmr::new(q.out().clone());
    let mut assign: Vec<Option<Value>> = vec![None; vars.len()];
    let ctx = NaiveCtx {
        vars: &vars,
        slots: &slots,
        preds_at: &preds_at,
        indexes: &indexes,
        key_cols: &key_cols,
        out_cols: &out_cols,
    };
    ctx.search(0, 1, &mut assign, &mut out)?;
    Ok(out)
}

struct NaiveCtx<'a> {
    vars: &'a Hyperedge,
    slots: &'a [Vec<usize>],
    preds_at: &'a [Vec<&'a Predicate>],
    indexes: &'a [Map<Tuple, Vec<(&'a Tuple, i64)>>],
    key_cols: &'a [Vec<usize>],
    out_cols: &'a [usize],
}

impl NaiveCtx<'_> {
    fn search(&self, i: usize, mult: i64, assign: &mut Vec<Option<Value>>, out: &mut Gmr) -> Result<(), QueryError> {
        if i == self.slots.len() {
            let t: Tuple = self.out_cols.iter().map(|&c| assign[c].clone().unwrap()).collect();
            out.add(t, mult)?;
            return Ok(());
        }
        let s = &self.slots[i];
        let key: Tuple = self.key_cols[i].iter().map(|&j| assign[s[j]].clone().unwrap()).collect();
        let Some(rows) = self.indexes[i].get(&key) else {
            return Ok(());
        };
        for &(row, m) in rows {
            let mut newly: Vec<usize> = Vec::new();
            let mut ok = true;
            for (j, &c) in s.iter().enumerate() {
                match &assign[c] {
                    Some(v) => {
                        if *v != row[j] {
                            ok = false;
                            break;
                        }
                    }
                    None => {
                        assign[c] = Some(row[j].clone());
                        newly.push(c);
                    }
                }
            }
            if ok {
                for p in &self.preds_at[i] {
                    let vars = self.vars;
                    let a: &Vec<Option<Value>> = assign;
                    if !p.eval(|v| a[vars.position(v).unwrap()].as_ref())? {
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                let m2 = mult.checked_mul(m).ok_or(GmrError::Overflow)?;
                self.search(i + 1, m2, assign, out)?;
            }
            for c in newly {
                assign[c] = None;
            }
        }
        Ok(())
    }
}

/// `Q(db + u) - Q(db)`.
pub fn naive_delta(q: &Gcq, db: &Database, u: &Update) -> Result<Gmr, QueryError> {
    let mut next = db.clone();
    next.apply(u)?;
    Ok(naive_eval(q, &next)?.minus(&naive_eval(q, db)?)?)
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Str(String),
    Sym(&'static str),
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>, QueryError> {
    let b = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |pos: usize, msg: &str| QueryError::Syntax { pos, msg: msg.to_string() };
    while i < b.len() {
        let c = b[i];
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_alphabetic() || c == b'_' {
            let start = i;
            while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_') {
                i += 1;
            }
            out.push((start, Tok::Ident(text[start..i].to_string())));
        } else if c.is_ascii_digit() || (c == b'-' && i + 1 < b.len() && b[i + 1].is_ascii_digit()) {
            let start = i;
            i += 1;
            while i < b.len() && b[i].is_ascii_digit() {
                i += 1;
            }
            let v = text[start..i].parse().map_err(|_| err(start, "integer out of range"))?;
            out.push((start, Tok::Int(v)));
        } else if c == b'"' || c == b'\'' {
            let start = i;
            i += 1;
            let mut s = String::new();
            loop {
                let Some(ch) = text[i..].chars().next() else {
                    return Err(err(start, "unterminated string"));
                };
                i += ch.len_utf8();
                if ch as u32 == c as u32 {
                    break;
                }
                if ch == '\\' {
                    let Some(e) = text[i..].chars().next() else {
                        return Err(err(start, "unterminated string"));
                    };
                    i += e.len_utf8();
                    s.push(if e == 'n' { '\n' } else { e });
                } else {
                    s.push(ch);
                }
            }
            out.push((start, Tok::Str(s)));
        } else {
            let two = if i + 1 < b.len() { &text[i..i + 2] } else { "" };
            let sym = match two {
                "<=" => Some("<="),
                ">=" => Some(">="),
                "!=" => Some("!="),
                "<>" => Some("!="),
                _ => None,
            };
            if let Some(s) = sym {
                out.push((i, Tok::Sym(s)));
                i += 2;
                continue;
            }
            let s = match c {
                b'(' => "(",
                b')' => ")",
                b',' => ",",
                b'*' => "*",
                b'<' => "<",
                b'>' => ">",
                b'=' => "=",
                b';' => ";",
                _ => return Err(err(i, "unexpected character")),
            };
            out.push((i, Tok::Sym(s)));
            i += 1;
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(p, _)| *p)
    }

    fn fail<T>(&self, msg: &str) -> Result<T, QueryError> {
        Err(QueryError::Syntax {
            pos: self.offset(),
            msg: msg.to_string(),
        })
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s.eq_ignore_ascii_case(kw))
    }

    fn keyword(&mut self, kw: &str) -> Result<(), QueryError> {
        if self.is_keyword(kw) {
            self.pos += 1;
            Ok(())
        } else {
            self.fail(&format!("expected {kw}"))
        }
    }

    fn sym(&mut self, s: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Sym(t)) if *t == s) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> Result<String, QueryError> {
        match self.peek() {
            Some(Tok::Ident(s)) if !is_reserved(s) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.fail("expected identifier"),
        }
    }
}

fn is_reserved(s: &str) -> bool {
    ["select", "from", "where", "and"].iter().any(|k| s.eq_ignore_ascii_case(k))
}

/// Parses `SELECT (* | vars) FROM atoms [WHERE preds]`. An `a = b` predicate
/// merges the two variables into one, named by the smaller of the two.
pub fn parse(text: &str) -> Result<Gcq, QueryError> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
        end: text.len(),
    };
    p.keyword("select")?;
    let mut star = false;
    let mut out: Vec<String> = Vec::new();
    if p.sym("*") {
        star = true;
    } else if !p.is_keyword("from") {
        out.push(p.ident()?);
        while p.sym(",") {
            out.push(p.ident()?);
        }
    }
    p.keyword("from")?;
    let mut atoms: Vec<(String, Vec<String>)> = Vec::new();
    loop {
        let name = p.ident()?;
        if !p.sym("(") {
            return p.fail("expected `(`");
        }
        let mut args = Vec::new();
        if !p.sym(")") {
            args.push(p.ident()?);
            while p.sym(",") {
                args.push(p.ident()?);
            }
            if !p.sym(")") {
                return p.fail("expected `)`");
            }
        }
        atoms.push((name, args));
        if !p.sym(",") {
            break;
        }
    }
    let mut unify: Vec<(String, String)> = Vec::new();
    let mut raw_preds: Vec<(String, CmpOp, Result<String, Value>)> = Vec::new();
    if p.is_keyword("where") {
        p.pos += 1;
        loop {
            let lhs = p.ident()?;
            let op = match p.peek() {
                Some(Tok::Sym("<")) => Some(CmpOp::Lt),
                Some(Tok::Sym("<=")) => Some(CmpOp::Le),
                Some(Tok::Sym(">")) => Some(CmpOp::Gt),
                Some(Tok::Sym(">=")) => Some(CmpOp::Ge),
                Some(Tok::Sym("!=")) => Some(CmpOp::Ne),
                Some(Tok::Sym("=")) => None,
                _ => return p.fail("expected comparison operator"),
            };
            p.pos += 1;
            let rhs = match p.peek().cloned() {
                Some(Tok::Ident(s)) if !is_reserved(&s) => {
                    p.pos += 1;
                    Ok(s)
                }
                Some(Tok::Int(v)) => {
                    p.pos += 1;
                    Err(Value::Int(v))
                }
                Some(Tok::Str(s)) => {
                    p.pos += 1;
                    Err(Value::str(&s))
                }
                _ => return p.fail("expected variable or literal"),
            };
            match (op, rhs) {
                (None, Ok(r)) => unify.push((lhs, r)),
                (None, Err(_)) => {
                    p.pos -= 1;
                    return p.fail("equality with a constant is not supported");
                }
                (Some(op), rhs) => raw_preds.push((lhs, op, rhs)),
            }
            if !p.is_keyword("and") {
                break;
            }
            p.pos += 1;
        }
    }
    p.sym(";");
    if p.peek().is_some() {
        return p.fail("unexpected input after query");
    }

    // Union-find over variable names for `=` predicates.
    let mut parent: BTreeMap<String, String> = BTreeMap::new();
    fn find(parent: &BTreeMap<String, String>, v: &str) -> String {
        let mut cur = v.to_string();
        while let Some(p) = parent.get(&cur) {
            cur = p.clone();
        }
        cur
    }
    for (a, b) in &unify {
        let (ra, rb) = (find(&parent, a), find(&parent, b));
        match ra.cmp(&rb) {
            Ordering::Less => {
                parent.insert(rb, ra);
            }
            Ordering::Greater => {
                parent.insert(ra, rb);
            }
            Ordering::Equal => {}
        }
    }
    let canon = |v: &str| Var::new(&find(&parent, v));

    let atoms: Vec<Atom> = atoms
        .iter()
        .map(|(name, args)| Atom {
            relation: Arc::from(name.as_str()),
            args: args.iter().map(|a| canon(a)).collect(),
            occurrence: 0,
        })
        .collect();
    let known = Hyperedge::new(atoms.iter().flat_map(|a| a.args.iter()));
    for (a, b) in &unify {
        for v in [a, b] {
            if !known.contains(&canon(v)) {
                return Err(QueryError::Scope(Var::new(v)));
            }
        }
    }
    let preds = raw_preds.into_iter().map(|(lhs, op, rhs)| match rhs {
        Ok(r) => Predicate::VarVar {
            lhs: canon(&lhs),
            op,
            rhs: canon(&r),
        },
        Err(value) => Predicate::VarConst {
            var: canon(&lhs),
            op,
            value,
        },
    });
    let out = if star {
        known.clone()
    } else {
        Hyperedge::new(out.iter().map(|v| canon(v)))
    };
    Gcq::new(atoms, preds, out)
}
