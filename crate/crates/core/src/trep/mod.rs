//! The dynamic runtime: per-node reduced GMRs over a binary, sibling-closed
//! GJT pair, with indices for enumerating the result and for propagating
//! updates bottom-up.
//!
//! Updates are processed one changed tuple and one leaf at a time. Within
//! such a pass every delta has the sign of the changed tuple, so the deltas
//! along the path can be enumerated exactly like the reduct itself.

mod index;
mod tree;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::Cell;
use core::fmt::Write as _;

use self::index::{CompiledPred, Index, JoinSpec, Side};
use crate::gjt::{GjtPair, Label, NodeId};
use crate::gmr::{project_tuple, Gmr, GmrError, Hyperedge, Tuple, TypeMismatch, Value, ValueKind, Var};
use crate::gyo::{build_plan, classify, Verdict};
use crate::query::{Atom, Database, Gcq, Predicate, QueryError, Update};
use crate::Map;

/// A delta tuple with its probe key, awaiting its group.
type Probing<'a> = (Option<tree::Keyed>, &'a Tuple, i64);

/// Receives each output tuple, assembled in a shared buffer.
type Emit<'a, E> = dyn FnMut(&mut Vec<Value>, i64) -> Result<(), E> + 'a;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum TRepError {
    #[error("no data for relation {0}")]
    MissingRelation(String),
    #[error("relation {0} has a row with non-positive multiplicity")]
    NonPositiveDatabase(String),
    #[error("update makes relation {0} non-positive")]
    NegativeDatabase(String),
    #[error("delta set does not belong to the current state")]
    StaleDelta,
    #[error("query is cyclic")]
    NotAcyclic,
    #[error("plan cannot be used: {0}")]
    InvalidPlan(String),
    #[error("variable {var} holds {found:?} values but {expected:?} values were seen before")]
    KindMismatch { var: Var, expected: ValueKind, found: ValueKind },
    #[error(transparent)]
    TypeMismatch(#[from] TypeMismatch),
    #[error("multiplicity overflow")]
    Overflow,
    #[error(transparent)]
    Query(QueryError),
}

impl From<GmrError> for TRepError {
    fn from(e: GmrError) -> Self {
        match e {
            GmrError::TypeMismatch(t) => TRepError::TypeMismatch(t),
            GmrError::Overflow => TRepError::Overflow,
            other => TRepError::Query(QueryError::Gmr(other)),
        }
    }
}

impl From<QueryError> for TRepError {
    fn from(e: QueryError) -> Self {
        match e {
            QueryError::MissingRelation(r) => TRepError::MissingRelation(r),
            QueryError::NegativeDatabase(r) => TRepError::NegativeDatabase(r),
            QueryError::TypeMismatch(t) => TRepError::TypeMismatch(t),
            QueryError::Gmr(g) => g.into(),
            other => TRepError::Query(other),
        }
    }
}

fn mul(a: i64, b: i128) -> Result<i64, TRepError> {
    (a as i128)
        .checked_mul(b)
        .and_then(|x| i64::try_from(x).ok())
        .ok_or(TRepError::Overflow)
}

/// How a delta at a node turns into a delta at its parent.
enum UpRule {
    /// `π σ` of the node's own tuples.
    Unary { filter: Vec<CompiledPred>, proj: Vec<usize> },
    /// The parent's variables come from this node; each delta tuple is
    /// weighted with the matching multiplicity of the sibling.
    Probe { proj: Vec<usize> },
    /// The parent's variables come from the sibling; sibling tuples are
    /// weighted with a running sum over the sorted delta.
    Merge { proj: Vec<usize> },
    /// Pairs are enumerated one by one.
    Nested { proj: Vec<(Side, usize)> },
}

struct NodeInfo {
    vars: Hyperedge,
    parent: Option<NodeId>,
    sibling: Option<NodeId>,
    atom: Option<Atom>,
    /// Children in N.
    expand: Vec<NodeId>,
    /// Positions of `vars` in the output tuple, for nodes in N.
    out_cols: Vec<usize>,
    /// Index spec towards the parent, for non-root nodes in N.
    enum_spec: Option<JoinSpec>,
    /// Index spec towards the sibling, under the parent's predicates.
    sib_spec: Option<JoinSpec>,
    up: Option<UpRule>,
}

struct NodeState {
    rho: Gmr,
    enum_index: Option<Index>,
    sib_index: Option<Index>,
}

/// One value kind per class of variables linked by comparisons.
#[derive(Clone, Debug)]
struct Kinds {
    class: BTreeMap<Var, usize>,
    kind: Vec<Option<ValueKind>>,
}

impl Kinds {
    fn new(vars: &Hyperedge, preds: impl IntoIterator<Item = Predicate>) -> Result<Self, TRepError> {
        let mut parent: Vec<usize> = (0..vars.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let preds: Vec<Predicate> = preds.into_iter().collect();
        for pr in &preds {
            if let Predicate::VarVar { lhs, rhs, .. } = pr {
                let (a, b) = (vars.position(lhs).unwrap(), vars.position(rhs).unwrap());
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent[ra] = rb;
            }
        }
        let mut class = BTreeMap::new();
        for (i, v) in vars.iter().enumerate() {
            class.insert(v.clone(), find(&mut parent, i));
        }
        let mut kinds = Kinds {
            class,
            kind: vec![None; vars.len()],
        };
        let mut seen: Vec<Option<Value>> = vec![None; vars.len()];
        for pr in &preds {
            if let Predicate::VarConst { var, value, .. } = pr {
                let c = kinds.class[var];
                if let Some(prev) = &seen[c] {
                    if prev.kind() != value.kind() {
                        return Err(TypeMismatch(prev.clone(), value.clone()).into());
                    }
                }
                seen[c] = Some(value.clone());
                kinds.kind[c] = Some(value.kind());
            }
        }
        Ok(kinds)
    }

    /// Checks `t` (over `vars`) against the registry and the pending
    /// registrations, recording new kinds in `pending`.
    fn check(&self, vars: &Hyperedge, t: &[Value], pending: &mut BTreeMap<usize, ValueKind>) -> Result<(), TRepError> {
        for (v, x) in vars.iter().zip(t) {
            let c = self.class[v];
            let found = x.kind();
            match self.kind[c].or_else(|| pending.get(&c).copied()) {
                Some(expected) if expected != found => {
                    return Err(TRepError::KindMismatch {
                        var: v.clone(),
                        expected,
                        found,
                    })
                }
                Some(_) => {}
                None => {
                    pending.insert(c, found);
                }
            }
        }
        Ok(())
    }

    fn commit(&mut self, pending: BTreeMap<usize, ValueKind>) {
        for (c, k) in pending {
            self.kind[c] = Some(k);
        }
    }
}

/// Per-node deltas of one call to [`TRep::update`].
#[derive(Clone, Debug)]
pub struct DeltaSet {
    epoch: u64,
    passes: usize,
    nodes: BTreeMap<NodeId, Gmr>,
    merged: Option<Gmr>,
}

impl DeltaSet {
    /// Sum of the deltas computed at `n` over all passes of the update.
    pub fn node(&self, n: NodeId) -> Option<&Gmr> {
        self.nodes.get(&n)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &Gmr)> + '_ {
        self.nodes.iter().map(|(&n, g)| (n, g))
    }

    /// Number of single-tuple passes the update was split into.
    pub fn passes(&self) -> usize {
        self.passes
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.values().all(Gmr::is_empty)
    }
}

/// A (T,N)-representation of a query result.
pub struct TRep {
    pair: GjtPair,
    info: Vec<Option<NodeInfo>>,
    state: Vec<Option<NodeState>>,
    order: Vec<NodeId>,
    leaves_of: BTreeMap<Arc<str>, Vec<NodeId>>,
    out_vars: Hyperedge,
    db: Database,
    kinds: Kinds,
    epoch: u64,
    probes: Cell<u64>,
}

impl TRep {
    /// Plans `q` and builds its representation over `db`. For queries that
    /// are acyclic but not free-connex the output covers the smallest
    /// free-connex superset of the free variables.
    pub fn for_query(q: &Gcq, db: &Database) -> Result<TRep, TRepError> {
        let pair = build_plan(q).map_err(|_| TRepError::NotAcyclic)?;
        TRep::build(pair, db)
    }

    /// Computes the reduct of `db` bottom-up and indexes it.
    pub fn build(pair: GjtPair, db: &Database) -> Result<TRep, TRepError> {
        let t = &pair.tree;
        if let Some(v) = t.validate().first() {
            return Err(TRepError::InvalidPlan(format!("{v:?}")));
        }
        if !pair.is_connex() || !pair.is_sibling_closed() || !pair.is_binary() {
            return Err(TRepError::InvalidPlan("plan must be connex, sibling-closed and binary".to_string()));
        }
        let out_vars = pair.connex_vars();
        let size = t.ids().max().map_or(0, |m| m + 1);
        let mut info: Vec<Option<NodeInfo>> = (0..size).map(|_| None).collect();
        let mut leaves_of: BTreeMap<Arc<str>, Vec<NodeId>> = BTreeMap::new();
        let mut own = Database::new();
        for n in t.ids() {
            let vars = t.vars(n).clone();
            let parent = t.parent(n);
            let sibling = t.sibling(n);
            let atom = t.node(n).atom().cloned();
            if let Some(a) = &atom {
                leaves_of.entry(a.relation.clone()).or_default().push(n);
                let rel = db
                    .relation(&a.relation)
                    .ok_or_else(|| TRepError::MissingRelation(a.relation.to_string()))?;
                if rel.arity() != a.arity() {
                    return Err(QueryError::Arity {
                        relation: a.relation.to_string(),
                        a: rel.arity(),
                        b: a.arity(),
                    }
                    .into());
                }
                if own.relation(&a.relation).is_none() {
                    own.declare(&a.relation, rel.arity())?;
                    for (row, m) in rel.iter() {
                        if m <= 0 {
                            return Err(TRepError::NonPositiveDatabase(a.relation.to_string()));
                        }
                        own.insert(&a.relation, row.clone(), m)?;
                    }
                }
            }
            let in_n = pair.connex.contains(&n);
            let expand = if in_n {
                t.children(n).iter().copied().filter(|c| pair.connex.contains(c)).collect()
            } else {
                Vec::new()
            };
            let out_cols = if in_n { out_vars.positions_of(&vars) } else { Vec::new() };
            let enum_spec = match parent {
                Some(p) if in_n => Some(JoinSpec::new(&vars, t.vars(p), t.edge_preds(n))),
                _ => None,
            };
            let (sib_spec, up) = match parent {
                None => (None, None),
                Some(p) => {
                    let pv = t.vars(p);
                    let preds = t.node_preds(p);
                    match sibling {
                        None => {
                            let filter = preds.iter().map(|pr| CompiledPred::new(pr, &vars, &Hyperedge::empty())).collect();
                            (
                                None,
                                Some(UpRule::Unary {
                                    filter,
                                    proj: vars.positions_of(pv),
                                }),
                            )
                        }
                        Some(m) => {
                            let mv = t.vars(m);
                            let spec = JoinSpec::new(&vars, mv, &preds);
                            // The rule for propagating from n uses the sibling's spec,
                            // which indexes m against n; rebuild it here to decide.
                            let towards = JoinSpec::new(mv, &vars, &preds);
                            let up = if towards.summable() && pv.is_subset(&vars) {
                                UpRule::Probe {
                                    proj: vars.positions_of(pv),
                                }
                            } else if towards.summable() && pv.is_subset(mv) {
                                UpRule::Merge { proj: mv.positions_of(pv) }
                            } else {
                                let proj = pv
                                    .iter()
                                    .map(|v| match vars.position(v) {
                                        Some(c) => (Side::P, c),
                                        None => (Side::I, mv.position(v).unwrap()),
                                    })
                                    .collect();
                                UpRule::Nested { proj }
                            };
                            (Some(spec), Some(up))
                        }
                    }
                }
            };
            info[n] = Some(NodeInfo {
                vars,
                parent,
                sibling,
                atom,
                expand,
                out_cols,
                enum_spec,
                sib_spec,
                up,
            });
        }
        let all_vars = Hyperedge::new(t.ids().flat_map(|n| t.vars(n).iter()));
        let kinds = Kinds::new(&all_vars, t.preds())?;
        let mut rep = TRep {
            order: t.post_order(),
            state: (0..size).map(|_| None).collect(),
            info,
            leaves_of,
            out_vars,
            db: own,
            kinds,
            epoch: 0,
            probes: Cell::new(0),
            pair,
        };
        let mut pending = BTreeMap::new();
        for &n in &rep.order {
            let i = rep.info(n);
            if let Some(a) = &i.atom {
                for (row, _) in rep.db.relation(&a.relation).unwrap().iter() {
                    if let Some(tu) = a.row_to_tuple(row) {
                        rep.kinds.check(&i.vars, &tu, &mut pending)?;
                    }
                }
            }
        }
        rep.kinds.commit(pending);
        for k in 0..rep.order.len() {
            let n = rep.order[k];
            let i = rep.info(n);
            let rho = match &i.atom {
                Some(a) => rep.db.relation(&a.relation).unwrap().atom_gmr(a),
                None => {
                    let c = rep.pair.tree.children(n)[0];
                    rep.propagate(c, &rep.state(c).rho)?
                }
            };
            let mut enum_index = i.enum_spec.clone().map(Index::new);
            let mut sib_index = i.sib_spec.clone().map(Index::new);
            for (tu, m) in rho.iter() {
                if let Some(x) = &mut enum_index {
                    x.add(tu, m)?;
                }
                if let Some(x) = &mut sib_index {
                    x.add(tu, m)?;
                }
            }
            rep.state[n] = Some(NodeState {
                rho,
                enum_index,
                sib_index,
            });
        }
        Ok(rep)
    }

    fn info(&self, n: NodeId) -> &NodeInfo {
        self.info[n].as_ref().expect("node of the plan")
    }

    fn state(&self, n: NodeId) -> &NodeState {
        self.state[n].as_ref().expect("node of the plan")
    }

    pub fn plan(&self) -> &GjtPair {
        &self.pair
    }

    /// `var(N)`: the schema of enumerated tuples.
    pub fn output_vars(&self) -> &Hyperedge {
        &self.out_vars
    }

    /// The reduced GMR at node `n`.
    pub fn rho(&self, n: NodeId) -> &Gmr {
        &self.state(n).rho
    }

    /// The database the representation currently stands for.
    pub fn database(&self) -> &Database {
        &self.db
    }

    /// Index operations performed by enumeration since the last reset.
    pub fn probe_count(&self) -> u64 {
        self.probes.get()
    }

    pub fn reset_probes(&self) {
        self.probes.set(0);
    }

    /// Number of mutations so far.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Σ_n |ρ_n|.
    pub fn reduct_size(&self) -> usize {
        self.state.iter().flatten().map(|s| s.rho.len()).sum()
    }

    /// Stored tuples: the reduct, every index entry and the base rows.
    pub fn live_tuples(&self) -> usize {
        let idx: usize = self
            .state
            .iter()
            .flatten()
            .map(|s| s.enum_index.as_ref().map_or(0, Index::entries) + s.sib_index.as_ref().map_or(0, Index::entries))
            .sum();
        self.reduct_size() + idx + self.db.size()
    }

    /// The delta at the parent of `n` caused by `delta` at `n`, against the
    /// current state of `n`'s sibling.
    fn propagate(&self, n: NodeId, delta: &Gmr) -> Result<Gmr, TRepError> {
        let i = self.info(n);
        let p = i.parent.expect("non-root");
        let mut out = Gmr::new(self.info(p).vars.clone());
        let scratch = Cell::new(0);
        let sib = i.sibling.map(|m| self.state(m).sib_index.as_ref().expect("sibling index"));
        match i.up.as_ref().expect("non-root") {
            UpRule::Unary { filter, proj } => {
                for (s, d) in delta.iter() {
                    let mut ok = true;
                    for f in filter {
                        if !f.eval(s, &[])? {
                            ok = false;
                            break;
                        }
                    }
                    if ok {
                        out.add(project_tuple(s, proj), d)?;
                    }
                }
            }
            UpRule::Probe { proj } => {
                let sib = sib.unwrap();
                for (s, d) in delta.iter() {
                    let w = sib.matching_sum(s, &scratch)?;
                    if w != 0 {
                        out.add(project_tuple(s, proj), mul(d, w)?)?;
                    }
                }
            }
            UpRule::Merge { proj } => {
                let sib = sib.unwrap();
                let spec = sib.spec();
                let mut groups: Map<Tuple, Vec<Probing<'_>>> = Map::default();
                for (s, d) in delta.iter() {
                    if spec.admits_p(s)? {
                        groups.entry(spec.group_of_p(s)).or_default().push((spec.probe_key(s), s, d));
                    }
                }
                for (key, mut list) in groups {
                    let Some(group) = sib.group(&key) else { continue };
                    list.sort_by(|a, b| a.0.cmp(&b.0));
                    let bounds: Vec<Option<tree::Bound<'_>>> = list.iter().map(|(_, s, _)| spec.bounds(s).first().copied()).collect();
                    let mut running: i128 = list.iter().map(|e| e.2 as i128).sum();
                    let mut front = 0;
                    let mut cur = group.first();
                    while let Some(c) = cur {
                        let (sk, t, mu) = group.entry(c);
                        if let Some(k0) = sk.first() {
                            while front < list.len() && !bounds[front].unwrap().admits(k0) {
                                running -= list[front].2 as i128;
                                front += 1;
                            }
                            if front == list.len() {
                                break;
                            }
                        }
                        if running != 0 {
                            out.add(project_tuple(t, proj), mul(mu, running)?)?;
                        }
                        cur = group.next(c);
                    }
                }
            }
            UpRule::Nested { proj } => {
                let sib = sib.unwrap();
                for (s, d) in delta.iter() {
                    sib.probe::<TRepError>(s, &scratch, &mut |t, mu| {
                        let tu: Tuple = proj
                            .iter()
                            .map(|&(side, c)| match side {
                                Side::P => s[c].clone(),
                                Side::I => t[c].clone(),
                            })
                            .collect();
                        out.add(tu, mul(d, mu as i128)?)?;
                        Ok(())
                    })?;
                }
            }
        }
        Ok(out)
    }

    fn apply_delta(&mut self, n: NodeId, delta: &Gmr) -> Result<(), TRepError> {
        let st = self.state[n].as_mut().unwrap();
        for (t, m) in delta.iter() {
            st.rho.add(t.clone(), m)?;
            if let Some(x) = &mut st.enum_index {
                x.add(t, m)?;
            }
            if let Some(x) = &mut st.sib_index {
                x.add(t, m)?;
            }
        }
        Ok(())
    }

    /// One change of one leaf, pushed up until the delta vanishes.
    fn pass(&mut self, leaf: NodeId, t: Tuple, m: i64) -> Result<BTreeMap<NodeId, Gmr>, TRepError> {
        let mut path = BTreeMap::new();
        let mut n = leaf;
        let mut delta = Gmr::new(self.info(leaf).vars.clone());
        delta.add(t, m)?;
        loop {
            let up = match self.info(n).parent {
                Some(p) => Some((p, self.propagate(n, &delta)?)),
                None => None,
            };
            self.apply_delta(n, &delta)?;
            path.insert(n, delta);
            match up {
                Some((p, d)) if !d.is_empty() => {
                    n = p;
                    delta = d;
                }
                _ => break,
            }
        }
        Ok(path)
    }

    /// Applies `u` and returns the per-node deltas. Rows of relations the
    /// query does not mention are ignored. The update is rejected without
    /// any change if it would make the database non-positive or mixes value
    /// kinds; after an overflow the representation is unusable.
    pub fn update(&mut self, u: &Update) -> Result<DeltaSet, TRepError> {
        self.run_update(u, true)
    }

    /// Like [`TRep::update`] but keeps no deltas.
    pub fn apply(&mut self, u: &Update) -> Result<(), TRepError> {
        self.run_update(u, false).map(|_| ())
    }

    fn run_update(&mut self, u: &Update, track: bool) -> Result<DeltaSet, TRepError> {
        let mut relevant = Update::new();
        let mut work: Vec<(NodeId, Tuple, i64)> = Vec::new();
        let mut pending = BTreeMap::new();
        for (rel, row, m) in u.entries() {
            let Some(leaves) = self.leaves_of.get(&rel) else { continue };
            let arity = self.db.relation(&rel).unwrap().arity();
            if row.len() != arity {
                return Err(QueryError::Arity {
                    relation: rel.to_string(),
                    a: arity,
                    b: row.len(),
                }
                .into());
            }
            for &l in leaves {
                let i = self.info(l);
                if let Some(t) = i.atom.as_ref().unwrap().row_to_tuple(&row) {
                    self.kinds.check(&i.vars, &t, &mut pending)?;
                    work.push((l, t, m));
                }
            }
            relevant.add(&rel, row, m)?;
        }
        self.db.check_update(&relevant)?;
        self.kinds.commit(pending);
        self.db.apply(&relevant)?;
        self.epoch += 1;
        let mut ds = DeltaSet {
            epoch: self.epoch,
            passes: work.len(),
            nodes: BTreeMap::new(),
            merged: None,
        };
        let many = work.len() > 1;
        if many && track {
            ds.merged = Some(Gmr::new(self.out_vars.clone()));
        }
        for (leaf, t, m) in work {
            let path = self.pass(leaf, t, m)?;
            if !track {
                continue;
            }
            if let Some(acc) = &mut ds.merged {
                self.walk(Some(&path), &mut |buf: &mut Vec<Value>, m| {
                    acc.add(buf.clone(), m)?;
                    Ok::<(), TRepError>(())
                })?;
            }
            for (n, d) in path {
                match ds.nodes.get_mut(&n) {
                    Some(g) if many => {
                        for (t, m) in d.iter() {
                            g.add(t.clone(), m)?;
                        }
                    }
                    _ => {
                        ds.nodes.insert(n, d);
                    }
                }
            }
        }
        Ok(ds)
    }

    /// Calls `f` once per result tuple (over [`TRep::output_vars`]) with its
    /// multiplicity.
    pub fn for_each<E: From<TRepError>>(&self, mut f: impl FnMut(&[Value], i64) -> Result<(), E>) -> Result<(), E> {
        self.walk(None, &mut |buf: &mut Vec<Value>, m| f(buf, m))
    }

    /// The result as a GMR over [`TRep::output_vars`].
    pub fn enumerate(&self) -> Result<Gmr, TRepError> {
        let mut g = Gmr::new(self.out_vars.clone());
        self.for_each(|t, m| {
            g.add(t.to_vec(), m)?;
            Ok::<(), TRepError>(())
        })?;
        Ok(g)
    }

    /// Calls `f` once per tuple of the change in the result caused by the
    /// update that produced `d`, which must be the latest one.
    pub fn for_each_delta<E: From<TRepError>>(&self, d: &DeltaSet, mut f: impl FnMut(&[Value], i64) -> Result<(), E>) -> Result<(), E> {
        if d.epoch != self.epoch {
            return Err(TRepError::StaleDelta.into());
        }
        if let Some(g) = &d.merged {
            for (t, m) in g.iter() {
                f(t, m)?;
            }
            return Ok(());
        }
        self.walk(Some(&d.nodes), &mut |buf: &mut Vec<Value>, m| f(buf, m))
    }

    pub fn delta_enumerate(&self, d: &DeltaSet) -> Result<Gmr, TRepError> {
        let mut g = Gmr::new(self.out_vars.clone());
        self.for_each_delta(d, |t, m| {
            g.add(t.to_vec(), m)?;
            Ok::<(), TRepError>(())
        })?;
        Ok(g)
    }

    /// Enumerates the reduct, or with `path` the deltas of a single pass in
    /// place of the reduct along that path.
    fn walk<E: From<TRepError>>(&self, path: Option<&BTreeMap<NodeId, Gmr>>, k: &mut Emit<'_, E>) -> Result<(), E> {
        let root = self.pair.tree.root();
        let mut overlay: BTreeMap<NodeId, Index> = BTreeMap::new();
        let top = match path {
            None => &self.state(root).rho,
            Some(path) => {
                let Some(top) = path.get(&root) else { return Ok(()) };
                for (&n, d) in path {
                    if let Some(spec) = &self.info(n).enum_spec {
                        let mut x = Index::new(spec.clone());
                        for (t, m) in d.iter() {
                            x.add(t, m)?;
                        }
                        overlay.insert(n, x);
                    }
                }
                top
            }
        };
        let mut buf = vec![Value::Int(0); self.out_vars.len()];
        for (t, m) in top.iter() {
            self.probes.set(self.probes.get() + 1);
            self.expand(root, t, m, &overlay, &mut buf, k)?;
        }
        Ok(())
    }

    fn expand<E: From<TRepError>>(
        &self,
        n: NodeId,
        t: &Tuple,
        m: i64,
        overlay: &BTreeMap<NodeId, Index>,
        buf: &mut Vec<Value>,
        k: &mut Emit<'_, E>,
    ) -> Result<(), E> {
        let i = self.info(n);
        for (&c, v) in i.out_cols.iter().zip(t) {
            buf[c] = v.clone();
        }
        let index = |c: NodeId| overlay.get(&c).unwrap_or_else(|| self.state(c).enum_index.as_ref().unwrap());
        match i.expand[..] {
            [] => k(buf, m),
            [c] => index(c).probe(t, &self.probes, &mut |s, ms| self.expand(c, s, ms, overlay, buf, k)),
            [c1, c2] => {
                let (x1, x2) = (index(c1), index(c2));
                x1.probe(t, &self.probes, &mut |s1, m1| {
                    self.expand(c1, s1, m1, overlay, buf, &mut |buf, mu| {
                        x2.probe(t, &self.probes, &mut |s2, m2| {
                            self.expand(c2, s2, m2, overlay, buf, &mut |buf, nu| k(buf, mul(mu, nu as i128)?))
                        })
                    })
                })
            }
            _ => unreachable!("binary plan"),
        }
    }

    /// Per node: label, reduct and the group keys of its indices.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let t = &self.pair.tree;
        for n in t.ids() {
            let st = self.state(n);
            let label = match t.node(n).label() {
                Label::Leaf(a) => format!("{a}"),
                Label::Interior(e) => format!("{e}"),
            };
            let star = if self.pair.connex.contains(&n) { " *" } else { "" };
            let _ = writeln!(s, "node {n} {label}{star}");
            for line in format!("{}", st.rho).lines() {
                let _ = writeln!(s, "  {line}");
            }
            for (name, x) in [("P", &st.enum_index), ("S", &st.sib_index)] {
                if let Some(x) = x {
                    let mut keys: Vec<String> = x
                        .groups()
                        .map(|(k, g)| {
                            let vals: Vec<String> = k.iter().map(|v| format!("{v}")).collect();
                            format!("({})x{}", vals.join(","), g.len())
                        })
                        .collect();
                    keys.sort();
                    let _ = writeln!(s, "  {name} groups: {}", keys.join(" "));
                }
            }
        }
        s
    }

    #[cfg(test)]
    fn check_sorted_invariants(&self) {
        for st in self.state.iter().flatten() {
            for x in [&st.enum_index, &st.sib_index].into_iter().flatten() {
                let total: usize = x.groups().map(|(_, g)| g.len()).sum();
                assert_eq!(total, x.entries());
            }
        }
    }
}

/// A result that is kept materialized, for queries whose free variables are
/// not free-connex: the representation covers a free-connex superset and its
/// deltas are projected and folded into the view.
pub struct MaterializedView {
    rep: TRep,
    out: Hyperedge,
    proj: Vec<usize>,
    view: Gmr,
    free_connex: bool,
}

impl MaterializedView {
    pub fn build(q: &Gcq, db: &Database) -> Result<Self, TRepError> {
        let free_connex = match classify(q) {
            Verdict::Cyclic => return Err(TRepError::NotAcyclic),
            Verdict::FreeConnex => true,
            Verdict::Acyclic { .. } => false,
        };
        let rep = TRep::for_query(q, db)?;
        let out = q.out().clone();
        let proj = rep.output_vars().positions_of(&out);
        let mut view = Gmr::new(out.clone());
        rep.for_each(|t, m| {
            view.add(project_tuple(t, &proj), m)?;
            Ok::<(), TRepError>(())
        })?;
        Ok(MaterializedView {
            rep,
            out,
            proj,
            view,
            free_connex,
        })
    }

    /// Applies `u` and returns the change of the view, duplicates merged.
    pub fn update(&mut self, u: &Update) -> Result<Gmr, TRepError> {
        let d = self.rep.update(u)?;
        let mut delta = Gmr::new(self.out.clone());
        let proj = &self.proj;
        self.rep.for_each_delta(&d, |t, m| {
            delta.add(project_tuple(t, proj), m)?;
            Ok::<(), TRepError>(())
        })?;
        for (t, m) in delta.iter() {
            self.view.add(t.clone(), m)?;
        }
        Ok(delta)
    }

    pub fn view(&self) -> &Gmr {
        &self.view
    }

    pub fn rep(&self) -> &TRep {
        &self.rep
    }

    /// The query did not need materializing; the view is kept anyway.
    pub fn is_free_connex(&self) -> bool {
        self.free_connex
    }

    /// Stored tuples, view included.
    pub fn live_tuples(&self) -> usize {
        self.rep.live_tuples() + self.view.len()
    }
}

/// Builds the materialized fallback for an acyclic query.
pub fn fallback_build(q: &Gcq, db: &Database) -> Result<MaterializedView, TRepError> {
    MaterializedView::build(q, db)
}
