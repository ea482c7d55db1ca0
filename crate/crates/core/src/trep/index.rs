//! Join indices over a node's GMR.
//!
//! An index stores the tuples of an "indexed" side `I` so that, given a tuple
//! of a "probe" side `P`, the compatible `I` tuples can be listed: equal on
//! `var(I) ∩ var(P)` and satisfying the join predicates. Inequalities
//! between an `I`-only and a `P`-only variable become sort keys; everything
//! else is checked per tuple.

use alloc::vec::Vec;
use core::cell::Cell;

use super::tree::{Bound, Keyed, SortedGroup};
use super::TRepError;
use crate::gmr::{project_tuple, Hyperedge, Tuple, Value};
use crate::query::{CmpOp, Predicate};
use crate::Map;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Side {
    I,
    P,
}

/// A predicate with each variable resolved to a column of one side.
#[derive(Clone, Debug)]
pub(crate) struct CompiledPred {
    pred: Predicate,
    slots: Vec<(Side, usize)>,
}

impl CompiledPred {
    pub(crate) fn new(pred: &Predicate, i_vars: &Hyperedge, p_vars: &Hyperedge) -> Self {
        let slots = pred
            .vars()
            .iter()
            .map(|v| match i_vars.position(v) {
                Some(c) => (Side::I, c),
                None => (Side::P, p_vars.position(v).expect("predicate variable out of scope")),
            })
            .collect();
        CompiledPred { pred: pred.clone(), slots }
    }

    pub(crate) fn eval(&self, i: &[Value], p: &[Value]) -> Result<bool, TRepError> {
        let vars = self.pred.vars();
        let slots = &self.slots;
        let r = self.pred.eval(|v| {
            let (side, c) = slots[vars.position(v)?];
            Some(match side {
                Side::I => &i[c],
                Side::P => &p[c],
            })
        })?;
        Ok(r)
    }
}

/// `I[i_col] op P[p_col]`, with `op` one of `<`, `<=`, `>`, `>=`.
#[derive(Clone, Copy, Debug)]
struct SortCol {
    i_col: usize,
    p_col: usize,
    op: CmpOp,
}

impl SortCol {
    fn desc(&self) -> bool {
        matches!(self.op, CmpOp::Gt | CmpOp::Ge)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct JoinSpec {
    key_i: Vec<usize>,
    key_p: Vec<usize>,
    sort: Vec<SortCol>,
    i_filter: Vec<CompiledPred>,
    p_filter: Vec<CompiledPred>,
    residual: Vec<CompiledPred>,
}

impl JoinSpec {
    pub(crate) fn new<'a>(i_vars: &Hyperedge, p_vars: &Hyperedge, preds: impl IntoIterator<Item = &'a Predicate>) -> Self {
        let shared = i_vars.intersect(p_vars);
        let mut spec = JoinSpec {
            key_i: i_vars.positions_of(&shared),
            key_p: p_vars.positions_of(&shared),
            sort: Vec::new(),
            i_filter: Vec::new(),
            p_filter: Vec::new(),
            residual: Vec::new(),
        };
        for pred in preds {
            let vars = pred.vars();
            if vars.is_subset(i_vars) {
                spec.i_filter.push(CompiledPred::new(pred, i_vars, p_vars));
            } else if vars.is_subset(p_vars) {
                spec.p_filter.push(CompiledPred::new(pred, i_vars, p_vars));
            } else {
                match pred {
                    Predicate::VarVar { lhs, op, rhs } if op.is_inequality() => {
                        let col = if let Some(c) = i_vars.position(lhs) {
                            SortCol {
                                i_col: c,
                                p_col: p_vars.position(rhs).unwrap(),
                                op: *op,
                            }
                        } else {
                            SortCol {
                                i_col: i_vars.position(rhs).unwrap(),
                                p_col: p_vars.position(lhs).unwrap(),
                                op: op.flip(),
                            }
                        };
                        spec.sort.push(col);
                    }
                    _ => spec.residual.push(CompiledPred::new(pred, i_vars, p_vars)),
                }
            }
        }
        spec
    }

    /// At most one sort key and nothing to check per pair: matching
    /// multiplicities can be summed without visiting tuples.
    pub(crate) fn summable(&self) -> bool {
        self.sort.len() <= 1 && self.residual.is_empty()
    }

    pub(crate) fn group_of_i(&self, t: &[Value]) -> Tuple {
        project_tuple(t, &self.key_i)
    }

    pub(crate) fn group_of_p(&self, p: &[Value]) -> Tuple {
        project_tuple(p, &self.key_p)
    }

    pub(crate) fn sort_key(&self, t: &[Value]) -> Vec<Keyed> {
        self.sort.iter().map(|s| Keyed::new(t[s.i_col].clone(), s.desc())).collect()
    }

    /// The first sort key component of a probe tuple, ordered like the index.
    pub(crate) fn probe_key(&self, p: &[Value]) -> Option<Keyed> {
        self.sort.first().map(|s| Keyed::new(p[s.p_col].clone(), s.desc()))
    }

    pub(crate) fn bounds<'a>(&self, p: &'a [Value]) -> Vec<Bound<'a>> {
        self.sort
            .iter()
            .map(|s| Bound {
                value: &p[s.p_col],
                op: s.op,
            })
            .collect()
    }

    pub(crate) fn admits_i(&self, t: &[Value]) -> Result<bool, TRepError> {
        for f in &self.i_filter {
            if !f.eval(t, &[])? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub(crate) fn admits_p(&self, p: &[Value]) -> Result<bool, TRepError> {
        for f in &self.p_filter {
            if !f.eval(&[], p)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub(crate) fn residual_holds(&self, t: &[Value], p: &[Value]) -> Result<bool, TRepError> {
        for f in &self.residual {
            if !f.eval(t, p)? {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

pub(crate) struct Index {
    spec: JoinSpec,
    groups: Map<Tuple, SortedGroup>,
    entries: usize,
}

impl Index {
    pub(crate) fn new(spec: JoinSpec) -> Self {
        Index {
            spec,
            groups: Map::default(),
            entries: 0,
        }
    }

    pub(crate) fn spec(&self) -> &JoinSpec {
        &self.spec
    }

    pub(crate) fn entries(&self) -> usize {
        self.entries
    }

    pub(crate) fn groups(&self) -> impl Iterator<Item = (&Tuple, &SortedGroup)> + '_ {
        self.groups.iter()
    }

    pub(crate) fn group(&self, key: &[Value]) -> Option<&SortedGroup> {
        self.groups.get(key)
    }

    pub(crate) fn add(&mut self, t: &Tuple, delta: i64) -> Result<(), TRepError> {
        if delta == 0 || !self.spec.admits_i(t)? {
            return Ok(());
        }
        let key = self.spec.group_of_i(t);
        let sk = self.spec.sort_key(t);
        let group = self.groups.entry(key.clone()).or_insert_with(SortedGroup::new);
        let before = group.len();
        group.add(sk, t.clone(), delta)?;
        let after = group.len();
        self.entries = self.entries + after - before;
        if after == 0 {
            self.groups.remove(&key);
        }
        Ok(())
    }

    /// Calls `f` on every indexed tuple compatible with `p`.
    pub(crate) fn probe<E: From<TRepError>>(
        &self,
        p: &[Value],
        probes: &Cell<u64>,
        f: &mut dyn FnMut(&Tuple, i64) -> Result<(), E>,
    ) -> Result<(), E> {
        probes.set(probes.get() + 1);
        if !self.spec.admits_p(p)? {
            return Ok(());
        }
        let Some(group) = self.groups.get(&self.spec.group_of_p(p)) else {
            return Ok(());
        };
        let bounds = self.spec.bounds(p);
        if self.spec.residual.is_empty() {
            group.scan(&bounds, probes, f)
        } else {
            group.scan(&bounds, probes, &mut |t, m| {
                if self.spec.residual_holds(t, p)? {
                    f(t, m)
                } else {
                    Ok(())
                }
            })
        }
    }

    /// Total multiplicity of the tuples compatible with `p`. Requires
    /// [`JoinSpec::summable`].
    pub(crate) fn matching_sum(&self, p: &[Value], probes: &Cell<u64>) -> Result<i128, TRepError> {
        debug_assert!(self.spec.summable());
        probes.set(probes.get() + 1);
        if !self.spec.admits_p(p)? {
            return Ok(0);
        }
        let Some(group) = self.groups.get(&self.spec.group_of_p(p)) else {
            return Ok(0);
        };
        Ok(match self.spec.bounds(p).first() {
            None => group.total(),
            Some(b) => group.prefix_sum(b, probes),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn he(vs: &[&str]) -> Hyperedge {
        Hyperedge::new(vs.iter().copied())
    }

    fn ints(xs: &[i64]) -> Tuple {
        xs.iter().map(|&x| Value::Int(x)).collect()
    }

    #[test]
    fn predicates_are_split_by_side() {
        let preds = [
            Predicate::var_var("u", CmpOp::Gt, "w"),
            Predicate::var_const("u", CmpOp::Ne, 9),
            Predicate::var_const("y", CmpOp::Lt, 5),
            Predicate::var_var("u", CmpOp::Ne, "y"),
        ];
        let spec = JoinSpec::new(&he(&["u"]), &he(&["w", "y"]), &preds);
        assert_eq!(spec.sort.len(), 1);
        assert_eq!(spec.sort[0].op, CmpOp::Gt);
        assert_eq!((spec.i_filter.len(), spec.p_filter.len(), spec.residual.len()), (1, 1, 1));
        assert!(!spec.summable());
    }

    #[test]
    fn probe_lists_compatible_tuples_in_order() {
        // Index t(u) for probes s(w) with w < u, i.e. u > w: descending on u.
        let preds = [Predicate::var_var("w", CmpOp::Lt, "u")];
        let mut idx = Index::new(JoinSpec::new(&he(&["u"]), &he(&["w"]), &preds));
        for (u, m) in [(4, 7), (2, 4), (9, 1)] {
            idx.add(&ints(&[u]), m).unwrap();
        }
        let probes = Cell::new(0);
        let mut seen = vec![];
        idx.probe::<TRepError>(&ints(&[3]), &probes, &mut |t, m| {
            seen.push((t.clone(), m));
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![(ints(&[9]), 1), (ints(&[4]), 7)]);
        assert_eq!(idx.matching_sum(&ints(&[3]), &probes).unwrap(), 8);
        assert_eq!(idx.matching_sum(&ints(&[1]), &probes).unwrap(), 12);
        idx.add(&ints(&[9]), -1).unwrap();
        assert_eq!(idx.entries(), 2);
        assert_eq!(idx.matching_sum(&ints(&[3]), &probes).unwrap(), 7);
    }
}
