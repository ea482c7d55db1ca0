//! The generalized GYO reduction on hypergraph triplets `(H, free, preds)`:
//! acyclicity and free-connex tests, and plan construction by replaying the
//! reduction on a forest of partial join trees.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::fmt;

use crate::gjt::{binarize, to_sibling_closed, ConnexSet, Gjt, GjtPair, Label, NodeId};
use crate::gmr::{Hyperedge, Var};
use crate::query::{pred_vars, Gcq, Predicate};

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HypergraphTriplet {
    pub edges: BTreeSet<Hyperedge>,
    pub free: Hyperedge,
    pub preds: BTreeSet<Predicate>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ReductionStep {
    /// Remove isolated variables `vars` from `edge`.
    Iso { edge: Hyperedge, vars: Hyperedge },
    /// Remove `edge`, which is a conditional subset of `target`.
    Cse { edge: Hyperedge, target: Hyperedge },
    /// Remove the predicates `preds`, all of whose variables lie in `edge`.
    Flt { edge: Hyperedge, preds: BTreeSet<Predicate> },
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum GyoError {
    #[error("step {0:?} does not apply")]
    NotApplicable(ReductionStep),
    #[error("query is cyclic")]
    CyclicQuery,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Cyclic,
    /// Acyclic but not free-connex; `minimal_out` is the smallest output set
    /// for which the query becomes free-connex.
    Acyclic {
        minimal_out: Hyperedge,
    },
    FreeConnex,
}

impl HypergraphTriplet {
    /// Empty hyperedges are dropped.
    pub fn new(edges: impl IntoIterator<Item = Hyperedge>, free: Hyperedge, preds: impl IntoIterator<Item = Predicate>) -> Self {
        HypergraphTriplet {
            edges: edges.into_iter().filter(|e| !e.is_empty()).collect(),
            free,
            preds: preds.into_iter().collect(),
        }
    }

    pub fn vars(&self) -> Hyperedge {
        Hyperedge::new(self.edges.iter().flat_map(|e| e.iter()))
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty() && self.preds.is_empty()
    }

    /// The same hypergraph and predicates with no free variables.
    pub fn residual(&self) -> HypergraphTriplet {
        HypergraphTriplet {
            edges: self.edges.clone(),
            free: Hyperedge::empty(),
            preds: self.preds.clone(),
        }
    }

    /// Free variables plus variables shared by two or more hyperedges.
    fn equijoin_all(&self) -> Hyperedge {
        let mut seen: BTreeSet<&Var> = BTreeSet::new();
        let mut multi: Vec<Var> = self.free.vars().to_vec();
        for e in &self.edges {
            for v in e {
                if !seen.insert(v) {
                    multi.push(v.clone());
                }
            }
        }
        Hyperedge::new(multi)
    }

    pub fn equijoinvars(&self, e: &Hyperedge) -> Hyperedge {
        e.intersect(&self.equijoin_all())
    }

    /// Variables of `e` that are neither equijoin variables nor mentioned by
    /// any predicate.
    pub fn isolated(&self, e: &Hyperedge) -> Hyperedge {
        e.minus(&self.equijoin_all()).minus(&pred_vars(&self.preds))
    }

    /// Variables outside `x` that share a predicate with a variable of `x`.
    pub fn ext(&self, x: &Hyperedge) -> Hyperedge {
        pred_vars(self.preds.iter().filter(|p| !p.vars().is_disjoint(x))).minus(x)
    }

    /// The conditional-subset test `e ⊑ f`.
    pub fn cse(&self, e: &Hyperedge, f: &Hyperedge) -> bool {
        self.equijoinvars(e).is_subset(f) && self.ext(&e.minus(f)).is_subset(f)
    }

    /// Applicable steps in the planner's preference order: filters first, then
    /// isolated-variable removals (maximal sets), then conditional subsets
    /// (smallest target first); within a kind by hyperedge.
    pub fn applicable_steps(&self) -> Vec<ReductionStep> {
        let mut out = Vec::new();
        for e in &self.edges {
            let preds: BTreeSet<Predicate> = self.preds.iter().filter(|p| p.vars().is_subset(e)).cloned().collect();
            if !preds.is_empty() {
                out.push(ReductionStep::Flt { edge: e.clone(), preds });
            }
        }
        for e in &self.edges {
            let iso = self.isolated(e);
            if !iso.is_empty() {
                out.push(ReductionStep::Iso {
                    edge: e.clone(),
                    vars: iso,
                });
            }
        }
        for e in &self.edges {
            let mut targets: Vec<&Hyperedge> = self.edges.iter().filter(|f| *f != e && self.cse(e, f)).collect();
            targets.sort_by(|a, b| (a.len(), *a).cmp(&(b.len(), *b)));
            for f in targets {
                out.push(ReductionStep::Cse {
                    edge: e.clone(),
                    target: f.clone(),
                });
            }
        }
        out
    }

    pub fn is_applicable(&self, step: &ReductionStep) -> bool {
        match step {
            ReductionStep::Iso { edge, vars } => self.edges.contains(edge) && !vars.is_empty() && vars.is_subset(&self.isolated(edge)),
            ReductionStep::Cse { edge, target } => {
                edge != target && self.edges.contains(edge) && self.edges.contains(target) && self.cse(edge, target)
            }
            ReductionStep::Flt { edge, preds } => {
                self.edges.contains(edge) && !preds.is_empty() && preds.is_subset(&self.preds) && pred_vars(preds).is_subset(edge)
            }
        }
    }

    pub fn apply(&self, step: &ReductionStep) -> Result<HypergraphTriplet, GyoError> {
        if !self.is_applicable(step) {
            return Err(GyoError::NotApplicable(step.clone()));
        }
        let mut out = self.clone();
        match step {
            ReductionStep::Iso { edge, vars } => {
                out.edges.remove(edge);
                let rest = edge.minus(vars);
                if !rest.is_empty() {
                    out.edges.insert(rest);
                }
            }
            ReductionStep::Cse { edge, target } => {
                out.edges.remove(edge);
                let gone = edge.minus(target);
                out.preds.retain(|p| p.vars().is_disjoint(&gone));
            }
            ReductionStep::Flt { preds, .. } => {
                out.preds.retain(|p| !preds.contains(p));
            }
        }
        Ok(out)
    }

    /// Reduces with the preference order until no step applies.
    pub fn normal_form(&self) -> HypergraphTriplet {
        let mut cur = self.clone();
        while let Some(step) = cur.applicable_steps().into_iter().next() {
            cur = cur.apply(&step).expect("listed step applies");
        }
        cur
    }
}

impl fmt::Debug for HypergraphTriplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:?}, {}, {:?})", self.edges, self.free, self.preds)
    }
}

/// Decides whether `q` is cyclic, acyclic, or free-connex acyclic.
pub fn classify(q: &Gcq) -> Verdict {
    let i = q.hypertrip().normal_form();
    let j = i.residual().normal_form();
    if !j.is_empty() {
        Verdict::Cyclic
    } else if &i.vars() == q.out() {
        Verdict::FreeConnex
    } else {
        Verdict::Acyclic { minimal_out: i.vars() }
    }
}

/// A forest of partial join trees together with the free variables and the
/// predicates not yet placed on an edge.
#[derive(Clone, Debug)]
pub struct ForestTriplet {
    pub tree: Gjt,
    pub roots: BTreeSet<NodeId>,
    pub free: Hyperedge,
    pub preds: BTreeSet<Predicate>,
}

impl ForestTriplet {
    /// One leaf per atom of `q`.
    pub fn of_query(q: &Gcq) -> Self {
        let mut tree = Gjt::forest();
        let roots = q.atoms().iter().map(|a| tree.forest_create(Label::Leaf(a.clone()))).collect();
        ForestTriplet {
            tree,
            roots,
            free: q.out().clone(),
            preds: q.preds().clone(),
        }
    }

    pub fn hypertrip(&self) -> HypergraphTriplet {
        HypergraphTriplet::new(
            self.roots.iter().map(|&r| self.tree.vars(r).clone()),
            self.free.clone(),
            self.preds.iter().cloned(),
        )
    }

    /// Puts all roots labelled `e` under one new node labelled `e`, with
    /// `preds` on each new edge.
    fn merge_roots(&mut self, e: &Hyperedge, preds: &BTreeSet<Predicate>) -> NodeId {
        let group: Vec<NodeId> = self.roots.iter().copied().filter(|&r| self.tree.vars(r) == e).collect();
        let n = self.tree.forest_create(Label::Interior(e.clone()));
        for r in group {
            self.roots.remove(&r);
            self.tree.forest_attach(n, r, preds.clone());
        }
        n
    }

    /// Performs `step` on the forest so that the hypergraph triplet of the
    /// result is `self.hypertrip().apply(step)`.
    pub fn enact(&self, step: &ReductionStep) -> Result<ForestTriplet, GyoError> {
        if !self.hypertrip().is_applicable(step) {
            return Err(GyoError::NotApplicable(step.clone()));
        }
        let mut f = self.clone();
        let none = BTreeSet::new();
        match step {
            ReductionStep::Iso { edge, vars } => {
                let n = f.merge_roots(edge, &none);
                let p = f.tree.forest_create(Label::Interior(edge.minus(vars)));
                f.tree.forest_attach(p, n, none);
                f.roots.insert(p);
            }
            ReductionStep::Cse { edge, target } => {
                let gone = edge.minus(target);
                let moved: BTreeSet<Predicate> = f.preds.iter().filter(|p| !p.vars().is_disjoint(&gone)).cloned().collect();
                let n = f.merge_roots(edge, &none);
                let m = f.merge_roots(target, &none);
                let p = f.tree.forest_create(Label::Interior(target.clone()));
                f.preds.retain(|p| !moved.contains(p));
                f.tree.forest_attach(p, n, moved);
                f.tree.forest_attach(p, m, none);
                f.roots.insert(p);
            }
            ReductionStep::Flt { edge, preds } => {
                let n = f.merge_roots(edge, preds);
                f.preds.retain(|p| !preds.contains(p));
                f.roots.insert(n);
            }
        }
        Ok(f)
    }

    fn reduce(&mut self) {
        while let Some(step) = self.hypertrip().applicable_steps().into_iter().next() {
            *self = self.enact(&step).expect("listed step applies");
        }
    }
}

/// Builds a binary, sibling-closed GJT pair for an acyclic query. `var(N)`
/// is the output of `q` if `q` is free-connex, and the smallest free-connex
/// superset of it otherwise.
pub fn build_plan(q: &Gcq) -> Result<GjtPair, GyoError> {
    let mut f = ForestTriplet::of_query(q);
    f.reduce();
    let x: Vec<NodeId> = f.roots.iter().copied().collect();
    f.free = Hyperedge::empty();
    f.reduce();
    if !f.hypertrip().is_empty() {
        return Err(GyoError::CyclicQuery);
    }
    let mut tree = f.tree;
    let root = tree.forest_create(Label::Interior(Hyperedge::empty()));
    for &r in &f.roots {
        tree.forest_attach(root, r, BTreeSet::new());
    }
    tree.set_root(root);
    let mut connex: ConnexSet = ConnexSet::new();
    let mut stack = x;
    while let Some(n) = stack.pop() {
        if connex.insert(n) {
            if let Some(p) = tree.parent(n) {
                stack.push(p);
            }
        }
    }
    connex.insert(root);
    let pair = to_sibling_closed(&GjtPair::new(tree, connex));
    Ok(binarize(&pair).expect("sibling-closed"))
}
