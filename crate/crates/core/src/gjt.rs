//! Generalized join trees (GJTs), connex subsets, and the transformations
//! that turn an arbitrary GJT pair into a binary, sibling-closed or canonical
//! one without changing the query it computes.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::gmr::{Hyperedge, Var};
use crate::query::{pred_vars, Atom, Gcq, Predicate};

pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Label {
    Leaf(Atom),
    Interior(Hyperedge),
}

#[derive(Clone, Debug)]
pub struct Node {
    label: Label,
    vars: Hyperedge,
    parent: Option<NodeId>,
    children: Vec<NodeId>,
    /// Predicates on the edge from the parent into this node.
    preds: BTreeSet<Predicate>,
}

impl Node {
    pub fn label(&self) -> &Label {
        &self.label
    }

    pub fn vars(&self) -> &Hyperedge {
        &self.vars
    }

    pub fn parent(&self) -> Option<NodeId> {
        self.parent
    }

    pub fn children(&self) -> &[NodeId] {
        &self.children
    }

    pub fn edge_preds(&self) -> &BTreeSet<Predicate> {
        &self.preds
    }

    pub fn atom(&self) -> Option<&Atom> {
        match &self.label {
            Label::Leaf(a) => Some(a),
            Label::Interior(_) => None,
        }
    }

    pub fn is_interior(&self) -> bool {
        matches!(self.label, Label::Interior(_))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    /// An interior node without children.
    EmptyInterior(NodeId),
    /// A leaf-labelled node with children.
    AtomWithChildren(NodeId),
    NoGuard(NodeId),
    Disconnected(Var),
    PredicateOutOfScope {
        child: NodeId,
        pred: Predicate,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum GjtError {
    #[error("node {0} is not a violator of the required type")]
    NotAViolator(NodeId),
    #[error("connex set is not sibling-closed")]
    NotSiblingClosed,
    #[error("no node {0}")]
    UnknownNode(NodeId),
}

/// A rooted tree whose leaves are atoms and whose interior nodes are
/// hyperedges, with a predicate set on every edge. Node ids are stable.
#[derive(Clone, Debug)]
pub struct Gjt {
    nodes: BTreeMap<NodeId, Node>,
    root: NodeId,
    next: NodeId,
}

impl Gjt {
    /// A tree with a single node.
    pub fn new(root: Label) -> Self {
        let mut t = Gjt {
            nodes: BTreeMap::new(),
            root: 0,
            next: 0,
        };
        t.root = t.create(root);
        t
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[&id]
    }

    pub fn get(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(&id)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    pub fn vars(&self, id: NodeId) -> &Hyperedge {
        &self.nodes[&id].vars
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[&id].parent
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[&id].children
    }

    pub fn edge_preds(&self, id: NodeId) -> &BTreeSet<Predicate> {
        &self.nodes[&id].preds
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.nodes[&id].children.is_empty()
    }

    /// The other child of this node's parent, if the parent is binary.
    pub fn sibling(&self, id: NodeId) -> Option<NodeId> {
        let p = self.parent(id)?;
        let ch = self.children(p);
        if ch.len() == 2 {
            Some(if ch[0] == id { ch[1] } else { ch[0] })
        } else {
            None
        }
    }

    /// Union of the predicates on the edges to this node's children.
    pub fn node_preds(&self, id: NodeId) -> BTreeSet<Predicate> {
        self.children(id).iter().flat_map(|c| self.edge_preds(*c).iter().cloned()).collect()
    }

    /// All predicates on all edges.
    pub fn preds(&self) -> BTreeSet<Predicate> {
        self.nodes.values().flat_map(|n| n.preds.iter().cloned()).collect()
    }

    pub fn leaves(&self) -> Vec<NodeId> {
        self.ids().filter(|&n| self.is_leaf(n)).collect()
    }

    /// Leaf atoms keyed by relation and argument list, with counts.
    pub fn atom_multiset(&self) -> BTreeMap<(String, Vec<Var>), usize> {
        let mut m = BTreeMap::new();
        for n in self.nodes.values() {
            if let Some(a) = n.atom() {
                *m.entry((String::from(&*a.relation), a.args.clone())).or_insert(0) += 1;
            }
        }
        m
    }

    /// True if `c` is a child of `n` with `var(n) ⊆ var(c)`.
    pub fn is_guard(&self, c: NodeId, n: NodeId) -> bool {
        self.parent(c) == Some(n) && self.vars(n).is_subset(self.vars(c))
    }

    pub fn guard_children(&self, n: NodeId) -> Vec<NodeId> {
        self.children(n).iter().copied().filter(|&c| self.is_guard(c, n)).collect()
    }

    /// Nodes of the subtree rooted at `n`, children before parents.
    pub fn post_order_from(&self, n: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![(n, false)];
        while let Some((id, expanded)) = stack.pop() {
            if expanded {
                out.push(id);
            } else {
                stack.push((id, true));
                for &c in self.children(id).iter().rev() {
                    stack.push((c, false));
                }
            }
        }
        out
    }

    pub fn post_order(&self) -> Vec<NodeId> {
        self.post_order_from(self.root)
    }

    pub fn is_ancestor(&self, a: NodeId, mut d: NodeId) -> bool {
        while let Some(p) = self.parent(d) {
            if p == a {
                return true;
            }
            d = p;
        }
        false
    }

    /// The query computed by the subtree at `n`: its leaf atoms, the
    /// predicates on edges inside the subtree, projected onto `var(n)`.
    pub fn subtree_query(&self, n: NodeId) -> Gcq {
        let nodes = self.post_order_from(n);
        let atoms: Vec<Atom> = nodes.iter().filter_map(|&i| self.node(i).atom().cloned()).collect();
        let preds: Vec<Predicate> = nodes
            .iter()
            .filter(|&&i| i != n)
            .flat_map(|&i| self.edge_preds(i).iter().cloned())
            .collect();
        Gcq::new(atoms, preds, self.vars(n).clone()).expect("subtree of a valid tree is a valid query")
    }

    fn create(&mut self, label: Label) -> NodeId {
        let vars = match &label {
            Label::Leaf(a) => a.vars(),
            Label::Interior(e) => e.clone(),
        };
        let id = self.next;
        self.next += 1;
        self.nodes.insert(
            id,
            Node {
                label,
                vars,
                parent: None,
                children: Vec::new(),
                preds: BTreeSet::new(),
            },
        );
        id
    }

    fn attach(&mut self, parent: NodeId, child: NodeId, preds: BTreeSet<Predicate>) {
        let c = self.nodes.get_mut(&child).unwrap();
        debug_assert!(c.parent.is_none());
        c.parent = Some(parent);
        c.preds = preds;
        let ch = &mut self.nodes.get_mut(&parent).unwrap().children;
        let pos = ch.binary_search(&child).unwrap_err();
        ch.insert(pos, child);
    }

    fn detach(&mut self, child: NodeId) -> BTreeSet<Predicate> {
        let c = self.nodes.get_mut(&child).unwrap();
        let p = c.parent.take().expect("detaching the root");
        let preds = core::mem::take(&mut c.preds);
        self.nodes.get_mut(&p).unwrap().children.retain(|&x| x != child);
        preds
    }

    /// Adds a new node under `parent` with predicates `preds` on the new edge.
    pub fn add_child(&mut self, parent: NodeId, label: Label, preds: impl IntoIterator<Item = Predicate>) -> NodeId {
        let id = self.create(label);
        self.attach(parent, id, preds.into_iter().collect());
        id
    }

    /// Puts a fresh interior root labelled `vars` above the current root.
    pub fn add_root(&mut self, vars: Hyperedge) -> NodeId {
        let old = self.root;
        let id = self.create(Label::Interior(vars));
        self.attach(id, old, BTreeSet::new());
        self.root = id;
        id
    }

    /// Builds a tree out of detached pieces; used by the planner.
    pub(crate) fn forest() -> Self {
        Gjt {
            nodes: BTreeMap::new(),
            root: usize::MAX,
            next: 0,
        }
    }

    pub(crate) fn forest_create(&mut self, label: Label) -> NodeId {
        self.create(label)
    }

    pub(crate) fn forest_attach(&mut self, parent: NodeId, child: NodeId, preds: BTreeSet<Predicate>) {
        self.attach(parent, child, preds)
    }

    pub(crate) fn set_root(&mut self, root: NodeId) {
        self.root = root;
    }

    /// Checks leaf labelling, guards, connectedness and predicate scoping.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (&id, n) in &self.nodes {
            match (&n.label, n.children.is_empty()) {
                (Label::Interior(_), true) => out.push(Violation::EmptyInterior(id)),
                (Label::Leaf(_), false) => out.push(Violation::AtomWithChildren(id)),
                (Label::Interior(_), false) if self.guard_children(id).is_empty() => out.push(Violation::NoGuard(id)),
                _ => {}
            }
            if let Some(p) = n.parent {
                let scope = self.vars(p).union(&n.vars);
                for th in &n.preds {
                    if !th.vars().is_subset(&scope) {
                        out.push(Violation::PredicateOutOfScope {
                            child: id,
                            pred: th.clone(),
                        });
                    }
                }
            }
        }
        // A variable is connected iff at most one node holding it has a
        // parent that does not hold it (or no parent).
        let mut tops: BTreeMap<&Var, usize> = BTreeMap::new();
        for n in self.nodes.values() {
            for v in n.vars.iter() {
                let top = match n.parent {
                    Some(p) => !self.vars(p).contains(v),
                    None => true,
                };
                if top {
                    *tops.entry(v).or_insert(0) += 1;
                }
            }
        }
        for (v, k) in tops {
            if k > 1 {
                out.push(Violation::Disconnected(v.clone()));
            }
        }
        out
    }

    /// True if this is a valid GJT whose leaves are exactly the atoms of `q`
    /// (as a multiset) and whose edge predicates are exactly `q`'s predicates.
    pub fn is_gjt_for(&self, q: &Gcq) -> bool {
        let mut atoms = BTreeMap::new();
        for a in q.atoms() {
            *atoms.entry((String::from(&*a.relation), a.args.clone())).or_insert(0) += 1;
        }
        self.validate().is_empty() && self.atom_multiset() == atoms && &self.preds() == q.preds()
    }
}

/// A connex subset of a GJT.
pub type ConnexSet = BTreeSet<NodeId>;

#[derive(Clone, Debug)]
pub struct GjtPair {
    pub tree: Gjt,
    pub connex: ConnexSet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolatorKind {
    /// Some child in N is a guard.
    Type1,
    Type2,
}

impl GjtPair {
    pub fn new(tree: Gjt, connex: ConnexSet) -> Self {
        GjtPair { tree, connex }
    }

    /// Contains the root and is closed under taking parents.
    pub fn is_connex(&self) -> bool {
        self.connex.contains(&self.tree.root())
            && self
                .connex
                .iter()
                .all(|&n| self.tree.contains(n) && self.tree.parent(n).map_or(n == self.tree.root(), |p| self.connex.contains(&p)))
    }

    /// Nodes of N none of whose children are in N.
    pub fn frontier(&self) -> BTreeSet<NodeId> {
        self.connex
            .iter()
            .copied()
            .filter(|&n| !self.tree.children(n).iter().any(|c| self.connex.contains(c)))
            .collect()
    }

    /// `var(N)`.
    pub fn connex_vars(&self) -> Hyperedge {
        Hyperedge::new(self.connex.iter().flat_map(|&n| self.tree.vars(n).iter()))
    }

    pub fn violators(&self) -> Vec<(NodeId, ViolatorKind)> {
        let mut out = Vec::new();
        for &n in &self.connex {
            let ch = self.tree.children(n);
            let inside: Vec<NodeId> = ch.iter().copied().filter(|c| self.connex.contains(c)).collect();
            if !inside.is_empty() && inside.len() < ch.len() {
                let kind = if inside.iter().any(|&c| self.tree.is_guard(c, n)) {
                    ViolatorKind::Type1
                } else {
                    ViolatorKind::Type2
                };
                out.push((n, kind));
            }
        }
        out
    }

    pub fn is_sibling_closed(&self) -> bool {
        self.violators().is_empty()
    }

    pub fn is_binary(&self) -> bool {
        self.tree.ids().all(|n| self.tree.children(n).len() <= 2)
    }

    /// `T` is a GJT for `q`, N is connex and `var(N)` equals the output of `q`.
    pub fn is_compatible(&self, q: &Gcq) -> bool {
        self.tree.is_gjt_for(q) && self.is_connex() && &self.connex_vars() == q.out()
    }

    /// Same atoms, predicates and `var(N)`: the pairs compute the same query.
    pub fn equivalent(&self, other: &GjtPair) -> bool {
        self.tree.atom_multiset() == other.tree.atom_multiset()
            && self.tree.preds() == other.tree.preds()
            && self.connex_vars() == other.connex_vars()
    }
}

/// Removes a type-1 violator by routing `n`'s children outside N through a
/// new node placed just above a leaf guard of `n`'s guard child in N.
pub fn remove_type1_violator(pair: &GjtPair, n: NodeId) -> Result<GjtPair, GjtError> {
    if !pair.violators().contains(&(n, ViolatorKind::Type1)) {
        return Err(GjtError::NotAViolator(n));
    }
    let mut out = pair.clone();
    let t = &mut out.tree;
    let g = t
        .children(n)
        .iter()
        .copied()
        .find(|&c| pair.connex.contains(&c) && t.is_guard(c, n))
        .unwrap();
    let gv = t.vars(g).clone();
    let l = t
        .post_order_from(g)
        .into_iter()
        .filter(|&x| t.is_leaf(x) && gv.is_subset(t.vars(x)))
        .min()
        .expect("every node has a leaf guard below it");
    let outside: Vec<NodeId> = t.children(n).iter().copied().filter(|c| !pair.connex.contains(c)).collect();
    let q = t.parent(l).unwrap();
    let lpreds = t.detach(l);
    let p = t.create(Label::Interior(t.vars(l).clone()));
    t.attach(q, p, lpreds);
    t.attach(p, l, BTreeSet::new());
    for c in outside {
        let preds = t.detach(c);
        t.attach(p, c, preds);
    }
    if out.connex.remove(&l) {
        out.connex.insert(p);
    }
    Ok(out)
}

/// Removes a type-2 violator by pushing `n`'s children outside N under a new
/// child of `n` with the same label, which joins N.
pub fn remove_type2_violator(pair: &GjtPair, n: NodeId) -> Result<GjtPair, GjtError> {
    if !pair.violators().contains(&(n, ViolatorKind::Type2)) {
        return Err(GjtError::NotAViolator(n));
    }
    let mut out = pair.clone();
    let t = &mut out.tree;
    let outside: Vec<NodeId> = t.children(n).iter().copied().filter(|c| !pair.connex.contains(c)).collect();
    let p = t.create(Label::Interior(t.vars(n).clone()));
    for c in outside {
        let preds = t.detach(c);
        t.attach(p, c, preds);
    }
    t.attach(n, p, BTreeSet::new());
    out.connex.insert(p);
    Ok(out)
}

/// Removes violators, smallest id first, until N is sibling-closed.
pub fn to_sibling_closed(pair: &GjtPair) -> GjtPair {
    let mut cur = pair.clone();
    while let Some(&(n, kind)) = cur.violators().first() {
        cur = match kind {
            ViolatorKind::Type1 => remove_type1_violator(&cur, n),
            ViolatorKind::Type2 => remove_type2_violator(&cur, n),
        }
        .expect("violator was just found");
    }
    cur
}

/// Replaces every node with k > 2 children by a left-deep chain of k - 2 new
/// nodes with the same label, the guard child at the bottom.
pub fn binarize(pair: &GjtPair) -> Result<GjtPair, GjtError> {
    if !pair.is_sibling_closed() {
        return Err(GjtError::NotSiblingClosed);
    }
    let mut out = pair.clone();
    let wide: Vec<NodeId> = out.tree.ids().filter(|&n| out.tree.children(n).len() > 2).collect();
    for n in wide {
        let t = &mut out.tree;
        let guard = t.guard_children(n)[0];
        let mut order = vec![guard];
        order.extend(t.children(n).iter().copied().filter(|&c| c != guard));
        let in_n = out.connex.contains(&guard);
        let mut parts: Vec<(NodeId, BTreeSet<Predicate>)> = order.iter().map(|&c| (c, t.detach(c))).collect();
        let (last, last_preds) = parts.pop().unwrap();
        let mut iter = parts.into_iter();
        let (mut prev, mut prev_preds) = iter.next().unwrap();
        let label = t.vars(n).clone();
        for (c, cpreds) in iter {
            let m = t.create(Label::Interior(label.clone()));
            t.attach(m, prev, prev_preds);
            t.attach(m, c, cpreds);
            if in_n {
                out.connex.insert(m);
            }
            prev = m;
            prev_preds = BTreeSet::new();
        }
        t.attach(n, prev, prev_preds);
        t.attach(n, last, last_preds);
    }
    Ok(out)
}

/// Which of the four canonical-form conditions a pair satisfies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CanonicalCheck {
    pub empty_root: bool,
    pub leaf_parents_match: bool,
    pub distinct_interior_labels: bool,
    pub preds_touch_new_vars: bool,
}

impl CanonicalCheck {
    pub fn all(&self) -> bool {
        self.empty_root && self.leaf_parents_match && self.distinct_interior_labels && self.preds_touch_new_vars
    }
}

pub fn check_canonical(t: &Gjt) -> CanonicalCheck {
    let empty_root = t.vars(t.root()).is_empty() && t.node(t.root()).is_interior();
    let leaf_parents_match = t
        .leaves()
        .iter()
        .all(|&l| t.parent(l).is_some_and(|p| t.node(p).is_interior() && t.vars(p) == t.vars(l)));
    let mut labels = BTreeSet::new();
    let distinct_interior_labels = t
        .ids()
        .filter(|&n| t.node(n).is_interior())
        .all(|n| labels.insert(t.vars(n).clone()));
    let preds_touch_new_vars = t.ids().all(|n| match t.parent(n) {
        None => true,
        Some(p) => {
            let fresh = t.vars(n).minus(t.vars(p));
            t.edge_preds(n).iter().all(|th| !th.vars().is_disjoint(&fresh))
        }
    });
    CanonicalCheck {
        empty_root,
        leaf_parents_match,
        distinct_interior_labels,
        preds_touch_new_vars,
    }
}

/// Brings a pair into canonical form: an empty root, every leaf under an
/// interior node with the same label, pairwise distinct interior labels, and
/// every edge predicate mentioning a variable the child adds.
pub fn canonicalize(pair: &GjtPair) -> GjtPair {
    let mut out = pair.clone();
    let root = out.tree.add_root(Hyperedge::empty());
    out.connex.insert(root);
    let t = &mut out.tree;

    // Move each predicate that only mentions parent variables up to the
    // first edge where it does mention a variable new to the child.
    let edges: Vec<NodeId> = t.ids().filter(|&n| t.parent(n).is_some()).collect();
    for n in edges {
        let m = t.parent(n).unwrap();
        let fresh = t.vars(n).minus(t.vars(m));
        let movers: Vec<Predicate> = t.edge_preds(n).iter().filter(|th| th.vars().is_disjoint(&fresh)).cloned().collect();
        for th in movers {
            t.nodes.get_mut(&n).unwrap().preds.remove(&th);
            let tv = th.vars();
            let (mut b, mut a) = (m, t.parent(m).unwrap());
            while tv.is_subset(t.vars(a)) {
                b = a;
                a = t.parent(a).unwrap();
            }
            t.nodes.get_mut(&b).unwrap().preds.insert(th);
        }
    }

    // Give every leaf an interior twin.
    for l in t.leaves() {
        let p = t.parent(l).unwrap();
        let preds = t.detach(l);
        let twin = t.create(Label::Interior(t.vars(l).clone()));
        t.attach(p, twin, preds);
        t.attach(twin, l, BTreeSet::new());
        if out.connex.remove(&l) {
            out.connex.insert(twin);
        }
    }

    loop {
        // Interior children labelled like their interior parent, bottom-up.
        let mut changed = false;
        for n in t.post_order() {
            if !t.contains(n) || !t.node(n).is_interior() {
                continue;
            }
            let Some(m) = t.parent(n) else { continue };
            if t.vars(m) == t.vars(n) {
                merge_into(t, &mut out.connex, n, m);
                changed = true;
            }
        }
        // Equal labels further apart: fold one node into the other. The
        // edge into the removed node cannot carry predicates, because its
        // parent already holds all of its variables.
        let mut by_label: BTreeMap<Hyperedge, Vec<NodeId>> = BTreeMap::new();
        for n in t.ids().filter(|&n| t.node(n).is_interior()) {
            by_label.entry(t.vars(n).clone()).or_default().push(n);
        }
        if let Some(group) = by_label.values().find(|g| g.len() > 1) {
            let (a, b) = (group[0], group[1]);
            let keep_b = !t.is_ancestor(a, b) && (t.is_ancestor(b, a) || (out.connex.contains(&b) && !out.connex.contains(&a)));
            let (gone, keep) = if keep_b { (a, b) } else { (b, a) };
            merge_into(t, &mut out.connex, gone, keep);
            changed = true;
        }
        if !changed {
            break;
        }
    }
    out
}

/// Deletes interior node `gone`, re-attaching its children (with their edge
/// predicates) to `keep`, which carries the same label.
fn merge_into(t: &mut Gjt, connex: &mut ConnexSet, gone: NodeId, keep: NodeId) {
    let incoming = t.detach(gone);
    debug_assert!(incoming.is_empty(), "edge into a merged node carries {incoming:?}");
    for c in t.children(gone).to_vec() {
        let preds = t.detach(c);
        t.attach(keep, c, preds);
    }
    t.nodes.remove(&gone);
    connex.remove(&gone);
}

impl fmt::Display for Gjt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn go(t: &Gjt, n: NodeId, depth: usize, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            for _ in 0..depth {
                f.write_str("  ")?;
            }
            match t.node(n).label() {
                Label::Leaf(a) => write!(f, "#{n} {a}")?,
                Label::Interior(e) => write!(f, "#{n} {e}")?,
            }
            if !t.edge_preds(n).is_empty() {
                let ps: Vec<String> = t.edge_preds(n).iter().map(|p| format!("{p}")).collect();
                write!(f, "  [{}]", ps.join(", "))?;
            }
            f.write_str("\n")?;
            for &c in t.children(n) {
                go(t, c, depth + 1, f)?;
            }
            Ok(())
        }
        go(self, self.root, 0, f)
    }
}

/// Variables of all predicates on edges of `t`.
pub fn tree_pred_vars(t: &Gjt) -> Hyperedge {
    pred_vars(&t.preds())
}
