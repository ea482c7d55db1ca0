//! Seeded generators shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use dynjoin_core::gjt::{Gjt, GjtPair, Label};
use dynjoin_core::gmr::{Hyperedge, Value};
use dynjoin_core::gyo::{classify, HypergraphTriplet, Verdict};
use dynjoin_core::query::{Atom, CmpOp, Database, Gcq, Predicate, Update};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const OPS: [CmpOp; 5] = [CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge, CmpOp::Ne];

fn parity(name: &str, vars: Hyperedge) -> Predicate {
    Predicate::opaque(name, vars, |vals| {
        vals.iter()
            .map(|v| match v {
                Value::Int(i) => *i,
                Value::Str(s) => s.len() as i64,
            })
            .sum::<i64>()
            % 2
            == 0
    })
}

fn random_pred(rng: &mut ChaCha8Rng, vars: &[String], k: usize, domain: i64) -> Predicate {
    let roll = rng.gen_range(0..20);
    if roll < 13 && vars.len() >= 2 {
        let mut two: Vec<&String> = vars.choose_multiple(rng, 2).collect();
        two.shuffle(rng);
        Predicate::var_var(two[0], *OPS.choose(rng).unwrap(), two[1])
    } else if roll < 18 {
        let v = vars.choose(rng).unwrap();
        Predicate::var_const(v, *OPS.choose(rng).unwrap(), rng.gen_range(1..=domain))
    } else {
        let n = rng.gen_range(1..=2.min(vars.len()));
        let chosen: Vec<&str> = vars.choose_multiple(rng, n).map(String::as_str).collect();
        parity(&format!("even{k}"), Hyperedge::new(chosen))
    }
}

/// A random acyclic query: atoms are attached to a random earlier atom,
/// sharing some of its variables; predicates are arbitrary, and cyclic
/// results are drawn again.
pub fn random_acyclic_query(rng: &mut ChaCha8Rng, max_atoms: usize, max_preds: usize, domain: i64) -> Gcq {
    loop {
        let k = rng.gen_range(1..=max_atoms);
        let mut atoms: Vec<(String, Vec<String>)> = Vec::new();
        let mut fresh = 0;
        for i in 0..k {
            let arity = rng.gen_range(1..=3);
            let mut args: Vec<String> = Vec::new();
            if i > 0 {
                let j = rng.gen_range(0..i);
                let mut pv: Vec<String> = atoms[j].1.clone();
                pv.sort();
                pv.dedup();
                let share = if rng.gen_bool(0.85) {
                    rng.gen_range(1..=arity.min(pv.len()))
                } else {
                    0
                };
                args.extend(pv.choose_multiple(rng, share).cloned());
            }
            while args.len() < arity {
                if !args.is_empty() && rng.gen_bool(0.08) {
                    let v = args.choose(rng).unwrap().clone();
                    args.push(v);
                } else {
                    args.push(format!("v{fresh}"));
                    fresh += 1;
                }
            }
            args.shuffle(rng);
            let same: Vec<&(String, Vec<String>)> = atoms.iter().filter(|(_, a)| a.len() == arity).collect();
            let name = if !same.is_empty() && rng.gen_bool(0.15) {
                same.choose(rng).unwrap().0.clone()
            } else {
                format!("r{i}")
            };
            atoms.push((name, args));
        }
        let mut vars: Vec<String> = atoms.iter().flat_map(|(_, a)| a.iter().cloned()).collect();
        vars.sort();
        vars.dedup();
        let np = rng.gen_range(0..=max_preds);
        let preds: Vec<Predicate> = (0..np).map(|i| random_pred(rng, &vars, i, domain)).collect();
        let out: Vec<&str> = vars.iter().filter(|_| rng.gen_bool(0.5)).map(String::as_str).collect();
        let atoms: Vec<Atom> = atoms
            .iter()
            .map(|(r, a)| Atom::new(r, &a.iter().map(String::as_str).collect::<Vec<_>>()))
            .collect();
        let q = Gcq::new(atoms, preds, Hyperedge::new(out)).expect("well-scoped by construction");
        if classify(&q) != Verdict::Cyclic {
            return q;
        }
    }
}

pub fn random_row(rng: &mut ChaCha8Rng, arity: usize, domain: i64) -> Vec<Value> {
    (0..arity).map(|_| Value::Int(rng.gen_range(1..=domain))).collect()
}

pub fn random_db(rng: &mut ChaCha8Rng, q: &Gcq, max_rows: usize, domain: i64) -> Database {
    let mut db = Database::new();
    db.declare_query(q).unwrap();
    let rels: BTreeSet<(String, usize)> = q.atoms().iter().map(|a| (a.relation.to_string(), a.arity())).collect();
    for (r, arity) in rels {
        let n = rng.gen_range(0..=max_rows);
        for _ in 0..n {
            let row = random_row(rng, arity, domain);
            db.insert(&r, row, rng.gen_range(1..=3)).unwrap();
        }
    }
    db
}

/// Inserts a random row, or deletes some copies of a stored one.
pub fn random_single_update(rng: &mut ChaCha8Rng, q: &Gcq, db: &Database, domain: i64) -> Update {
    let atom = q.atoms().choose(rng).unwrap();
    let rel = db.relation(&atom.relation).unwrap();
    if !rel.is_empty() && rng.gen_bool(0.35) {
        let rows = rel.sorted();
        let (row, m) = rows.choose(rng).unwrap().clone();
        let k = rng.gen_range(1..=m);
        Update::single(&atom.relation, row, -k)
    } else {
        Update::single(&atom.relation, random_row(rng, atom.arity(), domain), rng.gen_range(1..=3))
    }
}

/// Several rows over several relations, all applicable to `db`.
pub fn random_batch_update(rng: &mut ChaCha8Rng, q: &Gcq, db: &Database, domain: i64) -> Update {
    let mut u = Update::new();
    let mut scratch = db.clone();
    for _ in 0..rng.gen_range(1..=4) {
        let one = random_single_update(rng, q, &scratch, domain);
        scratch.apply(&one).unwrap();
        for (r, row, m) in one.entries() {
            u.add(&r, row, m).unwrap();
        }
    }
    u
}

/// A random GJT built top-down: every child takes a subset of its parent's
/// variables plus fresh ones, and the first child keeps all of them.
pub fn random_gjt_pair(rng: &mut ChaCha8Rng) -> GjtPair {
    let mut fresh = 0;
    let mut new_vars = |k: usize| -> Vec<String> {
        (0..k)
            .map(|_| {
                fresh += 1;
                format!("x{fresh}")
            })
            .collect()
    };
    let root_vars = new_vars(rng.gen_range(0..=2));
    let mut t = Gjt::new(Label::Interior(Hyperedge::new(root_vars.iter().map(String::as_str))));
    let mut budget: usize = rng.gen_range(3..=14);
    let mut open = vec![(t.root(), root_vars, 0usize)];
    let mut leaves = 0;
    let mut pk = 0;
    while let Some((n, vars, depth)) = open.pop() {
        let kids = if depth >= 4 || budget == 0 { 1 } else { rng.gen_range(1..=3) };
        for i in 0..kids {
            let mut cv: Vec<String> = if i == 0 {
                vars.clone()
            } else {
                let k = rng.gen_range(0..=vars.len());
                vars.choose_multiple(rng, k).cloned().collect()
            };
            cv.extend(new_vars(rng.gen_range(0..=2)));
            let leaf = depth >= 4 || budget == 0 || rng.gen_bool(0.35);
            if leaf && cv.is_empty() {
                cv.extend(new_vars(1));
            }
            let scope: Vec<String> = {
                let mut s = vars.clone();
                s.extend(cv.iter().cloned());
                s.sort();
                s.dedup();
                s
            };
            let mut preds = Vec::new();
            if !scope.is_empty() && rng.gen_bool(0.4) {
                pk += 1;
                preds.push(random_pred(rng, &scope, pk, 9));
            }
            let he = Hyperedge::new(cv.iter().map(String::as_str));
            budget = budget.saturating_sub(1);
            if leaf {
                leaves += 1;
                let mut args = cv.clone();
                args.shuffle(rng);
                let args: Vec<&str> = args.iter().map(String::as_str).collect();
                t.add_child(n, Label::Leaf(Atom::new(&format!("r{leaves}"), &args)), preds);
            } else {
                let c = t.add_child(n, Label::Interior(he), preds);
                open.push((c, cv, depth + 1));
            }
        }
    }
    // A random connex subset: the root, then children of chosen nodes.
    let mut connex = BTreeSet::new();
    let mut stack = vec![t.root()];
    while let Some(n) = stack.pop() {
        connex.insert(n);
        for &c in t.children(n) {
            if rng.gen_bool(0.5) {
                stack.push(c);
            }
        }
    }
    GjtPair::new(t, connex)
}

pub fn random_triplet(rng: &mut ChaCha8Rng) -> HypergraphTriplet {
    let names: Vec<String> = (0..rng.gen_range(2..=7)).map(|i| format!("a{i}")).collect();
    let edges: Vec<Hyperedge> = (0..rng.gen_range(1..=5))
        .map(|_| {
            let k = rng.gen_range(1..=3.min(names.len()));
            Hyperedge::new(names.choose_multiple(rng, k).map(String::as_str))
        })
        .collect();
    let used: Vec<String> = {
        let mut v: Vec<String> = edges.iter().flat_map(|e| e.iter().map(|x| x.as_str().to_string())).collect();
        v.sort();
        v.dedup();
        v
    };
    let free = Hyperedge::new(used.iter().filter(|_| rng.gen_bool(0.3)).map(String::as_str));
    let preds: Vec<Predicate> = (0..rng.gen_range(0..=3)).map(|i| random_pred(rng, &used, i, 9)).collect();
    HypergraphTriplet::new(edges, free, preds)
}

/// Textbook GYO: repeatedly drop variables that occur in one edge only and
/// edges contained in another edge; acyclic iff nothing is left.
pub fn classical_gyo_acyclic(edges: &[Hyperedge]) -> bool {
    let mut es: Vec<BTreeSet<String>> = edges.iter().map(|e| e.iter().map(|v| v.as_str().to_string()).collect()).collect();
    loop {
        let mut changed = false;
        let all: Vec<String> = es.iter().flatten().cloned().collect();
        for e in es.iter_mut() {
            let before = e.len();
            e.retain(|v| all.iter().filter(|w| *w == v).count() > 1);
            changed |= e.len() != before;
        }
        es.retain(|e| !e.is_empty());
        let mut i = 0;
        while i < es.len() {
            let contained = (0..es.len()).any(|j| j != i && es[i].is_subset(&es[j]) && (es[i] != es[j] || j < i));
            if contained {
                es.remove(i);
                changed = true;
            } else {
                i += 1;
            }
        }
        if !changed {
            return es.is_empty();
        }
    }
}
