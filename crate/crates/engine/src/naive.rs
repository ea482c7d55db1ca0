//! The baseline engine: keeps the base relations and the full result, and
//! computes each delta by evaluating delta queries from scratch.

use dynjoin_core::gmr::{Gmr, Tuple};
use dynjoin_core::query::{naive_eval, Atom, Database, Gcq, QueryError, Update};

pub struct NaiveEngine {
    q: Gcq,
    db: Database,
    view: Gmr,
}

impl NaiveEngine {
    pub fn new(q: &Gcq) -> Result<Self, QueryError> {
        let mut db = Database::new();
        db.declare_query(q)?;
        Ok(NaiveEngine {
            q: q.clone(),
            db,
            view: Gmr::new(q.out().clone()),
        })
    }

    pub fn view(&self) -> &Gmr {
        &self.view
    }

    pub fn database(&self) -> &Database {
        &self.db
    }

    /// Base rows plus result tuples.
    pub fn live_tuples(&self) -> usize {
        self.db.size() + self.view.len()
    }

    /// Applies `m` copies of `row` to `relation` and returns the change of
    /// the result.
    ///
    /// With k occurrences of the relation, the delta is the sum over every
    /// non-empty subset S of occurrences of the query with the atoms in S
    /// reading only the changed row; each term is evaluated starting from
    /// the changed row.
    pub fn update(&mut self, relation: &str, row: Tuple, m: i64) -> Result<Gmr, QueryError> {
        let u = Update::single(relation, row.clone(), m);
        self.db.check_update(&u)?;
        let occ: Vec<usize> = (0..self.q.atoms().len())
            .filter(|&i| &*self.q.atoms()[i].relation == relation)
            .collect();
        let mut delta = Gmr::new(self.q.out().clone());
        if !occ.is_empty() && m != 0 {
            let staged = format!("\u{394}{relation}");
            self.db.insert(&staged, row, m.abs())?;
            let result = self.delta_terms(&occ, &staged, m < 0, &mut delta);
            self.db.remove(&staged);
            result?;
        }
        self.db.apply(&u)?;
        self.view = self.view.union(&delta)?;
        Ok(delta)
    }

    fn delta_terms(&self, occ: &[usize], staged: &str, negative: bool, delta: &mut Gmr) -> Result<(), QueryError> {
        for mask in 1u32..(1 << occ.len()) {
            let chosen = |i: usize| occ.iter().position(|&o| o == i).is_some_and(|k| mask & (1 << k) != 0);
            let mut first: Vec<Atom> = Vec::new();
            let mut rest: Vec<Atom> = Vec::new();
            for (i, a) in self.q.atoms().iter().enumerate() {
                if chosen(i) {
                    let mut b = a.clone();
                    b.relation = staged.into();
                    first.push(b);
                } else {
                    rest.push(a.clone());
                }
            }
            first.extend(rest);
            let term = Gcq::new(first, self.q.preds().iter().cloned(), self.q.out().clone())?;
            let mut g = naive_eval(&term, &self.db)?;
            if negative && mask.count_ones() % 2 == 1 {
                g = g.negate();
            }
            *delta = delta.union(&g)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dynjoin_core::gmr::Value;
    use dynjoin_core::query::{naive_delta, parse};

    fn ints(xs: &[i64]) -> Tuple {
        xs.iter().map(|&x| Value::Int(x)).collect()
    }

    #[test]
    fn self_join_deltas_match_recomputation() {
        let q = parse("SELECT x,z FROM e(x,y), e(y,z) WHERE x < z").unwrap();
        let mut eng = NaiveEngine::new(&q).unwrap();
        let ups = [
            (&[1, 2][..], 1),
            (&[2, 3], 2),
            (&[2, 2], 1),
            (&[1, 2], -1),
            (&[3, 4], 1),
            (&[2, 3], -2),
        ];
        for (row, m) in ups {
            let u = Update::single("e", ints(row), m);
            let want = naive_delta(&q, eng.database(), &u).unwrap();
            assert_eq!(eng.update("e", ints(row), m).unwrap(), want);
            assert_eq!(eng.view(), &naive_eval(&q, eng.database()).unwrap());
        }
        assert!(eng.update("e", ints(&[9, 9]), -1).is_err());
        assert!(eng.database().relation("\u{394}e").is_none());
    }
}
