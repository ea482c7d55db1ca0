//! An ordered multiset of tuples keyed by their inequality attributes.
//!
//! AVL tree in an arena, with the in-order sequence also kept as a linked
//! list so that scans from the first element cost O(1) per step. Every node
//! carries the multiplicity sum of its subtree (prefix sums in O(log n)) and
//! the smallest second key component of its subtree, which lets scans over
//! two inequalities skip subtrees holding no compatible entry.

use alloc::vec::Vec;
use core::cell::Cell;
use core::cmp::{Ordering, Reverse};

use crate::gmr::{GmrError, Tuple, Value};
use crate::query::CmpOp;

/// One sort-key component. Descending components are reversed so that every
/// group is ordered "compatible first" under the derived order.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub(crate) enum Keyed {
    Asc(Value),
    Desc(Reverse<Value>),
}

impl Keyed {
    pub(crate) fn new(v: Value, desc: bool) -> Self {
        if desc {
            Keyed::Desc(Reverse(v))
        } else {
            Keyed::Asc(v)
        }
    }

    pub(crate) fn value(&self) -> &Value {
        match self {
            Keyed::Asc(v) => v,
            Keyed::Desc(Reverse(v)) => v,
        }
    }
}

/// A component `c` is compatible iff `c op value`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Bound<'a> {
    pub value: &'a Value,
    pub op: CmpOp,
}

impl Bound<'_> {
    pub(crate) fn admits(&self, k: &Keyed) -> bool {
        matches!(k.value().compare(self.value), Ok(o) if self.op.holds(o))
    }
}

const NIL: u32 = u32::MAX;

struct Slot {
    key: Vec<Keyed>,
    tuple: Tuple,
    mult: i64,
    height: u8,
    sum: i128,
    min2: Option<Keyed>,
    left: u32,
    right: u32,
    prev: u32,
    next: u32,
}

pub(crate) struct SortedGroup {
    slots: Vec<Slot>,
    free: Vec<u32>,
    root: u32,
    first: u32,
    last: u32,
    len: usize,
}

/// Position of an entry, valid until the next mutation.
pub(crate) type Cursor = u32;

impl SortedGroup {
    pub(crate) fn new() -> Self {
        SortedGroup {
            slots: Vec::new(),
            free: Vec::new(),
            root: NIL,
            first: NIL,
            last: NIL,
            len: 0,
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.len
    }

    pub(crate) fn total(&self) -> i128 {
        self.sum(self.root)
    }

    pub(crate) fn first(&self) -> Option<Cursor> {
        (self.first != NIL).then_some(self.first)
    }

    pub(crate) fn next(&self, c: Cursor) -> Option<Cursor> {
        let n = self.slots[c as usize].next;
        (n != NIL).then_some(n)
    }

    pub(crate) fn entry(&self, c: Cursor) -> (&[Keyed], &Tuple, i64) {
        let s = &self.slots[c as usize];
        (&s.key, &s.tuple, s.mult)
    }

    /// Adds `delta` to the multiplicity of `(key, tuple)`; returns the new
    /// multiplicity (0 means the entry is gone).
    pub(crate) fn add(&mut self, key: Vec<Keyed>, tuple: Tuple, delta: i64) -> Result<i64, GmrError> {
        if delta == 0 {
            return Ok(0);
        }
        if self.len > 0 {
            let cmp = |at: u32| {
                let s = &self.slots[at as usize];
                key.as_slice().cmp(s.key.as_slice()).then_with(|| tuple.cmp(&s.tuple))
            };
            if cmp(self.last) == Ordering::Greater {
                let n = self.alloc(key, tuple, delta);
                self.root = self.append(self.root, n);
                return Ok(delta);
            }
            if cmp(self.first) == Ordering::Less {
                let n = self.alloc(key, tuple, delta);
                self.root = self.prepend(self.root, n);
                return Ok(delta);
            }
        }
        let mut out = 0;
        let mut pending = Some((key, tuple));
        self.root = self.insert(self.root, &mut pending, delta, NIL, NIL, &mut out)?;
        Ok(out)
    }

    /// Hangs `n`, known to sort after every entry, off the right spine.
    /// Temporal streams take this path, or its mirror for descending keys, on
    /// nearly every insert.
    fn append(&mut self, at: u32, n: u32) -> u32 {
        if at == NIL {
            self.slots[n as usize].prev = self.last;
            self.slots[self.last as usize].next = n;
            self.last = n;
            self.len += 1;
            return n;
        }
        let r = self.slots[at as usize].right;
        let r = self.append(r, n);
        self.slots[at as usize].right = r;
        self.rebalance(at)
    }

    fn prepend(&mut self, at: u32, n: u32) -> u32 {
        if at == NIL {
            self.slots[n as usize].next = self.first;
            self.slots[self.first as usize].prev = n;
            self.first = n;
            self.len += 1;
            return n;
        }
        let l = self.slots[at as usize].left;
        let l = self.prepend(l, n);
        self.slots[at as usize].left = l;
        self.rebalance(at)
    }

    /// Sum of multiplicities of the leading entries whose first key component
    /// satisfies `b`.
    pub(crate) fn prefix_sum(&self, b: &Bound<'_>, probes: &Cell<u64>) -> i128 {
        let mut at = self.root;
        let mut acc = 0i128;
        while at != NIL {
            probes.set(probes.get() + 1);
            let s = &self.slots[at as usize];
            if b.admits(&s.key[0]) {
                acc += self.sum(s.left) + s.mult as i128;
                at = s.right;
            } else {
                at = s.left;
            }
        }
        acc
    }

    /// Calls `f` on every entry whose key satisfies all `bounds`, in order.
    /// With one bound this walks the linked list and stops at the first
    /// failure; with more it walks the tree, pruning on the second component.
    pub(crate) fn scan<E>(
        &self,
        bounds: &[Bound<'_>],
        probes: &Cell<u64>,
        f: &mut dyn FnMut(&Tuple, i64) -> Result<(), E>,
    ) -> Result<(), E> {
        if bounds.len() <= 1 {
            let mut at = self.first;
            while at != NIL {
                probes.set(probes.get() + 1);
                let s = &self.slots[at as usize];
                if let Some(b) = bounds.first() {
                    if !b.admits(&s.key[0]) {
                        break;
                    }
                }
                f(&s.tuple, s.mult)?;
                at = s.next;
            }
            Ok(())
        } else {
            self.walk(self.root, bounds, probes, f).map(|_| ())
        }
    }

    /// Returns `Ok(false)` once an entry fails the first bound.
    fn walk<E>(
        &self,
        at: u32,
        bounds: &[Bound<'_>],
        probes: &Cell<u64>,
        f: &mut dyn FnMut(&Tuple, i64) -> Result<(), E>,
    ) -> Result<bool, E> {
        if at == NIL {
            return Ok(true);
        }
        probes.set(probes.get() + 1);
        let s = &self.slots[at as usize];
        if !s.min2.as_ref().is_some_and(|k| bounds[1].admits(k)) {
            return Ok(true);
        }
        if !self.walk(s.left, bounds, probes, f)? {
            return Ok(false);
        }
        if !bounds[0].admits(&s.key[0]) {
            return Ok(false);
        }
        if bounds[1..].iter().zip(&s.key[1..]).all(|(b, k)| b.admits(k)) {
            f(&s.tuple, s.mult)?;
        }
        self.walk(s.right, bounds, probes, f)
    }

    fn sum(&self, at: u32) -> i128 {
        if at == NIL {
            0
        } else {
            self.slots[at as usize].sum
        }
    }

    fn height(&self, at: u32) -> u8 {
        if at == NIL {
            0
        } else {
            self.slots[at as usize].height
        }
    }

    fn min2(&self, at: u32) -> Option<&Keyed> {
        if at == NIL {
            None
        } else {
            self.slots[at as usize].min2.as_ref()
        }
    }

    fn alloc(&mut self, key: Vec<Keyed>, tuple: Tuple, mult: i64) -> u32 {
        let min2 = key.get(1).cloned();
        let slot = Slot {
            key,
            tuple,
            mult,
            height: 1,
            sum: mult as i128,
            min2,
            left: NIL,
            right: NIL,
            prev: NIL,
            next: NIL,
        };
        match self.free.pop() {
            Some(i) => {
                self.slots[i as usize] = slot;
                i
            }
            None => {
                self.slots.push(slot);
                (self.slots.len() - 1) as u32
            }
        }
    }

    fn release(&mut self, at: u32) {
        let s = &mut self.slots[at as usize];
        s.key = Vec::new();
        s.tuple = Vec::new();
        self.free.push(at);
    }

    fn insert(
        &mut self,
        at: u32,
        pending: &mut Option<(Vec<Keyed>, Tuple)>,
        delta: i64,
        pred: u32,
        succ: u32,
        out: &mut i64,
    ) -> Result<u32, GmrError> {
        if at == NIL {
            let (key, tuple) = pending.take().unwrap();
            let n = self.alloc(key, tuple, delta);
            self.slots[n as usize].prev = pred;
            self.slots[n as usize].next = succ;
            if pred == NIL {
                self.first = n;
            } else {
                self.slots[pred as usize].next = n;
            }
            if succ == NIL {
                self.last = n;
            } else {
                self.slots[succ as usize].prev = n;
            }
            self.len += 1;
            *out = delta;
            return Ok(n);
        }
        let ord = {
            let (k, t) = pending.as_ref().unwrap();
            let s = &self.slots[at as usize];
            k.as_slice().cmp(s.key.as_slice()).then_with(|| t.cmp(&s.tuple))
        };
        match ord {
            Ordering::Less => {
                let l = self.slots[at as usize].left;
                let l = self.insert(l, pending, delta, pred, at, out)?;
                self.slots[at as usize].left = l;
            }
            Ordering::Greater => {
                let r = self.slots[at as usize].right;
                let r = self.insert(r, pending, delta, at, succ, out)?;
                self.slots[at as usize].right = r;
            }
            Ordering::Equal => {
                let m = self.slots[at as usize].mult.checked_add(delta).ok_or(GmrError::Overflow)?;
                *out = m;
                if m == 0 {
                    let (p, n) = (self.slots[at as usize].prev, self.slots[at as usize].next);
                    if p == NIL {
                        self.first = n;
                    } else {
                        self.slots[p as usize].next = n;
                    }
                    if n == NIL {
                        self.last = p;
                    } else {
                        self.slots[n as usize].prev = p;
                    }
                    self.len -= 1;
                    let rest = self.remove_root(at);
                    self.release(at);
                    return Ok(rest);
                }
                self.slots[at as usize].mult = m;
            }
        }
        Ok(self.rebalance(at))
    }

    fn remove_root(&mut self, at: u32) -> u32 {
        let (l, r) = (self.slots[at as usize].left, self.slots[at as usize].right);
        if l == NIL {
            return r;
        }
        if r == NIL {
            return l;
        }
        let (r2, m) = self.pop_min(r);
        self.slots[m as usize].left = l;
        self.slots[m as usize].right = r2;
        self.rebalance(m)
    }

    fn pop_min(&mut self, at: u32) -> (u32, u32) {
        let l = self.slots[at as usize].left;
        if l == NIL {
            return (self.slots[at as usize].right, at);
        }
        let (l2, m) = self.pop_min(l);
        self.slots[at as usize].left = l2;
        (self.rebalance(at), m)
    }

    fn update(&mut self, at: u32) {
        let (l, r) = (self.slots[at as usize].left, self.slots[at as usize].right);
        let height = 1 + self.height(l).max(self.height(r));
        let sum = self.sum(l) + self.slots[at as usize].mult as i128 + self.sum(r);
        let own = self.slots[at as usize].key.get(1);
        let min2 = [self.min2(l), own, self.min2(r)].into_iter().flatten().min().cloned();
        let s = &mut self.slots[at as usize];
        s.height = height;
        s.sum = sum;
        s.min2 = min2;
    }

    fn rotate_right(&mut self, y: u32) -> u32 {
        let x = self.slots[y as usize].left;
        self.slots[y as usize].left = self.slots[x as usize].right;
        self.slots[x as usize].right = y;
        self.update(y);
        self.update(x);
        x
    }

    fn rotate_left(&mut self, x: u32) -> u32 {
        let y = self.slots[x as usize].right;
        self.slots[x as usize].right = self.slots[y as usize].left;
        self.slots[y as usize].left = x;
        self.update(x);
        self.update(y);
        y
    }

    fn rebalance(&mut self, at: u32) -> u32 {
        self.update(at);
        let (l, r) = (self.slots[at as usize].left, self.slots[at as usize].right);
        let bf = self.height(l) as i32 - self.height(r) as i32;
        if bf > 1 {
            let (ll, lr) = (self.slots[l as usize].left, self.slots[l as usize].right);
            if self.height(ll) < self.height(lr) {
                let nl = self.rotate_left(l);
                self.slots[at as usize].left = nl;
            }
            self.rotate_right(at)
        } else if bf < -1 {
            let (rl, rr) = (self.slots[r as usize].left, self.slots[r as usize].right);
            if self.height(rr) < self.height(rl) {
                let nr = self.rotate_right(r);
                self.slots[at as usize].right = nr;
            }
            self.rotate_left(at)
        } else {
            at
        }
    }

    #[cfg(test)]
    fn check(&self) {
        fn go(g: &SortedGroup, at: u32, out: &mut Vec<u32>) -> (u8, i128) {
            if at == NIL {
                return (0, 0);
            }
            let s = &g.slots[at as usize];
            let (hl, sl) = go(g, s.left, out);
            out.push(at);
            let (hr, sr) = go(g, s.right, out);
            assert!((hl as i32 - hr as i32).abs() <= 1);
            assert_eq!(s.height, 1 + hl.max(hr));
            assert_eq!(s.sum, sl + sr + s.mult as i128);
            (s.height, s.sum)
        }
        let mut order = Vec::new();
        go(self, self.root, &mut order);
        assert_eq!(order.len(), self.len);
        let mut listed = Vec::new();
        let mut at = self.first;
        while at != NIL {
            listed.push(at);
            at = self.slots[at as usize].next;
        }
        assert_eq!(order, listed);
        assert_eq!(self.last, order.last().copied().unwrap_or(NIL));
        let mut back = Vec::new();
        let mut at = self.last;
        while at != NIL {
            back.push(at);
            at = self.slots[at as usize].prev;
        }
        back.reverse();
        assert_eq!(order, back);
        for w in order.windows(2) {
            let (a, b) = (&self.slots[w[0] as usize], &self.slots[w[1] as usize]);
            assert!((&a.key, &a.tuple) < (&b.key, &b.tuple));
        }
    }
}
