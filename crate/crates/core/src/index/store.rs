//! Per-fact-type partitions: three component indices sharing one page source.

use std::collections::HashMap;

use crate::dictionary::Sym;
use crate::fact::{Fact, JoinPosition, Value, ValueType};

/// The two components of a fact that are not part of the index key.
///
/// id index: (attr, value bits); attr index: (id, value bits);
/// value index: (id, attr).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Residual {
    pub a: u64,
    pub b: u64,
}

/// Component key: the fact's value type plus the component payload.
pub type Key = (ValueType, u64);

pub fn split(f: &Fact, pos: JoinPosition) -> (Key, Residual) {
    let vt = f.value_type();
    match pos {
        JoinPosition::Id => ((vt, f.id.0), Residual { a: f.attr.0, b: f.value.bits() }),
        JoinPosition::Attr => ((vt, f.attr.0), Residual { a: f.id.0, b: f.value.bits() }),
        JoinPosition::Val => ((vt, f.value.bits()), Residual { a: f.id.0, b: f.attr.0 }),
    }
}

pub fn rebuild(fact_type: Sym, pos: JoinPosition, key: Key, r: Residual) -> Fact {
    let (vt, k) = key;
    match pos {
        JoinPosition::Id => Fact::new(fact_type, Sym(k), Sym(r.a), Value::from_bits(vt, r.b)),
        JoinPosition::Attr => Fact::new(fact_type, Sym(r.a), Sym(k), Value::from_bits(vt, r.b)),
        JoinPosition::Val => Fact::new(fact_type, Sym(r.a), Sym(r.b), Value::from_bits(vt, k)),
    }
}

pub trait Postings: Default + Send + Sync {
    type Ctx: Default + Send + Sync;

    fn len(&self) -> usize;
    fn push(&mut self, ctx: &mut Self::Ctx, r: Residual);
    /// Removes `r`, filling its slot with the last element.
    fn remove(&mut self, ctx: &mut Self::Ctx, r: Residual) -> bool;
    fn contains(&self, ctx: &Self::Ctx, r: Residual) -> bool;
    fn for_each(&self, ctx: &Self::Ctx, f: &mut dyn FnMut(Residual));
}

impl Postings for Vec<Residual> {
    type Ctx = ();

    fn len(&self) -> usize {
        Vec::len(self)
    }

    fn push(&mut self, _: &mut (), r: Residual) {
        Vec::push(self, r);
    }

    fn remove(&mut self, _: &mut (), r: Residual) -> bool {
        match self.iter().position(|x| *x == r) {
            Some(i) => {
                self.swap_remove(i);
                true
            }
            None => false,
        }
    }

    fn contains(&self, _: &(), r: Residual) -> bool {
        self.as_slice().contains(&r)
    }

    fn for_each(&self, _: &(), f: &mut dyn FnMut(Residual)) {
        self.iter().for_each(|r| f(*r));
    }
}

/// Second level of a component index: key -> postings.
pub trait KeyMap<P>: Send + Sync {
    /// `handles` is true when every key payload is a dictionary handle.
    fn new(handles: bool) -> Self;
    fn get(&self, k: Key) -> Option<&P>;
    fn get_mut(&mut self, k: Key) -> Option<&mut P>;
    fn entry(&mut self, k: Key) -> &mut P;
    fn for_each(&self, vt: ValueType, f: &mut dyn FnMut(Key, &P));
}

pub struct HashKeys<P>(HashMap<Key, P>);

impl<P: Postings> KeyMap<P> for HashKeys<P> {
    fn new(_: bool) -> Self {
        HashKeys(HashMap::new())
    }

    fn get(&self, k: Key) -> Option<&P> {
        self.0.get(&k)
    }

    fn get_mut(&mut self, k: Key) -> Option<&mut P> {
        self.0.get_mut(&k)
    }

    fn entry(&mut self, k: Key) -> &mut P {
        self.0.entry(k).or_default()
    }

    fn for_each(&self, vt: ValueType, f: &mut dyn FnMut(Key, &P)) {
        for (k, p) in &self.0 {
            if k.0 == vt {
                f(*k, p);
            }
        }
    }
}

/// Sparse direct-address arrays, one per value type, indexed by handle.
/// Numeric payloads are not dense, so the value index keeps those in a hash
/// map instead.
pub struct DirectKeys<P> {
    handles: bool,
    dense: [Vec<Option<P>>; 8],
    sparse: [HashMap<u64, P>; 8],
}

impl<P> DirectKeys<P> {
    #[inline]
    fn is_dense(&self, vt: ValueType) -> bool {
        self.handles || matches!(vt, ValueType::String | ValueType::Bool)
    }
}

impl<P: Postings> KeyMap<P> for DirectKeys<P> {
    fn new(handles: bool) -> Self {
        Self { handles, dense: Default::default(), sparse: Default::default() }
    }

    fn get(&self, (vt, k): Key) -> Option<&P> {
        if self.is_dense(vt) {
            self.dense[vt.index()].get(k as usize)?.as_ref()
        } else {
            self.sparse[vt.index()].get(&k)
        }
    }

    fn get_mut(&mut self, (vt, k): Key) -> Option<&mut P> {
        if self.is_dense(vt) {
            self.dense[vt.index()].get_mut(k as usize)?.as_mut()
        } else {
            self.sparse[vt.index()].get_mut(&k)
        }
    }

    fn entry(&mut self, (vt, k): Key) -> &mut P {
        if !self.is_dense(vt) {
            return self.sparse[vt.index()].entry(k).or_default();
        }
        let arr = &mut self.dense[vt.index()];
        let i = k as usize;
        if i >= arr.len() {
            let grown = (i + 1).next_power_of_two().max(16);
            arr.resize_with(grown, || None);
        }
        arr[i].get_or_insert_with(P::default)
    }

    fn for_each(&self, vt: ValueType, f: &mut dyn FnMut(Key, &P)) {
        if self.is_dense(vt) {
            for (i, p) in self.dense[vt.index()].iter().enumerate() {
                if let Some(p) = p {
                    f((vt, i as u64), p);
                }
            }
        } else {
            for (k, p) in &self.sparse[vt.index()] {
                f((vt, *k), p);
            }
        }
    }
}

/// Storage for one fact type, as seen by the index front end.
pub trait PartitionStore: Send + Sync {
    fn insert(&mut self, f: &Fact) -> bool;
    fn remove(&mut self, f: &Fact) -> bool;
    fn contains(&self, f: &Fact) -> bool;
    fn count(&self, pos: JoinPosition, key: Key) -> usize;
    fn collect(&self, fact_type: Sym, pos: JoinPosition, key: Key, out: &mut Vec<Fact>);
    /// Every fact of value type `vt`, enumerated through component `pos`.
    fn collect_type(&self, fact_type: Sym, pos: JoinPosition, vt: ValueType, out: &mut Vec<Fact>);
    fn len(&self) -> usize;
}

pub struct Partition<M, P: Postings> {
    id: M,
    attr: M,
    val: M,
    ctx: P::Ctx,
    len: usize,
}

impl<M: KeyMap<P>, P: Postings> Default for Partition<M, P> {
    fn default() -> Self {
        Self { id: M::new(true), attr: M::new(true), val: M::new(false), ctx: P::Ctx::default(), len: 0 }
    }
}

impl<M: KeyMap<P>, P: Postings> Partition<M, P> {
    fn map(&self, pos: JoinPosition) -> &M {
        match pos {
            JoinPosition::Id => &self.id,
            JoinPosition::Attr => &self.attr,
            JoinPosition::Val => &self.val,
        }
    }
}

impl<M: KeyMap<P>, P: Postings> PartitionStore for Partition<M, P> {
    fn insert(&mut self, f: &Fact) -> bool {
        if self.contains(f) {
            return false;
        }
        for pos in JoinPosition::ALL {
            let (k, r) = split(f, pos);
            let map = match pos {
                JoinPosition::Id => &mut self.id,
                JoinPosition::Attr => &mut self.attr,
                JoinPosition::Val => &mut self.val,
            };
            map.entry(k).push(&mut self.ctx, r);
        }
        self.len += 1;
        true
    }

    fn remove(&mut self, f: &Fact) -> bool {
        let mut removed = false;
        for pos in JoinPosition::ALL {
            let (k, r) = split(f, pos);
            let map = match pos {
                JoinPosition::Id => &mut self.id,
                JoinPosition::Attr => &mut self.attr,
                JoinPosition::Val => &mut self.val,
            };
            if let Some(p) = map.get_mut(k) {
                removed = p.remove(&mut self.ctx, r);
            }
            if !removed {
                // absent from the id index means absent everywhere
                return false;
            }
        }
        self.len -= 1;
        true
    }

    fn contains(&self, f: &Fact) -> bool {
        // probe the shortest of the three posting lists
        let best = JoinPosition::ALL
            .into_iter()
            .map(|pos| {
                let (k, r) = split(f, pos);
                (self.map(pos).get(k), r)
            })
            .min_by_key(|(p, _)| p.map_or(0, |p| p.len()));
        match best {
            Some((Some(p), r)) => p.contains(&self.ctx, r),
            _ => false,
        }
    }

    fn count(&self, pos: JoinPosition, key: Key) -> usize {
        self.map(pos).get(key).map_or(0, |p| p.len())
    }

    fn collect(&self, fact_type: Sym, pos: JoinPosition, key: Key, out: &mut Vec<Fact>) {
        if let Some(p) = self.map(pos).get(key) {
            out.reserve(p.len());
            p.for_each(&self.ctx, &mut |r| out.push(rebuild(fact_type, pos, key, r)));
        }
    }

    fn collect_type(&self, fact_type: Sym, pos: JoinPosition, vt: ValueType, out: &mut Vec<Fact>) {
        self.map(pos).for_each(vt, &mut |key, p| {
            p.for_each(&self.ctx, &mut |r| out.push(rebuild(fact_type, pos, key, r)));
        });
    }

    fn len(&self) -> usize {
        self.len
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fact::Scalar;

    #[test]
    fn split_rebuild_round_trip() {
        let f = Fact::new(Sym(1), Sym(2), Sym(3), Value::from_scalar(Scalar::I32(-7)));
        for pos in JoinPosition::ALL {
            let (k, r) = split(&f, pos);
            assert_eq!(rebuild(Sym(1), pos, k, r), f);
        }
    }

    #[test]
    fn direct_keys_grow_and_fall_back_for_numbers() {
        let mut m: DirectKeys<Vec<Residual>> = DirectKeys::new(false);
        Postings::push(m.entry((ValueType::String, 40)), &mut (), Residual::default());
        Postings::push(m.entry((ValueType::UInt64, u64::MAX)), &mut (), Residual::default());
        assert_eq!(m.dense[ValueType::String.index()].len(), 64);
        assert_eq!(m.get((ValueType::UInt64, u64::MAX)).unwrap().len(), 1);
        assert!(m.get((ValueType::String, 41)).is_none());
        assert!(m.get((ValueType::String, 10_000)).is_none());
    }
}
