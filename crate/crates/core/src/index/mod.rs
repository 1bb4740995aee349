//! Rank-1 inverted index: primary fact storage.
//!
//! Facts are partitioned by fact type. Each partition holds one inverted
//! index per triple component (id, attr, value); a posting stores only the
//! two components not in the key. All lookups (`r1l`, `rnl`, `rl`) and the
//! cardinality estimate are answered from these three indices.

mod pages;
mod store;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::dictionary::Sym;
use crate::fact::{Condition, Fact, JoinPosition, ValueType};

use pages::{Chain, HeapPages, PagePool};
pub use pages::{INITIAL_PAGES, PAGE_SIZE};
use store::{DirectKeys, HashKeys, Partition, PartitionStore, Residual};

/// Extended natural number used for cardinalities; `INFINITE` stands for +inf.
pub type Cardinality = u64;
pub const INFINITE: Cardinality = u64::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Backend {
    /// Two-level hash table.
    Hi,
    /// Direct-address arrays indexed by fact type and handle.
    #[default]
    Ai,
    /// Array index with postings in pages from a pre-allocated pool.
    Lpim,
    /// Array index with postings in pages allocated on demand.
    Lpid,
}

impl Backend {
    pub const ALL: [Backend; 4] = [Backend::Hi, Backend::Ai, Backend::Lpim, Backend::Lpid];

    pub fn name(self) -> &'static str {
        match self {
            Backend::Hi => "hi",
            Backend::Ai => "ai",
            Backend::Lpim => "lpim",
            Backend::Lpid => "lpid",
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Backend::ALL.into_iter().find(|b| b.name().eq_ignore_ascii_case(s)).ok_or_else(|| format!("unknown index backend '{s}'"))
    }
}

/// Per-component index counts for the concrete slots of a condition.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ComponentCounts {
    pub id: Option<usize>,
    pub attr: Option<usize>,
    pub val: Option<usize>,
}

impl ComponentCounts {
    pub fn get(&self, pos: JoinPosition) -> Option<usize> {
        match pos {
            JoinPosition::Id => self.id,
            JoinPosition::Attr => self.attr,
            JoinPosition::Val => self.val,
        }
    }

    /// Minimum over present counts, `INFINITE` when none is present.
    pub fn min(&self) -> Cardinality {
        JoinPosition::ALL.into_iter().filter_map(|p| self.get(p)).min().map_or(INFINITE, |c| c as Cardinality)
    }

    /// Component with the smallest count; ties go to id, then attr, then val.
    pub fn cheapest(&self) -> Option<JoinPosition> {
        let mut best: Option<(JoinPosition, usize)> = None;
        for p in JoinPosition::ALL {
            if let Some(c) = self.get(p) {
                if best.is_none_or(|(_, b)| c < b) {
                    best = Some((p, c));
                }
            }
        }
        best.map(|(p, _)| p)
    }
}

/// Anything that can report per-component counts for a condition. The
/// planner only sees cardinalities through this trait.
pub trait CardinalitySource {
    fn component_counts(&self, c: &Condition) -> ComponentCounts;

    /// `INFINITE` for rank 0, otherwise the smallest component count.
    fn condition_cardinality(&self, c: &Condition) -> Cardinality {
        self.component_counts(c).min()
    }
}

enum FactTypeSlots {
    Hash(HashMap<Sym, u32>),
    Direct(Vec<u32>),
}

const NO_SLOT: u32 = u32::MAX;

impl FactTypeSlots {
    fn get(&self, ft: Sym) -> Option<usize> {
        match self {
            FactTypeSlots::Hash(m) => m.get(&ft).map(|&i| i as usize),
            FactTypeSlots::Direct(v) => match v.get(ft.0 as usize) {
                Some(&i) if i != NO_SLOT => Some(i as usize),
                _ => None,
            },
        }
    }

    fn set(&mut self, ft: Sym, slot: usize) {
        match self {
            FactTypeSlots::Hash(m) => {
                m.insert(ft, slot as u32);
            }
            FactTypeSlots::Direct(v) => {
                let i = ft.0 as usize;
                if i >= v.len() {
                    v.resize((i + 1).next_power_of_two(), NO_SLOT);
                }
                v[i] = slot as u32;
            }
        }
    }
}

pub struct Rank1Index {
    backend: Backend,
    slots: FactTypeSlots,
    parts: Vec<(Sym, Box<dyn PartitionStore>)>,
    lookups: AtomicU64,
}

impl Rank1Index {
    pub fn new(backend: Backend) -> Self {
        let slots = match backend {
            Backend::Hi => FactTypeSlots::Hash(HashMap::new()),
            _ => FactTypeSlots::Direct(Vec::new()),
        };
        Self { backend, slots, parts: Vec::new(), lookups: AtomicU64::new(0) }
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    fn new_partition(&self) -> Box<dyn PartitionStore> {
        match self.backend {
            Backend::Hi => Box::new(Partition::<HashKeys<Vec<Residual>>, Vec<Residual>>::default()),
            Backend::Ai => Box::new(Partition::<DirectKeys<Vec<Residual>>, Vec<Residual>>::default()),
            Backend::Lpim => Box::new(Partition::<DirectKeys<Chain<PagePool>>, Chain<PagePool>>::default()),
            Backend::Lpid => Box::new(Partition::<DirectKeys<Chain<HeapPages>>, Chain<HeapPages>>::default()),
        }
    }

    fn part(&self, ft: Sym) -> Option<&dyn PartitionStore> {
        self.slots.get(ft).map(|i| &*self.parts[i].1)
    }

    fn ensure_partition(&mut self, ft: Sym) -> usize {
        if let Some(i) = self.slots.get(ft) {
            return i;
        }
        let p = self.new_partition();
        self.parts.push((ft, p));
        let i = self.parts.len() - 1;
        self.slots.set(ft, i);
        i
    }

    /// Inserts `f`; returns false if it was already stored.
    pub fn insert_fact(&mut self, f: &Fact) -> bool {
        let i = self.ensure_partition(f.fact_type);
        self.parts[i].1.insert(f)
    }

    pub fn delete_fact(&mut self, f: &Fact) -> bool {
        match self.slots.get(f.fact_type) {
            Some(i) => self.parts[i].1.remove(f),
            None => false,
        }
    }

    pub fn contains(&self, f: &Fact) -> bool {
        self.part(f.fact_type).is_some_and(|p| p.contains(f))
    }

    pub fn len(&self) -> usize {
        self.parts.iter().map(|(_, p)| p.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn len_of_type(&self, ft: Sym) -> usize {
        self.part(ft).map_or(0, |p| p.len())
    }

    pub fn fact_types(&self) -> Vec<Sym> {
        self.parts.iter().map(|(s, _)| *s).collect()
    }

    /// Every stored fact of `ft`, enumerated through component index `pos`.
    pub fn facts_of_type_via(&self, ft: Sym, pos: JoinPosition) -> Vec<Fact> {
        let mut out = Vec::new();
        if let Some(p) = self.part(ft) {
            for vt in ValueType::ALL {
                p.collect_type(ft, pos, vt, &mut out);
            }
        }
        out
    }

    /// Every stored fact, enumerated through component index `pos`.
    pub fn facts_via(&self, pos: JoinPosition) -> Vec<Fact> {
        self.fact_types().into_iter().flat_map(|ft| self.facts_of_type_via(ft, pos)).collect()
    }

    pub fn facts(&self) -> Vec<Fact> {
        self.facts_via(JoinPosition::Id)
    }

    /// Number of `r1l`/`rnl`/`rl` calls served so far.
    pub fn lookup_count(&self) -> u64 {
        self.lookups.load(Ordering::Relaxed)
    }

    fn note_lookup(&self) {
        self.lookups.fetch_add(1, Ordering::Relaxed);
    }

    fn key(c: &Condition, pos: JoinPosition) -> Option<store::Key> {
        c.const_at(pos).map(|v| (c.value_type, v.bits()))
    }

    /// Fetch on the single concrete component of a rank-1 condition; empty
    /// for any other rank.
    pub fn r1l(&self, c: &Condition) -> Vec<Fact> {
        self.note_lookup();
        if c.rank() != 1 {
            return Vec::new();
        }
        let mut out = Vec::new();
        if let Some(p) = self.part(c.fact_type) {
            let pos = JoinPosition::ALL.into_iter().find(|&p| c.const_at(p).is_some()).expect("rank 1 has one constant");
            p.collect(c.fact_type, pos, Self::key(c, pos).expect("constant slot"), &mut out);
        }
        out
    }

    /// Fetch on the most selective concrete component, then filter the
    /// remaining concrete components by equality.
    pub fn rnl(&self, c: &Condition) -> Vec<Fact> {
        self.note_lookup();
        self.rnl_inner(c)
    }

    fn rnl_inner(&self, c: &Condition) -> Vec<Fact> {
        let Some(p) = self.part(c.fact_type) else {
            return Vec::new();
        };
        let counts = self.component_counts(c);
        let Some(first) = counts.cheapest() else {
            return Vec::new();
        };
        let mut out = Vec::new();
        p.collect(c.fact_type, first, Self::key(c, first).expect("constant slot"), &mut out);
        let filters: Vec<_> =
            JoinPosition::ALL.into_iter().filter(|&q| q != first).filter_map(|q| c.const_at(q).map(|v| (q, v.bits()))).collect();
        if !filters.is_empty() {
            out.retain(|f| filters.iter().all(|&(q, bits)| f.slot(q).bits() == bits));
        }
        out
    }

    /// Rank dispatch: `r1l` for rank 1, `rnl` for ranks 2 and 3, and a scan
    /// of the fact type (restricted to the condition's value type) for rank 0.
    pub fn rl(&self, c: &Condition) -> Vec<Fact> {
        match c.rank() {
            0 => {
                self.note_lookup();
                let mut out = Vec::new();
                if let Some(p) = self.part(c.fact_type) {
                    p.collect_type(c.fact_type, JoinPosition::Id, c.value_type, &mut out);
                }
                out
            }
            1 => self.r1l(c),
            _ => self.rnl(c),
        }
    }

    /// Exclusive write handles for disjoint groups of fact types. Every type
    /// must appear in at most one group; a fact type not yet present gets an
    /// empty partition first.
    pub fn writers(&mut self, groups: &[Vec<Sym>]) -> Vec<PartitionWriter<'_>> {
        let mut owner: HashMap<Sym, usize> = HashMap::new();
        for (g, types) in groups.iter().enumerate() {
            for &t in types {
                let prev = owner.insert(t, g);
                assert!(prev.is_none_or(|p| p == g), "fact type {t} owned by two writers");
                self.ensure_partition(t);
            }
        }
        let mut out: Vec<PartitionWriter<'_>> = (0..groups.len()).map(|_| PartitionWriter { parts: Vec::new() }).collect();
        for (ft, part) in self.parts.iter_mut() {
            if let Some(&g) = owner.get(ft) {
                out[g].parts.push((*ft, part.as_mut()));
            }
        }
        out
    }
}

impl CardinalitySource for Rank1Index {
    fn component_counts(&self, c: &Condition) -> ComponentCounts {
        let mut counts = ComponentCounts::default();
        let part = self.part(c.fact_type);
        for pos in JoinPosition::ALL {
            if let Some(k) = Self::key(c, pos) {
                let n = part.map_or(0, |p| p.count(pos, k));
                match pos {
                    JoinPosition::Id => counts.id = Some(n),
                    JoinPosition::Attr => counts.attr = Some(n),
                    JoinPosition::Val => counts.val = Some(n),
                }
            }
        }
        counts
    }
}

impl fmt::Debug for Rank1Index {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Rank1Index")
            .field("backend", &self.backend)
            .field("fact_types", &self.parts.len())
            .field("facts", &self.len())
            .finish()
    }
}

/// Write access to the partitions of one out-group. Writing a fact type the
/// writer does not own panics.
pub struct PartitionWriter<'a> {
    parts: Vec<(Sym, &'a mut dyn PartitionStore)>,
}

impl PartitionWriter<'_> {
    fn part(&mut self, ft: Sym) -> &mut dyn PartitionStore {
        match self.parts.iter_mut().find(|(s, _)| *s == ft) {
            Some((_, p)) => &mut **p,
            None => panic!("writer does not own fact type {ft}"),
        }
    }

    pub fn owns(&self, ft: Sym) -> bool {
        self.parts.iter().any(|(s, _)| *s == ft)
    }

    pub fn insert(&mut self, f: &Fact) -> bool {
        self.part(f.fact_type).insert(f)
    }

    pub fn delete(&mut self, f: &Fact) -> bool {
        self.part(f.fact_type).remove(f)
    }

    pub fn contains(&mut self, f: &Fact) -> bool {
        self.part(f.fact_type).contains(f)
    }
}
