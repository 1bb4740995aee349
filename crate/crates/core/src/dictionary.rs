//! String dictionary.
//!
//! Every string that enters the engine (fact types, ids, attributes and
//! string-typed values) is replaced by a dense 64-bit handle so that facts
//! are fixed size and equality is a single integer comparison.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Bound;
use std::sync::{Arc, RwLock};

use crate::error::{Error, Result};

/// Handle of an interned string.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Sym(pub u64);

impl Sym {
    #[inline]
    pub fn id(self) -> u64 {
        self.0
    }
}

impl fmt::Display for Sym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Default)]
struct Inner {
    forward: BTreeMap<Arc<str>, u64>,
    reverse: Vec<Arc<str>>,
}

/// Bidirectional string <-> handle map. Ids are assigned densely from 0 in
/// interning order and never reused.
///
/// Reads take a shared lock; interning a new string takes the write lock, so
/// concurrent interns are serialized and readers observe either the state
/// before or after a write.
#[derive(Default)]
pub struct StringDictionary {
    inner: RwLock<Inner>,
}

impl StringDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&self, s: &str) -> Sym {
        if let Some(id) = self.get(s) {
            return id;
        }
        let mut inner = self.inner.write().expect("dictionary lock poisoned");
        // another writer may have won the race
        if let Some(&id) = inner.forward.get(s) {
            return Sym(id);
        }
        let id = inner.reverse.len() as u64;
        let key: Arc<str> = Arc::from(s);
        inner.reverse.push(key.clone());
        inner.forward.insert(key, id);
        Sym(id)
    }

    /// Handle of `s` if it has been interned.
    pub fn get(&self, s: &str) -> Option<Sym> {
        let inner = self.inner.read().expect("dictionary lock poisoned");
        inner.forward.get(s).map(|&id| Sym(id))
    }

    pub fn resolve(&self, id: Sym) -> Result<Arc<str>> {
        let inner = self.inner.read().expect("dictionary lock poisoned");
        inner.reverse.get(id.0 as usize).cloned().ok_or(Error::UnknownId(id.0))
    }

    pub fn len(&self) -> usize {
        self.inner.read().expect("dictionary lock poisoned").reverse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All interned strings in id order.
    pub fn strings(&self) -> Vec<Arc<str>> {
        self.inner.read().expect("dictionary lock poisoned").reverse.clone()
    }

    /// Interned strings starting with `prefix`, in byte order.
    pub fn with_prefix(&self, prefix: &str) -> Vec<(Arc<str>, Sym)> {
        let inner = self.inner.read().expect("dictionary lock poisoned");
        inner
            .forward
            .range::<str, _>((Bound::Included(prefix), Bound::Unbounded))
            .take_while(|(k, _)| k.starts_with(prefix))
            .map(|(k, &v)| (k.clone(), Sym(v)))
            .collect()
    }
}

impl fmt::Debug for StringDictionary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StringDictionary").field("len", &self.len()).finish()
    }
}
