//! Page chains for the paged backends.
//!
//! A key's postings are a chain of pages. The first page holds 16 residuals
//! and each following page doubles until [`PAGE_SIZE`]; from then on every
//! page is full size. Small keys stay small, large keys get contiguous 1024
//! element runs.

use std::marker::PhantomData;

use super::store::{Postings, Residual};

pub const PAGE_SIZE: usize = 1024;
pub const MIN_PAGE: usize = 16;
/// Size classes 16, 32, .., 1024.
pub const CLASSES: usize = (PAGE_SIZE / MIN_PAGE).trailing_zeros() as usize + 1;
/// Pages the pool carves from its first slab.
pub const INITIAL_PAGES: usize = 4096;

/// Elements in the page of size class `class`.
#[inline]
pub fn class_capacity(class: usize) -> usize {
    MIN_PAGE << class.min(CLASSES - 1)
}

/// Size class of the `n`-th page of a chain.
#[inline]
fn class_of_page(n: usize) -> usize {
    n.min(CLASSES - 1)
}

/// Total capacity of the first `n` pages of a chain.
#[inline]
fn chain_capacity(n: usize) -> usize {
    if n < CLASSES {
        MIN_PAGE * ((1 << n) - 1)
    } else {
        MIN_PAGE * ((1 << CLASSES) - 1) + (n - CLASSES) * PAGE_SIZE
    }
}

/// Page index and offset of element `i`.
#[inline]
fn locate(i: usize) -> (usize, usize) {
    let graded = chain_capacity(CLASSES);
    if i < graded {
        let page = (i / MIN_PAGE + 1).ilog2() as usize;
        (page, i - chain_capacity(page))
    } else {
        let rest = i - graded;
        (CLASSES + rest / PAGE_SIZE, rest % PAGE_SIZE)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PageId {
    slab: u32,
    offset: u32,
}

pub trait PageSource: Default + Send + Sync {
    fn alloc(&mut self, class: usize) -> PageId;
    fn release(&mut self, page: PageId, class: usize);
    fn page(&self, page: PageId, class: usize) -> &[Residual];
    fn page_mut(&mut self, page: PageId, class: usize) -> &mut [Residual];
}

/// Pre-allocated page pool. Pages are carved out of large slabs and
/// recycled through per-class free lists; a new slab is twice the size of
/// the previous one.
#[derive(Default)]
pub struct PagePool {
    slabs: Vec<Vec<Residual>>,
    bump: usize,
    free: [Vec<PageId>; CLASSES],
}

#[cfg(test)]
impl PagePool {
    /// Residual slots reserved across all slabs.
    pub fn reserved(&self) -> usize {
        self.slabs.iter().map(Vec::len).sum()
    }

    pub fn free_pages(&self) -> usize {
        self.free.iter().map(Vec::len).sum()
    }
}

impl PageSource for PagePool {
    fn alloc(&mut self, class: usize) -> PageId {
        if let Some(p) = self.free[class].pop() {
            return p;
        }
        let cap = class_capacity(class);
        let room = self.slabs.last().map_or(0, |s| s.len() - self.bump);
        if room < cap {
            let size = match self.slabs.last() {
                None => INITIAL_PAGES * MIN_PAGE,
                Some(s) => s.len() * 2,
            };
            self.slabs.push(vec![Residual::default(); size.max(cap)]);
            self.bump = 0;
        }
        let id = PageId { slab: (self.slabs.len() - 1) as u32, offset: self.bump as u32 };
        self.bump += cap;
        id
    }

    fn release(&mut self, page: PageId, class: usize) {
        self.free[class].push(page);
    }

    fn page(&self, page: PageId, class: usize) -> &[Residual] {
        let o = page.offset as usize;
        &self.slabs[page.slab as usize][o..o + class_capacity(class)]
    }

    fn page_mut(&mut self, page: PageId, class: usize) -> &mut [Residual] {
        let o = page.offset as usize;
        &mut self.slabs[page.slab as usize][o..o + class_capacity(class)]
    }
}

/// Pages allocated individually on demand and freed when a chain shrinks.
#[derive(Default)]
pub struct HeapPages {
    pages: Vec<Option<Box<[Residual]>>>,
    vacant: Vec<u32>,
}

#[cfg(test)]
impl HeapPages {
    pub fn live_pages(&self) -> usize {
        self.pages.len() - self.vacant.len()
    }
}

impl PageSource for HeapPages {
    fn alloc(&mut self, class: usize) -> PageId {
        let page = vec![Residual::default(); class_capacity(class)].into_boxed_slice();
        let slot = match self.vacant.pop() {
            Some(s) => {
                self.pages[s as usize] = Some(page);
                s
            }
            None => {
                self.pages.push(Some(page));
                (self.pages.len() - 1) as u32
            }
        };
        PageId { slab: slot, offset: 0 }
    }

    fn release(&mut self, page: PageId, _class: usize) {
        self.pages[page.slab as usize] = None;
        self.vacant.push(page.slab);
    }

    fn page(&self, page: PageId, _class: usize) -> &[Residual] {
        self.pages[page.slab as usize].as_deref().expect("released page")
    }

    fn page_mut(&mut self, page: PageId, _class: usize) -> &mut [Residual] {
        self.pages[page.slab as usize].as_deref_mut().expect("released page")
    }
}

/// Insertion-ordered postings stored in pages from `S`.
pub struct Chain<S> {
    pages: Vec<PageId>,
    len: usize,
    _source: PhantomData<fn() -> S>,
}

impl<S> Default for Chain<S> {
    fn default() -> Self {
        Self { pages: Vec::new(), len: 0, _source: PhantomData }
    }
}

impl<S: PageSource> Chain<S> {
    fn get(&self, src: &S, i: usize) -> Residual {
        let (p, o) = locate(i);
        src.page(self.pages[p], class_of_page(p))[o]
    }

    fn set(&mut self, src: &mut S, i: usize, r: Residual) {
        let (p, o) = locate(i);
        src.page_mut(self.pages[p], class_of_page(p))[o] = r;
    }

    fn position(&self, src: &S, r: Residual) -> Option<usize> {
        let mut base = 0;
        for (n, &page) in self.pages.iter().enumerate() {
            let fill = (self.len - base).min(class_capacity(class_of_page(n)));
            if let Some(o) = src.page(page, class_of_page(n))[..fill].iter().position(|x| *x == r) {
                return Some(base + o);
            }
            base += fill;
            if base == self.len {
                break;
            }
        }
        None
    }
}

impl<S: PageSource> Postings for Chain<S> {
    type Ctx = S;

    fn len(&self) -> usize {
        self.len
    }

    fn push(&mut self, src: &mut S, r: Residual) {
        if self.len == chain_capacity(self.pages.len()) {
            let page = src.alloc(class_of_page(self.pages.len()));
            self.pages.push(page);
        }
        self.len += 1;
        self.set(src, self.len - 1, r);
    }

    fn remove(&mut self, src: &mut S, r: Residual) -> bool {
        let Some(i) = self.position(src, r) else {
            return false;
        };
        let last = self.len - 1;
        if i != last {
            let moved = self.get(src, last);
            self.set(src, i, moved);
        }
        self.len -= 1;
        if !self.pages.is_empty() && self.len == chain_capacity(self.pages.len() - 1) {
            let page = self.pages.pop().expect("non-empty chain");
            src.release(page, class_of_page(self.pages.len()));
        }
        true
    }

    fn contains(&self, src: &S, r: Residual) -> bool {
        self.position(src, r).is_some()
    }

    fn for_each(&self, src: &S, f: &mut dyn FnMut(Residual)) {
        let mut left = self.len;
        for (n, &page) in self.pages.iter().enumerate() {
            let fill = left.min(class_capacity(class_of_page(n)));
            src.page(page, class_of_page(n))[..fill].iter().for_each(|r| f(*r));
            left -= fill;
        }
    }
}
