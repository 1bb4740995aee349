//! Fork-join primitives: parallel sort, keyed payload sort, merge join and
//! unique filter.
//!
//! Every operation forks work over blocks owned by one worker each and joins
//! the partial results in barrier-separated steps. Results never depend on
//! the worker count or block size.

use std::cmp::Ordering;
use std::sync::Arc;

use num_traits::{PrimInt, Unsigned};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fact::Fact;
use crate::index::Rank1Index;

/// Unsigned integer keys accepted by the sort and join primitives.
pub trait SortKey: PrimInt + Unsigned + Send + Sync {}

impl<T: PrimInt + Unsigned + Send + Sync> SortKey for T {}

/// Smallest block handed to a worker; below this, forking costs more than it
/// saves.
const MIN_BLOCK: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForkJoinConfig {
    pub workers: usize,
    pub block_size_bytes: usize,
}

impl Default for ForkJoinConfig {
    fn default() -> Self {
        Self { workers: std::thread::available_parallelism().map_or(1, |n| n.get()), block_size_bytes: 8 << 20 }
    }
}

/// A worker pool plus the block-size policy.
#[derive(Clone)]
pub struct ForkJoin {
    cfg: ForkJoinConfig,
    pool: Arc<rayon::ThreadPool>,
}

impl std::fmt::Debug for ForkJoin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ForkJoin").field("cfg", &self.cfg).finish()
    }
}

impl ForkJoin {
    pub fn new(cfg: ForkJoinConfig) -> Result<Self> {
        if cfg.workers == 0 {
            return Err(Error::Config("worker count must be positive".into()));
        }
        if cfg.block_size_bytes == 0 {
            return Err(Error::Config("block size must be positive".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .thread_name(|i| format!("hiperfact-worker-{i}"))
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self { cfg, pool: Arc::new(pool) })
    }

    pub fn with_workers(workers: usize) -> Result<Self> {
        Self::new(ForkJoinConfig { workers, ..ForkJoinConfig::default() })
    }

    pub fn config(&self) -> ForkJoinConfig {
        self.cfg
    }

    pub fn workers(&self) -> usize {
        self.cfg.workers
    }

    /// Runs `f` inside the pool so nested rayon calls use its workers.
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }

    /// Elements per block: the configured byte budget, but no larger than an
    /// even share of the input so every worker gets a block.
    fn block_elems(&self, n: usize, elem_bytes: usize) -> usize {
        let by_bytes = (self.cfg.block_size_bytes / elem_bytes.max(1)).max(1);
        let share = n.div_ceil(self.cfg.workers).max(MIN_BLOCK);
        by_bytes.min(share)
    }

    /// Sorts ascending. Blocks are sorted locally, then merged pairwise
    /// level by level between two pre-sized buffers.
    pub fn parallel_sort<K: SortKey>(&self, data: Vec<K>) -> Vec<K> {
        self.sort_any(data)
    }

    pub(crate) fn sort_any<T: Ord + Copy + Send + Sync>(&self, data: Vec<T>) -> Vec<T> {
        let n = data.len();
        if n <= 1 {
            return data;
        }
        let block = self.block_elems(n, std::mem::size_of::<T>());
        let workers = self.cfg.workers;
        self.install(move || {
            let mut src = data;
            src.par_chunks_mut(block).for_each(|c| c.sort_unstable());
            if block >= n {
                return src;
            }
            let mut dst = src.clone();
            let mut width = block;
            while width < n {
                let pairs = n.div_ceil(2 * width);
                // when there are fewer pairs than workers, split each merge
                let parts = workers.div_ceil(pairs).max(1);
                dst.par_chunks_mut(2 * width).zip(src.par_chunks(2 * width)).for_each(|(out, run)| {
                    if run.len() <= width {
                        // odd run out: carried to the next level as is
                        out.copy_from_slice(run);
                    } else {
                        let (a, b) = run.split_at(width);
                        merge_split(a, b, out, parts);
                    }
                });
                std::mem::swap(&mut src, &mut dst);
                width *= 2;
            }
            src
        })
    }

    /// Permutation that sorts `keys`; ties keep input order.
    pub fn argsort<K: SortKey>(&self, keys: &[K]) -> Vec<usize> {
        let tagged: Vec<(K, usize)> = keys.iter().copied().zip(0..).collect();
        self.sort_any(tagged).into_iter().map(|(_, i)| i).collect()
    }

    /// Sorts `keys` and applies the same permutation to every payload column.
    pub fn keyed_payload_sort<K: SortKey, P: Copy + Send + Sync>(
        &self,
        keys: &[K],
        payloads: &[Vec<P>],
    ) -> Result<(Vec<K>, Vec<Vec<P>>)> {
        for col in payloads {
            if col.len() != keys.len() {
                return Err(Error::LengthMismatch { expected: keys.len(), actual: col.len() });
            }
        }
        let perm = self.argsort(keys);
        let sorted = gather(&perm, keys);
        let cols = self.install(|| payloads.par_iter().map(|c| gather(&perm, c)).collect());
        Ok((sorted, cols))
    }

    /// Equi-join of two sorted key arrays. Returns `(lhs index, rhs index)`
    /// for every pair of equal keys, grouped by key in ascending order.
    ///
    /// Each worker joins one range of `lhs` (cut only between runs of equal
    /// keys) against the matching range of `rhs`.
    pub fn parallel_merge_join<K: SortKey>(&self, lhs: &[K], rhs: &[K]) -> Result<Vec<(usize, usize)>> {
        check_sorted(lhs, "left")?;
        check_sorted(rhs, "right")?;
        if lhs.is_empty() || rhs.is_empty() {
            return Ok(Vec::new());
        }
        let parts = self.cfg.workers.min(lhs.len().div_ceil(MIN_BLOCK)).max(1);
        let mut cuts = vec![0];
        for i in 1..parts {
            let mut p = i * lhs.len() / parts;
            while p < lhs.len() && p > 0 && lhs[p] == lhs[p - 1] {
                p += 1;
            }
            if p > *cuts.last().expect("non-empty") && p < lhs.len() {
                cuts.push(p);
            }
        }
        cuts.push(lhs.len());
        let ranges: Vec<(usize, usize)> = cuts.windows(2).map(|w| (w[0], w[1])).collect();
        let chunks: Vec<Vec<(usize, usize)>> = self.install(|| {
            ranges
                .par_iter()
                .map(|&(s, e)| {
                    let rs = rhs.partition_point(|k| *k < lhs[s]);
                    let re = if e == lhs.len() { rhs.len() } else { rhs.partition_point(|k| *k < lhs[e]) };
                    merge_join_range(lhs, s, e, rhs, rs, re)
                })
                .collect()
        });
        Ok(chunks.concat())
    }

    /// Distinct candidates that are not stored in `existing`.
    pub fn parallel_unique_filter(&self, candidates: &[Fact], existing: &Rank1Index) -> Vec<Fact> {
        let mut sorted = self.sort_any(candidates.to_vec());
        sorted.dedup();
        self.install(|| sorted.into_par_iter().filter(|f| !existing.contains(f)).collect())
    }
}

fn gather<T: Copy>(perm: &[usize], src: &[T]) -> Vec<T> {
    perm.iter().map(|&i| src[i]).collect()
}

fn check_sorted<K: SortKey>(keys: &[K], side: &'static str) -> Result<()> {
    match keys.windows(2).position(|w| w[0] > w[1]) {
        Some(i) => Err(Error::Unsorted { side, position: i + 1 }),
        None => Ok(()),
    }
}

fn merge_join_range<K: SortKey>(lhs: &[K], mut i: usize, ie: usize, rhs: &[K], mut j: usize, je: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    while i < ie && j < je {
        match lhs[i].cmp(&rhs[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                let k = lhs[i];
                let i_end = i + lhs[i..ie].iter().take_while(|x| **x == k).count();
                let j_end = j + rhs[j..je].iter().take_while(|x| **x == k).count();
                for a in i..i_end {
                    for b in j..j_end {
                        out.push((a, b));
                    }
                }
                i = i_end;
                j = j_end;
            }
        }
    }
    out
}

/// Sequential two-way merge; ties take from `a` first.
fn merge<T: Ord + Copy>(a: &[T], b: &[T], out: &mut [T]) {
    let (mut i, mut j) = (0, 0);
    for slot in out.iter_mut() {
        if j >= b.len() || (i < a.len() && a[i] <= b[j]) {
            *slot = a[i];
            i += 1;
        } else {
            *slot = b[j];
            j += 1;
        }
    }
}

/// Number of elements taken from `a` among the first `p` merged outputs.
fn co_rank<T: Ord>(p: usize, a: &[T], b: &[T]) -> usize {
    let (mut lo, mut hi) = (p.saturating_sub(b.len()), p.min(a.len()));
    while lo < hi {
        let i = (lo + hi) / 2;
        let j = p - i;
        // too few from a when a[i] should precede b[j-1]
        if j > 0 && i < a.len() && a[i] <= b[j - 1] {
            lo = i + 1;
        } else {
            hi = i;
        }
    }
    lo
}

/// Merges `a` and `b` into `out`, split into `parts` independent pieces.
fn merge_split<T: Ord + Copy + Send + Sync>(a: &[T], b: &[T], out: &mut [T], parts: usize) {
    let n = out.len();
    if parts <= 1 || n < 2 * MIN_BLOCK {
        merge(a, b, out);
        return;
    }
    let mut pieces = Vec::with_capacity(parts);
    let mut rest = out;
    let (mut prev_p, mut prev_i) = (0, 0);
    for k in 1..=parts {
        let p = k * n / parts;
        let i = if k == parts { a.len() } else { co_rank(p, a, b) };
        let (head, tail) = rest.split_at_mut(p - prev_p);
        pieces.push((&a[prev_i..i], &b[prev_p - prev_i..p - i], head));
        rest = tail;
        prev_p = p;
        prev_i = i;
    }
    pieces.into_par_iter().for_each(|(x, y, o)| merge(x, y, o));
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fj(w: usize, block: usize) -> ForkJoin {
        ForkJoin::new(ForkJoinConfig { workers: w, block_size_bytes: block }).unwrap()
    }

    #[test]
    fn sort_edge_cases() {
        let f = fj(4, 64);
        assert_eq!(f.parallel_sort(Vec::<u32>::new()), Vec::<u32>::new());
        assert_eq!(f.parallel_sort(vec![5u64]), vec![5]);
        let sorted: Vec<u32> = (0..20_000).collect();
        assert_eq!(f.parallel_sort(sorted.clone()), sorted);
    }

    #[test]
    fn sort_matches_sequential_across_configs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1usize, 2, 17, 4095, 4096, 4097, 30_001] {
            let data: Vec<u32> = (0..n).map(|_| rng.random_range(0..1000)).collect();
            let mut oracle = data.clone();
            oracle.sort();
            for (w, b) in [(1, 1 << 20), (2, 64), (3, 16_384), (8, 4)] {
                assert_eq!(fj(w, b).parallel_sort(data.clone()), oracle, "n={n} w={w} b={b}");
            }
        }
    }

    #[test]
    fn split_merge_matches_plain_merge() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let mut a: Vec<u16> = (0..rng.random_range(0..20_000)).map(|_| rng.random_range(0..50)).collect();
            let mut b: Vec<u16> = (0..rng.random_range(0..20_000)).map(|_| rng.random_range(0..50)).collect();
            a.sort();
            b.sort();
            let mut want = vec![0; a.len() + b.len()];
            merge(&a, &b, &mut want);
            let mut got = vec![0; a.len() + b.len()];
            merge_split(&a, &b, &mut got, 7);
            assert_eq!(got, want);
        }
    }

    #[test]
    fn keyed_payload_example() {
        let f = fj(2, 1 << 20);
        let (k, p) = f.keyed_payload_sort(&[3u32, 1, 2], &[vec!['a', 'b', 'c']]).unwrap();
        assert_eq!(k, vec![1, 2, 3]);
        assert_eq!(p, vec![vec!['b', 'c', 'a']]);
        let (k, p) = f.keyed_payload_sort(&[7u32], &[vec![1u8]]).unwrap();
        assert_eq!((k, p), (vec![7], vec![vec![1]]));
        assert!(matches!(f.keyed_payload_sort(&[1u32, 2], &[vec![0u8]]), Err(Error::LengthMismatch { expected: 2, actual: 1 })));
    }

    #[test]
    fn keyed_sort_ties_keep_input_order() {
        let f = fj(4, 8);
        let keys = vec![2u64; 10_000];
        let idx: Vec<usize> = (0..10_000).collect();
        let (_, p) = f.keyed_payload_sort(&keys, std::slice::from_ref(&idx)).unwrap();
        assert_eq!(p[0], idx);
    }

    #[test]
    fn merge_join_examples() {
        let f = fj(4, 1 << 20);
        assert_eq!(f.parallel_merge_join(&[1u32, 2, 2], &[2, 3]).unwrap(), vec![(1, 0), (2, 0)]);
        assert!(f.parallel_merge_join(&[1u32, 2], &[3, 4]).unwrap().is_empty());
        assert!(matches!(f.parallel_merge_join(&[1u32, 0], &[1]), Err(Error::Unsorted { side: "left", position: 1 })));
        assert!(matches!(f.parallel_merge_join(&[1u32], &[5, 4, 6]), Err(Error::Unsorted { side: "right", position: 1 })));
    }

    #[test]
    fn merge_join_ranges_cut_between_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut l: Vec<u64> = (0..40_000).map(|_| rng.random_range(0..300)).collect();
        let mut r: Vec<u64> = (0..5_000).map(|_| rng.random_range(0..300)).collect();
        l.sort();
        r.sort();
        let mut want = Vec::new();
        for (i, a) in l.iter().enumerate() {
            for (j, b) in r.iter().enumerate() {
                if a == b {
                    want.push((i, j));
                }
            }
        }
        let mut got = fj(8, 1 << 20).parallel_merge_join(&l, &r).unwrap();
        got.sort();
        assert_eq!(got, want);
    }
}
