//! Order-preserving bucketization of metric values into narrow bit fields.
//!
//! Distinct values get consecutive ordinals when they fit. Otherwise values
//! are grouped into windows of width `mult * sigma` starting at the minimum,
//! with `mult` doubling from 0.05 until the number of non-empty windows fits.
//! Infinite values always get their own, last ordinal.

use num_traits::Float;

#[derive(Clone, Debug, PartialEq)]
enum Mapping<T> {
    /// Sorted distinct finite values.
    Exact(Vec<T>),
    /// Sorted indices of non-empty windows.
    Windows { min: T, width: T, windows: Vec<u64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct BucketMap<T> {
    bits: u32,
    sigma: T,
    mult: T,
    mapping: Mapping<T>,
    /// Ordinal given to +inf, when present.
    infinite: Option<u32>,
}

/// Population standard deviation.
pub fn population_std<T: Float>(values: &[T]) -> T {
    if values.is_empty() {
        return T::zero();
    }
    let n = T::from(values.len()).expect("length fits the float type");
    let mean = values.iter().fold(T::zero(), |a, &x| a + x) / n;
    let var = values.iter().fold(T::zero(), |a, &x| a + (x - mean) * (x - mean)) / n;
    var.sqrt()
}

impl<T: Float> BucketMap<T> {
    /// Builds the map for `values` (duplicates allowed, order irrelevant) so
    /// that every ordinal fits in `bits` bits. NaN values are ignored.
    pub fn build(values: &[T], bits: u32) -> Self {
        assert!((1..=32).contains(&bits), "field width {bits} out of range");
        let capacity = 1u64 << bits;
        let finite: Vec<T> = values.iter().copied().filter(|x| x.is_finite()).collect();
        let has_inf = values.iter().any(|x| x.is_infinite());
        let slots = capacity - has_inf as u64;

        let mut distinct = finite.clone();
        distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        distinct.dedup();
        let sigma = population_std(&finite);

        let (mapping, mult) = if distinct.len() as u64 <= slots || sigma <= T::zero() {
            (Mapping::Exact(distinct), T::zero())
        } else {
            let min = distinct[0];
            let two = T::one() + T::one();
            let mut mult = T::from(0.05).expect("representable");
            loop {
                let width = mult * sigma;
                let mut windows: Vec<u64> = distinct.iter().map(|&x| window(x, min, width)).collect();
                windows.dedup();
                if windows.len() as u64 <= slots {
                    break (Mapping::Windows { min, width, windows }, mult);
                }
                mult = mult * two;
            }
        };
        let mut map = Self { bits, sigma, mult, mapping, infinite: None };
        if has_inf {
            map.infinite = Some(map.finite_len());
        }
        map
    }

    fn finite_len(&self) -> u32 {
        match &self.mapping {
            Mapping::Exact(v) => v.len() as u32,
            Mapping::Windows { windows, .. } => windows.len() as u32,
        }
    }

    /// Number of ordinals in use.
    pub fn len(&self) -> u32 {
        self.finite_len() + self.infinite.is_some() as u32
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    /// Window width as a multiple of sigma; 0 when values map one to one.
    pub fn mult(&self) -> T {
        self.mult
    }

    pub fn is_capped(&self) -> bool {
        matches!(self.mapping, Mapping::Windows { .. })
    }

    /// Largest ordinal this map hands out.
    pub fn max_ordinal(&self) -> u32 {
        self.len().saturating_sub(1)
    }

    /// Ordinal of `x`. Values not seen at build time land next to their
    /// neighbours, so the order is still preserved.
    pub fn ordinal(&self, x: T) -> u32 {
        if x.is_infinite() && x > T::zero() {
            if let Some(o) = self.infinite {
                return o;
            }
        }
        let o = match &self.mapping {
            Mapping::Exact(v) => v.partition_point(|&y| y < x),
            Mapping::Windows { min, width, windows } => {
                let w = if x <= *min { 0 } else { window(x, *min, *width) };
                windows.partition_point(|&y| y < w)
            }
        };
        (o as u32).min(self.finite_len().saturating_sub(1))
    }
}

fn window<T: Float>(x: T, min: T, width: T) -> u64 {
    ((x - min) / width).floor().to_u64().unwrap_or(u64::MAX)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const CARDINALITIES: [f64; 7] = [2043.0, 6833.0, 6833.0, 9700.0, 50900.0, 160000.0, 700000.0];

    #[test]
    fn distinct_values_fit_in_three_bits() {
        let m = BucketMap::build(&CARDINALITIES, 3);
        assert!(!m.is_capped());
        let got: Vec<u32> = [2043.0, 6833.0, 9700.0, 50900.0, 160000.0, 700000.0].iter().map(|&x| m.ordinal(x)).collect();
        assert_eq!(got, [0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn capped_into_two_bits() {
        let m = BucketMap::build(&CARDINALITIES, 2);
        assert!((m.sigma() - 236988.01).abs() < 0.5);
        assert!(m.is_capped());
        assert_eq!(m.mult(), 0.05);
        let got: Vec<u32> = CARDINALITIES.iter().map(|&x| m.ordinal(x)).collect();
        assert_eq!(got, [0, 0, 0, 0, 1, 2, 3]);
    }

    #[test]
    fn single_value_and_empty() {
        let m = BucketMap::build(&[5.0f32; 9], 2);
        assert_eq!(m.ordinal(5.0), 0);
        assert_eq!(m.len(), 1);
        let e = BucketMap::<f64>::build(&[], 4);
        assert!(e.is_empty());
        assert_eq!(e.ordinal(3.0), 0);
    }

    #[test]
    fn infinity_is_last() {
        let m = BucketMap::build(&[1.0, 2.0, f64::INFINITY], 2);
        assert_eq!(m.ordinal(f64::INFINITY), 2);
        assert_eq!(m.ordinal(2.0), 1);
        // three finite values + inf need capping to fit in 2 bits
        let m = BucketMap::build(&[1.0, 2.0, 3.0, 1000.0, f64::INFINITY], 2);
        assert!(m.len() <= 4);
        assert_eq!(m.ordinal(f64::INFINITY), m.max_ordinal());
    }

    proptest! {
        #[test]
        fn order_preserved_and_fits(values in prop::collection::vec(0.0f64..1e7, 1..300), bits in 1u32..12) {
            let m = BucketMap::build(&values, bits);
            prop_assert!(m.len() as u64 <= 1 << bits);
            let mut sorted = values.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for w in sorted.windows(2) {
                prop_assert!(m.ordinal(w[0]) <= m.ordinal(w[1]));
            }
        }

        #[test]
        fn f32_matches_f64_on_small_integers(values in prop::collection::vec(0u16..2000, 1..100)) {
            let a: Vec<f64> = values.iter().map(|&v| v as f64).collect();
            let b: Vec<f32> = values.iter().map(|&v| v as f32).collect();
            let (ma, mb) = (BucketMap::build(&a, 10), BucketMap::build(&b, 10));
            for (x, y) in a.iter().zip(&b) {
                prop_assert_eq!(ma.ordinal(*x), mb.ordinal(*y));
            }
        }
    }
}
