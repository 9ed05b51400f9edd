//! Deterministic reductions.
//!
//! Every sum is split into fixed-size blocks, each block is reduced by pairwise
//! summation, and the block partials are combined pairwise. The block layout
//! depends only on the input length, so results are bit-identical for any
//! number of worker threads.

use rayon::prelude::*;

const BLOCK: usize = 2048;
const LEAF: usize = 16;

fn pairwise_range<F: Fn(usize) -> f64>(lo: usize, hi: usize, f: &F) -> f64 {
    let n = hi - lo;
    if n <= LEAF {
        let mut s = 0.0;
        for i in lo..hi {
            s += f(i);
        }
        s
    } else {
        let mid = lo + n / 2;
        pairwise_range(lo, mid, f) + pairwise_range(mid, hi, f)
    }
}

/// Pairwise sum of a slice.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    pairwise_range(0, xs.len(), &|i| xs[i])
}

/// Deterministic parallel sum of `f(0) + ... + f(n-1)`.
pub fn sum_by<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    if n == 0 {
        return 0.0;
    }
    if n <= BLOCK {
        return pairwise_range(0, n, &f);
    }
    let blocks = n.div_ceil(BLOCK);
    let partials: Vec<f64> =
        (0..blocks).into_par_iter().map(|b| pairwise_range(b * BLOCK, ((b + 1) * BLOCK).min(n), &f)).collect();
    pairwise_sum(&partials)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    sum_by(a.len(), |i| a[i] * b[i])
}

/// `Σ a_i w_i b_i`.
pub fn weighted_dot(a: &[f64], w: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    assert_eq!(a.len(), w.len());
    sum_by(a.len(), |i| a[i] * w[i] * b[i])
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.par_iter().map(|x| x.abs()).reduce(|| 0.0, f64::max)
}

/// Neumaier's compensated running sum, used for cumulative balance terms.
#[derive(Debug, Clone, Copy, Default)]
pub struct Compensated {
    sum: f64,
    comp: f64,
}

impl Compensated {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_exact_integers() {
        let xs: Vec<f64> = (1..=10_000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 50_005_000.0);
        assert_eq!(sum_by(xs.len(), |i| xs[i]), 50_005_000.0);
    }

    #[test]
    fn sum_is_independent_of_thread_count() {
        let xs: Vec<f64> = (0..100_003).map(|i| ((i as f64) * 0.37).sin() * 1e-3).collect();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| sum_by(xs.len(), |i| xs[i]));
        let b = four.install(|| sum_by(xs.len(), |i| xs[i]));
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn compensated_recovers_small_terms() {
        let mut c = Compensated::new();
        c.add(1.0);
        for _ in 0..1000 {
            c.add(1e-17);
        }
        c.add(-1.0);
        assert!((c.value() - 1e-14).abs() < 1e-26);
    }
}
