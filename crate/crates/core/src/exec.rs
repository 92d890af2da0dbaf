//! Execution policy for the data-parallel kernels.
//!
//! Every kernel takes an [`Exec`]. With the `parallel` feature (default) the
//! `Parallel` policy dispatches to rayon; without it, or with `Sequential`,
//! the same closures run on the calling thread. Results never depend on the
//! policy: reductions are either over integers or performed in a fixed order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// Map `f` over `items`, preserving order.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => items.par_iter().map(f).collect(),
            _ => items.iter().map(f).collect(),
        }
    }

    /// Map `f` over `0..n`, preserving order.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => (0..n).into_par_iter().map(f).collect(),
            _ => (0..n).map(f).collect(),
        }
    }

    /// Run `f` on every `chunk`-sized mutable slice of `data` together with
    /// the chunk index.
    pub fn for_chunks<T, F>(self, data: &mut [T], chunk: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c)),
            _ => data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c)),
        }
    }

    /// Fold `0..n` into per-worker accumulators and merge them. `merge` must
    /// be associative and commutative for the result to be policy-independent.
    pub fn fold_range<A, I, F, M>(self, n: usize, init: I, fold: F, merge: M) -> A
    where
        A: Send,
        I: Fn() -> A + Sync + Send,
        F: Fn(A, usize) -> A + Sync + Send,
        M: Fn(A, A) -> A + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => (0..n).into_par_iter().fold(&init, &fold).reduce(&init, &merge),
            _ => {
                let _ = &merge;
                (0..n).fold(init(), fold)
            }
        }
    }

    /// Maximum of `f(i)` over `0..n` (NaN-free inputs assumed); 0 for empty.
    pub fn max_range<F>(self, n: usize, f: F) -> f64
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => (0..n).into_par_iter().map(f).reduce(|| 0.0, f64::max),
            _ => (0..n).map(f).fold(0.0, f64::max),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policies_agree() {
        let data: Vec<u64> = (0..1000).collect();
        let a = Exec::Sequential.map(&data, |x| x * x);
        let b = Exec::Parallel.map(&data, |x| x * x);
        assert_eq!(a, b);

        let fold = |p: Exec| p.fold_range(1000, || 0u64, |acc, i| acc + i as u64, |a, b| a + b);
        assert_eq!(fold(Exec::Sequential), fold(Exec::Parallel));
        assert_eq!(fold(Exec::Sequential), 499_500);

        let m = |p: Exec| p.max_range(100, |i| (i as f64 - 40.0).abs());
        assert_eq!(m(Exec::Sequential), 59.0);
        assert_eq!(m(Exec::Parallel), 59.0);
    }

    #[test]
    fn chunks_cover_everything() {
        for p in [Exec::Sequential, Exec::Parallel] {
            let mut v = vec![0usize; 103];
            p.for_chunks(&mut v, 10, |i, c| c.iter_mut().for_each(|x| *x = i));
            assert_eq!(v[0], 0);
            assert_eq!(v[102], 10);
        }
    }
}
