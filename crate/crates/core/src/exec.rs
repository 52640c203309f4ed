//! Data-parallel execution with a sequential fallback.
//!
//! Every parallel map in the crate goes through [`Execution`]. Work items are
//! independent and results are collected in input order, so the two modes are
//! bit-identical. Without the `parallel` feature, [`Execution::Parallel`]
//! silently runs sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// True if this build can actually run work on the rayon pool.
    pub const fn parallel_available() -> bool {
        cfg!(feature = "parallel")
    }

    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => items.par_iter().map(f).collect(),
            _ => items.iter().map(f).collect(),
        }
    }

    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => (0..n).into_par_iter().map(f).collect(),
            _ => (0..n).map(f).collect(),
        }
    }

    /// Fill `out` in fixed-size rows, one closure call per row.
    pub fn for_each_row<F>(self, out: &mut [f32], row_len: usize, f: F)
    where
        F: Fn(usize, &mut [f32]) + Sync + Send,
    {
        if row_len == 0 {
            return;
        }
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => out
                .par_chunks_mut(row_len)
                .enumerate()
                .for_each(|(i, row)| f(i, row)),
            _ => out
                .chunks_mut(row_len)
                .enumerate()
                .for_each(|(i, row)| f(i, row)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let a = Execution::Sequential.map(&xs, |x| x * x + 1.0);
        let b = Execution::Parallel.map(&xs, |x| x * x + 1.0);
        assert_eq!(a, b);

        let mut r1 = vec![0.0f32; 64];
        let mut r2 = vec![0.0f32; 64];
        Execution::Sequential.for_each_row(&mut r1, 8, |i, row| row.fill(i as f32));
        Execution::Parallel.for_each_row(&mut r2, 8, |i, row| row.fill(i as f32));
        assert_eq!(r1, r2);
        assert_eq!(r1[63], 7.0);
    }
}
