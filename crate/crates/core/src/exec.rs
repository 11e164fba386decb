//! Sequential / data-parallel execution switch.
//!
//! Without the `parallel` feature every request for parallel execution runs
//! sequentially, so callers never need to gate on the feature themselves.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How batch and per-product loops are evaluated.
///
/// `strict` forces reductions to be summed in index order, which makes a
/// parallel run bitwise identical to a sequential one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Execution {
    pub parallel: bool,
    pub strict: bool,
}

impl Default for Execution {
    fn default() -> Self {
        Self {
            parallel: cfg!(feature = "parallel"),
            strict: true,
        }
    }
}

impl Execution {
    pub const SEQUENTIAL: Execution = Execution {
        parallel: false,
        strict: true,
    };

    pub fn parallel(strict: bool) -> Self {
        Self {
            parallel: true,
            strict,
        }
    }

    pub fn is_parallel(&self) -> bool {
        cfg!(feature = "parallel") && self.parallel
    }

    /// Maps `f` over `items`, preserving order.
    pub fn map<T, U, F>(&self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Sums per-item `(loss, gradient blocks)` contributions.
    ///
    /// Sequential and strict parallel runs accumulate in item order starting
    /// from zero; non-strict parallel runs use a rayon tree reduction.
    pub fn sum_contributions<F>(&self, items: &[usize], shape: &[usize], f: F) -> (f64, Vec<Vec<f64>>)
    where
        F: Fn(usize) -> (f64, Vec<Vec<f64>>) + Sync + Send,
    {
        let zero = || (0.0, shape.iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>());
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            if self.strict {
                let parts: Vec<_> = items.par_iter().map(|&i| f(i)).collect();
                return parts.into_iter().fold(zero(), accumulate);
            }
            return items
                .par_iter()
                .map(|&i| f(i))
                .fold(zero, accumulate)
                .reduce(zero, accumulate);
        }
        items.iter().map(|&i| f(i)).fold(zero(), accumulate)
    }
}

fn accumulate(mut acc: (f64, Vec<Vec<f64>>), part: (f64, Vec<Vec<f64>>)) -> (f64, Vec<Vec<f64>>) {
    acc.0 += part.0;
    for (a, p) in acc.1.iter_mut().zip(part.1) {
        a.iter_mut().zip(p).for_each(|(x, y)| *x += y);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strict_parallel_matches_sequential_bitwise() {
        let items: Vec<usize> = (0..500).collect();
        let f = |i: usize| {
            let x = (i as f64 * 0.37).sin();
            (x / 3.0, vec![vec![x, x * x], vec![1.0 / (1.0 + x.abs())]])
        };
        let seq = Execution::SEQUENTIAL.sum_contributions(&items, &[2, 1], f);
        let par = Execution::parallel(true).sum_contributions(&items, &[2, 1], f);
        assert_eq!(seq.0.to_bits(), par.0.to_bits());
        assert_eq!(seq.1, par.1);
        let loose = Execution::parallel(false).sum_contributions(&items, &[2, 1], f);
        assert!((loose.0 - seq.0).abs() < 1e-12);
    }

    #[test]
    fn map_preserves_order() {
        let v: Vec<u32> = (0..100).collect();
        assert_eq!(Execution::parallel(true).map(&v, |x| x * 2), Execution::SEQUENTIAL.map(&v, |x| x * 2));
    }
}
