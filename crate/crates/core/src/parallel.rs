//! Client-level data parallelism.
//!
//! Work items are always visited in index order when collecting results, so
//! the two modes produce the same output whenever each item's computation
//! depends only on the item itself.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Parallelism {
    Sequential,
    /// Rayon's global pool. Falls back to sequential when the `parallel`
    /// feature is disabled.
    #[default]
    Parallel,
}

impl Parallelism {
    /// Whether work will actually be spread over threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Parallelism::Parallel
    }
}

/// `f` applied to every item with its index, results in index order.
pub fn map_mut<T, R, F>(mode: Parallelism, items: &mut [T], f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(usize, &mut T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter_mut().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let _ = mode;
    items.iter_mut().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Read-only counterpart of [`map_mut`].
pub fn map<T, R, F>(mode: Parallelism, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let _ = mode;
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_keep_order() {
        let mut a: Vec<u64> = (0..1000).collect();
        let mut b = a.clone();
        let ra = map_mut(Parallelism::Sequential, &mut a, |i, v| {
            *v *= 3;
            *v + i as u64
        });
        let rb = map_mut(Parallelism::Parallel, &mut b, |i, v| {
            *v *= 3;
            *v + i as u64
        });
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert_eq!(map(Parallelism::Parallel, &a, |i, v| v + i as u64), ra);
    }
}
