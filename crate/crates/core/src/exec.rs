//! Ordered map over independent work items, parallel or sequential.
//!
//! Results are collected in input order, so any downstream reduction is
//! bit-identical whichever executor ran the map. The sequential path is kept
//! callable even when the `parallel` feature is enabled; the bench suite
//! compares the two.

use crate::Result;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Which executor a fan-out should use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    /// Always run in the calling thread.
    Sequential,
    /// Use rayon when the `parallel` feature is enabled, otherwise sequential.
    Auto,
}

/// Map `f` over `items`, preserving order.
pub fn map_ordered<T, U, F>(exec: Execution, items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync + Send,
{
    match exec {
        Execution::Sequential => map_ordered_seq(items, f),
        Execution::Auto => map_ordered_auto(items, f),
    }
}

/// Sequential map, always available.
pub fn map_ordered_seq<T, U, F>(items: &[T], f: F) -> Result<Vec<U>>
where
    F: Fn(&T) -> Result<U>,
{
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
fn map_ordered_auto<T, U, F>(items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_ordered_auto<T, U, F>(items: &[T], f: F) -> Result<Vec<U>>
where
    F: Fn(&T) -> Result<U>,
{
    map_ordered_seq(items, f)
}
