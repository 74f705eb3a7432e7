//! Scoped fork-join over a fixed number of tasks.
//!
//! Task 0 always runs on the calling thread, so a single task costs nothing
//! beyond the call itself.

use std::thread;

/// Run `f(t)` for `t in 0..tasks` and collect results in task order.
pub(crate) fn map_tasks<R, F>(tasks: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync,
{
    match tasks {
        0 => Vec::new(),
        1 => vec![f(0)],
        _ => thread::scope(|s| {
            let f = &f;
            let handles: Vec<_> = (1..tasks).map(|t| s.spawn(move || f(t))).collect();
            let mut out = Vec::with_capacity(tasks);
            out.push(f(0));
            out.extend(handles.into_iter().map(|h| h.join().expect("worker panicked")));
            out
        }),
    }
}

/// Consume `items`, running `f` on each; the first item runs on the caller.
pub(crate) fn for_each_owned<T, F>(items: Vec<T>, f: F)
where
    T: Send,
    F: Fn(T) + Sync,
{
    let mut it = items.into_iter();
    let Some(first) = it.next() else { return };
    let rest: Vec<T> = it.collect();
    if rest.is_empty() {
        f(first);
        return;
    }
    thread::scope(|s| {
        let f = &f;
        for item in rest {
            s.spawn(move || f(item));
        }
        f(first);
    });
}

/// Split `0..len` into at most `parts` contiguous ranges of `ceil(len/parts)`.
pub(crate) fn chunk_len(len: usize, parts: usize) -> usize {
    len.div_ceil(parts.max(1)).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn map_keeps_order() {
        assert_eq!(map_tasks(5, |t| t * 10), vec![0, 10, 20, 30, 40]);
        assert!(map_tasks(0, |t| t).is_empty());
    }

    #[test]
    fn for_each_visits_all() {
        let hits = AtomicUsize::new(0);
        for_each_owned((0..7).collect(), |v: usize| {
            hits.fetch_add(v, Ordering::Relaxed);
        });
        assert_eq!(hits.into_inner(), 21);
    }

    #[test]
    fn chunking() {
        assert_eq!(chunk_len(10, 4), 3);
        assert_eq!(chunk_len(0, 4), 1);
        assert_eq!(chunk_len(8, 8), 1);
    }
}
