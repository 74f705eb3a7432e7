//! Closed-form I/O lower bounds for DOT, GEM (rank-1 update) and GEMV, and the
//! access counts of the blocked algorithms.
//!
//! All values are real-valued. The bounds can go negative for problem sizes
//! that fit in fast memory; [`BoundReport`] keeps the raw value and a copy
//! clamped at zero.

use thiserror::Error;

use crate::machine::{BlockingPlan, MachineDescriptor};

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("parallel fraction {0} outside [0, 1)")]
    ParallelFraction(f64),
    #[error("thread overhead {0} is negative")]
    NegativeOverhead(f64),
    #[error("cache level {level} out of range (machine has {levels})")]
    InvalidLevel { level: usize, levels: usize },
    #[error("invalid {kind:?} instance m = {m}, n = {n}")]
    InvalidInstance { kind: OpKind, m: usize, n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Dot,
    Gem,
    Gemv,
}

/// Problem size of one operation. `m` is ignored for [`OpKind::Dot`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OperationInstance {
    pub kind: OpKind,
    pub m: usize,
    pub n: usize,
}

impl OperationInstance {
    pub fn new(kind: OpKind, m: usize, n: usize) -> Result<Self, AnalysisError> {
        if n < 1 || (kind != OpKind::Dot && m < 1) {
            return Err(AnalysisError::InvalidInstance { kind, m, n });
        }
        Ok(OperationInstance { kind, m, n })
    }

    pub fn dot(n: usize) -> Result<Self, AnalysisError> {
        Self::new(OpKind::Dot, 0, n)
    }

    pub fn gem(m: usize, n: usize) -> Result<Self, AnalysisError> {
        Self::new(OpKind::Gem, m, n)
    }

    pub fn gemv(m: usize, n: usize) -> Result<Self, AnalysisError> {
        Self::new(OpKind::Gemv, m, n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    pub min_reads_raw: f64,
    pub min_stores_raw: f64,
    pub min_reads: f64,
    pub min_stores: f64,
    /// Fast memory size M in elements.
    pub fast_memory_elements: u64,
    /// Access count of the blocked algorithm; `None` for GEM.
    pub predicted_reads_blocked: Option<f64>,
}

/// Most FMAs executable with `fast_plus_reads` elements spread over
/// `n_objects` operands: `((M+R)/n)^(n/(n-1))`.
pub fn fma_max(fast_plus_reads: f64, n_objects: u32) -> f64 {
    assert!(n_objects >= 2, "need at least two operands");
    let n = n_objects as f64;
    (fast_plus_reads / n).powf(n / (n - 1.0))
}

/// GEMV `(reads, stores)` lower bounds: `2mn/sqrt(M) - m - 2M` and
/// `2mn/sqrt(M) + m - 3M`.
pub fn gemv_bounds(m: usize, n: usize, fast: u64) -> (f64, f64) {
    let (m, fast) = (m as f64, fast as f64);
    let lead = 2.0 * m * n as f64 / fast.sqrt();
    (lead - m - 2.0 * fast, lead + m - 3.0 * fast)
}

/// GEM `(reads, stores)` lower bounds: `2mn/sqrt(M) - mn - 2M` and
/// `2mn/sqrt(M) + mn - 3M`.
pub fn gem_bounds(m: usize, n: usize, fast: u64) -> (f64, f64) {
    let mn = m as f64 * n as f64;
    let fast = fast as f64;
    let lead = 2.0 * mn / fast.sqrt();
    (lead - mn - 2.0 * fast, lead + mn - 3.0 * fast)
}

/// DOT `(reads, stores)` lower bounds: `(8n/M - 8M)/3` and `8n/(3M) - 11M/3`.
///
/// Both are evaluated over the common denominator `3M` so integer inputs
/// see a single rounding.
pub fn dot_bounds(n: usize, fast: u64) -> (f64, f64) {
    let (n, fast) = (n as f64, fast as f64);
    let denom = 3.0 * fast;
    let sq = fast * fast;
    ((8.0 * n - 8.0 * sq) / denom, (8.0 * n - 11.0 * sq) / denom)
}

/// Accesses of the L2-blocked column-major GEMV: `mn/m_c + mn/n_c + m`.
pub fn blocked_gemv_access_count(m: usize, n: usize, plan: &BlockingPlan) -> f64 {
    let mn = m as f64 * n as f64;
    mn / plan.m_c as f64 + mn / plan.n_c as f64 + m as f64
}

/// Block loads of the large dot product: `2n / dot_block`.
pub fn blocked_dot_access_count(n: usize, dot_block: usize) -> f64 {
    2.0 * n as f64 / dot_block as f64
}

/// Amdahl speedup bound reduced by a thread overhead: `1/(1-p) - O(t)`.
pub fn speedup_bound(parallel_fraction: f64, overhead: f64) -> Result<f64, AnalysisError> {
    if !(0.0..1.0).contains(&parallel_fraction) {
        return Err(AnalysisError::ParallelFraction(parallel_fraction));
    }
    if overhead.is_nan() || overhead < 0.0 {
        return Err(AnalysisError::NegativeOverhead(overhead));
    }
    Ok(1.0 / (1.0 - parallel_fraction) - overhead)
}

/// Evaluate the bounds of `op` with fast memory equal to cache level `level`
/// (0 = L1) of `machine`.
pub fn report(
    op: &OperationInstance,
    machine: &MachineDescriptor,
    plan: &BlockingPlan,
    level: usize,
) -> Result<BoundReport, AnalysisError> {
    let fast = machine
        .capacity_elements(level)
        .ok_or(AnalysisError::InvalidLevel {
            level,
            levels: machine.levels().len(),
        })?;
    let ((reads, stores), predicted) = match op.kind {
        OpKind::Dot => (
            dot_bounds(op.n, fast),
            Some(blocked_dot_access_count(op.n, plan.dot_block)),
        ),
        OpKind::Gem => (gem_bounds(op.m, op.n, fast), None),
        OpKind::Gemv => (
            gemv_bounds(op.m, op.n, fast),
            Some(blocked_gemv_access_count(op.m, op.n, plan)),
        ),
    };
    Ok(BoundReport {
        min_reads_raw: reads,
        min_stores_raw: stores,
        min_reads: reads.max(0.0),
        min_stores: stores.max(0.0),
        fast_memory_elements: fast,
        predicted_reads_blocked: predicted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::derive_blocking_plan;
    use proptest::prelude::*;

    fn plan(mc: usize, nc: usize) -> BlockingPlan {
        BlockingPlan {
            m_c: mc,
            n_c: nc,
            m_r: 8,
            dot_block: 2048,
            dot_cutoff: 8192,
            max_threads: 1,
        }
    }

    #[test]
    fn fma_max_examples() {
        assert!((fma_max(9.0, 3) - 27f64.sqrt()).abs() < 1e-12);
        assert!((fma_max(9.0, 3) - 5.196).abs() < 1e-3);
        assert_eq!(fma_max(4.0, 2), 4.0);
        for n in 2..10 {
            assert_eq!(fma_max(n as f64, n), 1.0);
        }
    }

    #[test]
    fn gemv_examples() {
        assert_eq!(gemv_bounds(1000, 1000, 256), (123488.0, 125232.0));
        assert_eq!(gemv_bounds(1, 1, 1).0, -1.0);
        assert_eq!(gemv_bounds(100, 100, 100).0, 1700.0);
    }

    #[test]
    fn gem_examples() {
        assert_eq!(gem_bounds(100, 100, 100), (-8200.0, 11700.0));
        assert_eq!(gem_bounds(1, 1, 1).1, 0.0);
        let (r, _) = gem_bounds(1000, 1000, 4096);
        assert_eq!(r, 31250.0 - 1e6 - 8192.0);
        assert!(r < 0.0);
    }

    #[test]
    fn dot_examples() {
        assert_eq!(dot_bounds(1024, 16), (128.0, 112.0));
        for fast in [1u64, 7, 16, 4096] {
            assert_eq!(dot_bounds((fast * fast) as usize, fast).0, 0.0);
        }
        let (r, _) = dot_bounds(1_000_000, 4096);
        assert!(r < 0.0);
        assert!((r - (1953.125 - 32768.0) / 3.0).abs() < 1e-9);
    }

    #[test]
    fn blocked_counts() {
        assert_eq!(blocked_gemv_access_count(1024, 1024, &plan(256, 256)), 9216.0);
        assert_eq!(blocked_gemv_access_count(256, 256, &plan(256, 256)), 768.0);
        assert_eq!(blocked_gemv_access_count(512, 256, &plan(256, 256)), 1536.0);
        assert_eq!(blocked_dot_access_count(8192, 2048), 8.0);
        assert_eq!(blocked_dot_access_count(2048, 2048), 2.0);
        assert_eq!(blocked_dot_access_count(1_000_000, 2048), 976.5625);
        let lead: f64 = 8.0 * 1e6 / (3.0 * 4096.0);
        assert!((976.5625 / lead - 1.5).abs() < 1e-12);
    }

    #[test]
    fn speedup_examples() {
        assert!((speedup_bound(0.9, 0.0).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(speedup_bound(0.0, 0.0).unwrap(), 1.0);
        assert_eq!(speedup_bound(0.5, 0.5).unwrap(), 1.5);
        assert_eq!(speedup_bound(1.0, 0.0), Err(AnalysisError::ParallelFraction(1.0)));
        assert!(speedup_bound(-0.1, 0.0).is_err());
        assert!(speedup_bound(0.5, -1.0).is_err());
    }

    #[test]
    fn report_composition() {
        let machine = MachineDescriptor::default_machine();
        let p = derive_blocking_plan(&machine, None).unwrap();
        let r = report(&OperationInstance::gemv(1024, 1024).unwrap(), &machine, &p, 1).unwrap();
        assert_eq!(r.fast_memory_elements, 65536);
        assert_eq!(r.predicted_reads_blocked, Some(9216.0));
        let (reads, stores) = gemv_bounds(1024, 1024, 65536);
        assert_eq!((r.min_reads_raw, r.min_stores_raw), (reads, stores));
        assert_eq!(r.min_reads, 0.0);

        let r = report(&OperationInstance::dot(p.dot_block).unwrap(), &machine, &p, 0).unwrap();
        assert_eq!(r.predicted_reads_blocked, Some(2.0));

        let r = report(&OperationInstance::gem(1, 1).unwrap(), &machine, &p, 0).unwrap();
        assert_eq!((r.min_reads, r.min_stores), (0.0, 0.0));
        assert_eq!(r.predicted_reads_blocked, None);

        assert!(matches!(
            report(&OperationInstance::gem(1, 1).unwrap(), &machine, &p, 2),
            Err(AnalysisError::InvalidLevel { level: 2, levels: 2 })
        ));
    }

    #[test]
    fn instance_validation() {
        assert!(OperationInstance::dot(0).is_err());
        assert!(OperationInstance::gemv(0, 3).is_err());
        assert!(OperationInstance::gem(3, 0).is_err());
        assert!(OperationInstance::new(OpKind::Dot, 0, 1).is_ok());
    }

    proptest! {
        #[test]
        fn clamped_never_negative(m in 1usize..5000, n in 1usize..5000, level in 0usize..2) {
            let machine = MachineDescriptor::default_machine();
            let p = derive_blocking_plan(&machine, None).unwrap();
            for op in [
                OperationInstance::dot(n).unwrap(),
                OperationInstance::gem(m, n).unwrap(),
                OperationInstance::gemv(m, n).unwrap(),
            ] {
                let r = report(&op, &machine, &p, level).unwrap();
                prop_assert!(r.min_reads >= 0.0 && r.min_stores >= 0.0);
                prop_assert_eq!(r.min_reads, r.min_reads_raw.max(0.0));
                prop_assert_eq!(r.min_stores, r.min_stores_raw.max(0.0));
            }
        }

        #[test]
        fn bounds_monotone_in_n(m in 1usize..3000, n in 1usize..3000, fast in 1u64..100_000) {
            let a = gemv_bounds(m, n, fast);
            let b = gemv_bounds(m, n + 1, fast);
            prop_assert!(b.0 >= a.0 && b.1 >= a.1);
            // Raw GEM reads fall with n once M > 4 (slope m(2/sqrt(M) - 1)),
            // where they are negative; the clamped value is monotone.
            let a = gem_bounds(m, n, fast);
            let b = gem_bounds(m, n + 1, fast);
            prop_assert!(b.0.max(0.0) >= a.0.max(0.0) && b.1 >= a.1);
            if fast <= 4 {
                prop_assert!(b.0 >= a.0);
            } else {
                prop_assert!(a.0 < 0.0);
            }
            let a = dot_bounds(n, fast);
            let b = dot_bounds(n + 1, fast);
            prop_assert!(b.0 >= a.0 && b.1 >= a.1);
        }

        #[test]
        fn leading_term_nonincreasing_in_fast(m in 1usize..3000, n in 1usize..3000, fast in 1u64..100_000) {
            let lead = |f: u64| 2.0 * m as f64 * n as f64 / (f as f64).sqrt();
            prop_assert!(lead(fast + 1) <= lead(fast));
        }

        #[test]
        fn fma_max_identity(big_n in 1u32..1000, objects in 2u32..6) {
            let expect = (big_n as f64).powf(objects as f64 / (objects as f64 - 1.0));
            let got = fma_max((objects * big_n) as f64, objects);
            prop_assert!((got - expect).abs() <= 1e-12 * expect);
        }

        #[test]
        fn square_block_matches_gemv_lead(m in 1usize..5000, n in 1usize..5000, k in 0usize..4) {
            let fast = [16u64, 64, 256, 4096][k];
            let root = (fast as f64).sqrt() as usize;
            let count = blocked_gemv_access_count(m, n, &plan(root, root));
            let lead = 2.0 * m as f64 * n as f64 / (fast as f64).sqrt();
            prop_assert_eq!(count, lead + m as f64);
        }

        #[test]
        fn speedup_monotone(p in 0.0f64..0.98, dp in 0.001f64..0.01, o in 0.0f64..5.0, d_o in 0.01f64..1.0) {
            let base = speedup_bound(p, o).unwrap();
            prop_assert!(speedup_bound(p + dp, o).unwrap() > base);
            prop_assert!(speedup_bound(p, o + d_o).unwrap() < base);
        }
    }
}
