//! DOT, GEMV (both layouts) and GER kernels with their naive references.
//!
//! Every kernel accumulates into its output: `alpha += x.y`, `c += A x`,
//! `C += x y^T`. There is no alpha/beta scaling.
//!
//! Threading uses contiguous chunks, one per thread, so results only depend
//! on the inputs, the [`BlockingPlan`] and the thread count. Outputs are taken
//! by `&mut` and can therefore never alias an input.

use thiserror::Error;

use crate::machine::BlockingPlan;
use crate::parallel::{chunk_len, for_each_owned, map_tasks};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KernelError {
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("dimension mismatch: matrix is {rows}x{cols}, expected {expect_rows}x{expect_cols}")]
    DimensionMismatch {
        rows: usize,
        cols: usize,
        expect_rows: usize,
        expect_cols: usize,
    },
    #[error("expected a {expected:?} matrix, got {found:?}")]
    LayoutMismatch { expected: Layout, found: Layout },
    #[error("matrix data holds {len} elements, {rows}x{cols} needs {}", rows * cols)]
    BadStorage { rows: usize, cols: usize, len: usize },
    #[error("thread count {threads} outside 1..={max}")]
    BadThreadCount { threads: usize, max: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layout {
    RowMajor,
    ColMajor,
}

/// Contiguous, unit-stride vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Vector {
            data: vec![0.0; len],
        }
    }

    /// Unit basis vector `e_i` of length `len`.
    pub fn basis(len: usize, i: usize) -> Self {
        let mut v = Self::zeros(len);
        v.data[i] = 1.0;
        v
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

impl From<Vec<f64>> for Vector {
    fn from(data: Vec<f64>) -> Self {
        Vector { data }
    }
}

impl From<&[f64]> for Vector {
    fn from(data: &[f64]) -> Self {
        Vector {
            data: data.to_vec(),
        }
    }
}

/// Dense matrix in contiguous row- or column-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
    layout: Layout,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, layout: Layout, data: Vec<f64>) -> Result<Self, KernelError> {
        if data.len() != rows * cols {
            return Err(KernelError::BadStorage {
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(DenseMatrix {
            data,
            rows,
            cols,
            layout,
        })
    }

    pub fn zeros(rows: usize, cols: usize, layout: Layout) -> Self {
        DenseMatrix {
            data: vec![0.0; rows * cols],
            rows,
            cols,
            layout,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, layout: Layout, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols, layout);
        for i in 0..rows {
            for j in 0..cols {
                let k = m.index(i, j);
                m.data[k] = f(i, j);
            }
        }
        m
    }

    pub fn identity(n: usize, layout: Layout) -> Self {
        Self::from_fn(n, n, layout, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        match self.layout {
            Layout::ColMajor => i + j * self.rows,
            Layout::RowMajor => j + i * self.cols,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.index(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.index(i, j);
        self.data[k] = v;
    }

    /// Same matrix stored in `layout`.
    pub fn to_layout(&self, layout: Layout) -> Self {
        Self::from_fn(self.rows, self.cols, layout, |i, j| self.get(i, j))
    }
}

/// Thread count and blocking parameters for one kernel call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecPolicy {
    threads: usize,
    plan: BlockingPlan,
}

impl ExecPolicy {
    pub fn new(threads: usize, plan: BlockingPlan) -> Result<Self, KernelError> {
        if threads == 0 || threads > plan.max_threads {
            return Err(KernelError::BadThreadCount {
                threads,
                max: plan.max_threads,
            });
        }
        Ok(ExecPolicy { threads, plan })
    }

    pub fn single(plan: BlockingPlan) -> Self {
        ExecPolicy { threads: 1, plan }
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    pub fn plan(&self) -> &BlockingPlan {
        &self.plan
    }
}

/// Which algorithm variant a kernel call executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    DotSmall,
    DotLarge,
    GemvColBlocked,
    GemvRowMajor,
    Ger,
}

/// Execution-path probe returned by the `*_traced` entry points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecTrace {
    pub variant: Variant,
    pub threads_used: usize,
}

// ---------------------------------------------------------------------------
// DOT

/// Reference dot product: `alpha0 + sum x_p y_p`, accumulated in index order.
pub fn dot_ref(x: &Vector, y: &Vector, alpha0: f64) -> Result<f64, KernelError> {
    check_len(x, y)?;
    let mut acc = alpha0;
    for (a, b) in x.data.iter().zip(&y.data) {
        acc += a * b;
    }
    Ok(acc)
}

const LANES: usize = crate::machine::DOT_LANES;

/// Dot micro-kernel: eight independent accumulators reduced pairwise, then
/// the tail in order.
#[inline]
fn dot_kernel(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = [0.0f64; LANES];
    let xs = x.chunks_exact(LANES);
    let ys = y.chunks_exact(LANES);
    let (xt, yt) = (xs.remainder(), ys.remainder());
    for (a, b) in xs.zip(ys) {
        for k in 0..LANES {
            acc[k] += a[k] * b[k];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (a, b) in xt.iter().zip(yt) {
        s += a * b;
    }
    s
}

/// Single-threaded dot over the whole range, regardless of length.
pub fn dot_single(x: &Vector, y: &Vector, alpha0: f64) -> Result<f64, KernelError> {
    check_len(x, y)?;
    Ok(alpha0 + dot_kernel(&x.data, &y.data))
}

/// Dot product dispatched on `plan.dot_cutoff`.
pub fn dot(x: &Vector, y: &Vector, alpha0: f64, policy: &ExecPolicy) -> Result<f64, KernelError> {
    dot_traced(x, y, alpha0, policy).map(|(v, _)| v)
}

pub fn dot_traced(
    x: &Vector,
    y: &Vector,
    alpha0: f64,
    policy: &ExecPolicy,
) -> Result<(f64, ExecTrace), KernelError> {
    check_len(x, y)?;
    let n = x.len();
    let plan = policy.plan();
    if n <= plan.dot_cutoff {
        let v = alpha0 + dot_kernel(&x.data, &y.data);
        return Ok((
            v,
            ExecTrace {
                variant: Variant::DotSmall,
                threads_used: 1,
            },
        ));
    }

    let block = plan.dot_block;
    let blocks = n.div_ceil(block);
    let threads = policy.threads().min(blocks);
    let per_thread = chunk_len(blocks, threads);
    let (xs, ys) = (&x.data, &y.data);
    let partials = map_tasks(threads, |t| {
        let first = t * per_thread;
        let last = ((t + 1) * per_thread).min(blocks);
        let mut partial = 0.0;
        for b in first..last {
            let lo = b * block;
            let hi = (lo + block).min(n);
            partial += dot_kernel(&xs[lo..hi], &ys[lo..hi]);
        }
        partial
    });
    let mut total = 0.0;
    for p in &partials {
        total += p;
    }
    Ok((
        total + alpha0,
        ExecTrace {
            variant: Variant::DotLarge,
            threads_used: threads,
        },
    ))
}

fn check_len(x: &Vector, y: &Vector) -> Result<(), KernelError> {
    if x.len() != y.len() {
        return Err(KernelError::LengthMismatch(x.len(), y.len()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// GEMV

fn check_gemv(a: &DenseMatrix, x: &Vector, c: &Vector) -> Result<(), KernelError> {
    if a.cols != x.len() || a.rows != c.len() {
        return Err(KernelError::DimensionMismatch {
            rows: a.rows,
            cols: a.cols,
            expect_rows: c.len(),
            expect_cols: x.len(),
        });
    }
    Ok(())
}

fn check_layout(a: &DenseMatrix, expected: Layout) -> Result<(), KernelError> {
    if a.layout != expected {
        return Err(KernelError::LayoutMismatch {
            expected,
            found: a.layout,
        });
    }
    Ok(())
}

/// Reference `c += A x`: for each row, `c_i` then `A_ij x_j` with `j` ascending.
pub fn gemv_ref(a: &DenseMatrix, x: &Vector, c: &mut Vector) -> Result<(), KernelError> {
    check_gemv(a, x, c)?;
    for i in 0..a.rows {
        let mut acc = c.data[i];
        for j in 0..a.cols {
            acc += a.get(i, j) * x.data[j];
        }
        c.data[i] = acc;
    }
    Ok(())
}

/// `c += A x` using the kernel that matches `a.layout()`.
pub fn gemv(a: &DenseMatrix, x: &Vector, c: &mut Vector, policy: &ExecPolicy) -> Result<(), KernelError> {
    match a.layout {
        Layout::ColMajor => gemv_col_major(a, x, c, policy),
        Layout::RowMajor => gemv_row_major(a, x, c, policy),
    }
}

pub fn gemv_col_major(a: &DenseMatrix, x: &Vector, c: &mut Vector, policy: &ExecPolicy) -> Result<(), KernelError> {
    gemv_col_major_traced(a, x, c, policy).map(|_| ())
}

/// Blocked column-major GEMV.
///
/// Rows are split into `m_c` blocks that are handed to threads in contiguous
/// runs. Inside a row block the `n_c` column blocks are visited in ascending
/// order and each `m_r`-row panel is updated by the register micro-kernel, so
/// every `c_i` sees its terms in the same order as [`gemv_ref`].
pub fn gemv_col_major_traced(
    a: &DenseMatrix,
    x: &Vector,
    c: &mut Vector,
    policy: &ExecPolicy,
) -> Result<ExecTrace, KernelError> {
    check_layout(a, Layout::ColMajor)?;
    check_gemv(a, x, c)?;
    let plan = *policy.plan();
    let (m, n) = (a.rows, a.cols);
    let mut trace = ExecTrace {
        variant: Variant::GemvColBlocked,
        threads_used: 1,
    };
    if m == 0 || n == 0 {
        return Ok(trace);
    }
    let row_blocks = m.div_ceil(plan.m_c);
    let threads = policy.threads().min(row_blocks);
    trace.threads_used = threads;
    let rows_per_thread = chunk_len(row_blocks, threads) * plan.m_c;
    let chunks: Vec<(usize, &mut [f64])> = c
        .data
        .chunks_mut(rows_per_thread)
        .enumerate()
        .map(|(t, s)| (t * rows_per_thread, s))
        .collect();
    let (ad, xd) = (&a.data[..], &x.data[..]);
    for_each_owned(chunks, |(row0, cs)| {
        gemv_col_rows(ad, m, n, xd, row0, cs, &plan);
    });
    Ok(trace)
}

/// Loops 1-3 for the rows `row0 .. row0 + c.len()`.
fn gemv_col_rows(a: &[f64], lda: usize, n: usize, x: &[f64], row0: usize, c: &mut [f64], plan: &BlockingPlan) {
    let rows = c.len();
    let mut ic = 0;
    while ic < rows {
        let mc = plan.m_c.min(rows - ic);
        let mut jc = 0;
        while jc < n {
            let nc = plan.n_c.min(n - jc);
            let mut ir = 0;
            while ir < mc {
                let mr = plan.m_r.min(mc - ir);
                let row = row0 + ic + ir;
                let cp = &mut c[ic + ir..ic + ir + mr];
                match mr {
                    8 => micro_kernel::<8>(a, lda, row, jc, jc + nc, x, cp),
                    4 => micro_kernel::<4>(a, lda, row, jc, jc + nc, x, cp),
                    _ => micro_kernel_any(a, lda, row, jc, jc + nc, x, cp),
                }
                ir += mr;
            }
            jc += nc;
        }
        ic += mc;
    }
}

#[inline]
fn micro_kernel<const MR: usize>(
    a: &[f64],
    lda: usize,
    row: usize,
    j0: usize,
    j1: usize,
    x: &[f64],
    c: &mut [f64],
) {
    let mut acc = [0.0f64; MR];
    acc.copy_from_slice(c);
    for (j, &xj) in x.iter().enumerate().take(j1).skip(j0) {
        let col: &[f64; MR] = a[row + j * lda..row + j * lda + MR].try_into().unwrap();
        for r in 0..MR {
            acc[r] += col[r] * xj;
        }
    }
    c.copy_from_slice(&acc);
}

fn micro_kernel_any(a: &[f64], lda: usize, row: usize, j0: usize, j1: usize, x: &[f64], c: &mut [f64]) {
    let mr = c.len();
    for (j, &xj) in x.iter().enumerate().take(j1).skip(j0) {
        let col = &a[row + j * lda..row + j * lda + mr];
        for (ci, aij) in c.iter_mut().zip(col) {
            *ci += aij * xj;
        }
    }
}

/// Row-major and GER kernels stay on one thread while the data they touch
/// fits in the dot cutoff.
fn small_problem(m: usize, n: usize, plan: &BlockingPlan) -> bool {
    m * n + m + n <= plan.dot_cutoff
}

pub fn gemv_row_major(a: &DenseMatrix, x: &Vector, c: &mut Vector, policy: &ExecPolicy) -> Result<(), KernelError> {
    gemv_row_major_traced(a, x, c, policy).map(|_| ())
}

/// Row-major GEMV: each output row is an independent in-order inner product.
pub fn gemv_row_major_traced(
    a: &DenseMatrix,
    x: &Vector,
    c: &mut Vector,
    policy: &ExecPolicy,
) -> Result<ExecTrace, KernelError> {
    check_layout(a, Layout::RowMajor)?;
    check_gemv(a, x, c)?;
    let (m, n) = (a.rows, a.cols);
    let threads = if small_problem(m, n, policy.plan()) {
        1
    } else {
        policy.threads().min(m)
    };
    let trace = ExecTrace {
        variant: Variant::GemvRowMajor,
        threads_used: threads,
    };
    if m == 0 {
        return Ok(trace);
    }
    let rows_per_thread = chunk_len(m, threads);
    let chunks: Vec<(usize, &mut [f64])> = c
        .data
        .chunks_mut(rows_per_thread)
        .enumerate()
        .map(|(t, s)| (t * rows_per_thread, s))
        .collect();
    let (ad, xd) = (&a.data[..], &x.data[..]);
    for_each_owned(chunks, |(row0, cs)| gemv_rows(ad, n, xd, row0, cs));
    Ok(trace)
}

/// Four rows at a time; each row keeps its own accumulator and ascending `j`.
fn gemv_rows(a: &[f64], n: usize, x: &[f64], row0: usize, c: &mut [f64]) {
    const ROWS: usize = 4;
    let mut groups = c.chunks_exact_mut(ROWS);
    let mut i = row0;
    for cg in &mut groups {
        let r0 = &a[i * n..(i + 1) * n];
        let r1 = &a[(i + 1) * n..(i + 2) * n];
        let r2 = &a[(i + 2) * n..(i + 3) * n];
        let r3 = &a[(i + 3) * n..(i + 4) * n];
        let (mut s0, mut s1, mut s2, mut s3) = (cg[0], cg[1], cg[2], cg[3]);
        for j in 0..n {
            let xj = x[j];
            s0 += r0[j] * xj;
            s1 += r1[j] * xj;
            s2 += r2[j] * xj;
            s3 += r3[j] * xj;
        }
        cg.copy_from_slice(&[s0, s1, s2, s3]);
        i += ROWS;
    }
    for ci in groups.into_remainder() {
        let row = &a[i * n..(i + 1) * n];
        let mut s = *ci;
        for (aij, xj) in row.iter().zip(x) {
            s += aij * xj;
        }
        *ci = s;
        i += 1;
    }
}

// ---------------------------------------------------------------------------
// GER

fn check_ger(x: &Vector, y: &Vector, c: &DenseMatrix) -> Result<(), KernelError> {
    if c.rows != x.len() || c.cols != y.len() {
        return Err(KernelError::DimensionMismatch {
            rows: c.rows,
            cols: c.cols,
            expect_rows: x.len(),
            expect_cols: y.len(),
        });
    }
    Ok(())
}

/// Reference rank-1 update `C_ij += x_i y_j`, row by row.
pub fn ger_ref(x: &Vector, y: &Vector, c: &mut DenseMatrix) -> Result<(), KernelError> {
    check_ger(x, y, c)?;
    for i in 0..c.rows {
        for j in 0..c.cols {
            let k = c.index(i, j);
            c.data[k] += x.data[i] * y.data[j];
        }
    }
    Ok(())
}

pub fn ger(x: &Vector, y: &Vector, c: &mut DenseMatrix, policy: &ExecPolicy) -> Result<(), KernelError> {
    ger_traced(x, y, c, policy).map(|_| ())
}

/// Rank-1 update over the major dimension of `c`'s layout.
///
/// Each thread owns a contiguous run of columns (column-major) or rows
/// (row-major), so no element is written by two threads and the result is
/// bitwise identical to [`ger_ref`].
pub fn ger_traced(x: &Vector, y: &Vector, c: &mut DenseMatrix, policy: &ExecPolicy) -> Result<ExecTrace, KernelError> {
    check_ger(x, y, c)?;
    let (m, n) = (c.rows, c.cols);
    // `outer` runs over the major dimension, `inner` is the unit-stride one.
    let (outer, inner, outer_vec, inner_vec) = match c.layout {
        Layout::ColMajor => (n, m, &y.data, &x.data),
        Layout::RowMajor => (m, n, &x.data, &y.data),
    };
    let threads = if small_problem(m, n, policy.plan()) {
        1
    } else {
        policy.threads().min(outer)
    };
    let trace = ExecTrace {
        variant: Variant::Ger,
        threads_used: threads,
    };
    if m == 0 || n == 0 {
        return Ok(trace);
    }
    let per_thread = chunk_len(outer, threads);
    let chunks: Vec<(usize, &mut [f64])> = c
        .data
        .chunks_mut(per_thread * inner)
        .enumerate()
        .map(|(t, s)| (t * per_thread, s))
        .collect();
    let layout = c.layout;
    for_each_owned(chunks, |(first, block)| {
        for (k, line) in block.chunks_exact_mut(inner).enumerate() {
            let s = outer_vec[first + k];
            match layout {
                // C(:, j) += x * y_j
                Layout::ColMajor => {
                    for (cij, xi) in line.iter_mut().zip(inner_vec.iter()) {
                        *cij += xi * s;
                    }
                }
                // C(i, :) += x_i * y
                Layout::RowMajor => {
                    for (cij, yj) in line.iter_mut().zip(inner_vec.iter()) {
                        *cij += s * yj;
                    }
                }
            }
        }
    });
    Ok(trace)
}
