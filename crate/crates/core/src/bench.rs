//! Size sweeps over the kernels with oracle checks, median timing, CSV and SVG output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::io_analysis::{report, AnalysisError, OperationInstance};
use crate::kernels::{
    dot, dot_ref, gemv_col_major, gemv_ref, gemv_row_major, ger, ger_ref, DenseMatrix, ExecPolicy,
    KernelError, Layout, Vector,
};
use crate::machine::{derive_blocking_plan, BlockingPlan, MachineDescriptor, MachineError};

pub const CSV_HEADER: [&str; 9] = [
    "kernel", "m", "n", "threads", "reps", "min_s", "median_s", "gflops", "checksum",
];
pub const CSV_BOUND_COLUMNS: [&str; 4] = ["fast_elements", "min_reads", "min_stores", "predicted_reads"];

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Machine(#[from] MachineError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no records to emit")]
    Empty,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv line {line}: {msg}")]
    CsvField { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BenchKernel {
    Dot,
    Ger,
    GemvRow,
    GemvCol,
}

impl BenchKernel {
    pub const ALL: [BenchKernel; 4] = [
        BenchKernel::Dot,
        BenchKernel::Ger,
        BenchKernel::GemvRow,
        BenchKernel::GemvCol,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchKernel::Dot => "dot",
            BenchKernel::Ger => "ger",
            BenchKernel::GemvRow => "gemv-row",
            BenchKernel::GemvCol => "gemv-col",
        }
    }

    /// Problem dimensions for sweep size `size`; DOT has `m = 1`.
    pub fn dims(self, size: usize) -> (usize, usize) {
        match self {
            BenchKernel::Dot => (1, size),
            _ => (size, size),
        }
    }

    /// Flop count: `2n` for DOT, `2mn` for GEMV and GER.
    pub fn flops(self, m: usize, n: usize) -> f64 {
        match self {
            BenchKernel::Dot => 2.0 * n as f64,
            _ => 2.0 * m as f64 * n as f64,
        }
    }

    fn operation(self, m: usize, n: usize) -> Result<OperationInstance, AnalysisError> {
        match self {
            BenchKernel::Dot => OperationInstance::dot(n),
            BenchKernel::Ger => OperationInstance::gem(m, n),
            _ => OperationInstance::gemv(m, n),
        }
    }
}

impl FromStr for BenchKernel {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BenchKernel::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| BenchError::Config(format!("unknown kernel {s:?}")))
    }
}

pub fn gflops(flops: f64, seconds: f64) -> f64 {
    flops / seconds / 1e9
}

/// Bound columns appended with `--bounds`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundColumns {
    pub fast_elements: u64,
    pub min_reads: f64,
    pub min_stores: f64,
    /// Empty in the CSV when the kernel has no blocked access count.
    pub predicted_reads: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub kernel: String,
    pub m: usize,
    pub n: usize,
    pub threads: usize,
    pub reps: usize,
    pub min_s: f64,
    pub median_s: f64,
    pub gflops: f64,
    pub checksum: f64,
    pub bounds: Option<BoundColumns>,
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub machine: MachineDescriptor,
    pub kernels: Vec<BenchKernel>,
    pub sizes: Vec<usize>,
    pub threads: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    /// Cache level whose capacity is used as M for the bound columns.
    pub bound_level: Option<usize>,
}

/// A (kernel, size, threads) triple whose output disagreed with the reference.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleFailure {
    pub kernel: BenchKernel,
    pub m: usize,
    pub n: usize,
    pub threads: usize,
    pub max_abs_diff: f64,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutcome {
    pub records: Vec<BenchRecord>,
    pub failures: Vec<OracleFailure>,
}

/// Parse `a,b,c`, `lo..hi` (doubling) or `lo..hi:k` (k log-spaced points).
pub fn parse_sizes(spec: &str) -> Result<Vec<usize>, BenchError> {
    let bad = || BenchError::Config(format!("bad size spec {spec:?}"));
    let num = |s: &str| -> Result<usize, BenchError> {
        let s = s.trim();
        match s.split_once('^') {
            Some((b, e)) => {
                let b: usize = b.parse().map_err(|_| bad())?;
                let e: u32 = e.parse().map_err(|_| bad())?;
                b.checked_pow(e).ok_or_else(bad)
            }
            None => s.parse().map_err(|_| bad()),
        }
    };
    let sizes = if let Some((lo, rest)) = spec.split_once("..") {
        let (hi, points) = match rest.split_once(':') {
            Some((hi, k)) => (hi, Some(k.trim().parse::<usize>().map_err(|_| bad())?)),
            None => (rest, None),
        };
        let (lo, hi) = (num(lo)?, num(hi)?);
        if lo == 0 || hi < lo {
            return Err(bad());
        }
        match points {
            None => {
                let mut v = Vec::new();
                let mut s = lo;
                while s <= hi {
                    v.push(s);
                    s *= 2;
                }
                v
            }
            Some(k) if k >= 2 => {
                let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
                let mut v: Vec<usize> = (0..k)
                    .map(|i| (a + (b - a) * i as f64 / (k - 1) as f64).exp().round() as usize)
                    .collect();
                v.dedup();
                v
            }
            Some(1) => vec![lo],
            Some(_) => return Err(bad()),
        }
    } else {
        spec.split(',').map(num).collect::<Result<_, _>>()?
    };
    if sizes.is_empty() {
        return Err(bad());
    }
    Ok(sizes)
}

pub fn parse_list(spec: &str) -> Result<Vec<usize>, BenchError> {
    spec.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| BenchError::Config(format!("bad list {spec:?}")))
        })
        .collect()
}

fn median(sorted: &[f64]) -> f64 {
    let k = sorted.len();
    if k % 2 == 1 {
        sorted[k / 2]
    } else {
        0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>().into()
}

/// Inputs for one triple, regenerated from the seed.
struct Problem {
    x: Vector,
    y: Vector,
    a: DenseMatrix,
    c0: Vector,
    big_c0: DenseMatrix,
}

impl Problem {
    fn new(kernel: BenchKernel, m: usize, n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((kernel as u64) << 56) ^ (n as u64));
        let empty = DenseMatrix::zeros(0, 0, Layout::RowMajor);
        match kernel {
            BenchKernel::Dot => Problem {
                x: random_vec(&mut rng, n),
                y: random_vec(&mut rng, n),
                a: empty.clone(),
                c0: Vector::zeros(0),
                big_c0: empty,
            },
            BenchKernel::Ger => Problem {
                x: random_vec(&mut rng, m),
                y: random_vec(&mut rng, n),
                a: empty,
                c0: Vector::zeros(0),
                big_c0: DenseMatrix::from_fn(m, n, Layout::ColMajor, |_, _| rng.random_range(-1.0..1.0)),
            },
            BenchKernel::GemvRow | BenchKernel::GemvCol => {
                let layout = if kernel == BenchKernel::GemvRow {
                    Layout::RowMajor
                } else {
                    Layout::ColMajor
                };
                Problem {
                    a: DenseMatrix::from_fn(m, n, layout, |_, _| rng.random_range(-1.0..1.0)),
                    x: random_vec(&mut rng, n),
                    c0: random_vec(&mut rng, m),
                    y: Vector::zeros(0),
                    big_c0: empty,
                }
            }
        }
    }
}

/// Run the kernel once from fresh outputs; returns the output checksum and
/// the largest deviation from the reference beyond its tolerance (0 if within).
fn spot_check(kernel: BenchKernel, p: &Problem, policy: &ExecPolicy) -> Result<(f64, Option<f64>), BenchError> {
    match kernel {
        BenchKernel::Dot => {
            let got = dot(&p.x, &p.y, 0.0, policy)?;
            let expect = dot_ref(&p.x, &p.y, 0.0)?;
            let mag: f64 = p.x.as_slice().iter().zip(p.y.as_slice()).map(|(a, b)| (a * b).abs()).sum();
            let tol = p.x.len() as f64 * f64::EPSILON * mag;
            let diff = (got - expect).abs();
            Ok((got, (diff > tol).then_some(diff)))
        }
        BenchKernel::Ger => {
            let mut got = p.big_c0.clone();
            ger(&p.x, &p.y, &mut got, policy)?;
            let mut expect = p.big_c0.clone();
            ger_ref(&p.x, &p.y, &mut expect)?;
            let diff = got
                .as_slice()
                .iter()
                .zip(expect.as_slice())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let exact = got
                .as_slice()
                .iter()
                .zip(expect.as_slice())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            Ok((got.as_slice().iter().sum(), (!exact).then_some(diff)))
        }
        BenchKernel::GemvRow | BenchKernel::GemvCol => {
            let mut got = p.c0.clone();
            if kernel == BenchKernel::GemvRow {
                gemv_row_major(&p.a, &p.x, &mut got, policy)?;
            } else {
                gemv_col_major(&p.a, &p.x, &mut got, policy)?;
            }
            let mut expect = p.c0.clone();
            gemv_ref(&p.a, &p.x, &mut expect)?;
            let n = p.a.cols();
            let mut worst: Option<f64> = None;
            for i in 0..p.a.rows() {
                let mag: f64 = (0..n).map(|j| (p.a.get(i, j) * p.x.as_slice()[j]).abs()).sum();
                let d = (got.as_slice()[i] - expect.as_slice()[i]).abs();
                if d > n as f64 * f64::EPSILON * mag {
                    worst = Some(worst.map_or(d, |w: f64| w.max(d)));
                }
            }
            Ok((got.as_slice().iter().sum(), worst))
        }
    }
}

/// Time `reps` calls after one warm-up. Outputs are reset before every call,
/// outside the timed region.
fn time_kernel(kernel: BenchKernel, p: &Problem, policy: &ExecPolicy, reps: usize) -> Result<Vec<f64>, BenchError> {
    let mut c = p.c0.clone();
    let mut big_c = p.big_c0.clone();
    let mut sink = 0.0;
    let mut times = Vec::with_capacity(reps);
    for rep in 0..=reps {
        c.as_mut_slice().copy_from_slice(p.c0.as_slice());
        big_c.as_mut_slice().copy_from_slice(p.big_c0.as_slice());
        let start = Instant::now();
        match kernel {
            BenchKernel::Dot => sink += dot(&p.x, &p.y, 0.0, policy)?,
            BenchKernel::Ger => ger(&p.x, &p.y, &mut big_c, policy)?,
            BenchKernel::GemvRow => gemv_row_major(&p.a, &p.x, &mut c, policy)?,
            BenchKernel::GemvCol => gemv_col_major(&p.a, &p.x, &mut c, policy)?,
        }
        let dt = start.elapsed().as_secs_f64();
        if rep > 0 {
            times.push(dt);
        }
    }
    std::hint::black_box((sink, &c, &big_c));
    Ok(times)
}

pub fn run_sweep(config: &BenchConfig) -> Result<SweepOutcome, BenchError> {
    if config.reps < 3 {
        return Err(BenchError::Config(format!("reps must be at least 3, got {}", config.reps)));
    }
    if config.kernels.is_empty() || config.sizes.is_empty() || config.threads.is_empty() {
        return Err(BenchError::Config("kernels, sizes and threads must be non-empty".into()));
    }
    if config.sizes.contains(&0) {
        return Err(BenchError::Config("sizes must be positive".into()));
    }
    let plan: BlockingPlan = derive_blocking_plan(&config.machine, None)?;
    let policies = config
        .threads
        .iter()
        .map(|&t| ExecPolicy::new(t, plan))
        .collect::<Result<Vec<_>, _>>()?;

    let mut out = SweepOutcome::default();
    for &kernel in &config.kernels {
        for &size in &config.sizes {
            let (m, n) = kernel.dims(size);
            let problem = Problem::new(kernel, m, n, config.seed);
            let bounds = match config.bound_level {
                Some(level) => {
                    let r = report(&kernel.operation(m, n)?, &config.machine, &plan, level)?;
                    Some(BoundColumns {
                        fast_elements: r.fast_memory_elements,
                        min_reads: r.min_reads,
                        min_stores: r.min_stores,
                        predicted_reads: r.predicted_reads_blocked,
                    })
                }
                None => None,
            };
            for policy in &policies {
                let (checksum, mismatch) = spot_check(kernel, &problem, policy)?;
                if let Some(max_abs_diff) = mismatch {
                    out.failures.push(OracleFailure {
                        kernel,
                        m,
                        n,
                        threads: policy.threads(),
                        max_abs_diff,
                    });
                    continue;
                }
                let mut times = time_kernel(kernel, &problem, policy, config.reps)?;
                times.sort_by(f64::total_cmp);
                // Guard against a zero reading from a coarse clock.
                let med = median(&times).max(1e-9);
                out.records.push(BenchRecord {
                    kernel: kernel.name().to_string(),
                    m,
                    n,
                    threads: policy.threads(),
                    reps: config.reps,
                    min_s: times[0].max(1e-9).min(med),
                    median_s: med,
                    gflops: gflops(kernel.flops(m, n), med),
                    checksum,
                    bounds,
                });
            }
        }
    }
    Ok(out)
}

fn fmt_f(v: f64) -> String {
    format!("{v:e}")
}

/// CSV with the fixed header, plus the bound columns when the first record has them.
pub fn emit_csv(records: &[BenchRecord]) -> Result<String, BenchError> {
    let first = records.first().ok_or(BenchError::Empty)?;
    let with_bounds = first.bounds.is_some();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = CSV_HEADER.to_vec();
    if with_bounds {
        header.extend(CSV_BOUND_COLUMNS);
    }
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.kernel.clone(),
            r.m.to_string(),
            r.n.to_string(),
            r.threads.to_string(),
            r.reps.to_string(),
            fmt_f(r.min_s),
            fmt_f(r.median_s),
            fmt_f(r.gflops),
            fmt_f(r.checksum),
        ];
        if with_bounds {
            let b = r
                .bounds
                .ok_or_else(|| BenchError::Config("mixed records with and without bounds".into()))?;
            row.extend([
                b.fast_elements.to_string(),
                fmt_f(b.min_reads),
                fmt_f(b.min_stores),
                b.predicted_reads.map(fmt_f).unwrap_or_default(),
            ]);
        }
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| BenchError::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn parse_csv(text: &str) -> Result<Vec<BenchRecord>, BenchError> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let with_bounds = match header.len() {
        9 => false,
        13 => true,
        _ => {
            return Err(BenchError::CsvField {
                line: 1,
                msg: format!("unexpected header {header:?}"),
            })
        }
    };
    let expected: Vec<&str> = CSV_HEADER
        .iter()
        .chain(if with_bounds { &CSV_BOUND_COLUMNS[..] } else { &[] })
        .copied()
        .collect();
    if header != expected {
        return Err(BenchError::CsvField {
            line: 1,
            msg: format!("unexpected header {header:?}"),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let bad = |k: usize| BenchError::CsvField {
            line,
            msg: format!("bad {} value {:?}", expected[k], field(k)),
        };
        let int = |k: usize| field(k).parse::<usize>().map_err(|_| bad(k));
        let float = |k: usize| field(k).parse::<f64>().map_err(|_| bad(k));
        out.push(BenchRecord {
            kernel: field(0).to_string(),
            m: int(1)?,
            n: int(2)?,
            threads: int(3)?,
            reps: int(4)?,
            min_s: float(5)?,
            median_s: float(6)?,
            gflops: float(7)?,
            checksum: float(8)?,
            bounds: if with_bounds {
                Some(BoundColumns {
                    fast_elements: field(9).parse().map_err(|_| bad(9))?,
                    min_reads: float(10)?,
                    min_stores: float(11)?,
                    predicted_reads: match field(12) {
                        "" => None,
                        _ => Some(float(12)?),
                    },
                })
            } else {
                None
            },
        });
    }
    Ok(out)
}

/// Which records go into a plot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlotMode {
    All,
    Kernel(String),
}

const SVG_W: f64 = 800.0;
const SVG_H: f64 = 500.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 180.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Problem size vs GFLOP/s, log-scaled x axis, one polyline per (kernel, threads).
pub fn emit_svg(records: &[BenchRecord], mode: &PlotMode) -> Result<String, BenchError> {
    let selected: Vec<&BenchRecord> = records
        .iter()
        .filter(|r| match mode {
            PlotMode::All => true,
            PlotMode::Kernel(k) => &r.kernel == k,
        })
        .collect();
    if selected.is_empty() {
        return Err(BenchError::Empty);
    }
    let mut series: BTreeMap<(String, usize), Vec<(f64, f64)>> = BTreeMap::new();
    for r in &selected {
        series
            .entry((r.kernel.clone(), r.threads))
            .or_default()
            .push((r.n.max(1) as f64, r.gflops));
    }
    for pts in series.values_mut() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    }

    let xs = selected.iter().map(|r| (r.n.max(1) as f64).log2());
    let (mut x_lo, mut x_hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if x_hi - x_lo < 1e-9 {
        x_lo -= 0.5;
        x_hi += 0.5;
    }
    let y_hi = selected.iter().map(|r| r.gflops).fold(0.0, f64::max).max(1e-9) * 1.1;

    let plot_w = SVG_W - MARGIN_L - MARGIN_R;
    let plot_h = SVG_H - MARGIN_T - MARGIN_B;
    let px = |n: f64| MARGIN_L + (n.log2() - x_lo) / (x_hi - x_lo) * plot_w;
    let py = |g: f64| MARGIN_T + plot_h - g / y_hi * plot_h;

    let title = match mode {
        PlotMode::All => "Kernel performance".to_string(),
        PlotMode::Kernel(k) => format!("{} performance", escape(k)),
    };
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{title}</text>"#, MARGIN_L + plot_w / 2.0).unwrap();
    // axes
    writeln!(
        s,
        r#"<line x1="{MARGIN_L}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" y2="{b}" stroke="black"/>"#,
        b = MARGIN_T + plot_h,
        r = MARGIN_L + plot_w
    )
    .unwrap();
    let mut e = x_lo.ceil() as i32;
    while (e as f64) <= x_hi {
        let x = px(2f64.powi(e));
        writeln!(
            s,
            r#"<line x1="{x:.1}" y1="{b}" x2="{x:.1}" y2="{b2}" stroke="black"/><text x="{x:.1}" y="{t}" text-anchor="middle">2^{e}</text>"#,
            b = MARGIN_T + plot_h,
            b2 = MARGIN_T + plot_h + 5.0,
            t = MARGIN_T + plot_h + 18.0
        )
        .unwrap();
        e += 1;
    }
    for k in 0..=4 {
        let g = y_hi * k as f64 / 4.0;
        let y = py(g);
        writeln!(
            s,
            r#"<line x1="{l}" y1="{y:.1}" x2="{MARGIN_L}" y2="{y:.1}" stroke="black"/><text x="{t}" y="{ty:.1}" text-anchor="end">{g:.3}</text>"#,
            l = MARGIN_L - 5.0,
            t = MARGIN_L - 8.0,
            ty = y + 4.0
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">problem size n</text>"#,
        MARGIN_L + plot_w / 2.0,
        SVG_H - 15.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="18" y="{y}" text-anchor="middle" transform="rotate(-90 18 {y})">GFLOP/s</text>"#,
        y = MARGIN_T + plot_h / 2.0
    )
    .unwrap();

    for (i, ((kernel, threads), pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = pts.iter().map(|&(n, g)| format!("{:.1},{:.1}", px(n), py(g))).collect();
        writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        )
        .unwrap();
        let ly = MARGIN_T + 10.0 + 18.0 * i as f64;
        let lx = SVG_W - MARGIN_R + 15.0;
        writeln!(
            s,
            r#"<g class="legend"><line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{} t={threads}</text></g>"#,
            lx + 20.0,
            lx + 25.0,
            ly + 4.0,
            escape(kernel)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    Ok(s)
}
