use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use cablas::bench::{emit_csv, emit_svg, parse_list, parse_sizes, run_sweep, BenchConfig, BenchError, BenchKernel, PlotMode};
use cablas::MachineDescriptor;
use clap::Parser;

/// Sweep problem sizes over the kernels and report GFLOP/s.
#[derive(Parser, Debug)]
#[command(name = "cablas-bench", version)]
struct Args {
    /// Machine descriptor (TOML). Defaults to the bundled 32 KiB / 512 KiB machine.
    #[arg(long)]
    machine: Option<PathBuf>,
    /// dot, ger, gemv-row, gemv-col or all.
    #[arg(long, default_value = "all")]
    kernel: String,
    /// Comma list (`256,1024`, `2^10`) or range `lo..hi` (doubling) / `lo..hi:k` (k log-spaced points).
    #[arg(long, default_value = "2^6..2^10")]
    sizes: String,
    /// Comma list of thread counts. Defaults to `1,<cores>`.
    #[arg(long)]
    threads: Option<String>,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write an SVG plot of all series.
    #[arg(long)]
    svg: Option<PathBuf>,
    #[arg(long, default_value_t = 0x5eed)]
    seed: u64,
    /// Append I/O bound columns.
    #[arg(long)]
    bounds: bool,
    /// Cache level (0 = L1) used as fast memory for `--bounds`.
    #[arg(long, default_value_t = 0)]
    bound_level: usize,
}

fn run(args: Args) -> Result<bool, BenchError> {
    let machine = match &args.machine {
        Some(p) => MachineDescriptor::from_file(p)?,
        None => MachineDescriptor::default_machine(),
    };
    let kernels = if args.kernel == "all" {
        BenchKernel::ALL.to_vec()
    } else {
        vec![args.kernel.parse()?]
    };
    let threads = match &args.threads {
        Some(t) => parse_list(t)?,
        None => {
            let mut t = vec![1, machine.cores()];
            t.dedup();
            t
        }
    };
    let config = BenchConfig {
        kernels,
        sizes: parse_sizes(&args.sizes)?,
        threads,
        reps: args.reps,
        seed: args.seed,
        bound_level: args.bounds.then_some(args.bound_level),
        machine,
    };
    let outcome = run_sweep(&config)?;
    for f in &outcome.failures {
        eprintln!(
            "oracle mismatch: {} m={} n={} threads={} max_abs_diff={:e}",
            f.kernel.name(),
            f.m,
            f.n,
            f.threads,
            f.max_abs_diff
        );
    }
    if !outcome.records.is_empty() {
        let csv = emit_csv(&outcome.records)?;
        match &args.csv {
            Some(p) => fs::write(p, csv).map_err(|e| BenchError::Config(format!("{}: {e}", p.display())))?,
            None => print!("{csv}"),
        }
        if let Some(p) = &args.svg {
            let svg = emit_svg(&outcome.records, &PlotMode::All)?;
            fs::write(p, svg).map_err(|e| BenchError::Config(format!("{}: {e}", p.display())))?;
        }
    }
    Ok(outcome.failures.is_empty())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
