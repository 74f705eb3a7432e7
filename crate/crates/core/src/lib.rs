//! Cache-aware DOT, GER and GEMV kernels.
//!
//! Blocking and dispatch parameters come from a declared cache hierarchy
//! ([`machine`]). Alongside the kernels the crate evaluates closed-form I/O
//! lower bounds ([`io_analysis`]), replays kernel loop nests through a
//! set-associative LRU simulator ([`cache_sim`]) and drives benchmark sweeps
//! ([`bench`]).

pub mod bench;
pub mod cache_sim;
pub mod io_analysis;
pub mod kernels;
pub mod machine;
mod parallel;

pub use cache_sim::{simulate, Access, AccessKind, CacheStats, LoopNestKind, LoopNestSpec};
pub use io_analysis::{BoundReport, OpKind, OperationInstance};
pub use kernels::{DenseMatrix, ExecPolicy, ExecTrace, KernelError, Layout, Variant, Vector};
pub use machine::{derive_blocking_plan, load_descriptor, BlockingPlan, CacheLevel, MachineDescriptor};
