//! Source-level OpenMP region instrumentation and per-region thread tuning.
//!
//! The pipeline:
//!
//! * [`scan`] finds `parallel`, `single` and `task` constructs in C sources.
//! * [`rewrite`] wraps selected regions in begin/end hooks and a
//!   `num_threads` injection point, and can undo it exactly.
//! * [`runtime`] is the hook state machine: per-visit timing and counters,
//!   thread plans, and the result and viz files.
//! * [`counters`] abstracts counter sources and derives features.
//! * [`tuner`] runs one trial per thread count and picks the best per region.
//! * [`advisor`] trains a decision tree from features to an SMT class.
//! * [`cli`] ties these together behind the `pdttagger` command.
//! * [`ffi`] exposes the runtime to instrumented C programs.

pub mod advisor;
pub mod cli;
pub mod counters;
pub mod ffi;
pub mod rewrite;
pub mod runtime;
pub mod scan;
pub mod tuner;
