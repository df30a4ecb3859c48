//! Synthetic data, workloads and reporting for benchmarking the engine.

pub mod dist;
pub mod latency;
pub mod setup;
pub mod synth;
pub mod workload;

pub use latency::{latency_ratios, overhead, LatencyStats};
pub use setup::{BenchConfig, Bed, LoadReport, Setup};
pub use workload::{run_workload, Query, Stop, WorkloadResult, WorkloadSpec};
