//! Core model for partitioned-GPU benchmarking: device partitioning rules,
//! the partition controller, workload generation, the simulated backend,
//! telemetry aggregation and export rendering. IO lives in the `migperf`
//! crate.
#![no_std]
extern crate alloc;

pub mod backend;
pub mod bench;
pub mod catalog;
pub mod controller;
pub mod device;
pub mod report;
pub mod telemetry;
pub mod workload;

pub use backend::{Backend, BackendSample, MetricKind, PerfModelParams, SimBackend};
pub use bench::{BenchError, Harness, RunObserver, SharingComparison};
pub use controller::{Controller, ControllerError, PartitionPlan, PlanStrategy, ReconfigStep, ReconfigurationScript};
pub use device::{DeviceCatalogEntry, DeviceError, DeviceId, DeviceState, GiProfile, SharingMode};
pub use report::{FigureDataset, FigureId};
pub use telemetry::{MetricSummary, RunId, RunMeta, TelemetryError, TelemetryStore};
pub use workload::{Experiment, RunConfig, RunTarget, SweepSpec, WorkloadSpec};
