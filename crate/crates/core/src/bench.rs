//! Benchmark harness: binds workloads to instances, runs them on a backend,
//! records telemetry and drives sweeps and MIG-vs-MPS comparisons.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendError, MetricKind, RunJob, ServiceContext};
use crate::controller::{ControllerError, PartitionPlan, PlanStrategy};
use crate::controller::Controller;
use crate::device::{DeviceError, DeviceId, SharingMode};
use crate::telemetry::{MetricSummary, RunId, RunMeta, SeriesKey, TelemetryError, TelemetryStore};
use crate::workload::{Experiment, RunConfig, RunTarget, SweepPoint, SweepSpec, WorkloadSpec};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BenchError {
    #[error("invalid workload spec: {0}")]
    InvalidSpec(String),
    #[error("bind failed: {0}")]
    BindFailed(String),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error("{model} has no {k}-way equal MIG split")]
    NoEqualSplit { model: String, k: u32 },
    #[error("request conservation violated for {run}: issued {issued}, served {served}, recorded {recorded}")]
    Conservation {
        run: RunId,
        issued: u64,
        served: u64,
        recorded: u64,
    },
    #[error("sweep point {index} ({point}): {source}")]
    SweepPoint {
        index: usize,
        point: String,
        source: Box<BenchError>,
    },
}

impl From<DeviceError> for BenchError {
    fn from(e: DeviceError) -> Self {
        BenchError::Controller(e.into())
    }
}

/// Hooks for callers that need to observe runs as they finish.
pub trait RunObserver {
    fn run_started(&mut self, _cfg: &RunConfig) {}
    fn run_finished(&mut self, _run: &RunId, _harness: &Harness, _result: Result<&MetricSummary, &BenchError>) {}
}

impl RunObserver for () {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharingComparison {
    pub profile: String,
    pub mig_runs: Vec<RunId>,
    pub mps_runs: Vec<RunId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Harness {
    pub controller: Controller,
    pub store: TelemetryStore,
    next_run: u64,
}

impl Harness {
    pub fn new(controller: Controller) -> Self {
        Harness {
            controller,
            store: TelemetryStore::new(),
            next_run: 1,
        }
    }

    /// Reassembles a harness from persisted state. `next_run` is the
    /// sequence number the next allocated run id will carry.
    pub fn from_parts(controller: Controller, store: TelemetryStore, next_run: u64) -> Self {
        Harness {
            controller,
            store,
            next_run: next_run.max(1),
        }
    }

    pub fn next_run_seq(&self) -> u64 {
        self.next_run
    }

    pub fn allocate_run_ids(&mut self, n: usize) -> Vec<RunId> {
        let first = self.next_run.max(1);
        self.next_run = first + n as u64;
        (first..self.next_run).map(RunId::from_seq).collect()
    }

    /// Binds, executes, records and unbinds one run. The run's telemetry is
    /// stored even when it turns out to have no steady-state samples.
    pub fn run_workload(
        &mut self,
        backend: &dyn Backend,
        cfg: &RunConfig,
        observer: &mut dyn RunObserver,
    ) -> Result<RunId, BenchError> {
        cfg.spec.validate().map_err(BenchError::InvalidSpec)?;
        if self.store.run(&cfg.run_id).is_some() {
            return Err(BenchError::InvalidSpec(alloc::format!("run id {} already used", cfg.run_id)));
        }
        let device = self.controller.device(cfg.device_id)?.clone();
        let entry = device.entry();
        let total = entry.total_compute_slices;
        let (instance, profile, slices, memory, mode, co_tenants) = match &cfg.target {
            RunTarget::Gi(gi_id) => {
                let gi = device
                    .instance(*gi_id)
                    .ok_or_else(|| BenchError::BindFailed(alloc::format!("GPU instance {gi_id} not found")))?;
                (
                    alloc::format!("gpu{}/gi{}", cfg.device_id, gi_id),
                    Some(gi.profile.name.clone()),
                    gi.profile.compute_slices,
                    gi.profile.memory_gib,
                    SharingMode::Mig,
                    1,
                )
            }
            RunTarget::MpsShared => {
                if device.sharing_mode != SharingMode::Mps {
                    return Err(BenchError::BindFailed(alloc::format!(
                        "device {} is in {} mode, not mps",
                        cfg.device_id,
                        device.sharing_mode
                    )));
                }
                (
                    alloc::format!("gpu{}", cfg.device_id),
                    None,
                    total,
                    entry.total_memory_gib,
                    SharingMode::Mps,
                    cfg.spec.concurrency,
                )
            }
            RunTarget::Exclusive => {
                if device.sharing_mode != SharingMode::Exclusive {
                    return Err(BenchError::BindFailed(alloc::format!(
                        "device {} is in {} mode, not exclusive",
                        cfg.device_id,
                        device.sharing_mode
                    )));
                }
                (
                    alloc::format!("gpu{}", cfg.device_id),
                    None,
                    total,
                    entry.total_memory_gib,
                    SharingMode::Exclusive,
                    1,
                )
            }
        };
        if let RunTarget::Gi(gi_id) = cfg.target {
            self.controller
                .bind_workload(cfg.device_id, gi_id, &cfg.run_id)
                .map_err(|e| BenchError::BindFailed(e.to_string()))?;
        }
        observer.run_started(cfg);
        let job = RunJob {
            instance: instance.clone(),
            spec: cfg.spec.clone(),
            context: ServiceContext {
                slices,
                device_slices: total,
                co_tenants,
                mode,
            },
            memory_capacity_gib: memory as f64,
            seed: cfg.seed,
        };
        let outcome = backend.execute(&job);
        if let RunTarget::Gi(gi_id) = cfg.target {
            self.controller.unbind_workload(cfg.device_id, gi_id)?;
        }
        let recorded = outcome.map_err(BenchError::from).and_then(|output| {
            self.record(cfg, backend.name(), &device.entry().model_name, &instance, profile, slices, co_tenants, mode, output)
        });
        match recorded {
            Ok(()) => {
                let summary = self.store.summarize(&cfg.run_id).map_err(BenchError::from);
                observer.run_finished(&cfg.run_id, self, summary.as_ref());
                Ok(cfg.run_id.clone())
            }
            Err(e) => {
                self.store.remove_run(&cfg.run_id);
                observer.run_finished(&cfg.run_id, self, Err(&e));
                Err(e)
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &mut self,
        cfg: &RunConfig,
        backend: &str,
        device_model: &str,
        instance: &str,
        profile: Option<String>,
        slices: u32,
        co_tenants: u32,
        arm: SharingMode,
        output: crate::backend::RunOutput,
    ) -> Result<(), BenchError> {
        let run = &cfg.run_id;
        let mut completions = Vec::new();
        for s in &output.samples {
            let key = SeriesKey::new(run, &s.instance, s.kind);
            if let Err(e) = self.store.append(&key, s.ts, s.value) {
                self.store.remove_run(run);
                return Err(e.into());
            }
            if s.kind == MetricKind::LatencyMs && s.instance == instance {
                completions.push(s.ts);
            }
        }
        let issued = completions.len() as u64;
        let served = issued;
        let recorded = self
            .store
            .series(&SeriesKey::new(run, instance, MetricKind::LatencyMs))
            .map_or(0, |s| s.points.len() as u64);
        if let Some(n) = cfg.spec.total_requests {
            if served != n || recorded != n {
                return Err(BenchError::Conservation {
                    run: run.clone(),
                    issued: n,
                    served,
                    recorded,
                });
            }
        }
        self.store.record_run(RunMeta {
            run_id: run.clone(),
            device_id: cfg.device_id,
            device_model: device_model.into(),
            instance: instance.into(),
            profile,
            arm,
            slices,
            co_tenants,
            spec: cfg.spec.clone(),
            seed: cfg.seed,
            experiment: cfg.experiment,
            backend: backend.into(),
            warmup_end_ms: cfg.spec.warmup.end_ts(&completions, output.end_ms),
            end_ms: output.end_ms,
            issued,
            served,
        });
        Ok(())
    }

    fn check_sweep(&self, sweep: &SweepSpec) -> Result<Vec<SweepPoint>, BenchError> {
        let device = self.controller.device(sweep.device_id)?;
        let entry = device.entry();
        if sweep.axes.profile.is_empty() {
            return Err(BenchError::InvalidSpec("sweep needs at least one profile".into()));
        }
        if device.sharing_mode == SharingMode::Mps {
            return Err(DeviceError::ModeConflict {
                device: sweep.device_id,
                mode: SharingMode::Mps,
                reason: "a MIG sweep cannot run while MPS is active",
            }
            .into());
        }
        for p in &sweep.axes.profile {
            let check = entry.validate_config(&[p.as_str()])?;
            if !check.feasible {
                return Err(ControllerError::InfeasibleTarget {
                    model: entry.model_name.clone(),
                    target: vec![p.clone()],
                }
                .into());
            }
        }
        let points = sweep.points();
        for (index, point) in points.iter().enumerate() {
            let tag = |e: BenchError| BenchError::SweepPoint {
                index,
                point: point.to_string(),
                source: Box::new(e),
            };
            point.spec.validate().map_err(|e| tag(BenchError::InvalidSpec(e)))?;
            let profile = entry.profile(&point.profile).expect("checked above");
            let need = crate::backend::footprint_mib(&point.spec.model, point.spec.batch_size);
            let capacity = profile.memory_gib as f64 * 1024.0;
            if need > capacity {
                return Err(tag(BackendError::OutOfMemory {
                    need_mib: need,
                    capacity_mib: capacity,
                }
                .into()));
            }
        }
        Ok(points)
    }

    /// Number of runs a sweep will produce, after validating it.
    pub fn sweep_size(&self, sweep: &SweepSpec) -> Result<usize, BenchError> {
        self.check_sweep(sweep).map(|p| p.len())
    }

    pub fn run_sweep(
        &mut self,
        backend: &dyn Backend,
        sweep: &SweepSpec,
        observer: &mut dyn RunObserver,
    ) -> Result<Vec<RunId>, BenchError> {
        let n = self.sweep_size(sweep)?;
        let ids = self.allocate_run_ids(n);
        self.run_sweep_as(backend, sweep, &ids, observer)
    }

    /// Runs a sweep with pre-allocated run ids, one per point, sequentially.
    pub fn run_sweep_as(
        &mut self,
        backend: &dyn Backend,
        sweep: &SweepSpec,
        ids: &[RunId],
        observer: &mut dyn RunObserver,
    ) -> Result<Vec<RunId>, BenchError> {
        let points = self.check_sweep(sweep)?;
        if ids.len() != points.len() {
            return Err(BenchError::InvalidSpec(alloc::format!(
                "{} run ids for {} sweep points",
                ids.len(),
                points.len()
            )));
        }
        let mut done = Vec::with_capacity(points.len());
        for (index, (point, run_id)) in points.iter().zip(ids).enumerate() {
            let tag = |e: BenchError| BenchError::SweepPoint {
                index,
                point: point.to_string(),
                source: Box::new(e),
            };
            self.controller
                .apply_plan(&PartitionPlan {
                    device_id: sweep.device_id,
                    target: vec![point.profile.clone()],
                    strategy: PlanStrategy::Strict,
                })
                .map_err(|e| tag(e.into()))?;
            let gi = self
                .controller
                .track_instances(sweep.device_id)
                .map_err(|e| tag(e.into()))?[0]
                .gi_id;
            let cfg = RunConfig {
                run_id: run_id.clone(),
                device_id: sweep.device_id,
                target: RunTarget::Gi(gi),
                spec: point.spec.clone(),
                seed: sweep.seed,
                experiment: Experiment::Sweep,
            };
            done.push(self.run_workload(backend, &cfg, observer).map_err(tag)?);
        }
        Ok(done)
    }

    /// The profile that splits the device into `k` equal instances covering
    /// every compute slice.
    pub fn equal_split_profile(&self, device_id: DeviceId, k: u32) -> Result<String, BenchError> {
        let entry = self.controller.device(device_id)?.entry();
        let no_split = || BenchError::NoEqualSplit {
            model: entry.model_name.clone(),
            k,
        };
        if k == 0 {
            return Err(no_split());
        }
        entry
            .profiles
            .iter()
            .filter(|p| p.compute_slices * k == entry.total_compute_slices)
            .find(|p| {
                let req = vec![p.name.as_str(); k as usize];
                entry.validate_config(&req).is_ok_and(|c| c.feasible)
            })
            .map(|p| p.name.clone())
            .ok_or_else(no_split)
    }

    pub fn run_sharing_comparison(
        &mut self,
        backend: &dyn Backend,
        device_id: DeviceId,
        spec: &WorkloadSpec,
        k: u32,
        seed: u64,
        observer: &mut dyn RunObserver,
    ) -> Result<SharingComparison, BenchError> {
        self.equal_split_profile(device_id, k)?;
        let ids = self.allocate_run_ids(2 * k as usize);
        self.run_sharing_comparison_as(backend, device_id, spec, k, seed, &ids, observer)
    }

    /// MIG arm first (k replicas, one per equal-size instance), then the MPS
    /// arm (k co-located replicas). Replica `i` uses seed `seed + i` in both
    /// arms. The device is left in exclusive mode.
    #[allow(clippy::too_many_arguments)]
    pub fn run_sharing_comparison_as(
        &mut self,
        backend: &dyn Backend,
        device_id: DeviceId,
        spec: &WorkloadSpec,
        k: u32,
        seed: u64,
        ids: &[RunId],
        observer: &mut dyn RunObserver,
    ) -> Result<SharingComparison, BenchError> {
        let profile = self.equal_split_profile(device_id, k)?;
        spec.validate().map_err(BenchError::InvalidSpec)?;
        if ids.len() != 2 * k as usize {
            return Err(BenchError::InvalidSpec(alloc::format!(
                "{} run ids for {} replicas per arm",
                ids.len(),
                k
            )));
        }
        let mut spec = spec.clone();
        spec.concurrency = k;

        if self.controller.device(device_id)?.sharing_mode == SharingMode::Mps {
            self.controller.set_mps(device_id, false)?;
        }
        self.controller.apply_plan(&PartitionPlan {
            device_id,
            target: vec![profile.clone(); k as usize],
            strategy: PlanStrategy::Strict,
        })?;
        let gis: Vec<_> = self
            .controller
            .track_instances(device_id)?
            .into_iter()
            .map(|r| r.gi_id)
            .collect();
        let mut mig_runs = Vec::new();
        for (i, gi) in gis.into_iter().enumerate() {
            let cfg = RunConfig {
                run_id: ids[i].clone(),
                device_id,
                target: RunTarget::Gi(gi),
                spec: spec.clone(),
                seed: seed + i as u64,
                experiment: Experiment::Sharing,
            };
            mig_runs.push(self.run_workload(backend, &cfg, observer)?);
        }

        self.controller.apply_plan(&PartitionPlan {
            device_id,
            target: Vec::new(),
            strategy: PlanStrategy::Strict,
        })?;
        self.controller.disable_mig(device_id)?;
        self.controller.set_mps(device_id, true)?;
        let mut mps_runs = Vec::new();
        let mut failure = None;
        for i in 0..k as usize {
            let cfg = RunConfig {
                run_id: ids[k as usize + i].clone(),
                device_id,
                target: RunTarget::MpsShared,
                spec: spec.clone(),
                seed: seed + i as u64,
                experiment: Experiment::Sharing,
            };
            match self.run_workload(backend, &cfg, observer) {
                Ok(id) => mps_runs.push(id),
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            }
        }
        self.controller.set_mps(device_id, false)?;
        match failure {
            Some(e) => Err(e),
            None => Ok(SharingComparison {
                profile,
                mig_runs,
                mps_runs,
            }),
        }
    }

    pub fn summarize(&self, run: &RunId) -> Result<MetricSummary, TelemetryError> {
        self.store.summarize(run)
    }
}
