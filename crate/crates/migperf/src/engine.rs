//! In-process service: owns the harness, runs benchmark jobs on a worker
//! thread and persists state under a directory.
//!
//! State directory layout:
//!
//! ```text
//! state.json               controller state and the next run sequence number
//! runs/<run>.jsonl         raw series, one sample per line
//! runs/<run>.meta.json     run metadata
//! runs/<run>.summary.json  metric summary (completed runs only)
//! runs/<run>.status.json   job status
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Condvar, Mutex, MutexGuard, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use migperf_core::backend::{Backend, SimBackend};
use migperf_core::bench::{BenchError, Harness, RunObserver};
use migperf_core::controller::{Controller, PartitionPlan, PlanStrategy};
use migperf_core::device::{DeviceCatalogEntry, DeviceId, SharingMode};
use migperf_core::telemetry::{MetricSummary, RunId, RunMeta, SeriesKey, TelemetryStore};
use migperf_core::workload::{Experiment, RunConfig, RunTarget, SweepSpec, WorkloadKind, WorkloadSpec};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{ApiError, ErrorCode};
use crate::external::ExternalBackend;
use crate::series::{load_records, read_jsonl, run_records, write_jsonl, SeriesRecord};

pub const STATE_DIR_ENV: &str = "MIGPERF_STATE_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Queued,
    Running,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub run_id: RunId,
    pub state: RunState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<MetricSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ApiError>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_unix_ms: Option<i64>,
}

impl RunStatus {
    fn queued(run_id: RunId) -> Self {
        RunStatus {
            run_id,
            state: RunState::Queued,
            summary: None,
            error: None,
            finished_unix_ms: None,
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self.state, RunState::Completed | RunState::Failed)
    }
}

/// Which benchmark a request asks for. `Train` and `Infer` accept a single
/// run or a sweep of the matching workload kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMode {
    Train,
    Infer,
    Sweep,
    Compare,
}

impl BenchMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BenchMode::Train => "train",
            BenchMode::Infer => "infer",
            BenchMode::Sweep => "sweep",
            BenchMode::Compare => "compare",
        }
    }

    pub fn parse(s: &str) -> Option<BenchMode> {
        [BenchMode::Train, BenchMode::Infer, BenchMode::Sweep, BenchMode::Compare]
            .into_iter()
            .find(|m| m.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendChoice {
    #[default]
    Sim,
    /// JSON Lines file of pre-recorded samples.
    External(PathBuf),
}

/// A single benchmark run. With `profile`, the device is first partitioned
/// into one instance of that profile and the run binds to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRequest {
    pub device_id: DeviceId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<RunTarget>,
    pub spec: WorkloadSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub backend: BackendChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareRequest {
    pub device_id: DeviceId,
    pub spec: WorkloadSpec,
    pub replicas: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub backend: BackendChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRequest {
    #[serde(flatten)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub backend: BackendChoice,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BenchRequest {
    Single(RunRequest),
    Sweep(SweepRequest),
    Compare(CompareRequest),
}

impl BenchRequest {
    /// Sweeps carry `axes`, comparisons carry `replicas`; anything else is
    /// a single run.
    pub fn from_value(v: &Value) -> Result<BenchRequest, ApiError> {
        let obj = v
            .as_object()
            .ok_or_else(|| ApiError::invalid("benchmark config must be a JSON object"))?;
        let bad = |e: serde_json::Error| ApiError::invalid(format!("benchmark config: {e}"));
        if obj.contains_key("axes") {
            Ok(BenchRequest::Sweep(serde_json::from_value(v.clone()).map_err(bad)?))
        } else if obj.contains_key("replicas") {
            Ok(BenchRequest::Compare(serde_json::from_value(v.clone()).map_err(bad)?))
        } else {
            Ok(BenchRequest::Single(serde_json::from_value(v.clone()).map_err(bad)?))
        }
    }

    pub fn device_id(&self) -> DeviceId {
        match self {
            BenchRequest::Single(r) => r.device_id,
            BenchRequest::Sweep(s) => s.sweep.device_id,
            BenchRequest::Compare(c) => c.device_id,
        }
    }

    fn backend(&self) -> &BackendChoice {
        match self {
            BenchRequest::Single(r) => &r.backend,
            BenchRequest::Sweep(s) => &s.backend,
            BenchRequest::Compare(c) => &c.backend,
        }
    }

    pub fn check_mode(&self, mode: BenchMode) -> Result<(), ApiError> {
        let kind = match self {
            BenchRequest::Single(r) => Some(r.spec.kind),
            BenchRequest::Sweep(s) => Some(s.sweep.base.kind),
            BenchRequest::Compare(_) => None,
        };
        let ok = match (mode, self) {
            (BenchMode::Train, BenchRequest::Single(_) | BenchRequest::Sweep(_)) => kind == Some(WorkloadKind::Training),
            (BenchMode::Infer, BenchRequest::Single(_) | BenchRequest::Sweep(_)) => kind == Some(WorkloadKind::Inference),
            (BenchMode::Sweep, BenchRequest::Sweep(_)) => true,
            (BenchMode::Compare, BenchRequest::Compare(_)) => true,
            _ => false,
        };
        if ok {
            return Ok(());
        }
        let shape = match self {
            BenchRequest::Single(r) => format!("a single {} run", r.spec.kind),
            BenchRequest::Sweep(s) => format!("a {} sweep", s.sweep.base.kind),
            BenchRequest::Compare(_) => "a MIG/MPS comparison".into(),
        };
        Err(ApiError::invalid(format!("bench {} cannot run {shape}", mode.as_str())))
    }
}

/// Response to a benchmark submission and to a completed wait.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResponse {
    pub run_ids: Vec<RunId>,
    pub runs: Vec<RunStatus>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PersistedState {
    next_run: u64,
    controller: Controller,
}

enum JobKind {
    Single(RunRequest),
    Sweep(SweepSpec),
    Compare(CompareRequest),
}

struct Job {
    ids: Vec<RunId>,
    kind: JobKind,
    external: Option<ExternalBackend>,
}

struct Inner {
    harness: Mutex<Harness>,
    /// Controller as of the last completed operation; readable while a job
    /// holds the harness.
    snapshot: RwLock<Controller>,
    /// Telemetry of finished runs.
    published: RwLock<TelemetryStore>,
    statuses: Mutex<BTreeMap<RunId, RunStatus>>,
    next_run: Mutex<u64>,
    pending: Mutex<usize>,
    idle: Condvar,
    state_dir: Option<PathBuf>,
}

pub struct Engine {
    inner: Arc<Inner>,
    jobs: Mutex<Sender<Job>>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

fn now_unix_ms() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as i64)
        .unwrap_or(0)
}

fn io_err(what: &Path, e: impl std::fmt::Display) -> ApiError {
    ApiError::internal(format!("{}: {e}", what.display()))
}

fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<(), ApiError> {
    let tmp = path.with_extension("tmp");
    let mut w = BufWriter::new(File::create(&tmp).map_err(|e| io_err(&tmp, e))?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_err(&tmp, e))?;
    w.write_all(b"\n").map_err(|e| io_err(&tmp, e))?;
    w.into_inner().map_err(|e| io_err(&tmp, e.error()))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn read_json_file<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ApiError> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| io_err(path, e))
}

impl Engine {
    /// Engine without persistence.
    pub fn in_memory(catalog: &[DeviceCatalogEntry]) -> Engine {
        Self::build(Controller::from_catalog(catalog), TelemetryStore::new(), BTreeMap::new(), 1, None)
    }

    /// Opens (or initialises) a state directory. An existing `state.json`
    /// takes precedence over `catalog`.
    pub fn open(state_dir: &Path, catalog: &[DeviceCatalogEntry]) -> Result<Engine, ApiError> {
        let runs_dir = state_dir.join("runs");
        fs::create_dir_all(&runs_dir).map_err(|e| io_err(&runs_dir, e))?;
        let state_path = state_dir.join("state.json");
        let (controller, mut next_run) = if state_path.exists() {
            let s: PersistedState = read_json_file(&state_path)?;
            (s.controller, s.next_run)
        } else {
            (Controller::from_catalog(catalog), 1)
        };

        let mut store = TelemetryStore::new();
        let mut statuses = BTreeMap::new();
        let mut names: Vec<PathBuf> = fs::read_dir(&runs_dir)
            .map_err(|e| io_err(&runs_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        names.sort();
        for path in &names {
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
                continue;
            };
            if let Some(run) = name.strip_suffix(".meta.json") {
                let meta: RunMeta = read_json_file(path)?;
                let series = runs_dir.join(format!("{run}.jsonl"));
                let f = File::open(&series).map_err(|e| io_err(&series, e))?;
                let records: Vec<SeriesRecord> = read_jsonl(BufReader::new(f)).map_err(|e| io_err(&series, e))?;
                load_records(&mut store, &records).map_err(|e| io_err(&series, e))?;
                store.record_run(meta);
            } else if let Some(run) = name.strip_suffix(".status.json") {
                let mut st: RunStatus = read_json_file(path)?;
                if !st.is_terminal() {
                    st.state = RunState::Failed;
                    st.error = Some(ApiError::internal("interrupted before completion"));
                }
                statuses.insert(RunId(run.into()), st);
            }
        }
        for meta in store.runs() {
            let st = statuses
                .entry(meta.run_id.clone())
                .or_insert_with(|| RunStatus {
                    state: RunState::Completed,
                    ..RunStatus::queued(meta.run_id.clone())
                });
            if st.state == RunState::Completed {
                st.summary = store.summarize(&meta.run_id).ok();
            }
            if let Some(seq) = meta.run_id.as_str().strip_prefix("run-").and_then(|n| n.parse::<u64>().ok()) {
                next_run = next_run.max(seq + 1);
            }
        }
        let engine = Self::build(controller, store, statuses, next_run, Some(state_dir.to_path_buf()));
        engine.persist_state()?;
        Ok(engine)
    }

    fn build(
        controller: Controller,
        store: TelemetryStore,
        statuses: BTreeMap<RunId, RunStatus>,
        next_run: u64,
        state_dir: Option<PathBuf>,
    ) -> Engine {
        let inner = Arc::new(Inner {
            harness: Mutex::new(Harness::from_parts(controller.clone(), store.clone(), next_run)),
            snapshot: RwLock::new(controller),
            published: RwLock::new(store),
            statuses: Mutex::new(statuses),
            next_run: Mutex::new(next_run.max(1)),
            pending: Mutex::new(0),
            idle: Condvar::new(),
            state_dir,
        });
        let (tx, rx) = mpsc::channel();
        let worker = Arc::clone(&inner);
        std::thread::Builder::new()
            .name("migperf-bench".into())
            .spawn(move || worker_loop(worker, rx))
            .expect("spawn benchmark worker");
        Engine {
            inner,
            jobs: Mutex::new(tx),
        }
    }

    pub fn state_dir(&self) -> Option<&Path> {
        self.inner.state_dir.as_deref()
    }

    /// Copy of the controller as of the last finished operation.
    pub fn controller(&self) -> Controller {
        self.inner.snapshot.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Read access to the telemetry of finished runs.
    pub fn with_store<R>(&self, f: impl FnOnce(&TelemetryStore) -> R) -> R {
        f(&self.inner.published.read().unwrap_or_else(|e| e.into_inner()))
    }

    /// Runs `f` against the live controller. Refused while benchmark jobs
    /// are queued or running.
    pub fn mutate<R>(&self, f: impl FnOnce(&mut Controller) -> Result<R, ApiError>) -> Result<R, ApiError> {
        let pending = lock(&self.inner.pending);
        if *pending > 0 {
            return Err(ApiError::new(
                ErrorCode::Busy,
                format!("{} benchmark job(s) in progress", *pending),
            ));
        }
        let mut h = lock(&self.inner.harness);
        drop(pending);
        let out = f(&mut h.controller);
        *self.inner.snapshot.write().unwrap_or_else(|e| e.into_inner()) = h.controller.clone();
        drop(h);
        self.persist_state()?;
        out
    }

    fn persist_state(&self) -> Result<(), ApiError> {
        persist_state(&self.inner)
    }

    pub fn status(&self, run: &RunId) -> Result<RunStatus, ApiError> {
        lock(&self.inner.statuses)
            .get(run)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown run {run}")))
    }

    pub fn statuses(&self, runs: &[RunId]) -> Vec<RunStatus> {
        let map = lock(&self.inner.statuses);
        runs.iter().filter_map(|r| map.get(r).cloned()).collect()
    }

    /// Completion time of every finished run, for exposition timestamps.
    pub fn finish_times(&self) -> BTreeMap<RunId, i64> {
        lock(&self.inner.statuses)
            .iter()
            .filter_map(|(k, s)| s.finished_unix_ms.map(|t| (k.clone(), t)))
            .collect()
    }

    /// Validates a request and queues it. Returns the ids its runs will use.
    pub fn submit(&self, request: BenchRequest) -> Result<BenchResponse, ApiError> {
        let controller = self.controller();
        let device = controller.device(request.device_id())?;
        let probe = Harness::new(controller.clone());
        let count = match &request {
            BenchRequest::Single(r) => {
                r.spec.validate().map_err(ApiError::invalid)?;
                if r.profile.is_some() && r.target.is_some() {
                    return Err(ApiError::invalid("give either profile or target, not both"));
                }
                if let Some(p) = &r.profile {
                    if device.entry().profile(p).is_none() {
                        return Err(ApiError::invalid(format!(
                            "unknown profile {p} for {}",
                            device.entry().model_name
                        )));
                    }
                }
                1
            }
            BenchRequest::Sweep(s) => probe.sweep_size(&s.sweep)?,
            BenchRequest::Compare(c) => {
                c.spec.validate().map_err(ApiError::invalid)?;
                probe.equal_split_profile(c.device_id, c.replicas)?;
                2 * c.replicas as usize
            }
        };
        let external = match request.backend() {
            BackendChoice::Sim => None,
            BackendChoice::External(path) => Some(
                ExternalBackend::from_path(path)
                    .map_err(|e| ApiError::invalid(format!("{}: {e}", path.display())))?,
            ),
        };

        let ids: Vec<RunId> = {
            let mut next = lock(&self.inner.next_run);
            let first = *next;
            *next += count as u64;
            (first..*next).map(RunId::from_seq).collect()
        };
        {
            let mut statuses = lock(&self.inner.statuses);
            for id in &ids {
                statuses.insert(id.clone(), RunStatus::queued(id.clone()));
            }
        }
        *lock(&self.inner.pending) += 1;
        let kind = match request {
            BenchRequest::Single(r) => JobKind::Single(r),
            BenchRequest::Sweep(s) => JobKind::Sweep(s.sweep),
            BenchRequest::Compare(c) => JobKind::Compare(c),
        };
        let job = Job {
            ids: ids.clone(),
            kind,
            external,
        };
        if lock(&self.jobs).send(job).is_err() {
            *lock(&self.inner.pending) -= 1;
            return Err(ApiError::internal("benchmark worker is gone"));
        }
        let runs = self.statuses(&ids);
        Ok(BenchResponse { run_ids: ids, runs })
    }

    /// Blocks until every queued job has finished.
    pub fn wait_idle(&self) {
        let mut pending = lock(&self.inner.pending);
        while *pending > 0 {
            pending = self.inner.idle.wait(pending).unwrap_or_else(|e| e.into_inner());
        }
    }
}

fn persist_state(inner: &Inner) -> Result<(), ApiError> {
    let Some(dir) = &inner.state_dir else {
        return Ok(());
    };
    let state = PersistedState {
        next_run: *lock(&inner.next_run),
        controller: inner.snapshot.read().unwrap_or_else(|e| e.into_inner()).clone(),
    };
    write_json_file(&dir.join("state.json"), &state)
}

fn worker_loop(inner: Arc<Inner>, rx: Receiver<Job>) {
    while let Ok(job) = rx.recv() {
        let result = {
            let mut h = lock(&inner.harness);
            let r = run_job(&inner, &mut h, &job);
            *inner.snapshot.write().unwrap_or_else(|e| e.into_inner()) = h.controller.clone();
            r
        };
        if let Err(e) = result {
            let err = ApiError::from(e);
            let mut statuses = lock(&inner.statuses);
            for id in &job.ids {
                if let Some(st) = statuses.get_mut(id) {
                    if !st.is_terminal() {
                        st.state = RunState::Failed;
                        st.error = Some(err.clone());
                        st.finished_unix_ms = Some(now_unix_ms());
                        let st = st.clone();
                        if let Err(e) = persist_status(&inner, &st) {
                            eprintln!("migperf: {e}");
                        }
                    }
                }
            }
        }
        if let Err(e) = persist_state(&inner) {
            eprintln!("migperf: {e}");
        }
        let mut pending = lock(&inner.pending);
        *pending -= 1;
        inner.idle.notify_all();
    }
}

fn run_job(inner: &Inner, h: &mut Harness, job: &Job) -> Result<(), BenchError> {
    let device_id = match &job.kind {
        JobKind::Single(r) => r.device_id,
        JobKind::Sweep(s) => s.device_id,
        JobKind::Compare(c) => c.device_id,
    };
    let sim;
    let backend: &dyn Backend = match &job.external {
        Some(b) => b,
        None => {
            sim = SimBackend::new(h.controller.device(device_id)?.entry().perf_params());
            &sim
        }
    };
    let mut observer = Publisher { inner };
    match &job.kind {
        JobKind::Single(r) => {
            let target = match (&r.profile, &r.target) {
                (Some(p), _) => {
                    h.controller.apply_plan(&PartitionPlan {
                        device_id,
                        target: vec![p.clone()],
                        strategy: PlanStrategy::Strict,
                    })?;
                    RunTarget::Gi(h.controller.track_instances(device_id)?[0].gi_id)
                }
                (None, Some(t)) => t.clone(),
                (None, None) => match h.controller.device(device_id)?.sharing_mode {
                    SharingMode::Mps => RunTarget::MpsShared,
                    _ => RunTarget::Exclusive,
                },
            };
            let cfg = RunConfig {
                run_id: job.ids[0].clone(),
                device_id,
                target,
                spec: r.spec.clone(),
                seed: r.seed,
                experiment: Experiment::Single,
            };
            h.run_workload(backend, &cfg, &mut observer)?;
        }
        JobKind::Sweep(s) => {
            h.run_sweep_as(backend, s, &job.ids, &mut observer)?;
        }
        JobKind::Compare(c) => {
            h.run_sharing_comparison_as(backend, device_id, &c.spec, c.replicas, c.seed, &job.ids, &mut observer)?;
        }
    }
    Ok(())
}

fn persist_status(inner: &Inner, st: &RunStatus) -> Result<(), ApiError> {
    match &inner.state_dir {
        Some(dir) => write_json_file(&dir.join("runs").join(format!("{}.status.json", st.run_id)), st),
        None => Ok(()),
    }
}

/// Copies finished runs into the published store and onto disk.
struct Publisher<'a> {
    inner: &'a Inner,
}

impl Publisher<'_> {
    fn persist_run(&self, harness: &Harness, run: &RunId, summary: Option<&MetricSummary>) -> Result<(), ApiError> {
        let Some(dir) = &self.inner.state_dir else {
            return Ok(());
        };
        let Some(meta) = harness.store.run(run) else {
            return Ok(());
        };
        let runs = dir.join("runs");
        let path = runs.join(format!("{run}.jsonl"));
        let mut w = BufWriter::new(File::create(&path).map_err(|e| io_err(&path, e))?);
        write_jsonl(&mut w, &run_records(&harness.store, run)).map_err(|e| io_err(&path, e))?;
        w.flush().map_err(|e| io_err(&path, e))?;
        write_json_file(&runs.join(format!("{run}.meta.json")), meta)?;
        if let Some(s) = summary {
            write_json_file(&runs.join(format!("{run}.summary.json")), s)?;
        }
        Ok(())
    }
}

impl RunObserver for Publisher<'_> {
    fn run_started(&mut self, cfg: &RunConfig) {
        if let Some(st) = lock(&self.inner.statuses).get_mut(&cfg.run_id) {
            st.state = RunState::Running;
        }
    }

    fn run_finished(&mut self, run: &RunId, harness: &Harness, result: Result<&MetricSummary, &BenchError>) {
        if let Some(meta) = harness.store.run(run) {
            let mut published = self.inner.published.write().unwrap_or_else(|e| e.into_inner());
            published.remove_run(run);
            for s in harness.store.run_series(run) {
                let key = SeriesKey::new(run, &s.key.instance, s.key.metric);
                for &(ts, v) in &s.points {
                    published.append(&key, ts, v).expect("copy of a valid series");
                }
            }
            published.record_run(meta.clone());
        }
        let mut st = RunStatus {
            run_id: run.clone(),
            state: RunState::Completed,
            summary: None,
            error: None,
            finished_unix_ms: Some(now_unix_ms()),
        };
        match result {
            Ok(s) => st.summary = Some(s.clone()),
            Err(e) if harness.store.run(run).is_some() => st.error = Some(ApiError::from(e.clone())),
            Err(e) => {
                st.state = RunState::Failed;
                st.error = Some(ApiError::from(e.clone()));
            }
        }
        let persisted = self
            .persist_run(harness, run, st.summary.as_ref())
            .and_then(|_| persist_status(self.inner, &st));
        if let Err(e) = persisted {
            eprintln!("migperf: {e}");
        }
        *self.inner.snapshot.write().unwrap_or_else(|e| e.into_inner()) = harness.controller.clone();
        lock(&self.inner.statuses).insert(run.clone(), st);
    }
}

/// `--state-dir`, else the environment, else `.migperf`.
pub fn resolve_state_dir(explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    match std::env::var_os(STATE_DIR_ENV) {
        Some(p) if !p.is_empty() => PathBuf::from(p),
        _ => PathBuf::from(".migperf"),
    }
}
