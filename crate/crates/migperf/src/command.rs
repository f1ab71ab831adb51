//! Every operation the tool exposes, with its HTTP route. The CLI and the
//! daemon both turn their input into a [`Command`] and run it through
//! [`Command::execute`], so the two surfaces cannot drift apart.

use std::collections::BTreeMap;

use migperf_core::controller::{PartitionPlan, PlanStrategy};
use migperf_core::device::{DeviceId, GiId};
use migperf_core::report::{build_figure_dataset, render_exposition, FigureId};
use migperf_core::telemetry::RunId;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::engine::{BenchMode, BenchRequest, Engine};
use crate::error::ApiError;
use crate::export::{raw_csv, summaries_csv, CsvKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Route {
    pub name: &'static str,
    pub method: &'static str,
    /// axum path syntax: `{param}` segments.
    pub path: &'static str,
}

pub const ROUTES: &[Route] = &[
    Route { name: "device_list", method: "GET", path: "/v1/devices" },
    Route { name: "mig_mode", method: "POST", path: "/v1/devices/{device}/mig" },
    Route { name: "mps_mode", method: "POST", path: "/v1/devices/{device}/mps" },
    Route { name: "mig_ls", method: "GET", path: "/v1/devices/{device}/instances" },
    Route { name: "mig_create", method: "POST", path: "/v1/devices/{device}/instances" },
    Route { name: "mig_destroy", method: "DELETE", path: "/v1/devices/{device}/instances/{gi}" },
    Route { name: "ci_create", method: "POST", path: "/v1/devices/{device}/instances/{gi}/compute-instances" },
    Route { name: "ci_destroy", method: "DELETE", path: "/v1/devices/{device}/instances/{gi}/compute-instances/{ci}" },
    Route { name: "mig_plan", method: "POST", path: "/v1/devices/{device}/partitions" },
    Route { name: "bench_submit", method: "POST", path: "/v1/benchmarks" },
    Route { name: "bench_status", method: "GET", path: "/v1/benchmarks/{run_id}" },
    Route { name: "export_csv", method: "GET", path: "/v1/export/csv" },
    Route { name: "export_prom", method: "GET", path: "/metrics" },
    Route { name: "report", method: "GET", path: "/v1/reports/{figure}" },
];

pub fn route(name: &str) -> &'static Route {
    ROUTES.iter().find(|r| r.name == name).expect("route table entry")
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    DeviceList,
    MigMode { device: DeviceId, enabled: bool },
    MpsMode { device: DeviceId, enabled: bool },
    MigLs { device: DeviceId },
    MigCreate { device: DeviceId, profile: String, start: Option<u32> },
    MigDestroy { device: DeviceId, gi: GiId },
    CiCreate { device: DeviceId, gi: GiId, slices: u32 },
    CiDestroy { device: DeviceId, gi: GiId, ci: u32 },
    MigPlan { device: DeviceId, target: Vec<String>, strategy: PlanStrategy },
    BenchSubmit { mode: Option<BenchMode>, config: Value },
    BenchStatus { run_id: RunId },
    ExportCsv { runs: Vec<RunId>, kind: CsvKind },
    ExportProm,
    Report { figure: String, runs: Vec<RunId> },
}

/// Transport-neutral form of a call: decoded path parameters, query
/// parameters and JSON body.
#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub route: &'static Route,
    pub params: BTreeMap<String, String>,
    pub query: BTreeMap<String, String>,
    pub body: Option<Value>,
}

impl Request {
    fn new(name: &str) -> Request {
        Request {
            route: route(name),
            params: BTreeMap::new(),
            query: BTreeMap::new(),
            body: None,
        }
    }

    fn param(mut self, k: &str, v: impl ToString) -> Request {
        self.params.insert(k.into(), v.to_string());
        self
    }

    fn query(mut self, k: &str, v: impl ToString) -> Request {
        self.query.insert(k.into(), v.to_string());
        self
    }

    fn body(mut self, v: Value) -> Request {
        self.body = Some(v);
        self
    }

    /// Concrete path with parameters substituted.
    pub fn path(&self) -> String {
        let mut p = self.route.path.to_string();
        for (k, v) in &self.params {
            p = p.replace(&format!("{{{k}}}"), v);
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Output {
    Json(Value),
    Text { content_type: &'static str, body: String },
}

pub const CSV_CONTENT_TYPE: &str = "text/csv; charset=utf-8";
pub const PROM_CONTENT_TYPE: &str = "text/plain; version=0.0.4; charset=utf-8";

fn join_runs(runs: &[RunId]) -> String {
    runs.iter().map(|r| r.as_str()).collect::<Vec<_>>().join(",")
}

/// Comma-separated run list; blanks are ignored.
pub fn split_runs(s: &str) -> Vec<RunId> {
    s.split(',').map(str::trim).filter(|s| !s.is_empty()).map(RunId::from).collect()
}

/// Comma-separated profile list, as accepted by `mig plan --target`.
pub fn split_target(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

fn parse_param<T: std::str::FromStr>(req: &Request, k: &str) -> Result<T, ApiError> {
    let v = req
        .params
        .get(k)
        .ok_or_else(|| ApiError::invalid(format!("missing path parameter {k}")))?;
    v.parse()
        .map_err(|_| ApiError::invalid(format!("bad {k}: {v:?}")))
}

fn parse_body<T: for<'de> Deserialize<'de>>(req: &Request) -> Result<T, ApiError> {
    let body = req.body.clone().unwrap_or(Value::Object(Default::default()));
    serde_json::from_value(body).map_err(|e| ApiError::invalid(format!("request body: {e}")))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModeBody {
    enabled: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    profile: String,
    #[serde(default)]
    start: Option<u32>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CiBody {
    slices: u32,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TargetList {
    List(Vec<String>),
    Joined(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanBody {
    target: TargetList,
    #[serde(default)]
    strategy: PlanStrategy,
}

impl Command {
    pub fn to_request(&self) -> Request {
        match self {
            Command::DeviceList => Request::new("device_list"),
            Command::MigMode { device, enabled } => Request::new("mig_mode")
                .param("device", device)
                .body(json!({ "enabled": enabled })),
            Command::MpsMode { device, enabled } => Request::new("mps_mode")
                .param("device", device)
                .body(json!({ "enabled": enabled })),
            Command::MigLs { device } => Request::new("mig_ls").param("device", device),
            Command::MigCreate { device, profile, start } => {
                let mut body = json!({ "profile": profile });
                if let Some(s) = start {
                    body["start"] = json!(s);
                }
                Request::new("mig_create").param("device", device).body(body)
            }
            Command::MigDestroy { device, gi } => Request::new("mig_destroy").param("device", device).param("gi", gi),
            Command::CiCreate { device, gi, slices } => Request::new("ci_create")
                .param("device", device)
                .param("gi", gi)
                .body(json!({ "slices": slices })),
            Command::CiDestroy { device, gi, ci } => Request::new("ci_destroy")
                .param("device", device)
                .param("gi", gi)
                .param("ci", ci),
            Command::MigPlan { device, target, strategy } => Request::new("mig_plan")
                .param("device", device)
                .body(json!({ "target": target, "strategy": strategy })),
            Command::BenchSubmit { mode, config } => {
                let r = Request::new("bench_submit").body(config.clone());
                match mode {
                    Some(m) => r.query("mode", m.as_str()),
                    None => r,
                }
            }
            Command::BenchStatus { run_id } => Request::new("bench_status").param("run_id", run_id),
            Command::ExportCsv { runs, kind } => {
                let mut r = Request::new("export_csv");
                if !runs.is_empty() {
                    r = r.query("runs", join_runs(runs));
                }
                if *kind == CsvKind::Raw {
                    r = r.query("kind", "raw");
                }
                r
            }
            Command::ExportProm => Request::new("export_prom"),
            Command::Report { figure, runs } => {
                let r = Request::new("report").param("figure", figure);
                if runs.is_empty() {
                    r
                } else {
                    r.query("runs", join_runs(runs))
                }
            }
        }
    }

    pub fn from_request(req: &Request) -> Result<Command, ApiError> {
        let device = || parse_param::<DeviceId>(req, "device");
        let gi = || parse_param::<GiId>(req, "gi");
        let runs = || req.query.get("runs").map(|s| split_runs(s)).unwrap_or_default();
        Ok(match req.route.name {
            "device_list" => Command::DeviceList,
            "mig_mode" => Command::MigMode {
                device: device()?,
                enabled: parse_body::<ModeBody>(req)?.enabled,
            },
            "mps_mode" => Command::MpsMode {
                device: device()?,
                enabled: parse_body::<ModeBody>(req)?.enabled,
            },
            "mig_ls" => Command::MigLs { device: device()? },
            "mig_create" => {
                let b: CreateBody = parse_body(req)?;
                Command::MigCreate {
                    device: device()?,
                    profile: b.profile,
                    start: b.start,
                }
            }
            "mig_destroy" => Command::MigDestroy {
                device: device()?,
                gi: gi()?,
            },
            "ci_create" => Command::CiCreate {
                device: device()?,
                gi: gi()?,
                slices: parse_body::<CiBody>(req)?.slices,
            },
            "ci_destroy" => Command::CiDestroy {
                device: device()?,
                gi: gi()?,
                ci: parse_param(req, "ci")?,
            },
            "mig_plan" => {
                let b: PlanBody = parse_body(req)?;
                Command::MigPlan {
                    device: device()?,
                    target: match b.target {
                        TargetList::List(v) => v,
                        TargetList::Joined(s) => split_target(&s),
                    },
                    strategy: b.strategy,
                }
            }
            "bench_submit" => Command::BenchSubmit {
                mode: match req.query.get("mode") {
                    None => None,
                    Some(m) => Some(
                        BenchMode::parse(m).ok_or_else(|| ApiError::invalid(format!("unknown bench mode {m:?}")))?,
                    ),
                },
                config: req
                    .body
                    .clone()
                    .ok_or_else(|| ApiError::invalid("missing benchmark config"))?,
            },
            "bench_status" => Command::BenchStatus {
                run_id: RunId(parse_param(req, "run_id")?),
            },
            "export_csv" => Command::ExportCsv {
                runs: runs(),
                kind: match req.query.get("kind").map(String::as_str) {
                    None | Some("summaries") => CsvKind::Summaries,
                    Some("raw") => CsvKind::Raw,
                    Some(k) => return Err(ApiError::invalid(format!("unknown csv kind {k:?}"))),
                },
            },
            "export_prom" => Command::ExportProm,
            "report" => Command::Report {
                figure: parse_param(req, "figure")?,
                runs: runs(),
            },
            other => return Err(ApiError::not_found(format!("no command for route {other}"))),
        })
    }

    pub fn execute(&self, engine: &Engine) -> Result<Output, ApiError> {
        let json = |v: Value| Ok(Output::Json(v));
        match self {
            Command::DeviceList => {
                let c = engine.controller();
                let mut devices = Vec::new();
                for id in c.device_ids() {
                    let d = c.device(id)?;
                    let e = d.entry();
                    devices.push(json!({
                        "device_id": id,
                        "model_name": e.model_name,
                        "total_compute_slices": e.total_compute_slices,
                        "total_memory_gib": e.total_memory_gib,
                        "mig_enabled": d.mig_enabled,
                        "sharing_mode": d.sharing_mode,
                        "instances": d.instances.len(),
                        "profiles": e.profiles.iter().map(|p| p.name.as_str()).collect::<Vec<_>>(),
                    }));
                }
                json(json!({ "devices": devices }))
            }
            Command::MigMode { device, enabled } => {
                engine.mutate(|c| {
                    if *enabled {
                        c.enable_mig(*device)?
                    } else {
                        c.disable_mig(*device)?
                    };
                    Ok(())
                })?;
                json(json!({ "device_id": device, "mig_enabled": enabled }))
            }
            Command::MpsMode { device, enabled } => {
                let mode = engine.mutate(|c| {
                    c.set_mps(*device, *enabled)?;
                    Ok(c.device(*device)?.sharing_mode)
                })?;
                json(json!({ "device_id": device, "sharing_mode": mode }))
            }
            Command::MigLs { device } => {
                let c = engine.controller();
                let d = c.device(*device)?;
                json(json!({
                    "device_id": device,
                    "model_name": d.entry().model_name,
                    "mig_enabled": d.mig_enabled,
                    "sharing_mode": d.sharing_mode,
                    "instances": c.track_instances(*device)?,
                }))
            }
            Command::MigCreate { device, profile, start } => {
                let row = engine.mutate(|c| {
                    let gi = c.create_gi(*device, profile, *start)?;
                    Ok(c
                        .track_instances(*device)?
                        .into_iter()
                        .find(|r| r.gi_id == gi)
                        .expect("created instance is listed"))
                })?;
                json(json!({ "device_id": device, "instance": row }))
            }
            Command::MigDestroy { device, gi } => {
                engine.mutate(|c| Ok(c.destroy_gi(*device, *gi)?))?;
                json(json!({ "device_id": device, "gi_id": gi }))
            }
            Command::CiCreate { device, gi, slices } => {
                let ci = engine.mutate(|c| Ok(c.create_ci(*device, *gi, *slices)?))?;
                json(json!({ "device_id": device, "gi_id": gi, "ci_id": ci }))
            }
            Command::CiDestroy { device, gi, ci } => {
                engine.mutate(|c| Ok(c.destroy_ci(*device, *gi, *ci)?))?;
                json(json!({ "device_id": device, "gi_id": gi, "ci_id": ci }))
            }
            Command::MigPlan { device, target, strategy } => {
                let (script, rows) = engine.mutate(|c| {
                    let script = c.apply_plan(&PartitionPlan {
                        device_id: *device,
                        target: target.clone(),
                        strategy: *strategy,
                    })?;
                    Ok((script, c.track_instances(*device)?))
                })?;
                json(json!({
                    "device_id": device,
                    "steps": script.steps,
                    "dropped": script.dropped,
                    "instances": rows,
                }))
            }
            Command::BenchSubmit { mode, config } => {
                let request = BenchRequest::from_value(config)?;
                if let Some(m) = mode {
                    request.check_mode(*m)?;
                }
                let resp = engine.submit(request)?;
                json(serde_json::to_value(resp).expect("serializable"))
            }
            Command::BenchStatus { run_id } => {
                json(serde_json::to_value(engine.status(run_id)?).expect("serializable"))
            }
            Command::ExportCsv { runs, kind } => {
                let body = engine.with_store(|store| {
                    let runs: Vec<RunId> = if runs.is_empty() {
                        store.runs().map(|m| m.run_id.clone()).collect()
                    } else {
                        runs.clone()
                    };
                    match kind {
                        CsvKind::Summaries => summaries_csv(store, &runs),
                        CsvKind::Raw => raw_csv(store, &runs),
                    }
                });
                let body = body.map_err(|e| match e {
                    crate::export::ExportError::Telemetry(t) => ApiError::from(t),
                    other => ApiError::internal(other.to_string()),
                })?;
                Ok(Output::Text {
                    content_type: CSV_CONTENT_TYPE,
                    body,
                })
            }
            Command::ExportProm => {
                let times = engine.finish_times();
                let body = engine.with_store(|store| {
                    render_exposition(store, &|m| times.get(&m.run_id).copied().unwrap_or(0))
                });
                Ok(Output::Text {
                    content_type: PROM_CONTENT_TYPE,
                    body,
                })
            }
            Command::Report { figure, runs } => {
                let id = FigureId::parse(figure)
                    .ok_or_else(|| ApiError::not_found(format!("unknown figure {figure}")))?;
                let ds = engine.with_store(|store| {
                    build_figure_dataset(id, store, if runs.is_empty() { None } else { Some(runs) })
                })?;
                json(serde_json::to_value(ds).expect("serializable"))
            }
        }
    }
}
