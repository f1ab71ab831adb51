//! Command-line front end. Exit codes: 0 success, 1 operational error,
//! 2 usage error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use migperf_core::controller::PlanStrategy;
use migperf_core::telemetry::RunId;
use serde_json::Value;

use crate::catalog::resolve_catalog;
use crate::command::{split_runs, split_target, Command, Output};
use crate::engine::{resolve_state_dir, BenchMode, BenchResponse, Engine, RunState, RunStatus};
use crate::error::ApiError;
use crate::export::{figure_csv, CsvKind};
use crate::remote::RemoteClient;

#[derive(Debug, Parser)]
#[command(name = "migperf", version, about = "Benchmark workloads on MIG-partitioned GPUs")]
pub struct Cli {
    /// Print machine-readable JSON (same payloads as the HTTP API).
    #[arg(long, global = true)]
    pub json: bool,
    /// Send the command to a running daemon instead of executing locally.
    #[arg(long, global = true, value_name = "URL")]
    pub remote: Option<String>,
    /// State directory for local execution [env: MIGPERF_STATE_DIR, default: .migperf]
    #[arg(long, global = true, value_name = "DIR")]
    pub state_dir: Option<PathBuf>,
    /// Device catalog [env: MIGPERF_CATALOG, default: built-in]
    #[arg(long, global = true, value_name = "FILE")]
    pub catalog: Option<PathBuf>,
    #[command(subcommand)]
    pub command: TopCommand,
}

#[derive(Debug, Subcommand)]
pub enum TopCommand {
    /// Inspect devices.
    #[command(subcommand)]
    Device(DeviceCmd),
    /// Manage MIG mode and instances.
    #[command(subcommand)]
    Mig(MigCmd),
    /// Switch MPS sharing on or off.
    #[command(subcommand)]
    Mps(MpsCmd),
    /// Run benchmarks.
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Export results.
    #[command(subcommand)]
    Export(ExportCmd),
    /// Build a figure dataset and write it to a file.
    Report(ReportArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
pub enum DeviceCmd {
    List,
}

#[derive(Debug, Args)]
pub struct DeviceArg {
    #[arg(long)]
    pub device: u32,
}

#[derive(Debug, Subcommand)]
pub enum MigCmd {
    Enable(DeviceArg),
    Disable(DeviceArg),
    Create {
        #[arg(long)]
        device: u32,
        #[arg(long)]
        profile: String,
        #[arg(long)]
        start: Option<u32>,
    },
    Destroy {
        #[arg(long)]
        device: u32,
        #[arg(long)]
        gi: u32,
    },
    /// Create a compute instance inside a GPU instance.
    CiCreate {
        #[arg(long)]
        device: u32,
        #[arg(long)]
        gi: u32,
        #[arg(long, default_value_t = 1)]
        slices: u32,
    },
    CiDestroy {
        #[arg(long)]
        device: u32,
        #[arg(long)]
        gi: u32,
        #[arg(long)]
        ci: u32,
    },
    /// Repartition a device to a comma-separated list of profiles.
    Plan {
        #[arg(long)]
        device: u32,
        #[arg(long)]
        target: String,
        /// Drop requested instances that do not fit instead of failing.
        #[arg(long)]
        best_effort: bool,
    },
    Ls(DeviceArg),
}

#[derive(Debug, Subcommand)]
pub enum MpsCmd {
    Enable(DeviceArg),
    Disable(DeviceArg),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,
    /// Return after queueing instead of waiting for the runs to finish.
    #[arg(long)]
    pub no_wait: bool,
}

#[derive(Debug, Subcommand)]
pub enum BenchCmd {
    Train(ConfigArgs),
    Infer(ConfigArgs),
    Sweep(ConfigArgs),
    Compare(ConfigArgs),
    /// Show the status and summary of a run.
    Status { run_id: String },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CsvKindArg {
    Summaries,
    Raw,
}

#[derive(Debug, Subcommand)]
pub enum ExportCmd {
    Csv {
        /// Comma-separated run ids (default: all runs).
        #[arg(long, default_value = "")]
        runs: String,
        #[arg(long, value_enum, default_value = "summaries")]
        kind: CsvKindArg,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    Prom {
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub figure: String,
    /// CSV, or JSON when the name ends in `.json`.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long, default_value = "")]
    pub runs: String,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: std::net::IpAddr,
}

enum Executor {
    Local(Arc<Engine>),
    Remote(RemoteClient),
}

impl Executor {
    fn execute(&self, cmd: &Command) -> Result<Output, ApiError> {
        match self {
            Executor::Local(e) => cmd.execute(e),
            Executor::Remote(r) => r.execute(cmd),
        }
    }

    fn wait(&self, ids: &[RunId]) -> Result<Vec<RunStatus>, ApiError> {
        if let Executor::Local(e) = self {
            e.wait_idle();
        }
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            loop {
                let st: RunStatus = match self.execute(&Command::BenchStatus { run_id: id.clone() })? {
                    Output::Json(v) => serde_json::from_value(v).map_err(|e| ApiError::internal(e.to_string()))?,
                    Output::Text { .. } => return Err(ApiError::internal("unexpected non-JSON status")),
                };
                if st.is_terminal() {
                    out.push(st);
                    break;
                }
                std::thread::sleep(Duration::from_millis(200));
            }
        }
        Ok(out)
    }
}

struct Failure {
    code: i32,
    message: String,
}

impl From<ApiError> for Failure {
    fn from(e: ApiError) -> Self {
        Failure {
            code: 1,
            message: format!("{}: {}", e.code.as_str(), e.message),
        }
    }
}

fn op_error(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run(args: impl IntoIterator<Item = impl Into<OsString> + Clone>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(err, "migperf: {}", f.message);
            f.code
        }
    }
}

fn local_engine(cli: &Cli) -> Result<Arc<Engine>, Failure> {
    let catalog = resolve_catalog(cli.catalog.as_deref()).map_err(|e| op_error(e.to_string()))?;
    let dir = resolve_state_dir(cli.state_dir.as_deref());
    Ok(Arc::new(Engine::open(&dir, &catalog)?))
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<(), Failure> {
    if let TopCommand::Serve(args) = &cli.command {
        if cli.remote.is_some() {
            return Err(Failure {
                code: 2,
                message: "serve runs locally; --remote does not apply".into(),
            });
        }
        let engine = local_engine(&cli)?;
        let rt = tokio::runtime::Runtime::new().map_err(|e| op_error(e.to_string()))?;
        return rt
            .block_on(crate::http::serve(engine, (args.bind, args.port).into()))
            .map_err(|e| op_error(e.to_string()));
    }
    let exec = match &cli.remote {
        Some(url) => Executor::Remote(RemoteClient::new(url)),
        None => Executor::Local(local_engine(&cli)?),
    };
    let json = cli.json;
    match cli.command {
        TopCommand::Device(DeviceCmd::List) => {
            let v = expect_json(exec.execute(&Command::DeviceList)?)?;
            emit(out, json, &v, render_devices)
        }
        TopCommand::Mig(m) => {
            let cmd = match m {
                MigCmd::Enable(d) => Command::MigMode { device: d.device, enabled: true },
                MigCmd::Disable(d) => Command::MigMode { device: d.device, enabled: false },
                MigCmd::Create { device, profile, start } => Command::MigCreate { device, profile, start },
                MigCmd::Destroy { device, gi } => Command::MigDestroy { device, gi },
                MigCmd::CiCreate { device, gi, slices } => Command::CiCreate { device, gi, slices },
                MigCmd::CiDestroy { device, gi, ci } => Command::CiDestroy { device, gi, ci },
                MigCmd::Plan { device, target, best_effort } => Command::MigPlan {
                    device,
                    target: split_target(&target),
                    strategy: if best_effort { PlanStrategy::BestEffort } else { PlanStrategy::Strict },
                },
                MigCmd::Ls(d) => Command::MigLs { device: d.device },
            };
            let v = expect_json(exec.execute(&cmd)?)?;
            emit(out, json, &v, render_mig)
        }
        TopCommand::Mps(m) => {
            let cmd = match m {
                MpsCmd::Enable(d) => Command::MpsMode { device: d.device, enabled: true },
                MpsCmd::Disable(d) => Command::MpsMode { device: d.device, enabled: false },
            };
            let v = expect_json(exec.execute(&cmd)?)?;
            emit(out, json, &v, render_mig)
        }
        TopCommand::Bench(BenchCmd::Status { run_id }) => {
            let v = expect_json(exec.execute(&Command::BenchStatus { run_id: RunId(run_id) })?)?;
            let st: RunStatus = serde_json::from_value(v.clone()).map_err(|e| op_error(e.to_string()))?;
            emit(out, json, &v, |v| render_runs(std::slice::from_ref(&st), v))
        }
        TopCommand::Bench(b) => {
            let (mode, args) = match b {
                BenchCmd::Train(a) => (BenchMode::Train, a),
                BenchCmd::Infer(a) => (BenchMode::Infer, a),
                BenchCmd::Sweep(a) => (BenchMode::Sweep, a),
                BenchCmd::Compare(a) => (BenchMode::Compare, a),
                BenchCmd::Status { .. } => unreachable!("handled above"),
            };
            let config = read_config(&args.config)?;
            let v = expect_json(exec.execute(&Command::BenchSubmit { mode: Some(mode), config })?)?;
            let mut resp: BenchResponse = serde_json::from_value(v).map_err(|e| op_error(e.to_string()))?;
            if !args.no_wait {
                resp.runs = exec.wait(&resp.run_ids)?;
            }
            let v = serde_json::to_value(&resp).expect("serializable");
            emit(out, json, &v, |v| render_runs(&resp.runs, v))?;
            let failed = resp.runs.iter().filter(|r| r.state == RunState::Failed).count();
            if failed > 0 {
                return Err(op_error(format!("{failed} of {} run(s) failed", resp.runs.len())));
            }
            Ok(())
        }
        TopCommand::Export(e) => {
            let (cmd, dest) = match e {
                ExportCmd::Csv { runs, kind, out } => (
                    Command::ExportCsv {
                        runs: split_runs(&runs),
                        kind: match kind {
                            CsvKindArg::Summaries => CsvKind::Summaries,
                            CsvKindArg::Raw => CsvKind::Raw,
                        },
                    },
                    out,
                ),
                ExportCmd::Prom { out } => (Command::ExportProm, out),
            };
            let body = match exec.execute(&cmd)? {
                Output::Text { body, .. } => body,
                Output::Json(v) => v.to_string(),
            };
            match dest {
                Some(path) => std::fs::write(&path, body).map_err(|e| op_error(format!("{}: {e}", path.display()))),
                None => out.write_all(body.as_bytes()).map_err(|e| op_error(e.to_string())),
            }
        }
        TopCommand::Report(r) => {
            let v = expect_json(exec.execute(&Command::Report {
                figure: r.figure,
                runs: split_runs(&r.runs),
            })?)?;
            let ds: migperf_core::report::FigureDataset =
                serde_json::from_value(v.clone()).map_err(|e| op_error(e.to_string()))?;
            let body = if r.out.extension().is_some_and(|e| e == "json") {
                serde_json::to_string_pretty(&ds).expect("serializable") + "\n"
            } else {
                figure_csv(&ds)
            };
            std::fs::write(&r.out, body).map_err(|e| op_error(format!("{}: {e}", r.out.display())))?;
            emit(out, json, &v, |_| {
                format!("wrote {} rows of {} to {}\n", ds.rows.len(), ds.figure_id, r.out.display())
            })
        }
        TopCommand::Serve(_) => unreachable!("handled above"),
    }
}

/// Reads a benchmark config. A relative external-backend path is taken
/// relative to the config file.
fn read_config(path: &Path) -> Result<Value, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| op_error(format!("{}: {e}", path.display())))?;
    let mut v: Value = serde_json::from_str(&text).map_err(|e| {
        op_error(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column()))
    })?;
    if let Some(Value::String(p)) = v.pointer_mut("/backend/external") {
        let rel = PathBuf::from(&*p);
        if rel.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            *p = base.join(rel).to_string_lossy().into_owned();
        }
    }
    Ok(v)
}

fn expect_json(o: Output) -> Result<Value, Failure> {
    match o {
        Output::Json(v) => Ok(v),
        Output::Text { .. } => Err(op_error("unexpected non-JSON response")),
    }
}

fn emit(out: &mut dyn Write, json: bool, v: &Value, text: impl FnOnce(&Value) -> String) -> Result<(), Failure> {
    let s = if json {
        serde_json::to_string_pretty(v).expect("serializable") + "\n"
    } else {
        text(v)
    };
    out.write_all(s.as_bytes()).map_err(|e| op_error(e.to_string()))
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut s = String::new();
    let mut line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        s.push_str(parts.join("  ").trim_end());
        s.push('\n');
    };
    line(header.to_vec());
    for r in rows {
        line(r.iter().map(String::as_str).collect());
    }
    s
}

fn field(v: &Value, k: &str) -> String {
    match v.get(k) {
        None | Some(Value::Null) => "-".into(),
        Some(Value::String(s)) => s.clone(),
        Some(other) => other.to_string(),
    }
}

fn render_devices(v: &Value) -> String {
    let rows: Vec<Vec<String>> = v["devices"]
        .as_array()
        .into_iter()
        .flatten()
        .map(|d| {
            ["device_id", "model_name", "total_compute_slices", "total_memory_gib", "mig_enabled", "sharing_mode", "instances"]
                .iter()
                .map(|k| field(d, k))
                .collect()
        })
        .collect();
    table(&["ID", "MODEL", "SLICES", "MEM_GIB", "MIG", "MODE", "INSTANCES"], &rows)
}

fn render_instances(v: &Value) -> String {
    let rows: Vec<Vec<String>> = v
        .as_array()
        .into_iter()
        .flatten()
        .map(|r| {
            ["gi_id", "profile", "start", "compute_slices", "memory_gib", "compute_instances", "bound_workload"]
                .iter()
                .map(|k| field(r, k))
                .collect()
        })
        .collect();
    table(&["GI", "PROFILE", "START", "SLICES", "MEM_GIB", "CIS", "BOUND"], &rows)
}

fn render_mig(v: &Value) -> String {
    let mut s = String::new();
    if let Some(steps) = v.get("steps").and_then(Value::as_array) {
        for st in steps {
            match st["op"].as_str() {
                Some("destroy") => s += &format!("destroy gi {} ({})\n", st["gi_id"], field(st, "profile")),
                _ => s += &format!(
                    "create {} at slice {} -> gi {}\n",
                    field(st, "profile"),
                    st["start"],
                    st["gi_id"]
                ),
            }
        }
        if steps.is_empty() {
            s += "already at target layout\n";
        }
        for d in v["dropped"].as_array().into_iter().flatten() {
            s += &format!("dropped {}\n", d.as_str().unwrap_or_default());
        }
    }
    if let Some(rows) = v.get("instances").filter(|i| i.is_array()) {
        s += &render_instances(rows);
    } else if let Some(row) = v.get("instance") {
        s += &render_instances(&Value::Array(vec![row.clone()]));
    } else if s.is_empty() {
        let parts: Vec<String> = v
            .as_object()
            .into_iter()
            .flatten()
            .map(|(k, val)| format!("{k}={}", val.as_str().map(String::from).unwrap_or_else(|| val.to_string())))
            .collect();
        s = parts.join(" ") + "\n";
    }
    s
}

fn render_runs(runs: &[RunStatus], _v: &Value) -> String {
    let fmt = |x: f64| format!("{x:.3}");
    let rows: Vec<Vec<String>> = runs
        .iter()
        .map(|r| {
            let state = serde_json::to_value(r.state).expect("serializable");
            let mut row = vec![r.run_id.to_string(), state.as_str().unwrap_or_default().to_string()];
            match &r.summary {
                Some(s) => row.extend([
                    s.requests.to_string(),
                    fmt(s.avg_latency_ms),
                    fmt(s.p99_latency_ms),
                    fmt(s.throughput_batch_per_s),
                    fmt(s.mean_gract_frac),
                    fmt(s.peak_fb_mib),
                    fmt(s.energy_mj),
                ]),
                None => row.push(r.error.as_ref().map(|e| e.message.clone()).unwrap_or_default()),
            }
            row
        })
        .collect();
    table(
        &["RUN", "STATE", "REQUESTS", "AVG_MS", "P99_MS", "BATCH/S", "GRACT", "FB_MIB", "ENERGY_MJ"],
        &rows,
    )
}
