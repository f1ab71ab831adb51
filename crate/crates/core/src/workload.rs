//! Workload descriptions and the load generator.
//!
//! Closed loop issues the next batch when the previous one completes. Open
//! loop issues requests on an arrival clock that never looks at completions;
//! requests queue FIFO on the instance and queueing shows up as latency.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Deserializer, Serialize};

use crate::device::{DeviceId, GiId};
use crate::telemetry::RunId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkloadKind {
    Training,
    Inference,
}

impl fmt::Display for WorkloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WorkloadKind::Training => "training",
            WorkloadKind::Inference => "inference",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoopMode {
    Closed,
    Open,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrivalProcess {
    /// Exponential inter-arrival gaps.
    #[default]
    Poisson,
    /// Constant gaps of `1 / rate`.
    Uniform,
}

/// Simulator-facing description of a model. `flops_per_sample` is relative
/// to a reference model costing `beta_ms` per sample on one slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub flops_per_sample: f64,
    pub params_mem_gib: f64,
    pub activation_mem_per_sample_mib: f64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), String> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if self.name.is_empty() {
            return Err("model name is empty".into());
        }
        if !(ok(self.flops_per_sample) && ok(self.params_mem_gib) && ok(self.activation_mem_per_sample_mib)) {
            return Err(alloc::format!("model {}: coefficients must be positive", self.name));
        }
        Ok(())
    }
}

const BUILTIN_MODELS: &[(&str, f64, f64, f64)] = &[
    // name, relative work per sample, parameter GiB, activation MiB per sample
    ("resnet18", 0.5, 0.05, 20.0),
    ("resnet34", 0.8, 0.09, 28.0),
    ("resnet50", 1.0, 0.10, 45.0),
    ("resnet101", 1.9, 0.17, 70.0),
    ("distilbert", 0.5, 0.25, 30.0),
    ("bert-base", 1.0, 0.41, 55.0),
    ("bert-large", 3.2, 1.25, 140.0),
];

pub fn builtin_model(name: &str) -> Option<ModelSpec> {
    BUILTIN_MODELS
        .iter()
        .find(|m| m.0 == name)
        .map(|&(name, flops, params, act)| ModelSpec {
            name: name.to_string(),
            flops_per_sample: flops,
            params_mem_gib: params,
            activation_mem_per_sample_mib: act,
        })
}

pub fn builtin_model_names() -> impl Iterator<Item = &'static str> {
    BUILTIN_MODELS.iter().map(|m| m.0)
}

/// Accepts either a built-in model name or a full model object.
fn model_from_name_or_spec<'de, D: Deserializer<'de>>(d: D) -> Result<ModelSpec, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Name(String),
        Spec(ModelSpec),
    }
    match Repr::deserialize(d)? {
        Repr::Name(n) => builtin_model(&n)
            .ok_or_else(|| serde::de::Error::custom(alloc::format!("unknown model {n}"))),
        Repr::Spec(s) => Ok(s),
    }
}

/// Leading portion of a run flagged as warm-up: until `min_ms` has elapsed
/// and `min_batches` batches have completed, whichever is later.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarmupPolicy {
    pub min_ms: f64,
    pub min_batches: u32,
}

impl Default for WarmupPolicy {
    fn default() -> Self {
        WarmupPolicy {
            min_ms: 5000.0,
            min_batches: 10,
        }
    }
}

impl WarmupPolicy {
    pub const NONE: WarmupPolicy = WarmupPolicy {
        min_ms: 0.0,
        min_batches: 0,
    };

    pub fn is_none(&self) -> bool {
        self.min_ms <= 0.0 && self.min_batches == 0
    }

    /// Timestamp at which warm-up ends, given completion timestamps in order.
    /// Samples strictly after it are steady-state. When the run never leaves
    /// warm-up, returns `run_end_ms`.
    pub fn end_ts(&self, completions: &[f64], run_end_ms: f64) -> Option<f64> {
        if self.is_none() {
            return None;
        }
        let by_batches = match self.min_batches {
            0 => 0.0,
            n => match completions.get(n as usize - 1) {
                Some(&t) => t,
                None => return Some(run_end_ms),
            },
        };
        Some(by_batches.max(self.min_ms).min(run_end_ms))
    }
}

fn default_concurrency() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    #[serde(deserialize_with = "model_from_name_or_spec")]
    pub model: ModelSpec,
    pub batch_size: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence_length: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_requests: Option<u64>,
    #[serde(rename = "loop")]
    pub loop_mode: LoopMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arrival_rate: Option<f64>,
    #[serde(default)]
    pub arrival: ArrivalProcess,
    #[serde(default = "default_concurrency")]
    pub concurrency: u32,
    #[serde(default)]
    pub warmup: WarmupPolicy,
}

impl WorkloadSpec {
    /// Closed-loop spec with default warm-up and no stop condition set.
    pub fn new(kind: WorkloadKind, model: ModelSpec, batch_size: u32) -> Self {
        WorkloadSpec {
            kind,
            model,
            batch_size,
            sequence_length: None,
            duration_s: None,
            total_requests: None,
            loop_mode: LoopMode::Closed,
            arrival_rate: None,
            arrival: ArrivalProcess::Poisson,
            concurrency: 1,
            warmup: WarmupPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err("batch_size must be >= 1".into());
        }
        if self.concurrency == 0 {
            return Err("concurrency must be >= 1".into());
        }
        if self.sequence_length == Some(0) {
            return Err("sequence_length must be >= 1".into());
        }
        match (self.duration_s, self.total_requests) {
            (Some(_), Some(_)) | (None, None) => {
                return Err("exactly one of duration_s and total_requests must be set".into())
            }
            (Some(d), None) if !(d.is_finite() && d > 0.0) => {
                return Err("duration_s must be positive".into())
            }
            _ => {}
        }
        match (self.loop_mode, self.arrival_rate) {
            (LoopMode::Open, Some(r)) if r.is_finite() && r > 0.0 => {}
            (LoopMode::Open, _) => return Err("open loop requires arrival_rate > 0".into()),
            (LoopMode::Closed, Some(_)) => {
                return Err("arrival_rate only applies to open loop".into())
            }
            (LoopMode::Closed, None) => {}
        }
        if !(self.warmup.min_ms.is_finite() && self.warmup.min_ms >= 0.0) {
            return Err("warmup.min_ms must be non-negative".into());
        }
        Ok(())
    }
}

/// Timing of one request (one batch).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RequestRecord {
    pub arrival_ms: f64,
    pub start_ms: f64,
    pub end_ms: f64,
}

impl RequestRecord {
    pub fn latency_ms(&self) -> f64 {
        self.end_ms - self.arrival_ms
    }
}

/// Issue times for an open-loop run, drawn from `rng` only.
pub fn arrival_times<R: Rng + ?Sized>(spec: &WorkloadSpec, rng: &mut R) -> Vec<f64> {
    let rate = spec.arrival_rate.unwrap_or(0.0);
    if rate <= 0.0 {
        return Vec::new();
    }
    let mean_gap_ms = 1000.0 / rate;
    let exp = Exp::new(rate / 1000.0).expect("rate checked positive");
    let limit_ms = spec.duration_s.map(|d| d * 1000.0);
    let max_n = spec.total_requests;
    let mut out = Vec::new();
    let mut t = 0.0;
    loop {
        if max_n.is_some_and(|n| out.len() as u64 >= n) {
            break;
        }
        t += match spec.arrival {
            ArrivalProcess::Poisson => exp.sample(rng),
            ArrivalProcess::Uniform => mean_gap_ms,
        };
        if limit_ms.is_some_and(|l| t >= l) {
            break;
        }
        out.push(t);
    }
    out
}

/// Runs the load generator against a service-time source. Arrivals come from
/// `arrival_rng`; `service` is called once per request in issue order.
pub fn drive<R: Rng + ?Sized>(
    spec: &WorkloadSpec,
    arrival_rng: &mut R,
    mut service: impl FnMut() -> f64,
) -> Vec<RequestRecord> {
    let mut out = Vec::new();
    match spec.loop_mode {
        LoopMode::Closed => {
            let limit_ms = spec.duration_s.map(|d| d * 1000.0);
            let mut t = 0.0;
            loop {
                if spec.total_requests.is_some_and(|n| out.len() as u64 >= n) {
                    break;
                }
                if limit_ms.is_some_and(|l| t >= l) {
                    break;
                }
                let end = t + service();
                out.push(RequestRecord {
                    arrival_ms: t,
                    start_ms: t,
                    end_ms: end,
                });
                t = end;
            }
        }
        LoopMode::Open => {
            let mut free_at = 0.0f64;
            for arrival in arrival_times(spec, arrival_rng) {
                let start = arrival.max(free_at);
                let end = start + service();
                out.push(RequestRecord {
                    arrival_ms: arrival,
                    start_ms: start,
                    end_ms: end,
                });
                free_at = end;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunTarget {
    Gi(GiId),
    MpsShared,
    Exclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub run_id: RunId,
    pub device_id: DeviceId,
    pub target: RunTarget,
    pub spec: WorkloadSpec,
    pub seed: u64,
    #[serde(default)]
    pub experiment: Experiment,
}

/// Which kind of experiment produced a run; figures select on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    #[default]
    Single,
    Sweep,
    Sharing,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepAxes {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub profile: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub batch_size: Vec<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sequence_length: Vec<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub arrival_rate: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub device_id: DeviceId,
    pub base: WorkloadSpec,
    pub axes: SweepAxes,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub profile: String,
    pub spec: WorkloadSpec,
}

impl fmt::Display for SweepPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "profile={} batch={}", self.profile, self.spec.batch_size)?;
        if let Some(l) = self.spec.sequence_length {
            write!(f, " seq={l}")?;
        }
        if let Some(r) = self.spec.arrival_rate {
            write!(f, " rate={r}")?;
        }
        Ok(())
    }
}

impl SweepSpec {
    /// Cartesian product of the axes, profile outermost. An empty axis keeps
    /// the base value.
    pub fn points(&self) -> Vec<SweepPoint> {
        fn axis<T: Clone>(values: &[T], base: Option<T>) -> Vec<Option<T>> {
            if values.is_empty() {
                alloc::vec![base]
            } else {
                values.iter().cloned().map(Some).collect()
            }
        }
        let batches = axis(&self.axes.batch_size, Some(self.base.batch_size));
        let seqs = axis(&self.axes.sequence_length, self.base.sequence_length);
        let rates = axis(&self.axes.arrival_rate, self.base.arrival_rate);
        let mut out = Vec::new();
        for profile in &self.axes.profile {
            for b in &batches {
                for l in &seqs {
                    for r in &rates {
                        let mut spec = self.base.clone();
                        spec.batch_size = b.expect("batch axis always populated");
                        spec.sequence_length = *l;
                        spec.arrival_rate = *r;
                        out.push(SweepPoint {
                            profile: profile.clone(),
                            spec,
                        });
                    }
                }
            }
        }
        out
    }
}
