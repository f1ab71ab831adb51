//! Execution backends.
//!
//! The simulated backend turns a [`WorkloadSpec`] into per-request latencies
//! and periodic resource samples using a small parametric model:
//!
//! ```text
//! base      = alpha + beta * flops * b * L / g_eff
//! latency   = max(alpha, base + std * z),   z ~ N(0, 1)
//! g_eff     = g            (mig)     | g / k                        (mps)
//! std       = sigma_iso    (mig)     | sigma_iso * (1 + gamma*b*(k-1)) (mps)
//! ```
//!
//! Only the part of each request after the fixed `alpha` overhead counts as
//! busy compute time for GRACT and power.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::device::SharingMode;
use crate::workload::{self, ModelSpec, RequestRecord, WorkloadSpec};

pub type RunRng = ChaCha8Rng;

const ARRIVAL_STREAM: u64 = 1;
const SERVICE_STREAM: u64 = 2;

/// Tunable simulator constants. These are synthetic, not hardware measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerfModelParams {
    pub alpha_ms: f64,
    pub beta_ms: f64,
    pub sigma_iso_ms: f64,
    pub gamma: f64,
    pub p_idle_w: f64,
    pub p_max_w: f64,
    pub sample_interval_ms: f64,
    pub calibration: String,
}

impl Default for PerfModelParams {
    fn default() -> Self {
        PerfModelParams {
            alpha_ms: 2.0,
            beta_ms: 1.5,
            sigma_iso_ms: 0.2,
            gamma: 0.05,
            p_idle_w: 60.0,
            p_max_w: 400.0,
            sample_interval_ms: 100.0,
            calibration: String::from("synthetic"),
        }
    }
}

impl PerfModelParams {
    pub fn validate(&self) -> Result<(), &'static str> {
        let values = [
            self.alpha_ms,
            self.beta_ms,
            self.sigma_iso_ms,
            self.gamma,
            self.p_idle_w,
            self.p_max_w,
        ];
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err("parameters must be finite and non-negative");
        }
        if self.p_max_w < self.p_idle_w {
            return Err("p_max_w must be >= p_idle_w");
        }
        if !(self.sample_interval_ms.is_finite() && self.sample_interval_ms > 0.0) {
            return Err("sample_interval_ms must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    LatencyMs,
    PowerW,
    GractFrac,
    FbMib,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] = [
        MetricKind::LatencyMs,
        MetricKind::PowerW,
        MetricKind::GractFrac,
        MetricKind::FbMib,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::LatencyMs => "latency_ms",
            MetricKind::PowerW => "power_w",
            MetricKind::GractFrac => "gract_frac",
            MetricKind::FbMib => "fb_mib",
        }
    }

    pub fn parse(s: &str) -> Option<MetricKind> {
        MetricKind::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSample {
    /// Milliseconds since run start.
    pub ts: f64,
    pub kind: MetricKind,
    pub value: f64,
    pub instance: String,
}

/// Where a run executes and with how many co-tenants.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceContext {
    /// Compute slices owned by the instance (MIG) or the whole device (MPS).
    pub slices: u32,
    pub device_slices: u32,
    pub co_tenants: u32,
    pub mode: SharingMode,
}

impl ServiceContext {
    pub fn effective_slices(&self) -> f64 {
        match self.mode {
            SharingMode::Mps => self.slices as f64 / self.co_tenants.max(1) as f64,
            _ => self.slices as f64,
        }
    }
}

/// Everything a backend needs to execute one run.
#[derive(Debug, Clone)]
pub struct RunJob {
    pub instance: String,
    pub spec: WorkloadSpec,
    pub context: ServiceContext,
    pub memory_capacity_gib: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub samples: Vec<BackendSample>,
    pub end_ms: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("workload needs {need_mib} MiB but the instance has {capacity_mib} MiB")]
    OutOfMemory { need_mib: f64, capacity_mib: f64 },
    #[error("external samples: {0}")]
    External(String),
}

pub trait Backend {
    fn name(&self) -> &str;
    fn execute(&self, job: &RunJob) -> Result<RunOutput, BackendError>;
}

/// Sequence-length scale: `sequence_length / 128` when set, else 1.
pub fn sequence_scale(spec: &WorkloadSpec) -> f64 {
    spec.sequence_length.map_or(1.0, |l| l as f64 / 128.0)
}

pub fn footprint_mib(model: &ModelSpec, batch_size: u32) -> f64 {
    model.params_mem_gib * 1024.0 + batch_size as f64 * model.activation_mem_per_sample_mib
}

#[derive(Debug, Clone, Default)]
pub struct SimBackend {
    pub params: PerfModelParams,
}

impl SimBackend {
    pub fn new(params: PerfModelParams) -> Self {
        SimBackend { params }
    }

    /// Noise-free service time.
    pub fn base_service_ms(&self, spec: &WorkloadSpec, ctx: &ServiceContext) -> f64 {
        let p = &self.params;
        p.alpha_ms
            + p.beta_ms * spec.model.flops_per_sample * spec.batch_size as f64 * sequence_scale(spec)
                / ctx.effective_slices()
    }

    pub fn noise_std_ms(&self, spec: &WorkloadSpec, ctx: &ServiceContext) -> f64 {
        let p = &self.params;
        match ctx.mode {
            SharingMode::Mps => {
                let others = ctx.co_tenants.saturating_sub(1) as f64;
                p.sigma_iso_ms * (1.0 + p.gamma * spec.batch_size as f64 * others)
            }
            _ => p.sigma_iso_ms,
        }
    }

    /// One latency draw. Always consumes exactly one normal variate.
    pub fn service_time<R: rand::Rng + ?Sized>(
        &self,
        spec: &WorkloadSpec,
        ctx: &ServiceContext,
        rng: &mut R,
    ) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        let t = self.base_service_ms(spec, ctx) + self.noise_std_ms(spec, ctx) * z;
        t.max(self.params.alpha_ms)
    }

    /// Samples GRACT, FB and power at time zero and then every
    /// `sample_interval_ms` (plus a final partial interval ending at
    /// `end_ms`) from the requests' busy periods.
    pub fn resource_trace(
        &self,
        requests: &[RequestRecord],
        ctx: &ServiceContext,
        fb_mib: f64,
        end_ms: f64,
        instance: &str,
    ) -> Vec<BackendSample> {
        let p = &self.params;
        let dt = p.sample_interval_ms;
        let share = ctx.effective_slices() / ctx.device_slices as f64;
        let mut out = Vec::new();
        // Instantaneous state at the start: nothing has begun computing yet.
        for (kind, value) in [
            (MetricKind::GractFrac, 0.0),
            (MetricKind::FbMib, fb_mib),
            (MetricKind::PowerW, p.p_idle_w),
        ] {
            out.push(BackendSample {
                ts: 0.0,
                kind,
                value,
                instance: String::from(instance),
            });
        }
        let mut cursor = 0usize;
        let mut prev = 0.0f64;
        let mut tick = 1u64;
        while prev < end_ms {
            let t = (tick as f64 * dt).min(end_ms);
            tick += 1;
            let mut busy = 0.0;
            // Requests are FIFO so busy periods are disjoint and sorted.
            while cursor < requests.len() && requests[cursor].end_ms <= prev {
                cursor += 1;
            }
            let mut j = cursor;
            while j < requests.len() && requests[j].start_ms < t {
                let busy_from = requests[j].start_ms + p.alpha_ms;
                let lo = busy_from.max(prev);
                let hi = requests[j].end_ms.min(t);
                if hi > lo {
                    busy += hi - lo;
                }
                j += 1;
            }
            let gract = (busy / (t - prev)).clamp(0.0, 1.0);
            let power = p.p_idle_w + (p.p_max_w - p.p_idle_w) * gract * share;
            for (kind, value) in [
                (MetricKind::GractFrac, gract),
                (MetricKind::FbMib, fb_mib),
                (MetricKind::PowerW, power),
            ] {
                out.push(BackendSample {
                    ts: t,
                    kind,
                    value,
                    instance: String::from(instance),
                });
            }
            prev = t;
        }
        out
    }
}

impl Backend for SimBackend {
    fn name(&self) -> &str {
        "sim"
    }

    fn execute(&self, job: &RunJob) -> Result<RunOutput, BackendError> {
        let spec = &job.spec;
        let fb = footprint_mib(&spec.model, spec.batch_size);
        let capacity_mib = job.memory_capacity_gib * 1024.0;
        if fb > capacity_mib {
            return Err(BackendError::OutOfMemory {
                need_mib: fb,
                capacity_mib,
            });
        }
        let mut arrivals = RunRng::seed_from_u64(job.seed);
        arrivals.set_stream(ARRIVAL_STREAM);
        let mut service = RunRng::seed_from_u64(job.seed);
        service.set_stream(SERVICE_STREAM);

        let requests = workload::drive(spec, &mut arrivals, || {
            self.service_time(spec, &job.context, &mut service)
        });
        let last_done = requests.last().map_or(0.0, |r| r.end_ms);
        let end_ms = match spec.duration_s {
            Some(d) => last_done.max(d * 1000.0),
            None => last_done,
        };
        let mut samples: Vec<BackendSample> = requests
            .iter()
            .map(|r| BackendSample {
                ts: r.end_ms,
                kind: MetricKind::LatencyMs,
                value: r.end_ms - r.arrival_ms,
                instance: job.instance.clone(),
            })
            .collect();
        samples.extend(self.resource_trace(&requests, &job.context, fb, end_ms, &job.instance));
        Ok(RunOutput { samples, end_ms })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{builtin_model, LoopMode, WorkloadKind};
    use alloc::vec;

    fn spec(batch: u32) -> WorkloadSpec {
        let mut s = WorkloadSpec::new(WorkloadKind::Inference, builtin_model("resnet50").unwrap(), batch);
        s.total_requests = Some(100);
        s
    }

    fn mig(g: u32, total: u32) -> ServiceContext {
        ServiceContext {
            slices: g,
            device_slices: total,
            co_tenants: 1,
            mode: SharingMode::Mig,
        }
    }

    #[test]
    fn noiseless_service_time_is_formula() {
        let backend = SimBackend::new(PerfModelParams {
            sigma_iso_ms: 0.0,
            ..Default::default()
        });
        let mut rng = RunRng::seed_from_u64(1);
        let t = backend.service_time(&spec(1), &mig(1, 7), &mut rng);
        assert_eq!(t, 3.5);
    }

    #[test]
    fn single_tenant_mps_matches_mig() {
        let backend = SimBackend::default();
        let mps = ServiceContext {
            slices: 4,
            device_slices: 4,
            co_tenants: 1,
            mode: SharingMode::Mps,
        };
        let mut a = RunRng::seed_from_u64(9);
        let mut b = RunRng::seed_from_u64(9);
        for _ in 0..1000 {
            assert_eq!(
                backend.service_time(&spec(8), &mig(4, 4), &mut a),
                backend.service_time(&spec(8), &mps, &mut b)
            );
        }
    }

    #[test]
    fn latency_never_below_overhead() {
        let backend = SimBackend::new(PerfModelParams {
            sigma_iso_ms: 50.0,
            ..Default::default()
        });
        let mut rng = RunRng::seed_from_u64(3);
        for _ in 0..1000 {
            assert!(backend.service_time(&spec(1), &mig(7, 7), &mut rng) >= 2.0);
        }
    }

    #[test]
    fn sequence_scale_is_linear() {
        let mut s = spec(1);
        assert_eq!(sequence_scale(&s), 1.0);
        s.sequence_length = Some(384);
        assert_eq!(sequence_scale(&s), 3.0);
    }

    #[test]
    fn fully_busy_slice_power() {
        let backend = SimBackend::new(PerfModelParams {
            alpha_ms: 0.0,
            p_idle_w: 60.0,
            p_max_w: 400.0,
            ..Default::default()
        });
        let reqs = vec![RequestRecord {
            arrival_ms: 0.0,
            start_ms: 0.0,
            end_ms: 100.0,
        }];
        let trace = backend.resource_trace(&reqs, &mig(1, 7), 10.0, 100.0, "gi");
        let power = trace.iter().find(|s| s.kind == MetricKind::PowerW && s.ts == 100.0).unwrap();
        assert!((power.value - (60.0 + 340.0 / 7.0)).abs() < 1e-9);
        assert!((power.value - 108.6).abs() < 0.05);
    }

    #[test]
    fn idle_instance_draws_idle_power() {
        let backend = SimBackend::default();
        let trace = backend.resource_trace(&[], &mig(2, 7), 10.0, 250.0, "gi");
        let ts: Vec<f64> = trace
            .iter()
            .filter(|s| s.kind == MetricKind::PowerW)
            .map(|s| s.ts)
            .collect();
        assert_eq!(ts, vec![0.0, 100.0, 200.0, 250.0]);
        for s in &trace {
            match s.kind {
                MetricKind::GractFrac => assert_eq!(s.value, 0.0),
                MetricKind::PowerW => assert_eq!(s.value, 60.0),
                _ => {}
            }
        }
    }

    #[test]
    fn busy_time_excludes_overhead() {
        let backend = SimBackend::default();
        // 50 ms request: 2 ms overhead, 48 ms compute inside the first tick.
        let reqs = vec![RequestRecord {
            arrival_ms: 0.0,
            start_ms: 10.0,
            end_ms: 60.0,
        }];
        let trace = backend.resource_trace(&reqs, &mig(1, 7), 1.0, 100.0, "gi");
        let g = trace.iter().find(|s| s.kind == MetricKind::GractFrac && s.ts == 100.0).unwrap();
        assert!((g.value - 0.48).abs() < 1e-12);
    }

    #[test]
    fn fb_is_independent_of_slices() {
        let m = builtin_model("bert-base").unwrap();
        let a = footprint_mib(&m, 32);
        let backend = SimBackend::default();
        let mut out = Vec::new();
        for g in [1, 2, 3, 4, 7] {
            let job = RunJob {
                instance: "gi".into(),
                spec: {
                    let mut s = WorkloadSpec::new(WorkloadKind::Training, m.clone(), 32);
                    s.total_requests = Some(20);
                    s
                },
                context: mig(g, 7),
                memory_capacity_gib: 10.0,
                seed: 1,
            };
            let run = backend.execute(&job).unwrap();
            out.extend(
                run.samples
                    .into_iter()
                    .filter(|s| s.kind == MetricKind::FbMib)
                    .map(|s| s.value),
            );
        }
        assert!(out.iter().all(|&v| v == a));
    }

    #[test]
    fn out_of_memory_is_reported() {
        let mut s = spec(4096);
        s.loop_mode = LoopMode::Closed;
        let job = RunJob {
            instance: "gi".into(),
            spec: s,
            context: mig(1, 4),
            memory_capacity_gib: 6.0,
            seed: 0,
        };
        assert!(matches!(
            SimBackend::default().execute(&job),
            Err(BackendError::OutOfMemory { .. })
        ));
    }
}
