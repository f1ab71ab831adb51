//! Time-series storage and metric derivation.
//!
//! Series are append-only and strictly increasing in time. Every summary
//! value is a pure function of the stored series plus the run's metadata.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::backend::MetricKind;
use crate::device::{DeviceId, SharingMode};
use crate::workload::WorkloadSpec;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RunId(pub String);

impl RunId {
    pub fn from_seq(n: u64) -> RunId {
        RunId(alloc::format!("run-{n:05}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RunId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for RunId {
    fn from(s: &str) -> Self {
        RunId(s.into())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SeriesKey {
    pub run_id: RunId,
    pub instance: String,
    pub metric: MetricKind,
}

impl SeriesKey {
    pub fn new(run_id: &RunId, instance: &str, metric: MetricKind) -> Self {
        SeriesKey {
            run_id: run_id.clone(),
            instance: instance.into(),
            metric,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub key: SeriesKey,
    /// `(ts_ms, value)` with strictly increasing `ts_ms`.
    pub points: Vec<(f64, f64)>,
    pub warmup_end_ts: Option<f64>,
}

impl TimeSeries {
    /// Points strictly after the warm-up boundary.
    pub fn steady(&self) -> &[(f64, f64)] {
        match self.warmup_end_ts {
            Some(w) => {
                let i = self.points.partition_point(|p| p.0 <= w);
                &self.points[i..]
            }
            None => &self.points,
        }
    }
}

/// What the harness knows about a run besides its series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: RunId,
    pub device_id: DeviceId,
    pub device_model: String,
    pub instance: String,
    /// MIG profile for GI-bound runs.
    pub profile: Option<String>,
    pub arm: SharingMode,
    pub slices: u32,
    pub co_tenants: u32,
    pub spec: WorkloadSpec,
    pub seed: u64,
    #[serde(default)]
    pub experiment: crate::workload::Experiment,
    pub backend: String,
    pub warmup_end_ms: Option<f64>,
    pub end_ms: f64,
    pub issued: u64,
    pub served: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub run_id: RunId,
    /// Steady-state batches the latency figures are computed over.
    pub requests: u64,
    pub avg_latency_ms: f64,
    pub p99_latency_ms: f64,
    pub latency_stddev_ms: f64,
    pub throughput_batch_per_s: f64,
    pub throughput_samples_per_s: f64,
    pub mean_gract_frac: f64,
    pub peak_fb_mib: f64,
    pub energy_mj: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TelemetryError {
    #[error("out-of-order append to {series}: ts {ts} <= last ts {last}")]
    OutOfOrder { series: String, ts: f64, last: f64 },
    #[error("non-finite sample in {0}")]
    NonFinite(String),
    #[error("no samples to aggregate{0}")]
    EmptySeries(String),
    #[error("need at least two power samples in the window, found {0}")]
    InsufficientSamples(usize),
    #[error("percentile must be in (0, 1], got {0}")]
    BadPercentile(f64),
    #[error("run {run} is missing series: {missing:?}")]
    MissingSeries { run: RunId, missing: Vec<String> },
    #[error("unknown run {0}")]
    UnknownRun(RunId),
}

fn series_label(key: &SeriesKey) -> String {
    alloc::format!("{}/{}/{}", key.run_id, key.instance, key.metric)
}

/// Nearest-rank percentile: the element at 1-based rank `ceil(p * n)` of the
/// ascending sort.
pub fn percentile(samples: &[f64], p: f64) -> Result<f64, TelemetryError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(TelemetryError::BadPercentile(p));
    }
    if samples.is_empty() {
        return Err(TelemetryError::EmptySeries(String::new()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // The epsilon keeps products like 0.07 * 100 = 7.000000000000001 at rank 7.
    let rank = libm::ceil(p * n as f64 - 1e-9).max(1.0) as usize;
    Ok(sorted[rank.min(n) - 1])
}

pub fn mean(samples: &[f64]) -> Option<f64> {
    if samples.is_empty() {
        None
    } else {
        Some(samples.iter().sum::<f64>() / samples.len() as f64)
    }
}

/// Population standard deviation.
pub fn stddev(samples: &[f64]) -> Option<f64> {
    let m = mean(samples)?;
    let var = samples.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / samples.len() as f64;
    Some(libm::sqrt(var))
}

/// Energy is accumulated in integer quanta of 2^-16 mJ, which makes the sum
/// over adjacent windows sharing a boundary sample exactly additive.
const ENERGY_QUANTA_PER_MJ: f64 = 65536.0;

/// Trapezoidal integral of a power series (W over ms) in millijoules.
/// `window` is inclusive on both ends; `None` integrates every point.
pub fn energy_mj(points: &[(f64, f64)], window: Option<(f64, f64)>) -> Result<f64, TelemetryError> {
    let in_window: &[(f64, f64)] = match window {
        Some((a, b)) => {
            let lo = points.partition_point(|p| p.0 < a);
            let hi = points.partition_point(|p| p.0 <= b);
            &points[lo..hi.max(lo)]
        }
        None => points,
    };
    if in_window.len() < 2 {
        return Err(TelemetryError::InsufficientSamples(in_window.len()));
    }
    let quanta: i128 = in_window
        .windows(2)
        .map(|w| {
            // W * ms = mJ
            let seg = (w[1].0 - w[0].0) * (w[0].1 + w[1].1) * 0.5;
            libm::round(seg * ENERGY_QUANTA_PER_MJ) as i128
        })
        .sum();
    Ok(quanta as f64 / ENERGY_QUANTA_PER_MJ)
}

/// Time-weighted mean where each point stands for the interval since the
/// previous point (the first one since `origin`).
pub fn time_weighted_mean(points: &[(f64, f64)], origin: f64) -> Option<f64> {
    let mut prev = origin;
    let mut weight = 0.0;
    let mut acc = 0.0;
    for &(t, v) in points {
        let w = t - prev;
        acc += w * v;
        weight += w;
        prev = t;
    }
    if weight > 0.0 {
        Some(acc / weight)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub batches_per_sec: f64,
    pub samples_per_sec: f64,
}

impl Throughput {
    pub fn from_counts(batches: u64, seconds: f64, batch_size: u32) -> Result<Self, TelemetryError> {
        if batches == 0 || seconds.is_nan() || seconds <= 0.0 {
            return Err(TelemetryError::EmptySeries(String::from(" (no steady-state batches)")));
        }
        let batches_per_sec = batches as f64 / seconds;
        Ok(Throughput {
            batches_per_sec,
            samples_per_sec: batches_per_sec * batch_size as f64,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TelemetryStore {
    series: BTreeMap<SeriesKey, TimeSeries>,
    runs: BTreeMap<RunId, RunMeta>,
}

impl TelemetryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, key: &SeriesKey, ts: f64, value: f64) -> Result<(), TelemetryError> {
        if !ts.is_finite() || !value.is_finite() {
            return Err(TelemetryError::NonFinite(series_label(key)));
        }
        let series = self.series.entry(key.clone()).or_insert_with(|| TimeSeries {
            key: key.clone(),
            points: Vec::new(),
            warmup_end_ts: None,
        });
        if let Some(&(last, _)) = series.points.last() {
            if ts <= last {
                return Err(TelemetryError::OutOfOrder {
                    series: series_label(key),
                    ts,
                    last,
                });
            }
        }
        series.points.push((ts, value));
        Ok(())
    }

    pub fn series(&self, key: &SeriesKey) -> Option<&TimeSeries> {
        self.series.get(key)
    }

    pub fn all_series(&self) -> impl Iterator<Item = &TimeSeries> {
        self.series.values()
    }

    pub fn run_series<'a>(&'a self, run: &'a RunId) -> impl Iterator<Item = &'a TimeSeries> + 'a {
        self.series
            .range(
                SeriesKey {
                    run_id: run.clone(),
                    instance: String::new(),
                    metric: MetricKind::LatencyMs,
                }..,
            )
            .take_while(move |(k, _)| &k.run_id == run)
            .map(|(_, s)| s)
    }

    pub fn set_warmup_end(&mut self, run: &RunId, ts: Option<f64>) {
        for (k, s) in self.series.iter_mut() {
            if &k.run_id == run {
                s.warmup_end_ts = ts;
            }
        }
    }

    pub fn record_run(&mut self, meta: RunMeta) {
        let (run, w) = (meta.run_id.clone(), meta.warmup_end_ms);
        self.runs.insert(meta.run_id.clone(), meta);
        self.set_warmup_end(&run, w);
    }

    pub fn run(&self, run: &RunId) -> Option<&RunMeta> {
        self.runs.get(run)
    }

    pub fn runs(&self) -> impl Iterator<Item = &RunMeta> {
        self.runs.values()
    }

    pub fn sample_count(&self, run: &RunId) -> usize {
        self.run_series(run).map(|s| s.points.len()).sum()
    }

    /// Drops a run and its series.
    pub fn remove_run(&mut self, run: &RunId) {
        self.runs.remove(run);
        self.series.retain(|k, _| &k.run_id != run);
    }

    fn required(&self, run: &RunId) -> Result<(&RunMeta, [&TimeSeries; 4]), TelemetryError> {
        let meta = self
            .runs
            .get(run)
            .ok_or_else(|| TelemetryError::UnknownRun(run.clone()))?;
        let mut missing = Vec::new();
        let mut found = Vec::new();
        for kind in MetricKind::ALL {
            match self.series.get(&SeriesKey::new(run, &meta.instance, kind)) {
                Some(s) => found.push(s),
                None => missing.push(String::from(kind.as_str())),
            }
        }
        if !missing.is_empty() {
            return Err(TelemetryError::MissingSeries {
                run: run.clone(),
                missing,
            });
        }
        Ok((meta, [found[0], found[1], found[2], found[3]]))
    }

    /// Steady-state latency values of a run.
    pub fn steady_latencies(&self, run: &RunId) -> Result<Vec<f64>, TelemetryError> {
        let (_, [lat, ..]) = self.required(run)?;
        Ok(lat.steady().iter().map(|p| p.1).collect())
    }

    pub fn throughput(&self, run: &RunId) -> Result<Throughput, TelemetryError> {
        let (meta, [lat, ..]) = self.required(run)?;
        let from = meta.warmup_end_ms.unwrap_or(0.0);
        Throughput::from_counts(
            lat.steady().len() as u64,
            (meta.end_ms - from) / 1000.0,
            meta.spec.batch_size,
        )
    }

    /// Energy of the run's steady-state window, or of `window` when given.
    pub fn energy(&self, run: &RunId, window: Option<(f64, f64)>) -> Result<f64, TelemetryError> {
        let (meta, [_, power, ..]) = self.required(run)?;
        let window = window.unwrap_or((meta.warmup_end_ms.unwrap_or(0.0), meta.end_ms));
        energy_mj(&power.points, Some(window))
    }

    pub fn summarize(&self, run: &RunId) -> Result<MetricSummary, TelemetryError> {
        let (meta, [lat, _power, gract, fb]) = self.required(run)?;
        let latencies: Vec<f64> = lat.steady().iter().map(|p| p.1).collect();
        if latencies.is_empty() {
            return Err(TelemetryError::EmptySeries(alloc::format!(
                " (run {run} has no steady-state latency samples)"
            )));
        }
        let throughput = self.throughput(run)?;
        let steady_gract = gract.steady();
        // Each tick covers the interval since the previous tick; the first
        // steady tick is clipped at the warm-up boundary.
        let origin = match (meta.warmup_end_ms, steady_gract.first()) {
            (Some(w), _) => w,
            (None, Some(first)) => {
                let i = gract.points.partition_point(|p| p.0 < first.0);
                if i == 0 {
                    0.0
                } else {
                    gract.points[i - 1].0
                }
            }
            (None, None) => 0.0,
        };
        let mean_gract = time_weighted_mean(steady_gract, origin).ok_or_else(|| {
            TelemetryError::EmptySeries(alloc::format!(" (run {run} has no steady-state GRACT samples)"))
        })?;
        let peak_fb = fb
            .points
            .iter()
            .map(|p| p.1)
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
            .ok_or_else(|| TelemetryError::EmptySeries(alloc::format!(" (run {run} has no FB samples)")))?;
        Ok(MetricSummary {
            run_id: run.clone(),
            requests: latencies.len() as u64,
            avg_latency_ms: mean(&latencies).expect("non-empty"),
            p99_latency_ms: percentile(&latencies, 0.99)?,
            latency_stddev_ms: stddev(&latencies).expect("non-empty"),
            throughput_batch_per_s: throughput.batches_per_sec,
            throughput_samples_per_s: throughput.samples_per_sec,
            mean_gract_frac: mean_gract,
            peak_fb_mib: peak_fb,
            energy_mj: self.energy(run, None)?,
        })
    }
}
