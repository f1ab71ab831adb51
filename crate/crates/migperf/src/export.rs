//! CSV documents: run summaries, raw samples and figure datasets.

use migperf_core::report::FigureDataset;
use migperf_core::telemetry::{MetricSummary, RunId, TelemetryError, TelemetryStore};
use serde::{Deserialize, Serialize};

use crate::series::run_records;

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CsvKind {
    #[default]
    Summaries,
    Raw,
}

/// One row of the summary CSV: run identity plus every summary field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub run_id: String,
    pub device_id: u32,
    pub device_model: String,
    pub instance: String,
    pub profile: String,
    pub arm: String,
    pub kind: String,
    pub model: String,
    pub batch_size: u32,
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

impl SummaryRow {
    pub fn summary(&self) -> MetricSummary {
        MetricSummary {
            run_id: RunId(self.run_id.clone()),
            requests: self.requests,
            avg_latency_ms: self.avg_latency_ms,
            p99_latency_ms: self.p99_latency_ms,
            latency_stddev_ms: self.latency_stddev_ms,
            throughput_batch_per_s: self.throughput_batch_per_s,
            throughput_samples_per_s: self.throughput_samples_per_s,
            mean_gract_frac: self.mean_gract_frac,
            peak_fb_mib: self.peak_fb_mib,
            energy_mj: self.energy_mj,
        }
    }
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    let bytes = w.into_inner().expect("in-memory writer");
    String::from_utf8(bytes).expect("csv output is UTF-8")
}

/// Sorted, de-duplicated run list; errors on the first unknown run.
fn ordered(store: &TelemetryStore, runs: &[RunId]) -> Result<Vec<RunId>, TelemetryError> {
    let mut runs = runs.to_vec();
    runs.sort();
    runs.dedup();
    for r in &runs {
        if store.run(r).is_none() {
            return Err(TelemetryError::UnknownRun(r.clone()));
        }
    }
    Ok(runs)
}

pub fn summary_rows(store: &TelemetryStore, runs: &[RunId]) -> Result<Vec<SummaryRow>, TelemetryError> {
    ordered(store, runs)?
        .iter()
        .map(|r| {
            let meta = store.run(r).expect("checked");
            let s = store.summarize(r)?;
            Ok(SummaryRow {
                run_id: r.0.clone(),
                device_id: meta.device_id,
                device_model: meta.device_model.clone(),
                instance: meta.instance.clone(),
                profile: meta.profile.clone().unwrap_or_default(),
                arm: meta.arm.to_string(),
                kind: meta.spec.kind.to_string(),
                model: meta.spec.model.name.clone(),
                batch_size: meta.spec.batch_size,
                requests: s.requests,
                avg_latency_ms: s.avg_latency_ms,
                p99_latency_ms: s.p99_latency_ms,
                latency_stddev_ms: s.latency_stddev_ms,
                throughput_batch_per_s: s.throughput_batch_per_s,
                throughput_samples_per_s: s.throughput_samples_per_s,
                mean_gract_frac: s.mean_gract_frac,
                peak_fb_mib: s.peak_fb_mib,
                energy_mj: s.energy_mj,
            })
        })
        .collect()
}

pub fn summaries_csv(store: &TelemetryStore, runs: &[RunId]) -> Result<String, ExportError> {
    let rows = summary_rows(store, runs)?;
    let mut w = writer();
    if rows.is_empty() {
        w.write_record(SUMMARY_HEADER)?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    Ok(finish(w))
}

const SUMMARY_HEADER: [&str; 18] = [
    "run_id",
    "device_id",
    "device_model",
    "instance",
    "profile",
    "arm",
    "kind",
    "model",
    "batch_size",
    "requests",
    "avg_latency_ms",
    "p99_latency_ms",
    "latency_stddev_ms",
    "throughput_batch_per_s",
    "throughput_samples_per_s",
    "mean_gract_frac",
    "peak_fb_mib",
    "energy_mj",
];

/// One row per sample, ordered by run, then timestamp.
pub fn raw_csv(store: &TelemetryStore, runs: &[RunId]) -> Result<String, ExportError> {
    let mut w = writer();
    w.write_record(["run_id", "instance", "metric", "ts_ms", "value"])?;
    for r in ordered(store, runs)? {
        for rec in run_records(store, &r) {
            w.write_record([
                rec.run_id,
                rec.instance,
                rec.metric.as_str().to_string(),
                rec.ts_ms.to_string(),
                rec.value.to_string(),
            ])?;
        }
    }
    Ok(finish(w))
}

/// Parses a summary CSV (LF or CRLF line endings).
pub fn read_summaries_csv(text: &str) -> Result<Vec<SummaryRow>, csv::Error> {
    csv::Reader::from_reader(text.as_bytes()).deserialize().collect()
}

pub fn figure_csv(ds: &FigureDataset) -> String {
    let mut w = writer();
    w.write_record(&ds.columns).expect("in-memory write");
    for row in &ds.rows {
        w.write_record(row.iter().map(|c| c.to_string())).expect("in-memory write");
    }
    finish(w)
}
