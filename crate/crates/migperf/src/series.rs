//! JSON Lines files: raw telemetry series and pre-recorded backend samples.

use std::io::{self, BufRead, Write};

use migperf_core::backend::{BackendSample, MetricKind};
use migperf_core::telemetry::{RunId, SeriesKey, TelemetryError, TelemetryStore};
use serde::{Deserialize, Serialize};

/// One line of a raw series file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRecord {
    pub run_id: String,
    pub instance: String,
    pub metric: MetricKind,
    pub ts_ms: f64,
    pub value: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("line {line}: {source}")]
    Telemetry { line: usize, source: TelemetryError },
}

/// Every sample of a run, ordered by timestamp, then instance, then metric.
pub fn run_records(store: &TelemetryStore, run: &RunId) -> Vec<SeriesRecord> {
    let mut out: Vec<SeriesRecord> = store
        .run_series(run)
        .flat_map(|s| {
            s.points.iter().map(move |&(ts, value)| SeriesRecord {
                run_id: run.0.clone(),
                instance: s.key.instance.clone(),
                metric: s.key.metric,
                ts_ms: ts,
                value,
            })
        })
        .collect();
    out.sort_by(|a, b| {
        a.ts_ms
            .total_cmp(&b.ts_ms)
            .then_with(|| a.instance.cmp(&b.instance))
            .then_with(|| a.metric.cmp(&b.metric))
    });
    out
}

pub fn write_jsonl<T: Serialize>(mut w: impl Write, items: &[T]) -> io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Parses JSON Lines, skipping blank lines.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(r: impl BufRead) -> Result<Vec<T>, JsonlError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| JsonlError::Parse { line: i + 1, source })?);
    }
    Ok(out)
}

/// Appends raw series records to `store`.
pub fn load_records(store: &mut TelemetryStore, records: &[SeriesRecord]) -> Result<(), JsonlError> {
    for (i, r) in records.iter().enumerate() {
        let key = SeriesKey::new(&RunId(r.run_id.clone()), &r.instance, r.metric);
        store
            .append(&key, r.ts_ms, r.value)
            .map_err(|source| JsonlError::Telemetry { line: i + 1, source })?;
    }
    Ok(())
}

pub fn read_backend_samples(r: impl BufRead) -> Result<Vec<BackendSample>, JsonlError> {
    read_jsonl(r)
}
