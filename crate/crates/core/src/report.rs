//! Export rendering that needs no IO: Prometheus text exposition and the
//! per-figure datasets.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::{self, Write};

use serde::{Deserialize, Serialize};

use crate::backend::MetricKind;
use crate::device::SharingMode;
use crate::telemetry::{self, MetricSummary, RunId, RunMeta, SeriesKey, TelemetryError, TelemetryStore};
use crate::workload::{Experiment, LoopMode, WorkloadKind};

pub const EXPOSITION_METRICS: [&str; 7] = [
    "migperf_latency_p99_ms",
    "migperf_latency_avg_ms",
    "migperf_throughput_batch_per_s",
    "migperf_gract_ratio",
    "migperf_fb_mib",
    "migperf_energy_mj",
    "migperf_power_w",
];

/// Escapes a label value: backslash, double quote and line feed.
pub fn escape_label_value(v: &str) -> String {
    let mut out = String::with_capacity(v.len());
    for c in v.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out
}

fn format_value(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v == f64::INFINITY {
        "+Inf".into()
    } else if v == f64::NEG_INFINITY {
        "-Inf".into()
    } else {
        alloc::format!("{v}")
    }
}

/// Renders gauges for every run in `store`: six summary gauges for runs that
/// summarize cleanly and the last power sample for every run. `timestamp`
/// maps a run to the millisecond timestamp written on its lines.
pub fn render_exposition(store: &TelemetryStore, timestamp: &dyn Fn(&RunMeta) -> i64) -> String {
    let mut families: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for meta in store.runs() {
        let labels = alloc::format!(
            "run=\"{}\",device=\"{}\",instance=\"{}\",profile=\"{}\"",
            escape_label_value(meta.run_id.as_str()),
            meta.device_id,
            escape_label_value(&meta.instance),
            escape_label_value(meta.profile.as_deref().unwrap_or(match meta.arm {
                SharingMode::Mps => "mps",
                _ => "none",
            })),
        );
        let ts = timestamp(meta);
        let mut line = |family: usize, value: f64| {
            families.entry(family).or_default().push(alloc::format!(
                "{}{{{}}} {} {}\n",
                EXPOSITION_METRICS[family],
                labels,
                format_value(value),
                ts
            ));
        };
        if let Ok(s) = store.summarize(&meta.run_id) {
            line(0, s.p99_latency_ms);
            line(1, s.avg_latency_ms);
            line(2, s.throughput_batch_per_s);
            line(3, s.mean_gract_frac);
            line(4, s.peak_fb_mib);
            line(5, s.energy_mj);
        }
        let power = store
            .series(&SeriesKey::new(&meta.run_id, &meta.instance, MetricKind::PowerW))
            .and_then(|s| s.points.last());
        if let Some(&(_, w)) = power {
            line(6, w);
        }
    }
    let mut out = String::new();
    for (family, lines) in families {
        let _ = writeln!(out, "# TYPE {} gauge", EXPOSITION_METRICS[family]);
        for l in lines {
            out.push_str(&l);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FigureId {
    #[serde(rename = "fig2_training_batch_sweep")]
    TrainingBatchSweep,
    #[serde(rename = "fig3_inference_seqlen_sweep")]
    InferenceSeqlenSweep,
    #[serde(rename = "fig4_avg_latency_sharing")]
    AvgLatencySharing,
    #[serde(rename = "fig5_tail_latency_sharing")]
    TailLatencySharing,
    #[serde(rename = "fig6_tail_latency_batch_sharing")]
    TailLatencyBatchSharing,
    #[serde(rename = "fig7_tail_latency_model_size")]
    TailLatencyModelSize,
    #[serde(rename = "fig10_mps_arrival_rate")]
    MpsArrivalRate,
    #[serde(rename = "fig11_mig_arrival_rate")]
    MigArrivalRate,
}

impl FigureId {
    pub const ALL: [FigureId; 8] = [
        FigureId::TrainingBatchSweep,
        FigureId::InferenceSeqlenSweep,
        FigureId::AvgLatencySharing,
        FigureId::TailLatencySharing,
        FigureId::TailLatencyBatchSharing,
        FigureId::TailLatencyModelSize,
        FigureId::MpsArrivalRate,
        FigureId::MigArrivalRate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FigureId::TrainingBatchSweep => "fig2_training_batch_sweep",
            FigureId::InferenceSeqlenSweep => "fig3_inference_seqlen_sweep",
            FigureId::AvgLatencySharing => "fig4_avg_latency_sharing",
            FigureId::TailLatencySharing => "fig5_tail_latency_sharing",
            FigureId::TailLatencyBatchSharing => "fig6_tail_latency_batch_sharing",
            FigureId::TailLatencyModelSize => "fig7_tail_latency_model_size",
            FigureId::MpsArrivalRate => "fig10_mps_arrival_rate",
            FigureId::MigArrivalRate => "fig11_mig_arrival_rate",
        }
    }

    pub fn parse(s: &str) -> Option<FigureId> {
        FigureId::ALL.into_iter().find(|f| f.as_str() == s)
    }

    pub fn columns(self) -> &'static [&'static str] {
        match self {
            FigureId::TrainingBatchSweep => &[
                "profile",
                "batch_size",
                "throughput_batch_per_s",
                "gract_pct",
                "fb_mib",
                "energy_mj",
            ],
            FigureId::InferenceSeqlenSweep => &[
                "profile",
                "sequence_length_tokens",
                "p99_ms",
                "gract_pct",
                "fb_mib",
                "energy_mj",
            ],
            FigureId::AvgLatencySharing => &["model", "batch_size", "arm", "avg_ms", "stddev_ms"],
            FigureId::TailLatencySharing | FigureId::TailLatencyBatchSharing => {
                &["model", "batch_size", "arm", "p99_ms", "stddev_ms"]
            }
            FigureId::TailLatencyModelSize => &["model", "model_params_gib", "arm", "p99_ms"],
            FigureId::MpsArrivalRate | FigureId::MigArrivalRate => &["arrival_rate_per_s", "arm", "p99_ms"],
        }
    }
}

impl fmt::Display for FigureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Int(u64),
    Num(f64),
    Text(String),
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Num(v) => write!(f, "{v}"),
            Cell::Text(v) => f.write_str(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureDataset {
    pub figure_id: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl FigureDataset {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FigureError {
    #[error("unknown figure {0}")]
    UnknownFigure(String),
    #[error("no runs match figure {0}")]
    NoRuns(FigureId),
    #[error("incomplete grid for {figure}: missing {}", missing.join("; "))]
    IncompleteGrid { figure: FigureId, missing: Vec<String> },
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
}

fn arm_str(arm: SharingMode) -> &'static str {
    match arm {
        SharingMode::Mig => "mig",
        SharingMode::Mps => "mps",
        SharingMode::Exclusive => "exclusive",
    }
}

fn selects(figure: FigureId, m: &RunMeta) -> bool {
    let experiment = m.experiment;
    let spec = &m.spec;
    let sharing = experiment == Experiment::Sharing && matches!(m.arm, SharingMode::Mig | SharingMode::Mps);
    match figure {
        FigureId::TrainingBatchSweep => {
            experiment == Experiment::Sweep && spec.kind == WorkloadKind::Training && m.profile.is_some()
        }
        FigureId::InferenceSeqlenSweep => {
            experiment == Experiment::Sweep
                && spec.kind == WorkloadKind::Inference
                && m.profile.is_some()
                && spec.sequence_length.is_some()
        }
        FigureId::AvgLatencySharing
        | FigureId::TailLatencySharing
        | FigureId::TailLatencyBatchSharing
        | FigureId::TailLatencyModelSize => {
            sharing && spec.kind == WorkloadKind::Inference && spec.loop_mode == LoopMode::Closed
        }
        FigureId::MpsArrivalRate => sharing && m.arm == SharingMode::Mps && spec.loop_mode == LoopMode::Open,
        FigureId::MigArrivalRate => sharing && m.arm == SharingMode::Mig && spec.loop_mode == LoopMode::Open,
    }
}

/// Sort key for a profile name: compute slices, then the name.
fn profile_key(name: &str) -> (u32, String) {
    (crate::device::profile_name_slices(name).unwrap_or(u32::MAX), name.into())
}

/// Builds one figure's dataset from the runs in `runs` (all stored runs when
/// `None`).
pub fn build_figure_dataset(
    figure: FigureId,
    store: &TelemetryStore,
    runs: Option<&[RunId]>,
) -> Result<FigureDataset, FigureError> {
    let chosen: Vec<&RunMeta> = match runs {
        Some(ids) => ids
            .iter()
            .map(|id| store.run(id).ok_or_else(|| TelemetryError::UnknownRun(id.clone())))
            .collect::<Result<_, _>>()?,
        None => store.runs().collect(),
    };
    let chosen: Vec<&RunMeta> = chosen
        .into_iter()
        .filter(|m| selects(figure, m))
        .collect();
    if chosen.is_empty() {
        return Err(FigureError::NoRuns(figure));
    }
    let rows = match figure {
        FigureId::TrainingBatchSweep | FigureId::InferenceSeqlenSweep => sweep_rows(figure, store, &chosen)?,
        FigureId::AvgLatencySharing
        | FigureId::TailLatencySharing
        | FigureId::TailLatencyBatchSharing => sharing_rows(figure, store, &chosen)?,
        FigureId::TailLatencyModelSize => model_size_rows(store, &chosen)?,
        FigureId::MpsArrivalRate | FigureId::MigArrivalRate => arrival_rows(figure, store, &chosen)?,
    };
    Ok(FigureDataset {
        figure_id: figure.as_str().into(),
        columns: figure.columns().iter().map(|c| c.to_string()).collect(),
        rows,
    })
}

fn incomplete(figure: FigureId, missing: Vec<String>) -> Result<(), FigureError> {
    if missing.is_empty() {
        Ok(())
    } else {
        Err(FigureError::IncompleteGrid { figure, missing })
    }
}

fn sweep_rows(figure: FigureId, store: &TelemetryStore, runs: &[&RunMeta]) -> Result<Vec<Vec<Cell>>, FigureError> {
    let x = |m: &RunMeta| match figure {
        FigureId::TrainingBatchSweep => m.spec.batch_size,
        _ => m.spec.sequence_length.unwrap_or(0),
    };
    // Latest run wins when a point was measured more than once.
    let mut points: BTreeMap<((u32, String), u32), &RunMeta> = BTreeMap::new();
    for m in runs {
        let key = (profile_key(m.profile.as_deref().unwrap_or("")), x(m));
        match points.get(&key) {
            Some(prev) if prev.run_id >= m.run_id => {}
            _ => {
                points.insert(key, m);
            }
        }
    }
    let profiles: BTreeSet<(u32, String)> = points.keys().map(|k| k.0.clone()).collect();
    let xs: BTreeSet<u32> = points.keys().map(|k| k.1).collect();
    let missing: Vec<String> = profiles
        .iter()
        .flat_map(|p| xs.iter().map(move |&xv| (p, xv)))
        .filter(|(p, xv)| !points.contains_key(&((*p).clone(), *xv)))
        .map(|(p, xv)| alloc::format!("profile={} x={xv}", p.1))
        .collect();
    incomplete(figure, missing)?;
    let mut rows = Vec::new();
    for p in &profiles {
        for &xv in &xs {
            let m = points[&(p.clone(), xv)];
            let s: MetricSummary = store.summarize(&m.run_id)?;
            let first = match figure {
                FigureId::TrainingBatchSweep => s.throughput_batch_per_s,
                _ => s.p99_latency_ms,
            };
            rows.push(alloc::vec![
                Cell::Text(p.1.clone()),
                Cell::Int(xv as u64),
                Cell::Num(first),
                Cell::Num(s.mean_gract_frac * 100.0),
                Cell::Num(s.peak_fb_mib),
                Cell::Num(s.energy_mj),
            ]);
        }
    }
    Ok(rows)
}

fn pooled(store: &TelemetryStore, runs: &[&RunMeta]) -> Result<Vec<f64>, FigureError> {
    let mut all = Vec::new();
    for m in runs {
        all.extend(store.steady_latencies(&m.run_id)?);
    }
    if all.is_empty() {
        return Err(TelemetryError::EmptySeries(String::from(" (pooled latencies)")).into());
    }
    Ok(all)
}

fn sharing_rows(figure: FigureId, store: &TelemetryStore, runs: &[&RunMeta]) -> Result<Vec<Vec<Cell>>, FigureError> {
    let mut groups: BTreeMap<(String, u32, &'static str), Vec<&RunMeta>> = BTreeMap::new();
    for m in runs {
        groups
            .entry((m.spec.model.name.clone(), m.spec.batch_size, arm_str(m.arm)))
            .or_default()
            .push(m);
    }
    let models: BTreeSet<String> = groups.keys().map(|k| k.0.clone()).collect();
    let batches: BTreeSet<u32> = groups.keys().map(|k| k.1).collect();
    let mut missing = Vec::new();
    for model in &models {
        for &b in &batches {
            for arm in ["mig", "mps"] {
                if !groups.contains_key(&(model.clone(), b, arm)) {
                    missing.push(alloc::format!("model={model} batch={b} arm={arm}"));
                }
            }
        }
    }
    incomplete(figure, missing)?;
    let mut rows = Vec::new();
    for model in &models {
        for &b in &batches {
            for arm in ["mig", "mps"] {
                let g = &groups[&(model.clone(), b, arm)];
                let lat = pooled(store, g)?;
                let centre = match figure {
                    FigureId::AvgLatencySharing => telemetry::mean(&lat).expect("non-empty"),
                    _ => telemetry::percentile(&lat, 0.99)?,
                };
                rows.push(alloc::vec![
                    Cell::Text(model.clone()),
                    Cell::Int(b as u64),
                    Cell::Text(arm.into()),
                    Cell::Num(centre),
                    Cell::Num(telemetry::stddev(&lat).expect("non-empty")),
                ]);
            }
        }
    }
    Ok(rows)
}

fn model_size_rows(store: &TelemetryStore, runs: &[&RunMeta]) -> Result<Vec<Vec<Cell>>, FigureError> {
    let mut groups: BTreeMap<(u64, String, &'static str), (f64, Vec<&RunMeta>)> = BTreeMap::new();
    for m in runs {
        let size = m.spec.model.params_mem_gib;
        groups
            .entry((size.to_bits(), m.spec.model.name.clone(), arm_str(m.arm)))
            .or_insert_with(|| (size, Vec::new()))
            .1
            .push(m);
    }
    let models: BTreeSet<(u64, String)> = groups.keys().map(|k| (k.0, k.1.clone())).collect();
    let missing: Vec<String> = models
        .iter()
        .flat_map(|(bits, model)| ["mig", "mps"].map(|arm| (*bits, model, arm)))
        .filter(|(bits, model, arm)| !groups.contains_key(&(*bits, (*model).clone(), *arm)))
        .map(|(_, model, arm)| alloc::format!("model={model} arm={arm}"))
        .collect();
    incomplete(FigureId::TailLatencyModelSize, missing)?;
    let mut rows = Vec::new();
    for (bits, model) in &models {
        for arm in ["mig", "mps"] {
            let (size, g) = &groups[&(*bits, model.clone(), arm)];
            let lat = pooled(store, g)?;
            rows.push(alloc::vec![
                Cell::Text(model.clone()),
                Cell::Num(*size),
                Cell::Text(arm.into()),
                Cell::Num(telemetry::percentile(&lat, 0.99)?),
            ]);
        }
    }
    Ok(rows)
}

fn arrival_rows(figure: FigureId, store: &TelemetryStore, runs: &[&RunMeta]) -> Result<Vec<Vec<Cell>>, FigureError> {
    let mut groups: BTreeMap<u64, (f64, Vec<&RunMeta>)> = BTreeMap::new();
    for m in runs {
        let rate = m.spec.arrival_rate.unwrap_or(0.0);
        groups.entry(rate.to_bits()).or_insert_with(|| (rate, Vec::new())).1.push(m);
    }
    let mut ordered: Vec<&(f64, Vec<&RunMeta>)> = groups.values().collect();
    ordered.sort_by(|a, b| a.0.total_cmp(&b.0));
    let arm = if figure == FigureId::MpsArrivalRate { "mps" } else { "mig" };
    ordered
        .into_iter()
        .map(|(rate, g)| {
            let lat = pooled(store, g)?;
            Ok(alloc::vec![
                Cell::Num(*rate),
                Cell::Text(arm.into()),
                Cell::Num(telemetry::percentile(&lat, 0.99)?),
            ])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_escaping() {
        assert_eq!(escape_label_value(r#"a"b\c"#), r#"a\"b\\c"#);
        assert_eq!(escape_label_value("x\ny"), "x\\ny");
    }

    #[test]
    fn empty_store_renders_empty_body() {
        assert_eq!(render_exposition(&TelemetryStore::new(), &|_| 0), "");
    }

    #[test]
    fn figure_ids_round_trip() {
        for f in FigureId::ALL {
            assert_eq!(FigureId::parse(f.as_str()), Some(f));
        }
        assert_eq!(FigureId::parse("fig99"), None);
    }

    #[test]
    fn value_formatting() {
        assert_eq!(format_value(1.5), "1.5");
        assert_eq!(format_value(f64::INFINITY), "+Inf");
        assert_eq!(format_value(1e21), "1000000000000000000000");
    }
}
