//! Backend that replays pre-recorded samples instead of simulating.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use migperf_core::backend::{Backend, BackendError, BackendSample, MetricKind, RunJob, RunOutput};

use crate::series::{read_backend_samples, JsonlError};

#[derive(Debug, Clone)]
pub struct ExternalBackend {
    samples: Vec<BackendSample>,
}

impl ExternalBackend {
    pub fn new(samples: Vec<BackendSample>) -> Self {
        ExternalBackend { samples }
    }

    pub fn from_path(path: &Path) -> Result<Self, JsonlError> {
        let f = File::open(path)?;
        Ok(Self::new(read_backend_samples(BufReader::new(f))?))
    }
}

impl Backend for ExternalBackend {
    fn name(&self) -> &str {
        "external"
    }

    /// Uses the samples recorded for the job's instance. A recording of a
    /// single instance is relabelled to whatever instance the job runs on.
    fn execute(&self, job: &RunJob) -> Result<RunOutput, BackendError> {
        let mut samples: Vec<BackendSample> = self
            .samples
            .iter()
            .filter(|s| s.instance == job.instance)
            .cloned()
            .collect();
        if samples.is_empty() {
            let instances: BTreeSet<&str> = self.samples.iter().map(|s| s.instance.as_str()).collect();
            if instances.len() != 1 {
                return Err(BackendError::External(format!(
                    "recording has no samples for {} (instances: {})",
                    job.instance,
                    instances.into_iter().collect::<Vec<_>>().join(", ")
                )));
            }
            samples = self
                .samples
                .iter()
                .map(|s| BackendSample {
                    instance: job.instance.clone(),
                    ..s.clone()
                })
                .collect();
        }
        let capacity_mib = job.memory_capacity_gib * 1024.0;
        for s in &samples {
            if !(s.ts.is_finite() && s.ts >= 0.0 && s.value.is_finite()) {
                return Err(BackendError::External(format!("bad sample at ts {}", s.ts)));
            }
            match s.kind {
                MetricKind::GractFrac if !(0.0..=1.0).contains(&s.value) => {
                    return Err(BackendError::External(format!("gract_frac {} outside [0, 1]", s.value)))
                }
                MetricKind::FbMib if s.value > capacity_mib => {
                    return Err(BackendError::OutOfMemory {
                        need_mib: s.value,
                        capacity_mib,
                    })
                }
                _ => {}
            }
        }
        let end_ms = samples.iter().map(|s| s.ts).fold(0.0, f64::max);
        Ok(RunOutput { samples, end_ms })
    }
}
