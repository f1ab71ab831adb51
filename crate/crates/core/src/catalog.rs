//! Built-in device catalog entries.
//!
//! Placement tables follow NVIDIA's published MIG profile placements, plus
//! the vendor rule that 4g and 3g instances never share an A100. The
//! same data ships as an editable JSON catalog in the `migperf` crate; these
//! constructors exist so the core can be exercised without IO.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::backend::PerfModelParams;
use crate::device::{DeviceCatalogEntry, GiProfile};

fn profile(name: &str, compute_slices: u32, memory_gib: u32, starts: &[u32], max: u32) -> GiProfile {
    GiProfile {
        name: String::from(name),
        compute_slices,
        memory_gib,
        allowed_starts: starts.to_vec(),
        max_count: Some(max),
        excludes: Vec::new(),
    }
}

pub fn a100_80gb() -> DeviceCatalogEntry {
    DeviceCatalogEntry {
        model_name: "A100-80GB".into(),
        total_compute_slices: 7,
        total_memory_gib: 80,
        profiles: vec![
            profile("1g.10gb", 1, 10, &[0, 1, 2, 3, 4, 5, 6], 7),
            profile("2g.20gb", 2, 20, &[0, 2, 4], 3),
            profile("3g.40gb", 3, 40, &[0, 4], 2),
            GiProfile {
                excludes: vec!["3g.40gb".into()],
                ..profile("4g.40gb", 4, 40, &[0], 1)
            },
            profile("7g.80gb", 7, 80, &[0], 1),
        ],
        perf_model: Some(PerfModelParams {
            p_max_w: 400.0,
            ..PerfModelParams::default()
        }),
    }
}

pub fn a30() -> DeviceCatalogEntry {
    DeviceCatalogEntry {
        model_name: "A30".into(),
        total_compute_slices: 4,
        total_memory_gib: 24,
        profiles: vec![
            profile("1g.6gb", 1, 6, &[0, 1, 2, 3], 4),
            profile("2g.12gb", 2, 12, &[0, 2], 2),
            profile("4g.24gb", 4, 24, &[0], 1),
        ],
        perf_model: Some(PerfModelParams {
            p_max_w: 165.0,
            ..PerfModelParams::default()
        }),
    }
}

pub fn builtin() -> Vec<DeviceCatalogEntry> {
    vec![a100_80gb(), a30()]
}
