//! GPU topologies, MIG instance profiles and the per-device partition state machine.
//!
//! Placement is modelled on a single compute-slice axis: a GPU instance of a
//! profile with `g` compute slices started at slice `s` occupies `[s, s + g)`.
//! Memory slices are folded into the profile's `memory_gib`.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::backend::PerfModelParams;

/// Upper bound on `total_compute_slices`; occupancy is tracked in a `u64` mask.
pub const MAX_COMPUTE_SLICES: u32 = 64;

pub type GiId = u32;
pub type CiId = u32;
pub type DeviceId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GiProfile {
    pub name: String,
    pub compute_slices: u32,
    pub memory_gib: u32,
    pub allowed_starts: Vec<u32>,
    /// Extra per-profile instance cap on top of placement disjointness.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_count: Option<u32>,
    /// Profiles that may not be resident together with this one even when
    /// their slice intervals are disjoint. The relation is symmetric.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excludes: Vec<String>,
}

impl GiProfile {
    fn mask_at(&self, start: u32) -> u64 {
        slice_mask(start, self.compute_slices)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceCatalogEntry {
    pub model_name: String,
    pub total_compute_slices: u32,
    pub total_memory_gib: u32,
    pub profiles: Vec<GiProfile>,
    /// Simulator constants for this device; defaults apply when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perf_model: Option<PerfModelParams>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CatalogError {
    #[error("device {model}: total_compute_slices must be in 1..={MAX_COMPUTE_SLICES}, got {got}")]
    BadSliceCount { model: String, got: u32 },
    #[error("device {model}: profile {profile}: {reason}")]
    BadProfile {
        model: String,
        profile: String,
        reason: String,
    },
    #[error("device {model}: perf_model: {reason}")]
    BadPerfModel { model: String, reason: String },
    #[error("duplicate device model {0}")]
    DuplicateDevice(String),
}

/// Parses the leading `<g>` out of a `<g>g.<mem>gb` profile name.
pub fn profile_name_slices(name: &str) -> Option<u32> {
    let (g, rest) = name.split_once("g.")?;
    let mem = rest.strip_suffix("gb")?;
    if mem.is_empty() || !mem.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    g.parse().ok()
}

impl DeviceCatalogEntry {
    pub fn validate(&self) -> Result<(), CatalogError> {
        let model = || self.model_name.clone();
        if self.total_compute_slices == 0 || self.total_compute_slices > MAX_COMPUTE_SLICES {
            return Err(CatalogError::BadSliceCount {
                model: model(),
                got: self.total_compute_slices,
            });
        }
        let mut seen = BTreeSet::new();
        for p in &self.profiles {
            let bad = |reason: String| CatalogError::BadProfile {
                model: model(),
                profile: p.name.clone(),
                reason,
            };
            if !seen.insert(p.name.as_str()) {
                return Err(bad("duplicate profile name".into()));
            }
            match profile_name_slices(&p.name) {
                Some(g) if g == p.compute_slices => {}
                Some(g) => {
                    return Err(bad(alloc::format!(
                        "name implies {g} compute slices but compute_slices = {}",
                        p.compute_slices
                    )))
                }
                None => return Err(bad("name is not of the form <g>g.<mem>gb".into())),
            }
            if p.compute_slices == 0 || p.compute_slices > self.total_compute_slices {
                return Err(bad(alloc::format!(
                    "compute_slices {} outside 1..={}",
                    p.compute_slices,
                    self.total_compute_slices
                )));
            }
            if p.memory_gib == 0 || p.memory_gib > self.total_memory_gib {
                return Err(bad(alloc::format!(
                    "memory_gib {} outside 1..={}",
                    p.memory_gib,
                    self.total_memory_gib
                )));
            }
            if p.allowed_starts.is_empty() {
                return Err(bad("allowed_starts is empty".into()));
            }
            if p.allowed_starts.windows(2).any(|w| w[0] >= w[1]) {
                return Err(bad("allowed_starts must be strictly increasing".into()));
            }
            if let Some(&s) = p
                .allowed_starts
                .iter()
                .find(|&&s| s + p.compute_slices > self.total_compute_slices)
            {
                return Err(bad(alloc::format!(
                    "allowed start {s} + {} slices exceeds {} total slices",
                    p.compute_slices,
                    self.total_compute_slices
                )));
            }
        }
        for p in &self.profiles {
            if let Some(x) = p.excludes.iter().find(|x| **x == p.name || self.profile(x).is_none()) {
                return Err(CatalogError::BadProfile {
                    model: model(),
                    profile: p.name.clone(),
                    reason: alloc::format!("excludes names unknown or self profile {x}"),
                });
            }
        }
        if let Some(params) = &self.perf_model {
            params.validate().map_err(|reason| CatalogError::BadPerfModel {
                model: model(),
                reason: reason.into(),
            })?;
        }
        Ok(())
    }

    pub fn profile(&self, name: &str) -> Option<&GiProfile> {
        self.profiles.iter().find(|p| p.name == name)
    }

    pub fn profile_index(&self, name: &str) -> Option<usize> {
        self.profiles.iter().position(|p| p.name == name)
    }

    pub fn perf_params(&self) -> PerfModelParams {
        self.perf_model.clone().unwrap_or_default()
    }

    /// Instance cap for a profile, when the catalog declares one.
    pub fn max_instances(&self, name: &str) -> Option<u32> {
        self.profile(name).and_then(|p| p.max_count)
    }

    fn resolve(&self, requested: &[impl AsRef<str>]) -> Result<Vec<usize>, DeviceError> {
        let mut idx = requested
            .iter()
            .map(|n| {
                self.profile_index(n.as_ref())
                    .ok_or_else(|| DeviceError::UnknownProfile(n.as_ref().to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        idx.sort_unstable();
        Ok(idx)
    }

    /// Sorts profile names into catalog order, the canonical multiset form.
    pub fn canonical(&self, requested: &[impl AsRef<str>]) -> Result<Vec<String>, DeviceError> {
        Ok(self
            .resolve(requested)?
            .into_iter()
            .map(|i| self.profiles[i].name.clone())
            .collect())
    }

    /// Decides whether `requested` fits on an empty device.
    ///
    /// The witness is the lexicographically smallest assignment when instances
    /// are listed in catalog profile order and starts are tried ascending.
    pub fn validate_config(&self, requested: &[impl AsRef<str>]) -> Result<ConfigCheck, DeviceError> {
        let idx = self.resolve(requested)?;
        Ok(match self.place(&idx, 0) {
            Some(starts) => ConfigCheck {
                feasible: true,
                placement: Some(
                    idx.iter()
                        .zip(starts)
                        .map(|(&i, start)| PlacedInstance {
                            profile: self.profiles[i].name.clone(),
                            start,
                        })
                        .collect(),
                ),
            },
            None => ConfigCheck {
                feasible: false,
                placement: None,
            },
        })
    }

    /// Places profile indices (sorted ascending) around an already occupied
    /// mask. Returns starts in the same order.
    pub(crate) fn place(&self, sorted_idx: &[usize], occupied: u64) -> Option<Vec<u32>> {
        if !self.within_caps(sorted_idx, &[]) {
            return None;
        }
        let mut starts = Vec::with_capacity(sorted_idx.len());
        if self.place_rec(sorted_idx, occupied, &mut starts) {
            Some(starts)
        } else {
            None
        }
    }

    /// Whether two profiles exclude each other.
    pub(crate) fn excluded(&self, a: usize, b: usize) -> bool {
        let (pa, pb) = (&self.profiles[a], &self.profiles[b]);
        pa.excludes.contains(&pb.name) || pb.excludes.contains(&pa.name)
    }

    /// Instance caps and exclusions over `adding` plus `existing` (profile
    /// indices already resident on the device).
    pub(crate) fn within_caps(&self, adding: &[usize], existing: &[usize]) -> bool {
        let caps = self.profiles.iter().enumerate().all(|(i, p)| match p.max_count {
            Some(cap) => {
                let n = adding.iter().chain(existing).filter(|&&j| j == i).count();
                n as u32 <= cap
            }
            None => true,
        });
        caps && adding.iter().enumerate().all(|(k, &a)| {
            adding[k + 1..].iter().chain(existing).all(|&b| !self.excluded(a, b))
        })
    }

    fn place_rec(&self, idx: &[usize], occupied: u64, starts: &mut Vec<u32>) -> bool {
        let depth = starts.len();
        if depth == idx.len() {
            return true;
        }
        let profile = &self.profiles[idx[depth]];
        // Identical instances are interchangeable; keep their starts ascending.
        let floor = if depth > 0 && idx[depth - 1] == idx[depth] {
            starts[depth - 1] + 1
        } else {
            0
        };
        for &s in profile.allowed_starts.iter().filter(|&&s| s >= floor) {
            let m = profile.mask_at(s);
            if occupied & m == 0 {
                starts.push(s);
                if self.place_rec(idx, occupied | m, starts) {
                    return true;
                }
                starts.pop();
            }
        }
        false
    }

    /// Every feasible profile multiset (including the empty one), each in
    /// canonical order, sorted.
    pub fn enumerate_valid_configs(&self) -> Vec<Vec<String>> {
        let mut found: BTreeSet<Vec<usize>> = BTreeSet::new();
        let mut chosen = Vec::new();
        self.enumerate_rec(0, 0, 0, &mut chosen, &mut found);
        found
            .into_iter()
            .map(|v| v.into_iter().map(|i| self.profiles[i].name.clone()).collect())
            .collect()
    }

    fn enumerate_rec(
        &self,
        min_profile: usize,
        min_start: u32,
        occupied: u64,
        chosen: &mut Vec<usize>,
        found: &mut BTreeSet<Vec<usize>>,
    ) {
        found.insert(chosen.clone());
        for pi in min_profile..self.profiles.len() {
            let p = &self.profiles[pi];
            if let Some(cap) = p.max_count {
                if chosen.iter().filter(|&&j| j == pi).count() as u32 >= cap {
                    continue;
                }
            }
            if chosen.iter().any(|&j| self.excluded(pi, j)) {
                continue;
            }
            let floor = if pi == min_profile { min_start } else { 0 };
            for &s in p.allowed_starts.iter().filter(|&&s| s >= floor) {
                let m = p.mask_at(s);
                if occupied & m == 0 {
                    chosen.push(pi);
                    self.enumerate_rec(pi, s + 1, occupied | m, chosen, found);
                    chosen.pop();
                }
            }
        }
    }
}

pub(crate) fn slice_mask(start: u32, len: u32) -> u64 {
    let bits = if len >= 64 { u64::MAX } else { (1u64 << len) - 1 };
    bits << start
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacedInstance {
    pub profile: String,
    pub start: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigCheck {
    pub feasible: bool,
    pub placement: Option<Vec<PlacedInstance>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SharingMode {
    Mig,
    Mps,
    Exclusive,
}

impl fmt::Display for SharingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SharingMode::Mig => "mig",
            SharingMode::Mps => "mps",
            SharingMode::Exclusive => "exclusive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComputeInstance {
    pub ci_id: CiId,
    pub slices: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GpuInstance {
    pub gi_id: GiId,
    pub profile: GiProfile,
    pub start_slice: u32,
    pub compute_instances: Vec<ComputeInstance>,
}

impl GpuInstance {
    pub fn end_slice(&self) -> u32 {
        self.start_slice + self.profile.compute_slices
    }

    pub fn ci_slices_used(&self) -> u32 {
        self.compute_instances.iter().map(|c| c.slices).sum()
    }

    fn mask(&self) -> u64 {
        self.profile.mask_at(self.start_slice)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DeviceError {
    #[error("MIG is already enabled on device {0}")]
    AlreadyEnabled(DeviceId),
    #[error("MIG is not enabled on device {0}")]
    MigDisabled(DeviceId),
    #[error("device {device} is in {mode} mode: {reason}")]
    ModeConflict {
        device: DeviceId,
        mode: SharingMode,
        reason: &'static str,
    },
    #[error("unknown profile {0}")]
    UnknownProfile(String),
    #[error("no capacity for {what}")]
    NoCapacity { what: String },
    #[error("profile {profile} cannot start at slice {start}: {reason}")]
    InvalidStart {
        profile: String,
        start: u32,
        reason: &'static str,
    },
    #[error("{0} not found")]
    NotFound(String),
    #[error("{0} is busy")]
    Busy(String),
    #[error("compute instance must have at least one slice")]
    ZeroSlices,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceState {
    pub device_id: DeviceId,
    pub catalog_entry: Arc<DeviceCatalogEntry>,
    pub mig_enabled: bool,
    pub instances: Vec<GpuInstance>,
    pub sharing_mode: SharingMode,
    next_gi_id: GiId,
    next_ci_id: CiId,
}

impl DeviceState {
    pub fn new(device_id: DeviceId, entry: Arc<DeviceCatalogEntry>) -> Self {
        DeviceState {
            device_id,
            catalog_entry: entry,
            mig_enabled: false,
            instances: Vec::new(),
            sharing_mode: SharingMode::Exclusive,
            next_gi_id: 1,
            next_ci_id: 1,
        }
    }

    pub fn entry(&self) -> &DeviceCatalogEntry {
        &self.catalog_entry
    }

    pub fn occupied_mask(&self) -> u64 {
        self.instances.iter().fold(0, |m, gi| m | gi.mask())
    }

    pub fn instance(&self, gi_id: GiId) -> Option<&GpuInstance> {
        self.instances.iter().find(|gi| gi.gi_id == gi_id)
    }

    fn instance_mut(&mut self, gi_id: GiId) -> Result<&mut GpuInstance, DeviceError> {
        self.instances
            .iter_mut()
            .find(|gi| gi.gi_id == gi_id)
            .ok_or_else(|| DeviceError::NotFound(alloc::format!("GPU instance {gi_id}")))
    }

    /// Resident profile names in canonical (catalog) order.
    pub fn profile_multiset(&self) -> Vec<String> {
        let names: Vec<&str> = self.instances.iter().map(|gi| gi.profile.name.as_str()).collect();
        self.entry()
            .canonical(&names)
            .expect("resident profiles come from the catalog")
    }

    /// Equality of the observable layout, ignoring id counters and ids.
    pub fn same_layout(&self, other: &DeviceState) -> bool {
        let key = |s: &DeviceState| {
            let mut v: Vec<(u32, String, Vec<u32>)> = s
                .instances
                .iter()
                .map(|gi| {
                    (
                        gi.start_slice,
                        gi.profile.name.clone(),
                        gi.compute_instances.iter().map(|c| c.slices).collect(),
                    )
                })
                .collect();
            v.sort();
            v
        };
        self.device_id == other.device_id
            && self.catalog_entry == other.catalog_entry
            && self.mig_enabled == other.mig_enabled
            && self.sharing_mode == other.sharing_mode
            && key(self) == key(other)
    }

    /// Checks the structural invariants; returns a description of the first
    /// violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        if !self.mig_enabled && !self.instances.is_empty() {
            return Err("instances resident while MIG is disabled".into());
        }
        if self.sharing_mode == SharingMode::Mps && self.mig_enabled {
            return Err("MPS and MIG both enabled".into());
        }
        let mut occupied = 0u64;
        for gi in &self.instances {
            if !gi.profile.allowed_starts.contains(&gi.start_slice) {
                return Err(alloc::format!("GI {} at illegal start {}", gi.gi_id, gi.start_slice));
            }
            if gi.end_slice() > self.entry().total_compute_slices {
                return Err(alloc::format!("GI {} overruns the device", gi.gi_id));
            }
            if occupied & gi.mask() != 0 {
                return Err(alloc::format!("GI {} overlaps another instance", gi.gi_id));
            }
            occupied |= gi.mask();
            if gi.ci_slices_used() > gi.profile.compute_slices {
                return Err(alloc::format!("GI {} CIs exceed its slices", gi.gi_id));
            }
            if gi.compute_instances.iter().any(|c| c.slices == 0) {
                return Err(alloc::format!("GI {} holds an empty CI", gi.gi_id));
            }
        }
        for (i, a) in self.instances.iter().enumerate() {
            if let Some(b) = self.instances[i + 1..]
                .iter()
                .find(|b| a.profile.excludes.contains(&b.profile.name) || b.profile.excludes.contains(&a.profile.name))
            {
                return Err(alloc::format!("GI {} and GI {} exclude each other", a.gi_id, b.gi_id));
            }
        }
        Ok(())
    }

    pub fn enable_mig(&mut self) -> Result<(), DeviceError> {
        match self.sharing_mode {
            SharingMode::Mps => Err(DeviceError::ModeConflict {
                device: self.device_id,
                mode: SharingMode::Mps,
                reason: "MIG cannot be enabled while MPS is active",
            }),
            _ if self.mig_enabled => Err(DeviceError::AlreadyEnabled(self.device_id)),
            _ => {
                self.mig_enabled = true;
                self.sharing_mode = SharingMode::Mig;
                Ok(())
            }
        }
    }

    pub fn disable_mig(&mut self) -> Result<(), DeviceError> {
        if !self.mig_enabled {
            return Err(DeviceError::MigDisabled(self.device_id));
        }
        if !self.instances.is_empty() {
            return Err(DeviceError::Busy(alloc::format!(
                "device {} ({} GPU instances resident)",
                self.device_id,
                self.instances.len()
            )));
        }
        self.mig_enabled = false;
        self.sharing_mode = SharingMode::Exclusive;
        Ok(())
    }

    /// Switches between MPS and exclusive mode. MIG must be off.
    pub fn set_mps(&mut self, on: bool) -> Result<(), DeviceError> {
        if self.mig_enabled {
            return Err(DeviceError::ModeConflict {
                device: self.device_id,
                mode: SharingMode::Mig,
                reason: "MPS cannot be toggled while MIG is enabled",
            });
        }
        self.sharing_mode = if on {
            SharingMode::Mps
        } else {
            SharingMode::Exclusive
        };
        Ok(())
    }

    /// Creates a GPU instance. Without an explicit start the lowest legal
    /// non-overlapping start is used.
    pub fn create_gi(&mut self, profile_name: &str, start: Option<u32>) -> Result<GiId, DeviceError> {
        if !self.mig_enabled {
            return Err(DeviceError::MigDisabled(self.device_id));
        }
        let entry = self.catalog_entry.clone();
        let profile = entry
            .profile(profile_name)
            .ok_or_else(|| DeviceError::UnknownProfile(profile_name.to_string()))?;
        let no_capacity = || DeviceError::NoCapacity {
            what: alloc::format!("{profile_name} on device {}", self.device_id),
        };
        if let Some(cap) = profile.max_count {
            let resident = self
                .instances
                .iter()
                .filter(|gi| gi.profile.name == profile.name)
                .count() as u32;
            if resident >= cap {
                return Err(no_capacity());
            }
        }
        if self.instances.iter().any(|gi| {
            profile.excludes.contains(&gi.profile.name) || gi.profile.excludes.contains(&profile.name)
        }) {
            return Err(no_capacity());
        }
        let occupied = self.occupied_mask();
        let start = match start {
            Some(s) => {
                if !profile.allowed_starts.contains(&s) {
                    return Err(DeviceError::InvalidStart {
                        profile: profile.name.clone(),
                        start: s,
                        reason: "not an allowed start for this profile",
                    });
                }
                if occupied & profile.mask_at(s) != 0 {
                    return Err(DeviceError::InvalidStart {
                        profile: profile.name.clone(),
                        start: s,
                        reason: "overlaps a resident instance",
                    });
                }
                s
            }
            None => *profile
                .allowed_starts
                .iter()
                .find(|&&s| occupied & profile.mask_at(s) == 0)
                .ok_or_else(no_capacity)?,
        };
        let gi_id = self.next_gi_id;
        self.next_gi_id += 1;
        self.instances.push(GpuInstance {
            gi_id,
            profile: profile.clone(),
            start_slice: start,
            compute_instances: Vec::new(),
        });
        self.instances.sort_by_key(|gi| gi.start_slice);
        Ok(gi_id)
    }

    /// Destroys an instance that holds no compute instances.
    pub fn destroy_gi(&mut self, gi_id: GiId) -> Result<(), DeviceError> {
        let pos = self
            .instances
            .iter()
            .position(|gi| gi.gi_id == gi_id)
            .ok_or_else(|| DeviceError::NotFound(alloc::format!("GPU instance {gi_id}")))?;
        if !self.instances[pos].compute_instances.is_empty() {
            return Err(DeviceError::Busy(alloc::format!(
                "GPU instance {gi_id} (live compute instances)"
            )));
        }
        self.instances.remove(pos);
        Ok(())
    }

    pub fn create_ci(&mut self, gi_id: GiId, slices: u32) -> Result<CiId, DeviceError> {
        if slices == 0 {
            return Err(DeviceError::ZeroSlices);
        }
        let ci_id = self.next_ci_id;
        let gi = self.instance_mut(gi_id)?;
        if gi.ci_slices_used() + slices > gi.profile.compute_slices {
            return Err(DeviceError::NoCapacity {
                what: alloc::format!("{slices}-slice compute instance in GPU instance {gi_id}"),
            });
        }
        gi.compute_instances.push(ComputeInstance { ci_id, slices });
        self.next_ci_id += 1;
        Ok(ci_id)
    }

    pub fn destroy_ci(&mut self, gi_id: GiId, ci_id: CiId) -> Result<(), DeviceError> {
        let gi = self.instance_mut(gi_id)?;
        let pos = gi
            .compute_instances
            .iter()
            .position(|c| c.ci_id == ci_id)
            .ok_or_else(|| {
                DeviceError::NotFound(alloc::format!("compute instance {ci_id} in GPU instance {gi_id}"))
            })?;
        gi.compute_instances.remove(pos);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{a100_80gb, a30};
    use alloc::vec;

    fn device(entry: DeviceCatalogEntry) -> DeviceState {
        let mut d = DeviceState::new(0, Arc::new(entry));
        d.enable_mig().unwrap();
        d
    }

    #[test]
    fn builtin_entries_validate() {
        a100_80gb().validate().unwrap();
        a30().validate().unwrap();
    }

    #[test]
    fn start_past_end_is_rejected() {
        let mut e = a100_80gb();
        let p = e.profiles.iter_mut().find(|p| p.name == "4g.40gb").unwrap();
        p.allowed_starts = vec![0, 5];
        let err = e.validate().unwrap_err();
        assert!(matches!(err, CatalogError::BadProfile { ref profile, .. } if profile == "4g.40gb"));
    }

    #[test]
    fn profile_name_must_match_slices() {
        let mut e = a30();
        e.profiles[0].name = "2g.6gb".into();
        assert!(e.validate().is_err());
        assert_eq!(profile_name_slices("3g.40gb"), Some(3));
        assert_eq!(profile_name_slices("3g40gb"), None);
        assert_eq!(profile_name_slices("1g.xgb"), None);
    }

    #[test]
    fn unsorted_starts_rejected() {
        let mut e = a30();
        e.profiles[0].allowed_starts = vec![1, 0];
        assert!(e.validate().is_err());
        e.profiles[0].allowed_starts = vec![];
        assert!(e.validate().is_err());
    }

    #[test]
    fn enable_mig_transitions() {
        let mut d = DeviceState::new(3, Arc::new(a30()));
        d.enable_mig().unwrap();
        assert!(d.mig_enabled);
        assert!(d.instances.is_empty());
        assert_eq!(d.enable_mig(), Err(DeviceError::AlreadyEnabled(3)));

        let mut m = DeviceState::new(4, Arc::new(a30()));
        m.set_mps(true).unwrap();
        assert!(matches!(m.enable_mig(), Err(DeviceError::ModeConflict { .. })));
    }

    #[test]
    fn seven_small_instances_then_full() {
        let mut d = device(a100_80gb());
        for expected in 0..7 {
            let id = d.create_gi("1g.10gb", None).unwrap();
            assert_eq!(d.instance(id).unwrap().start_slice, expected);
        }
        assert!(matches!(d.create_gi("1g.10gb", None), Err(DeviceError::NoCapacity { .. })));
    }

    #[test]
    fn four_and_three_cannot_coexist() {
        let mut d = device(a100_80gb());
        d.create_gi("4g.40gb", None).unwrap();
        assert!(matches!(d.create_gi("3g.40gb", None), Err(DeviceError::NoCapacity { .. })));
    }

    #[test]
    fn whole_gpu_blocks_everything() {
        let mut d = device(a100_80gb());
        let id = d.create_gi("7g.80gb", None).unwrap();
        assert_eq!(d.instance(id).unwrap().start_slice, 0);
        for p in ["1g.10gb", "2g.20gb", "3g.40gb", "4g.40gb", "7g.80gb"] {
            assert!(d.create_gi(p, None).is_err(), "{p}");
        }
    }

    #[test]
    fn explicit_start_checks() {
        let mut d = device(a100_80gb());
        assert!(matches!(
            d.create_gi("2g.20gb", Some(1)),
            Err(DeviceError::InvalidStart { .. })
        ));
        d.create_gi("2g.20gb", Some(2)).unwrap();
        assert!(matches!(
            d.create_gi("1g.10gb", Some(3)),
            Err(DeviceError::InvalidStart { .. })
        ));
        assert_eq!(
            d.create_gi("9g.90gb", None),
            Err(DeviceError::UnknownProfile("9g.90gb".into()))
        );
    }

    #[test]
    fn create_requires_mig() {
        let mut d = DeviceState::new(0, Arc::new(a30()));
        assert_eq!(d.create_gi("1g.6gb", None), Err(DeviceError::MigDisabled(0)));
    }

    #[test]
    fn destroy_and_recreate_lands_on_same_start() {
        let mut d = device(a100_80gb());
        let a = d.create_gi("2g.20gb", None).unwrap();
        let _b = d.create_gi("2g.20gb", None).unwrap();
        let start_a = d.instance(a).unwrap().start_slice;
        d.destroy_gi(a).unwrap();
        let c = d.create_gi("2g.20gb", None).unwrap();
        assert_eq!(d.instance(c).unwrap().start_slice, start_a);
    }

    #[test]
    fn destroy_errors() {
        let mut d = device(a30());
        let id = d.create_gi("4g.24gb", None).unwrap();
        assert!(matches!(d.destroy_gi(id + 10), Err(DeviceError::NotFound(_))));
        d.create_ci(id, 1).unwrap();
        assert!(matches!(d.destroy_gi(id), Err(DeviceError::Busy(_))));
    }

    #[test]
    fn destroy_only_gi_empties_device() {
        let mut d = device(a30());
        let id = d.create_gi("2g.12gb", None).unwrap();
        d.destroy_gi(id).unwrap();
        assert!(d.instances.is_empty());
    }

    #[test]
    fn compute_instance_capacity() {
        let mut d = device(a100_80gb());
        let gi = d.create_gi("4g.40gb", None).unwrap();
        d.create_ci(gi, 2).unwrap();
        d.create_ci(gi, 2).unwrap();
        assert!(matches!(d.create_ci(gi, 1), Err(DeviceError::NoCapacity { .. })));
        assert_eq!(d.create_ci(gi, 0), Err(DeviceError::ZeroSlices));
        let empty = d.create_gi("2g.20gb", None).unwrap();
        assert!(matches!(d.destroy_ci(empty, 1), Err(DeviceError::NotFound(_))));
    }

    #[test]
    fn mig_disable_requires_empty() {
        let mut d = device(a30());
        let id = d.create_gi("1g.6gb", None).unwrap();
        assert!(matches!(d.disable_mig(), Err(DeviceError::Busy(_))));
        d.destroy_gi(id).unwrap();
        d.disable_mig().unwrap();
        d.set_mps(true).unwrap();
        assert_eq!(d.sharing_mode, SharingMode::Mps);
        d.check_invariants().unwrap();
    }

    #[test]
    fn validate_config_examples() {
        let e = a100_80gb();
        let c = e.validate_config(&["4g.40gb", "3g.40gb"]).unwrap();
        assert!(!c.feasible);
        assert!(c.placement.is_none());

        let empty: [&str; 0] = [];
        let c = e.validate_config(&empty).unwrap();
        assert!(c.feasible);
        assert_eq!(c.placement, Some(vec![]));

        let c = e.validate_config(&["1g.10gb", "4g.40gb", "2g.20gb"]).unwrap();
        assert!(c.feasible);
        let starts: Vec<(String, u32)> = c
            .placement
            .unwrap()
            .into_iter()
            .map(|p| (p.profile, p.start))
            .collect();
        assert_eq!(
            starts,
            vec![
                ("1g.10gb".into(), 6),
                ("2g.20gb".into(), 4),
                ("4g.40gb".into(), 0)
            ]
        );

        assert_eq!(
            e.validate_config(&["5g.50gb"]),
            Err(DeviceError::UnknownProfile("5g.50gb".into()))
        );
    }

    #[test]
    fn single_profile_single_start_has_two_configs() {
        let e = DeviceCatalogEntry {
            model_name: "toy".into(),
            total_compute_slices: 2,
            total_memory_gib: 8,
            profiles: vec![GiProfile {
                name: "2g.8gb".into(),
                compute_slices: 2,
                memory_gib: 8,
                allowed_starts: vec![0],
                max_count: None,
                excludes: Vec::new(),
            }],
            perf_model: None,
        };
        let configs = e.enumerate_valid_configs();
        assert_eq!(configs, vec![vec![], vec![String::from("2g.8gb")]]);
    }

    #[test]
    fn max_count_is_enforced() {
        let mut e = a30();
        e.profiles[0].max_count = Some(2);
        assert!(!e.validate_config(&["1g.6gb", "1g.6gb", "1g.6gb"]).unwrap().feasible);
        let mut d = device(e);
        d.create_gi("1g.6gb", None).unwrap();
        d.create_gi("1g.6gb", None).unwrap();
        assert!(matches!(d.create_gi("1g.6gb", None), Err(DeviceError::NoCapacity { .. })));
    }
}
