//! Partition controller: owns device states, executes partition plans as
//! explicit destroy/create scripts and tracks workload bindings.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::device::{
    DeviceCatalogEntry, DeviceError, DeviceId, DeviceState, GiId, GpuInstance, SharingMode,
};
use crate::telemetry::RunId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanStrategy {
    #[default]
    Strict,
    BestEffort,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub device_id: DeviceId,
    pub target: Vec<String>,
    #[serde(default)]
    pub strategy: PlanStrategy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ReconfigStep {
    Destroy { gi_id: GiId, profile: String },
    Create { profile: String, start: u32, gi_id: GiId },
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReconfigurationScript {
    pub steps: Vec<ReconfigStep>,
    /// Requested instances dropped by the best-effort strategy.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped: Vec<String>,
}

impl ReconfigurationScript {
    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn destroys(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| matches!(s, ReconfigStep::Destroy { .. }))
            .count()
    }

    pub fn creates(&self) -> usize {
        self.steps.len() - self.destroys()
    }

    /// Re-executes the script on a copy of `state` with the device model's own
    /// operations.
    pub fn replay(&self, state: &DeviceState) -> Result<DeviceState, DeviceError> {
        let mut s = state.clone();
        if !self.steps.is_empty() && !s.mig_enabled {
            s.enable_mig()?;
        }
        for step in &self.steps {
            match step {
                ReconfigStep::Destroy { gi_id, .. } => {
                    let cis: Vec<_> = s
                        .instance(*gi_id)
                        .map(|gi| gi.compute_instances.iter().map(|c| c.ci_id).collect())
                        .unwrap_or_default();
                    for ci in cis {
                        s.destroy_ci(*gi_id, ci)?;
                    }
                    s.destroy_gi(*gi_id)?;
                }
                ReconfigStep::Create { profile, start, .. } => {
                    s.create_gi(profile, Some(*start))?;
                }
            }
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceRow {
    pub gi_id: GiId,
    pub profile: String,
    pub start: u32,
    pub compute_slices: u32,
    pub memory_gib: u32,
    pub compute_instances: usize,
    pub bound_workload: Option<RunId>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ControllerError {
    #[error("unknown device {0}")]
    UnknownDevice(DeviceId),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error("infeasible target [{}] on {model}: the placement rules admit no layout", target.join(","))]
    InfeasibleTarget { model: String, target: Vec<String> },
    #[error("GPU instances still bound to workloads: {}", describe_bound(bound))]
    BusyInstance { bound: Vec<(GiId, RunId)> },
    #[error("GPU instance {gi_id} is already bound to {run_id}")]
    AlreadyBound { gi_id: GiId, run_id: RunId },
    #[error("GPU instance {0} is not bound")]
    NotBound(GiId),
}

fn describe_bound(bound: &[(GiId, RunId)]) -> String {
    bound
        .iter()
        .map(|(gi, run)| alloc::format!("gi {gi} <- {run}"))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DeviceSlot {
    state: DeviceState,
    bindings: BTreeMap<GiId, RunId>,
}

/// Single-writer owner of every device's partition state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Controller {
    devices: BTreeMap<DeviceId, DeviceSlot>,
}

impl Controller {
    pub fn new() -> Self {
        Self::default()
    }

    /// One device per catalog entry, numbered in order.
    pub fn from_catalog(entries: &[DeviceCatalogEntry]) -> Self {
        let mut c = Controller::new();
        for e in entries {
            c.add_device(e.clone());
        }
        c
    }

    pub fn add_device(&mut self, entry: DeviceCatalogEntry) -> DeviceId {
        let id = self.devices.keys().next_back().map_or(0, |k| k + 1);
        self.devices.insert(
            id,
            DeviceSlot {
                state: DeviceState::new(id, Arc::new(entry)),
                bindings: BTreeMap::new(),
            },
        );
        id
    }

    pub fn device_ids(&self) -> impl Iterator<Item = DeviceId> + '_ {
        self.devices.keys().copied()
    }

    pub fn device(&self, id: DeviceId) -> Result<&DeviceState, ControllerError> {
        self.slot(id).map(|s| &s.state)
    }

    fn slot(&self, id: DeviceId) -> Result<&DeviceSlot, ControllerError> {
        self.devices.get(&id).ok_or(ControllerError::UnknownDevice(id))
    }

    fn slot_mut(&mut self, id: DeviceId) -> Result<&mut DeviceSlot, ControllerError> {
        self.devices.get_mut(&id).ok_or(ControllerError::UnknownDevice(id))
    }

    pub fn enable_mig(&mut self, device: DeviceId) -> Result<(), ControllerError> {
        Ok(self.slot_mut(device)?.state.enable_mig()?)
    }

    pub fn disable_mig(&mut self, device: DeviceId) -> Result<(), ControllerError> {
        Ok(self.slot_mut(device)?.state.disable_mig()?)
    }

    pub fn set_mps(&mut self, device: DeviceId, on: bool) -> Result<(), ControllerError> {
        Ok(self.slot_mut(device)?.state.set_mps(on)?)
    }

    pub fn create_gi(
        &mut self,
        device: DeviceId,
        profile: &str,
        start: Option<u32>,
    ) -> Result<GiId, ControllerError> {
        Ok(self.slot_mut(device)?.state.create_gi(profile, start)?)
    }

    pub fn destroy_gi(&mut self, device: DeviceId, gi_id: GiId) -> Result<(), ControllerError> {
        let slot = self.slot_mut(device)?;
        if slot.bindings.contains_key(&gi_id) {
            return Err(DeviceError::Busy(alloc::format!("GPU instance {gi_id} (bound workload)")).into());
        }
        Ok(slot.state.destroy_gi(gi_id)?)
    }

    pub fn create_ci(&mut self, device: DeviceId, gi_id: GiId, slices: u32) -> Result<u32, ControllerError> {
        Ok(self.slot_mut(device)?.state.create_ci(gi_id, slices)?)
    }

    pub fn destroy_ci(&mut self, device: DeviceId, gi_id: GiId, ci_id: u32) -> Result<(), ControllerError> {
        Ok(self.slot_mut(device)?.state.destroy_ci(gi_id, ci_id)?)
    }

    pub fn bind_workload(&mut self, device: DeviceId, gi_id: GiId, run: &RunId) -> Result<(), ControllerError> {
        let slot = self.slot_mut(device)?;
        if slot.state.instance(gi_id).is_none() {
            return Err(DeviceError::NotFound(alloc::format!("GPU instance {gi_id}")).into());
        }
        if let Some(existing) = slot.bindings.get(&gi_id) {
            return Err(ControllerError::AlreadyBound {
                gi_id,
                run_id: existing.clone(),
            });
        }
        slot.bindings.insert(gi_id, run.clone());
        Ok(())
    }

    pub fn unbind_workload(&mut self, device: DeviceId, gi_id: GiId) -> Result<RunId, ControllerError> {
        self.slot_mut(device)?
            .bindings
            .remove(&gi_id)
            .ok_or(ControllerError::NotBound(gi_id))
    }

    pub fn bound_workload(&self, device: DeviceId, gi_id: GiId) -> Option<&RunId> {
        self.devices.get(&device)?.bindings.get(&gi_id)
    }

    /// Read-only snapshot ordered by start slice.
    pub fn track_instances(&self, device: DeviceId) -> Result<Vec<InstanceRow>, ControllerError> {
        let slot = self.slot(device)?;
        let mut rows: Vec<InstanceRow> = slot
            .state
            .instances
            .iter()
            .map(|gi| InstanceRow {
                gi_id: gi.gi_id,
                profile: gi.profile.name.clone(),
                start: gi.start_slice,
                compute_slices: gi.profile.compute_slices,
                memory_gib: gi.profile.memory_gib,
                compute_instances: gi.compute_instances.len(),
                bound_workload: slot.bindings.get(&gi.gi_id).cloned(),
            })
            .collect();
        rows.sort_by_key(|r| r.start);
        Ok(rows)
    }

    /// Moves the device to the plan's target layout.
    ///
    /// Resident instances whose profile is still wanted are kept in place;
    /// the rest are destroyed and missing instances are created. When the
    /// kept layout would block the remaining creates, the largest keepable
    /// subset is kept instead. Bound instances are never destroyed.
    pub fn apply_plan(&mut self, plan: &PartitionPlan) -> Result<ReconfigurationScript, ControllerError> {
        let slot = self.slot(plan.device_id)?;
        let entry = slot.state.catalog_entry.clone();
        let (target, dropped) = resolve_target(&entry, &plan.target, plan.strategy)?;

        if slot.state.sharing_mode == SharingMode::Mps && !target.is_empty() {
            return Err(DeviceError::ModeConflict {
                device: plan.device_id,
                mode: SharingMode::Mps,
                reason: "partitioning requires MIG, which is exclusive with MPS",
            }
            .into());
        }

        let current: Vec<&GpuInstance> = slot.state.instances.iter().collect();
        let keep = choose_kept(&entry, &target, &current, &slot.bindings).ok_or_else(|| {
            ControllerError::BusyInstance {
                bound: slot
                    .bindings
                    .iter()
                    .map(|(g, r)| (*g, r.clone()))
                    .collect(),
            }
        })?;

        let mut steps = Vec::new();
        let mut kept_mask = 0u64;
        let mut remaining = target.clone();
        for (i, gi) in current.iter().enumerate() {
            if keep & (1 << i) != 0 {
                kept_mask |= crate::device::slice_mask(gi.start_slice, gi.profile.compute_slices);
                let pi = entry.profile_index(&gi.profile.name).expect("catalog profile");
                let at = remaining.iter().position(|&r| r == pi).expect("kept profile is targeted");
                remaining.remove(at);
            } else {
                steps.push(ReconfigStep::Destroy {
                    gi_id: gi.gi_id,
                    profile: gi.profile.name.clone(),
                });
            }
        }
        let starts = entry
            .place(&remaining, kept_mask)
            .expect("choose_kept guarantees a placement");

        let slot = self.slot_mut(plan.device_id)?;
        if !target.is_empty() && !slot.state.mig_enabled {
            slot.state.enable_mig()?;
        }
        for step in &steps {
            if let ReconfigStep::Destroy { gi_id, .. } = step {
                let cis: Vec<u32> = slot
                    .state
                    .instance(*gi_id)
                    .map(|gi| gi.compute_instances.iter().map(|c| c.ci_id).collect())
                    .unwrap_or_default();
                for ci in cis {
                    slot.state.destroy_ci(*gi_id, ci)?;
                }
                slot.state.destroy_gi(*gi_id)?;
            }
        }
        for (pi, start) in remaining.iter().zip(starts) {
            let profile = entry.profiles[*pi].name.clone();
            let gi_id = slot.state.create_gi(&profile, Some(start))?;
            steps.push(ReconfigStep::Create { profile, start, gi_id });
        }
        Ok(ReconfigurationScript {
            steps,
            dropped: dropped
                .into_iter()
                .map(|i| entry.profiles[i].name.clone())
                .collect(),
        })
    }
}

/// Resolves the target to sorted profile indices, applying the strategy.
/// Returns `(target, dropped)`.
fn resolve_target(
    entry: &DeviceCatalogEntry,
    requested: &[String],
    strategy: PlanStrategy,
) -> Result<(Vec<usize>, Vec<usize>), ControllerError> {
    let mut in_order = requested
        .iter()
        .map(|n| {
            entry
                .profile_index(n)
                .ok_or_else(|| DeviceError::UnknownProfile(n.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let sorted = |v: &[usize]| {
        let mut s = v.to_vec();
        s.sort_unstable();
        s
    };
    let mut dropped = Vec::new();
    loop {
        let t = sorted(&in_order);
        if entry.place(&t, 0).is_some() {
            dropped.reverse();
            return Ok((t, dropped));
        }
        match strategy {
            PlanStrategy::Strict => {
                return Err(ControllerError::InfeasibleTarget {
                    model: entry.model_name.clone(),
                    target: requested.to_vec(),
                })
            }
            PlanStrategy::BestEffort => {
                dropped.push(in_order.pop().expect("the empty target is always feasible"));
            }
        }
    }
}

/// Picks which resident instances survive, as a bitmask over `current`.
/// Prefers the largest kept set; among equals the first in mask order with
/// lower-start instances favoured. `None` when a bound instance must go.
fn choose_kept(
    entry: &DeviceCatalogEntry,
    target: &[usize],
    current: &[&GpuInstance],
    bindings: &BTreeMap<GiId, RunId>,
) -> Option<u64> {
    let n = current.len();
    let idx: Vec<usize> = current
        .iter()
        .map(|gi| entry.profile_index(&gi.profile.name).expect("catalog profile"))
        .collect();
    let mut want = BTreeMap::new();
    for &t in target {
        *want.entry(t).or_insert(0usize) += 1;
    }
    let candidates: Vec<usize> = (0..n).filter(|&i| want.contains_key(&idx[i])).collect();
    let mandatory: u64 = (0..n)
        .filter(|&i| bindings.contains_key(&current[i].gi_id))
        .fold(0, |m, i| m | (1 << i));
    if (0..n).any(|i| mandatory & (1 << i) != 0 && !want.contains_key(&idx[i])) {
        return None;
    }

    let feasible = |mask: u64| -> bool {
        let mut counts = BTreeMap::new();
        let mut occupied = 0u64;
        for i in 0..n {
            if mask & (1 << i) != 0 {
                *counts.entry(idx[i]).or_insert(0usize) += 1;
                occupied |= crate::device::slice_mask(current[i].start_slice, current[i].profile.compute_slices);
            }
        }
        if counts.iter().any(|(p, c)| want.get(p).is_none_or(|w| c > w)) {
            return false;
        }
        let mut rest = target.to_vec();
        for (p, c) in counts {
            for _ in 0..c {
                let at = rest.iter().position(|&r| r == p).expect("count checked");
                rest.remove(at);
            }
        }
        entry.place(&rest, occupied).is_some()
    };

    // Subsets of candidates, largest first; combinations visited in
    // lexicographic order of candidate position.
    let k = candidates.len();
    for size in (0..=k).rev() {
        let mut combo: Vec<usize> = (0..size).collect();
        loop {
            let mask = combo.iter().fold(0u64, |m, &c| m | (1 << candidates[c]));
            if mask & mandatory == mandatory && feasible(mask) {
                return Some(mask);
            }
            // next combination
            let mut i = size;
            let mut advanced = false;
            while i > 0 {
                i -= 1;
                if combo[i] < k - size + i {
                    combo[i] += 1;
                    for j in i + 1..size {
                        combo[j] = combo[j - 1] + 1;
                    }
                    advanced = true;
                    break;
                }
            }
            if !advanced {
                break;
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{a100_80gb, a30};
    use alloc::vec;

    fn ctl() -> Controller {
        Controller::from_catalog(&[a100_80gb(), a30()])
    }

    fn plan(device: DeviceId, target: &[&str]) -> PartitionPlan {
        PartitionPlan {
            device_id: device,
            target: target.iter().map(|s| s.to_string()).collect(),
            strategy: PlanStrategy::Strict,
        }
    }

    #[test]
    fn seven_way_split_from_empty() {
        let mut c = ctl();
        let script = c.apply_plan(&plan(0, &["1g.10gb"; 7])).unwrap();
        assert_eq!(script.creates(), 7);
        assert_eq!(script.destroys(), 0);
        let rows = c.track_instances(0).unwrap();
        assert_eq!(rows.iter().map(|r| r.start).collect::<Vec<_>>(), (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn fixpoint_gives_empty_script() {
        let mut c = ctl();
        c.apply_plan(&plan(0, &["4g.40gb", "2g.20gb"])).unwrap();
        let again = c.apply_plan(&plan(0, &["2g.20gb", "4g.40gb"])).unwrap();
        assert!(again.is_empty());
    }

    #[test]
    fn whole_gpu_to_three_way() {
        let mut c = ctl();
        c.apply_plan(&plan(0, &["7g.80gb"])).unwrap();
        let before = c.device(0).unwrap().clone();
        let script = c.apply_plan(&plan(0, &["4g.40gb", "2g.20gb", "1g.10gb"])).unwrap();
        assert_eq!((script.destroys(), script.creates()), (1, 3));
        let replayed = script.replay(&before).unwrap();
        assert!(replayed.same_layout(c.device(0).unwrap()));
        assert_eq!(
            c.device(0).unwrap().profile_multiset(),
            vec!["1g.10gb", "2g.20gb", "4g.40gb"]
        );
    }

    #[test]
    fn infeasible_strict_target() {
        let mut c = ctl();
        let err = c.apply_plan(&plan(0, &["4g.40gb", "3g.40gb"])).unwrap_err();
        assert!(matches!(err, ControllerError::InfeasibleTarget { .. }));
        assert!(err.to_string().contains("infeasible"));
        assert!(c.device(0).unwrap().instances.is_empty());
    }

    #[test]
    fn best_effort_drops_trailing_requests() {
        let mut c = ctl();
        let mut p = plan(0, &["4g.40gb", "2g.20gb", "3g.40gb", "1g.10gb"]);
        p.strategy = PlanStrategy::BestEffort;
        let script = c.apply_plan(&p).unwrap();
        // Dropping 1g.10gb still leaves {4g,3g}; both of the last two go.
        assert_eq!(script.dropped, vec!["3g.40gb", "1g.10gb"]);
        assert_eq!(c.device(0).unwrap().profile_multiset(), vec!["2g.20gb", "4g.40gb"]);
    }

    #[test]
    fn kept_instance_keeps_its_id() {
        let mut c = ctl();
        c.apply_plan(&plan(0, &["3g.40gb", "2g.20gb"])).unwrap();
        let rows = c.track_instances(0).unwrap();
        let keep = rows.iter().find(|r| r.profile == "3g.40gb").unwrap().clone();
        c.bind_workload(0, keep.gi_id, &RunId::from("r")).unwrap();
        let script = c.apply_plan(&plan(0, &["3g.40gb", "1g.10gb"])).unwrap();
        assert_eq!(script.destroys(), 1);
        assert!(c.device(0).unwrap().instance(keep.gi_id).is_some());
    }

    #[test]
    fn blocked_layout_is_rebuilt() {
        let mut c = ctl();
        c.enable_mig(0).unwrap();
        c.create_gi(0, "1g.10gb", Some(0)).unwrap();
        let before = c.device(0).unwrap().clone();
        // {1g, 3g, 3g} fits from scratch (3g@0, 3g@4, 1g@3) but not around 1g@0.
        let script = c.apply_plan(&plan(0, &["1g.10gb", "3g.40gb", "3g.40gb"])).unwrap();
        assert_eq!(script.destroys(), 1);
        assert!(script.replay(&before).unwrap().same_layout(c.device(0).unwrap()));
    }

    #[test]
    fn bound_instance_blocks_destroy() {
        let mut c = ctl();
        let gi = c.create_gi_after_enable();
        c.bind_workload(0, gi, &RunId::from("r1")).unwrap();
        assert!(matches!(c.destroy_gi(0, gi), Err(ControllerError::Device(DeviceError::Busy(_)))));
        assert!(matches!(
            c.bind_workload(0, gi, &RunId::from("r2")),
            Err(ControllerError::AlreadyBound { .. })
        ));
        let err = c.apply_plan(&plan(0, &["7g.80gb"])).unwrap_err();
        assert!(matches!(err, ControllerError::BusyInstance { ref bound } if bound.len() == 1));
        c.unbind_workload(0, gi).unwrap();
        assert_eq!(c.unbind_workload(0, gi), Err(ControllerError::NotBound(gi)));
        c.destroy_gi(0, gi).unwrap();
    }

    #[test]
    fn tracking_reports_bindings() {
        let mut c = ctl();
        assert!(c.track_instances(1).unwrap().is_empty());
        let gi = c.create_gi_after_enable();
        c.bind_workload(0, gi, &RunId::from("r9")).unwrap();
        let rows = c.track_instances(0).unwrap();
        assert_eq!(rows[0].bound_workload, Some(RunId::from("r9")));
        assert_eq!(c.track_instances(7), Err(ControllerError::UnknownDevice(7)));
    }

    #[test]
    fn plan_rejected_in_mps_mode() {
        let mut c = ctl();
        c.set_mps(1, true).unwrap();
        assert!(matches!(
            c.apply_plan(&plan(1, &["1g.6gb"])),
            Err(ControllerError::Device(DeviceError::ModeConflict { .. }))
        ));
    }

    #[test]
    fn destroy_with_compute_instances_via_plan() {
        let mut c = ctl();
        c.apply_plan(&plan(1, &["4g.24gb"])).unwrap();
        let gi = c.track_instances(1).unwrap()[0].gi_id;
        c.create_ci(1, gi, 2).unwrap();
        let script = c.apply_plan(&plan(1, &["1g.6gb"; 4])).unwrap();
        assert_eq!((script.destroys(), script.creates()), (1, 4));
    }

    impl Controller {
        fn create_gi_after_enable(&mut self) -> GiId {
            self.enable_mig(0).unwrap();
            self.create_gi(0, "2g.20gb", None).unwrap()
        }
    }
}
