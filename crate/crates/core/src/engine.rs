//! Discrete-event execution of cloudlets on VMs under processor sharing.
//!
//! Each VM splits its capacity (`cores * mips_per_core`) max-min fairly
//! among its active cloudlets; a cloudlet never receives more than
//! `required_cores * mips_per_core`. Allocations change only at arrival and
//! completion events, so the utilization profile is an exact step function
//! rather than a sampled approximation.
//!
//! Event times are integer microseconds. Remaining work is tracked in MI; a
//! cloudlet completes once its remaining work drops to
//! [`COMPLETION_EPSILON_MI`] or below, and completion instants are rounded up
//! to the next whole microsecond. At equal timestamps completions are handled
//! before arrivals, and arrivals are admitted in ascending cloudlet id.
//!
//! VMs share no state, so each VM is simulated independently.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telemetry::{StepMean, TimeSeries};

/// Remaining work at or below which a cloudlet counts as finished.
pub const COMPLETION_EPSILON_MI: f64 = 1e-6;

const MICROS_PER_SEC: f64 = 1e6;

macro_rules! id_type {
    ($name:ident, $inner:ty, $prefix:literal) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub $inner);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "-{}"), self.0)
            }
        }
    };
}

id_type!(HostId, u32, "host");
id_type!(VmId, u32, "vm");
id_type!(CloudletId, u64, "cloudlet");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Host {
    pub id: HostId,
    pub cores: u32,
    pub mips_per_core: f64,
    pub memory_mb: u64,
}

impl Host {
    pub fn capacity_mips(&self) -> f64 {
        self.cores as f64 * self.mips_per_core
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vm {
    pub id: VmId,
    pub host_id: HostId,
    pub cores: u32,
    pub mips_per_core: f64,
    pub memory_mb: u64,
}

impl Vm {
    pub fn capacity_mips(&self) -> f64 {
        self.cores as f64 * self.mips_per_core
    }
}

/// A unit of work submitted to a VM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cloudlet {
    pub id: CloudletId,
    pub length_mi: f64,
    pub required_cores: u32,
    pub start_offset_us: u64,
    pub vm_id: VmId,
}

impl Cloudlet {
    /// Single-core cloudlet.
    pub fn new(id: u64, vm_id: VmId, length_mi: f64, start_offset_us: u64) -> Self {
        Cloudlet {
            id: CloudletId(id),
            length_mi,
            required_cores: 1,
            start_offset_us,
            vm_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudletRecord {
    pub id: CloudletId,
    pub vm_id: VmId,
    pub arrival_us: u64,
    pub finish_us: u64,
}

/// Constant utilization over `[start_us, end_us)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilizationInterval {
    pub start_us: u64,
    pub end_us: u64,
    pub utilization: f64,
}

/// MIPS granted to each active cloudlet of a VM between two events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationSlice {
    pub vm_id: VmId,
    pub start_us: u64,
    pub end_us: u64,
    pub shares: Vec<(CloudletId, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    /// Latest completion instant; the epoch is 0.
    pub end_us: u64,
    /// Ordered by cloudlet id.
    pub cloudlets: Vec<CloudletRecord>,
    /// Contiguous profile per VM covering `[0, end_us)`.
    pub profiles: BTreeMap<VmId, Vec<UtilizationInterval>>,
    pub allocations: Vec<AllocationSlice>,
    capacities: BTreeMap<VmId, f64>,
}

impl SimResult {
    pub fn capacity_mips(&self, vm: VmId) -> Option<f64> {
        self.capacities.get(&vm).copied()
    }

    pub fn record(&self, id: CloudletId) -> Option<&CloudletRecord> {
        self.cloudlets
            .binary_search_by_key(&id, |r| r.id)
            .ok()
            .map(|i| &self.cloudlets[i])
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("placement error: {cloudlet} targets unknown {vm}")]
    UnknownVm { cloudlet: CloudletId, vm: VmId },
    #[error("configuration error: {vm} is placed on unknown {host}")]
    UnknownHost { vm: VmId, host: HostId },
    #[error("configuration error: {host} has {available} cores but its VMs request {requested}")]
    Overcommit {
        host: HostId,
        requested: u32,
        available: u32,
    },
    #[error("configuration error: {0}")]
    InvalidConfig(String),
    #[error("invalid {cloudlet}: {reason}")]
    InvalidCloudlet { cloudlet: CloudletId, reason: String },
    #[error("no such VM: {0}")]
    LookupVm(VmId),
    #[error("bucket width must be positive")]
    ZeroBucket,
}

fn validate(hosts: &[Host], vms: &[Vm], cloudlets: &[Cloudlet]) -> Result<(), EngineError> {
    let mut host_by_id = BTreeMap::new();
    for h in hosts {
        if h.cores == 0 || !(h.mips_per_core > 0.0 && h.mips_per_core.is_finite()) {
            return Err(EngineError::InvalidConfig(format!(
                "{} needs at least one core and a positive finite rating",
                h.id
            )));
        }
        if host_by_id.insert(h.id, h).is_some() {
            return Err(EngineError::InvalidConfig(format!("duplicate {}", h.id)));
        }
    }
    let mut used: BTreeMap<HostId, u32> = BTreeMap::new();
    let mut seen_vms = BTreeSet::new();
    for vm in vms {
        if !seen_vms.insert(vm.id) {
            return Err(EngineError::InvalidConfig(format!("duplicate {}", vm.id)));
        }
        let host = host_by_id.get(&vm.host_id).ok_or(EngineError::UnknownHost {
            vm: vm.id,
            host: vm.host_id,
        })?;
        if vm.cores == 0 || vm.mips_per_core.is_nan() || vm.mips_per_core <= 0.0 {
            return Err(EngineError::InvalidConfig(format!(
                "{} needs at least one core and a positive rating",
                vm.id
            )));
        }
        if vm.mips_per_core > host.mips_per_core {
            return Err(EngineError::InvalidConfig(format!(
                "{} rated {} MIPS/core exceeds {} at {}",
                vm.id, vm.mips_per_core, host.id, host.mips_per_core
            )));
        }
        let total = used.entry(vm.host_id).or_default();
        *total += vm.cores;
        if *total > host.cores {
            return Err(EngineError::Overcommit {
                host: host.id,
                requested: *total,
                available: host.cores,
            });
        }
    }
    let vm_cores: BTreeMap<VmId, u32> = vms.iter().map(|v| (v.id, v.cores)).collect();
    let mut seen = BTreeSet::new();
    for c in cloudlets {
        let cores = *vm_cores.get(&c.vm_id).ok_or(EngineError::UnknownVm {
            cloudlet: c.id,
            vm: c.vm_id,
        })?;
        let reason = if !seen.insert(c.id) {
            Some("duplicate id".to_string())
        } else if !(c.length_mi > 0.0 && c.length_mi.is_finite()) {
            Some(format!("length {} MI must be positive and finite", c.length_mi))
        } else if c.required_cores == 0 || c.required_cores > cores {
            Some(format!(
                "requires {} cores, VM {} has {}",
                c.required_cores, c.vm_id, cores
            ))
        } else {
            None
        };
        if let Some(reason) = reason {
            return Err(EngineError::InvalidCloudlet { cloudlet: c.id, reason });
        }
    }
    Ok(())
}

/// Max-min fair split of `capacity` among cloudlets capped at `caps[i]`.
/// Cloudlets with bitwise-equal caps always receive bitwise-equal shares.
fn fair_shares(capacity: f64, caps: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..caps.len()).collect();
    order.sort_by(|&a, &b| caps[a].total_cmp(&caps[b]));
    let mut shares = vec![0.0; caps.len()];
    let mut remaining = capacity;
    let mut left = caps.len();
    let mut i = 0;
    while i < order.len() {
        let cap = caps[order[i]];
        let group_end = order[i..]
            .iter()
            .position(|&j| caps[j] != cap)
            .map_or(order.len(), |p| i + p);
        if cap * left as f64 <= remaining {
            for &j in &order[i..group_end] {
                shares[j] = cap;
            }
            remaining -= cap * (group_end - i) as f64;
            left -= group_end - i;
            i = group_end;
        } else {
            let fair = remaining / left as f64;
            for &j in &order[i..] {
                shares[j] = fair;
            }
            break;
        }
    }
    shares
}

struct Active {
    idx: usize,
    remaining: f64,
    cap: f64,
}

struct VmOutcome {
    profile: Vec<UtilizationInterval>,
    allocations: Vec<AllocationSlice>,
    finishes: Vec<(usize, u64)>,
}

fn push_interval(profile: &mut Vec<UtilizationInterval>, start_us: u64, end_us: u64, utilization: f64) {
    if end_us <= start_us {
        return;
    }
    if let Some(last) = profile.last_mut() {
        if last.end_us == start_us && last.utilization.to_bits() == utilization.to_bits() {
            last.end_us = end_us;
            return;
        }
    }
    profile.push(UtilizationInterval {
        start_us,
        end_us,
        utilization,
    });
}

fn simulate_vm(vm: &Vm, cloudlets: &[Cloudlet], mut queue: Vec<usize>) -> VmOutcome {
    queue.sort_by_key(|&i| (cloudlets[i].start_offset_us, cloudlets[i].id));
    let capacity = vm.capacity_mips();
    let mut profile = Vec::new();
    let mut allocations = Vec::new();
    let mut finishes = Vec::with_capacity(queue.len());
    let mut active: Vec<Active> = Vec::new();
    let mut next = 0;
    let mut now = 0u64;

    loop {
        if active.is_empty() {
            let Some(&i) = queue.get(next) else { break };
            let arrival = cloudlets[i].start_offset_us;
            push_interval(&mut profile, now, arrival, 0.0);
            now = now.max(arrival);
        }
        while let Some(&i) = queue.get(next) {
            if cloudlets[i].start_offset_us > now {
                break;
            }
            let c = &cloudlets[i];
            active.push(Active {
                idx: i,
                remaining: c.length_mi,
                cap: c.required_cores.min(vm.cores) as f64 * vm.mips_per_core,
            });
            next += 1;
        }

        let caps: Vec<f64> = active.iter().map(|a| a.cap).collect();
        let shares = fair_shares(capacity, &caps);
        let to_completion = active
            .iter()
            .zip(&shares)
            .map(|(a, &mips)| {
                let per_us = mips / MICROS_PER_SEC;
                (((a.remaining - COMPLETION_EPSILON_MI) / per_us).ceil() as u64).max(1)
            })
            .min()
            .expect("active set is non-empty");
        let mut until = now + to_completion;
        if let Some(&i) = queue.get(next) {
            until = until.min(cloudlets[i].start_offset_us);
        }
        let dt = until - now;
        let dt_s = dt as f64 / MICROS_PER_SEC;

        let mut work = 0.0;
        for (a, &mips) in active.iter_mut().zip(&shares) {
            let done = mips * dt_s;
            let left = a.remaining - done;
            // A finishing cloudlet is credited with exactly what it had left.
            work += if left <= COMPLETION_EPSILON_MI {
                a.remaining
            } else {
                done
            };
            a.remaining = left;
        }
        push_interval(&mut profile, now, until, (work / (capacity * dt_s)).min(1.0));
        allocations.push(AllocationSlice {
            vm_id: vm.id,
            start_us: now,
            end_us: until,
            shares: active
                .iter()
                .zip(&shares)
                .map(|(a, &mips)| (cloudlets[a.idx].id, mips))
                .collect(),
        });
        now = until;

        active.retain(|a| {
            let done = a.remaining <= COMPLETION_EPSILON_MI;
            if done {
                finishes.push((a.idx, now));
            }
            !done
        });
    }

    VmOutcome {
        profile,
        allocations,
        finishes,
    }
}

/// Runs all cloudlets to completion.
pub fn run(hosts: &[Host], vms: &[Vm], cloudlets: &[Cloudlet]) -> Result<SimResult, EngineError> {
    validate(hosts, vms, cloudlets)?;

    let mut queues: BTreeMap<VmId, Vec<usize>> = vms.iter().map(|v| (v.id, Vec::new())).collect();
    for (i, c) in cloudlets.iter().enumerate() {
        queues.get_mut(&c.vm_id).expect("validated").push(i);
    }

    let mut finish = vec![0u64; cloudlets.len()];
    let mut profiles = BTreeMap::new();
    let mut allocations = Vec::new();
    for vm in vms {
        let queue = queues.remove(&vm.id).unwrap_or_default();
        let outcome = simulate_vm(vm, cloudlets, queue);
        for (i, t) in outcome.finishes {
            finish[i] = t;
        }
        profiles.insert(vm.id, outcome.profile);
        allocations.extend(outcome.allocations);
    }

    let end_us = finish.iter().copied().max().unwrap_or(0);
    for profile in profiles.values_mut() {
        let from = profile.last().map_or(0, |iv| iv.end_us);
        push_interval(profile, from, end_us, 0.0);
    }

    let mut records: Vec<CloudletRecord> = cloudlets
        .iter()
        .zip(&finish)
        .map(|(c, &finish_us)| CloudletRecord {
            id: c.id,
            vm_id: c.vm_id,
            arrival_us: c.start_offset_us,
            finish_us,
        })
        .collect();
    records.sort_by_key(|r| r.id);

    Ok(SimResult {
        end_us,
        cloudlets: records,
        profiles,
        allocations,
        capacities: vms.iter().map(|v| (v.id, v.capacity_mips())).collect(),
    })
}

/// Buckets a VM's utilization profile from the epoch to the end of the run.
pub fn utilization_series(result: &SimResult, vm: VmId, bucket_us: u64) -> Result<TimeSeries, EngineError> {
    utilization_series_until(result, vm, bucket_us, result.end_us)
}

/// Like [`utilization_series`] but covering at least `[0, horizon_us)`;
/// time beyond the profile counts as idle.
pub fn utilization_series_until(
    result: &SimResult,
    vm: VmId,
    bucket_us: u64,
    horizon_us: u64,
) -> Result<TimeSeries, EngineError> {
    if bucket_us == 0 {
        return Err(EngineError::ZeroBucket);
    }
    let profile = result.profiles.get(&vm).ok_or(EngineError::LookupVm(vm))?;
    let end = horizon_us.max(result.end_us);
    let buckets = end.div_ceil(bucket_us);
    let mut values = Vec::with_capacity(buckets as usize);
    let mut cursor = 0;
    for k in 0..buckets {
        let lo = k * bucket_us;
        let hi = lo + bucket_us;
        while cursor < profile.len() && profile[cursor].end_us <= lo {
            cursor += 1;
        }
        let mut acc = StepMean::default();
        for iv in profile[cursor..].iter().take_while(|iv| iv.start_us < hi) {
            acc.add(iv.utilization, hi.min(iv.end_us) - lo.max(iv.start_us));
        }
        values.push(acc.over(bucket_us));
    }
    Ok(TimeSeries::utilization(vm.to_string(), 0, bucket_us, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_vm(cores: u32, mips: f64) -> (Vec<Host>, Vec<Vm>) {
        (
            vec![Host {
                id: HostId(0),
                cores,
                mips_per_core: mips,
                memory_mb: 1024,
            }],
            vec![Vm {
                id: VmId(0),
                host_id: HostId(0),
                cores,
                mips_per_core: mips,
                memory_mb: 512,
            }],
        )
    }

    #[test]
    fn lone_cloudlet_runs_at_full_speed() {
        let (h, v) = one_vm(1, 1000.0);
        let r = run(&h, &v, &[Cloudlet::new(0, VmId(0), 1000.0, 0)]).unwrap();
        assert_eq!(r.cloudlets[0].finish_us, 1_000_000);
        assert_eq!(r.end_us, 1_000_000);
        assert_eq!(
            r.profiles[&VmId(0)],
            vec![UtilizationInterval {
                start_us: 0,
                end_us: 1_000_000,
                utilization: 1.0
            }]
        );
    }

    #[test]
    fn two_equal_cloudlets_share_the_processor() {
        // Hand schedule: both active on [0, 2 s) at 500 MIPS each; 1000 MI
        // at 500 MIPS takes exactly 2 s.
        let (h, v) = one_vm(1, 1000.0);
        let cl = [
            Cloudlet::new(0, VmId(0), 1000.0, 0),
            Cloudlet::new(1, VmId(0), 1000.0, 0),
        ];
        let r = run(&h, &v, &cl).unwrap();
        assert_eq!(r.cloudlets[0].finish_us, 2_000_000);
        assert_eq!(r.cloudlets[1].finish_us, 2_000_000);
        assert_eq!(r.allocations.len(), 1);
        assert_eq!(
            r.allocations[0].shares,
            vec![(CloudletId(0), 500.0), (CloudletId(1), 500.0)]
        );
        assert_eq!(r.profiles[&VmId(0)].len(), 1);
        assert_eq!(r.profiles[&VmId(0)][0].utilization, 1.0);
    }

    #[test]
    fn staggered_arrival_hand_schedule() {
        // A: 1000 MI at t=0, B: 500 MI at t=0.5 s on 1000 MIPS.
        // [0, .5): A alone, 500 MI done. [.5, 1.5): both at 500 MIPS, each
        // finishes its last 500 MI at 1.5 s.
        let (h, v) = one_vm(1, 1000.0);
        let cl = [
            Cloudlet::new(0, VmId(0), 1000.0, 0),
            Cloudlet::new(1, VmId(0), 500.0, 500_000),
        ];
        let r = run(&h, &v, &cl).unwrap();
        assert_eq!(r.cloudlets[0].finish_us, 1_500_000);
        assert_eq!(r.cloudlets[1].finish_us, 1_500_000);
    }

    #[test]
    fn empty_workload() {
        let (h, v) = one_vm(1, 1000.0);
        let r = run(&h, &v, &[]).unwrap();
        assert_eq!(r.end_us, 0);
        assert!(r.profiles[&VmId(0)].is_empty());
        assert!(utilization_series(&r, VmId(0), 1000).unwrap().values.is_empty());
    }

    #[test]
    fn idle_gap_before_late_arrival() {
        let (h, v) = one_vm(1, 1000.0);
        let r = run(&h, &v, &[Cloudlet::new(0, VmId(0), 500.0, 1_000_000)]).unwrap();
        assert_eq!(r.cloudlets[0].finish_us, 1_500_000);
        let p = &r.profiles[&VmId(0)];
        assert_eq!(
            p[0],
            UtilizationInterval {
                start_us: 0,
                end_us: 1_000_000,
                utilization: 0.0
            }
        );
        assert_eq!(p[1].utilization, 1.0);
    }

    #[test]
    fn multi_core_vm_caps_single_core_cloudlets() {
        // 2 cores x 1000 MIPS, one single-core cloudlet: capped at 1000 MIPS,
        // so utilization is one half.
        let (h, v) = one_vm(2, 1000.0);
        let r = run(&h, &v, &[Cloudlet::new(0, VmId(0), 1000.0, 0)]).unwrap();
        assert_eq!(r.cloudlets[0].finish_us, 1_000_000);
        assert_eq!(r.profiles[&VmId(0)][0].utilization, 0.5);
    }

    #[test]
    fn water_filling_redistributes_unused_capacity() {
        // 3 cores x 1000 MIPS. Caps 1000, 2000, 3000 -> fair share 1000 each.
        assert_eq!(fair_shares(3000.0, &[1000.0, 2000.0, 3000.0]), vec![1000.0; 3]);
        // Caps 500, 3000, 3000 on 3000 -> 500, 1250, 1250.
        assert_eq!(
            fair_shares(3000.0, &[3000.0, 500.0, 3000.0]),
            vec![1250.0, 500.0, 1250.0]
        );
    }

    #[test]
    fn completion_before_arrival_at_equal_time() {
        let (h, v) = one_vm(1, 1000.0);
        let cl = [
            Cloudlet::new(5, VmId(0), 1000.0, 0),
            Cloudlet::new(1, VmId(0), 1000.0, 1_000_000),
        ];
        let r = run(&h, &v, &cl).unwrap();
        assert_eq!(r.record(CloudletId(5)).unwrap().finish_us, 1_000_000);
        assert_eq!(r.record(CloudletId(1)).unwrap().finish_us, 2_000_000);
        // The second cloudlet never shares with the first.
        assert!(r.allocations.iter().all(|a| a.shares.len() == 1));
    }

    #[test]
    fn errors() {
        let (h, v) = one_vm(1, 1000.0);
        assert_eq!(
            run(&h, &v, &[Cloudlet::new(0, VmId(9), 1.0, 0)]),
            Err(EngineError::UnknownVm {
                cloudlet: CloudletId(0),
                vm: VmId(9)
            })
        );
        let mut two = v.clone();
        two.push(Vm {
            id: VmId(1),
            ..v[0].clone()
        });
        assert!(matches!(run(&h, &two, &[]), Err(EngineError::Overcommit { .. })));
        let mut orphan = v.clone();
        orphan[0].host_id = HostId(4);
        assert!(matches!(run(&h, &orphan, &[]), Err(EngineError::UnknownHost { .. })));
        let mut fast = v.clone();
        fast[0].mips_per_core = 2000.0;
        assert!(matches!(run(&h, &fast, &[]), Err(EngineError::InvalidConfig(_))));
        let mut wide = Cloudlet::new(0, VmId(0), 1.0, 0);
        wide.required_cores = 2;
        assert!(matches!(run(&h, &v, &[wide]), Err(EngineError::InvalidCloudlet { .. })));
        assert!(matches!(
            run(&h, &v, &[Cloudlet::new(0, VmId(0), 0.0, 0)]),
            Err(EngineError::InvalidCloudlet { .. })
        ));
    }

    #[test]
    fn series_examples() {
        let (h, v) = one_vm(1, 1000.0);
        let r = run(&h, &v, &[Cloudlet::new(0, VmId(0), 1000.0, 0)]).unwrap();
        assert_eq!(utilization_series(&r, VmId(0), 500_000).unwrap().values, vec![1.0, 1.0]);
        assert_eq!(
            utilization_series_until(&r, VmId(0), 1_000_000, 2_000_000)
                .unwrap()
                .values,
            vec![1.0, 0.0]
        );
        let r = run(&h, &v, &[Cloudlet::new(0, VmId(0), 1500.0, 0)]).unwrap();
        // Second bucket: 0.5 s busy out of 1 s, remainder padded idle.
        assert_eq!(
            utilization_series(&r, VmId(0), 1_000_000).unwrap().values,
            vec![1.0, 0.5]
        );
        assert_eq!(utilization_series(&r, VmId(3), 1), Err(EngineError::LookupVm(VmId(3))));
        assert_eq!(utilization_series(&r, VmId(0), 0), Err(EngineError::ZeroBucket));
    }
}
