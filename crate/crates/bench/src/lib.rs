//! Workload builders shared by the benchmarks.

use cloudmirror::{Cloudlet, Host, HostId, Vm, VmId};

/// One host with `vms` single-core VMs and `per_vm` cloudlets on each,
/// arriving in a staggered pattern.
pub fn staggered_workload(vms: u32, per_vm: u64) -> (Vec<Host>, Vec<Vm>, Vec<Cloudlet>) {
    let hosts = vec![Host {
        id: HostId(0),
        cores: vms,
        mips_per_core: 1000.0,
        memory_mb: 1024 * u64::from(vms),
    }];
    let vm_list: Vec<Vm> = (0..vms)
        .map(|i| Vm {
            id: VmId(i),
            host_id: HostId(0),
            cores: 1,
            mips_per_core: 1000.0,
            memory_mb: 512,
        })
        .collect();
    let cloudlets = (0..u64::from(vms) * per_vm)
        .map(|i| {
            let vm = VmId((i % u64::from(vms)) as u32);
            let length = 5.0 + (i % 7) as f64 * 3.0;
            Cloudlet::new(i, vm, length, (i / u64::from(vms)) * 2_500)
        })
        .collect();
    (hosts, vm_list, cloudlets)
}
