//! Cluster snapshots (nodes and pod placements) and their mapping onto
//! simulation hosts and VMs.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Host, HostId, Vm, VmId};

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("malformed snapshot at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{item}: missing field `{field}`")]
    MissingField { item: String, field: &'static str },
    #[error("{item}: {reason}")]
    Invalid { item: String, reason: String },
    #[error("pod {pod:?} references unknown node {node:?}")]
    UnknownNode { pod: String, node: String },
    #[error("snapshot has no nodes")]
    NoNodes,
    #[error("node {node:?} hosts {pods} pods of {cores_per_pod} cores but has only {cores} cores")]
    Overcommit {
        node: String,
        pods: usize,
        cores_per_pod: u32,
        cores: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    Admin,
    Worker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NodeSpec {
    pub name: String,
    pub cpu_cores: u32,
    pub memory_mb: u64,
    pub role: NodeRole,
    /// Per-node override of the calibrated instruction rating.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mips_per_core: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PodSpec {
    pub name: String,
    pub node: String,
    pub service: String,
    pub replica_index: u32,
}

/// Validated cluster layout. Construct through [`ClusterSnapshot::new`] or
/// [`parse_snapshot`] so the cross-reference invariants hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSnapshot")]
pub struct ClusterSnapshot {
    nodes: Vec<NodeSpec>,
    pods: Vec<PodSpec>,
    #[serde(rename = "capturedAtMicros")]
    captured_at_us: u64,
}

impl ClusterSnapshot {
    pub fn new(nodes: Vec<NodeSpec>, pods: Vec<PodSpec>, captured_at_us: u64) -> Result<Self, TopologyError> {
        if nodes.is_empty() {
            return Err(TopologyError::NoNodes);
        }
        let mut names = BTreeSet::new();
        for node in &nodes {
            let invalid = |reason: &str| TopologyError::Invalid {
                item: format!("node {:?}", node.name),
                reason: reason.to_string(),
            };
            if !names.insert(node.name.as_str()) {
                return Err(invalid("duplicate node name"));
            }
            if node.cpu_cores == 0 {
                return Err(invalid("cpuCores must be at least 1"));
            }
            if node.memory_mb == 0 {
                return Err(invalid("memoryMb must be positive"));
            }
            if let Some(m) = node.mips_per_core {
                if !(m > 0.0 && m.is_finite()) {
                    return Err(invalid("mipsPerCore must be positive"));
                }
            }
        }
        let mut pod_names = BTreeSet::new();
        let mut replicas = BTreeSet::new();
        for pod in &pods {
            if !names.contains(pod.node.as_str()) {
                return Err(TopologyError::UnknownNode {
                    pod: pod.name.clone(),
                    node: pod.node.clone(),
                });
            }
            if !pod_names.insert(pod.name.as_str()) {
                return Err(TopologyError::Invalid {
                    item: format!("pod {:?}", pod.name),
                    reason: "duplicate pod name".into(),
                });
            }
            if !replicas.insert((pod.service.as_str(), pod.replica_index)) {
                return Err(TopologyError::Invalid {
                    item: format!("pod {:?}", pod.name),
                    reason: format!(
                        "replica {} of service {:?} appears twice",
                        pod.replica_index, pod.service
                    ),
                });
            }
        }
        Ok(ClusterSnapshot {
            nodes,
            pods,
            captured_at_us,
        })
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn pods(&self) -> &[PodSpec] {
        &self.pods
    }

    pub fn captured_at_us(&self) -> u64 {
        self.captured_at_us
    }

    pub fn node(&self, name: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn pod(&self, name: &str) -> Option<&PodSpec> {
        self.pods.iter().find(|p| p.name == name)
    }

    /// Pods of `service` ordered by replica index.
    pub fn replicas(&self, service: &str) -> Vec<&PodSpec> {
        let mut pods: Vec<&PodSpec> = self.pods.iter().filter(|p| p.service == service).collect();
        pods.sort_by_key(|p| p.replica_index);
        pods
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("snapshot serializes")
    }
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawNode {
    name: Option<String>,
    cpu_cores: Option<u32>,
    memory_mb: Option<u64>,
    role: Option<NodeRole>,
    mips_per_core: Option<f64>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawPod {
    name: Option<String>,
    node: Option<String>,
    service: Option<String>,
    replica_index: Option<u32>,
}

#[derive(Deserialize)]
struct RawSnapshot {
    nodes: Option<Vec<RawNode>>,
    #[serde(default)]
    pods: Vec<RawPod>,
    #[serde(rename = "capturedAtMicros")]
    captured_at_us: Option<u64>,
}

fn require<T>(value: Option<T>, item: impl Fn() -> String, field: &'static str) -> Result<T, TopologyError> {
    value.ok_or_else(|| TopologyError::MissingField { item: item(), field })
}

/// Parses and validates a snapshot document.
pub fn parse_snapshot(text: &str) -> Result<ClusterSnapshot, TopologyError> {
    let raw: RawSnapshot = serde_json::from_str(text).map_err(|e| TopologyError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    ClusterSnapshot::try_from(raw)
}

impl TryFrom<RawSnapshot> for ClusterSnapshot {
    type Error = TopologyError;

    fn try_from(raw: RawSnapshot) -> Result<Self, TopologyError> {
        let nodes = require(raw.nodes, || "snapshot".into(), "nodes")?
            .into_iter()
            .enumerate()
            .map(|(i, n)| {
                let name = require(n.name, || format!("node #{i}"), "name")?;
                let item = || format!("node {name:?}");
                Ok(NodeSpec {
                    cpu_cores: require(n.cpu_cores, item, "cpuCores")?,
                    memory_mb: require(n.memory_mb, item, "memoryMb")?,
                    role: require(n.role, item, "role")?,
                    mips_per_core: n.mips_per_core,
                    name,
                })
            })
            .collect::<Result<Vec<_>, TopologyError>>()?;
        let pods = raw
            .pods
            .into_iter()
            .enumerate()
            .map(|(i, p)| {
                let name = require(p.name, || format!("pod #{i}"), "name")?;
                let item = || format!("pod {name:?}");
                Ok(PodSpec {
                    node: require(p.node, item, "node")?,
                    service: require(p.service, item, "service")?,
                    replica_index: require(p.replica_index, item, "replicaIndex")?,
                    name,
                })
            })
            .collect::<Result<Vec<_>, TopologyError>>()?;
        let captured = require(raw.captured_at_us, || "snapshot".into(), "capturedAtMicros")?;
        ClusterSnapshot::new(nodes, pods, captured)
    }
}

/// Knobs for turning cluster capacities into simulation ratings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct CalibrationConfig {
    pub mips_per_core: f64,
    pub vm_cores_per_pod: u32,
    pub vm_memory_mb: u64,
    /// Fraction of a recorded span's duration spent executing.
    pub busy_fraction: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            mips_per_core: 1000.0,
            vm_cores_per_pod: 1,
            vm_memory_mb: 512,
            busy_fraction: 1.0,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<(), TopologyError> {
        let invalid = |reason: &str| {
            Err(TopologyError::Invalid {
                item: "calibration".into(),
                reason: reason.into(),
            })
        };
        if !(self.mips_per_core > 0.0 && self.mips_per_core.is_finite()) {
            return invalid("mipsPerCore must be positive");
        }
        if self.vm_cores_per_pod == 0 {
            return invalid("vmCoresPerPod must be at least 1");
        }
        if self.vm_memory_mb == 0 {
            return invalid("vmMemoryMb must be positive");
        }
        if !(self.busy_fraction > 0.0 && self.busy_fraction <= 1.0) {
            return invalid("busyFraction must lie in (0, 1]");
        }
        Ok(())
    }

    /// Instruction rating of `node`, honoring a per-node override.
    pub fn node_mips(&self, node: &NodeSpec) -> f64 {
        node.mips_per_core.unwrap_or(self.mips_per_core)
    }
}

/// Simulation elements mirrored from a snapshot. Host `i` is node `i`; VM
/// `j` is pod `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Datacenter {
    pub hosts: Vec<Host>,
    pub vms: Vec<Vm>,
    pub pod_vms: BTreeMap<String, VmId>,
}

pub fn build_datacenter(snapshot: &ClusterSnapshot, calib: &CalibrationConfig) -> Result<Datacenter, TopologyError> {
    calib.validate()?;
    let host_of: BTreeMap<&str, usize> = snapshot
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.name.as_str(), i))
        .collect();
    let mut per_node = vec![0usize; snapshot.nodes.len()];
    for pod in &snapshot.pods {
        per_node[host_of[pod.node.as_str()]] += 1;
    }
    for (node, &pods) in snapshot.nodes.iter().zip(&per_node) {
        if pods as u64 * calib.vm_cores_per_pod as u64 > node.cpu_cores as u64 {
            return Err(TopologyError::Overcommit {
                node: node.name.clone(),
                pods,
                cores_per_pod: calib.vm_cores_per_pod,
                cores: node.cpu_cores,
            });
        }
    }

    let hosts: Vec<Host> = snapshot
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| Host {
            id: HostId(i as u32),
            cores: n.cpu_cores,
            mips_per_core: calib.node_mips(n),
            memory_mb: n.memory_mb,
        })
        .collect();
    let mut pod_vms = BTreeMap::new();
    let vms = snapshot
        .pods
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let host = &hosts[host_of[p.node.as_str()]];
            let id = VmId(j as u32);
            pod_vms.insert(p.name.clone(), id);
            Vm {
                id,
                host_id: host.id,
                cores: calib.vm_cores_per_pod,
                mips_per_core: host.mips_per_core,
                memory_mb: calib.vm_memory_mb,
            }
        })
        .collect();
    Ok(Datacenter { hosts, vms, pod_vms })
}
