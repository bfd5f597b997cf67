//! Mirroring of a containerized cluster into a discrete-event simulation.
//!
//! A [`ClusterSnapshot`] and recorded spans become simulated hosts, VMs and
//! cloudlets; the simulated utilization is compared with what the cluster
//! really reported, and sustained gaps are flagged as anomalies. The
//! [`charging`] module supplies a complete workload to exercise all of it.

pub mod anomaly;
pub mod charging;
pub mod engine;
pub mod mirror;
pub mod telemetry;
pub mod topology;

pub use anomaly::{
    detect_deviations, AnomalyError, AnomalyInterval, CoverageGap, DeviationParams, DeviationReport, GapKind,
    SubjectDeviation,
};
pub use engine::{
    AllocationSlice, Cloudlet, CloudletId, CloudletRecord, EngineError, Host, HostId, SimResult, UtilizationInterval,
    Vm, VmId,
};
pub use mirror::{mirror_run, MirrorConfig, MirrorError, SpanDispatch, SpanFilter};
pub use telemetry::{Span, SpanKind, TelemetryBundle, TelemetryError, TimeSeries};
pub use topology::{
    build_datacenter, parse_snapshot, CalibrationConfig, ClusterSnapshot, Datacenter, NodeRole, NodeSpec, PodSpec,
    TopologyError,
};
