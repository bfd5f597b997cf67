//! Mirroring: snapshot + traces -> configured simulation -> simulated
//! per-pod utilization series.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{self, Cloudlet, EngineError};
use crate::telemetry::{sort_spans, Span, SpanKind, TelemetryBundle, TimeSeries};
use crate::topology::{build_datacenter, CalibrationConfig, ClusterSnapshot, TopologyError};

#[derive(Debug, Error, PartialEq)]
pub enum MirrorError {
    #[error("span {span_id:?} ran on {instance:?}, which is not a pod of the snapshot")]
    UnmappedInstance { span_id: String, instance: String },
    #[error("bucket width must be positive")]
    ZeroBucket,
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanFilter {
    #[default]
    ServerSpansOnly,
    AllSpans,
}

impl SpanFilter {
    fn retains(self, span: &Span) -> bool {
        match self {
            SpanFilter::ServerSpansOnly => span.kind == SpanKind::Server,
            SpanFilter::AllSpans => true,
        }
    }
}

/// Which VM a replayed server span lands on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanDispatch {
    /// Round-robin over every replica of the span's service in the snapshot,
    /// in trace order. The simulation keeps executing the intended balancing
    /// even if the real system lost a replica.
    #[default]
    Balanced,
    /// The instance recorded in the span.
    Recorded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct MirrorConfig {
    pub calibration: CalibrationConfig,
    #[serde(rename = "bucketMicros")]
    pub bucket_us: u64,
    pub span_filter: SpanFilter,
    pub dispatch: SpanDispatch,
}

impl Default for MirrorConfig {
    fn default() -> Self {
        MirrorConfig {
            calibration: CalibrationConfig::default(),
            bucket_us: 1_000_000,
            span_filter: SpanFilter::default(),
            dispatch: SpanDispatch::default(),
        }
    }
}

/// Work in MI represented by `duration_us` of execution at `mips_per_core`.
pub fn span_work_mi(duration_us: u64, mips_per_core: f64, busy_fraction: f64) -> f64 {
    (duration_us as f64 / 1e6) * mips_per_core * busy_fraction
}

/// One cloudlet per retained span, with offsets from the earliest retained
/// start. VM `j` is pod `j` of the snapshot, matching
/// [`build_datacenter`]. Returns an empty list and epoch 0 when nothing is
/// retained.
pub fn derive_cloudlets(
    spans: &[Span],
    snapshot: &ClusterSnapshot,
    calib: &CalibrationConfig,
    filter: SpanFilter,
) -> Result<(Vec<Cloudlet>, u64), MirrorError> {
    let mut retained: Vec<&Span> = spans.iter().filter(|s| filter.retains(s)).collect();
    retained.sort_by(|a, b| a.start_us.cmp(&b.start_us).then_with(|| a.span_id.cmp(&b.span_id)));
    let Some(epoch) = retained.first().map(|s| s.start_us) else {
        return Ok((Vec::new(), 0));
    };
    let vm_of: BTreeMap<&str, (engine::VmId, f64)> = snapshot
        .pods()
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let node = snapshot.node(&p.node).expect("snapshot invariants");
            (p.name.as_str(), (engine::VmId(j as u32), calib.node_mips(node)))
        })
        .collect();
    let cloudlets = retained
        .iter()
        .enumerate()
        .map(|(i, span)| {
            let &(vm, mips) =
                vm_of
                    .get(span.service_instance.as_str())
                    .ok_or_else(|| MirrorError::UnmappedInstance {
                        span_id: span.span_id.clone(),
                        instance: span.service_instance.clone(),
                    })?;
            Ok(Cloudlet::new(
                i as u64,
                vm,
                span_work_mi(span.duration_us, mips, calib.busy_fraction),
                span.start_us - epoch,
            ))
        })
        .collect::<Result<Vec<_>, MirrorError>>()?;
    Ok((cloudlets, epoch))
}

/// Reassigns server spans round-robin across the replicas of their service,
/// in (start, span id) order. Client spans keep their recorded instance.
pub fn rebalance(spans: &[Span], snapshot: &ClusterSnapshot) -> Result<Vec<Span>, MirrorError> {
    let mut out = spans.to_vec();
    sort_spans(&mut out);
    let mut cursors: BTreeMap<String, usize> = BTreeMap::new();
    for span in out.iter_mut().filter(|s| s.kind == SpanKind::Server) {
        let pod = snapshot
            .pod(&span.service_instance)
            .ok_or_else(|| MirrorError::UnmappedInstance {
                span_id: span.span_id.clone(),
                instance: span.service_instance.clone(),
            })?;
        let replicas = snapshot.replicas(&pod.service);
        let cursor = cursors.entry(pod.service.clone()).or_default();
        let target = replicas[*cursor % replicas.len()];
        *cursor += 1;
        span.service_instance = target.name.clone();
        span.node = target.node.clone();
    }
    Ok(out)
}

/// Runs `cloudlets` on the datacenter mirrored from `snapshot` and buckets
/// every pod VM's utilization. Series start at `epoch_us` and cover at least
/// `horizon_us` past it.
pub fn simulate_utilization(
    snapshot: &ClusterSnapshot,
    calib: &CalibrationConfig,
    cloudlets: &[Cloudlet],
    epoch_us: u64,
    bucket_us: u64,
    horizon_us: u64,
) -> Result<Vec<TimeSeries>, MirrorError> {
    if bucket_us == 0 {
        return Err(MirrorError::ZeroBucket);
    }
    let dc = build_datacenter(snapshot, calib)?;
    let result = engine::run(&dc.hosts, &dc.vms, cloudlets)?;
    snapshot
        .pods()
        .iter()
        .map(|pod| {
            let vm = dc.pod_vms[&pod.name];
            let mut series = engine::utilization_series_until(&result, vm, bucket_us, horizon_us)?;
            series.subject = pod.name.clone();
            series.t0_us = epoch_us;
            Ok(series)
        })
        .collect()
}

/// The full mirroring pass over a bundle.
///
/// When the bundle carries observed metrics, the simulated series are
/// extended with idle buckets to cover them, so both sides can be compared
/// over the whole observation window.
pub fn mirror_run(bundle: &TelemetryBundle, config: &MirrorConfig) -> Result<Vec<TimeSeries>, MirrorError> {
    let spans = match config.dispatch {
        SpanDispatch::Balanced => rebalance(&bundle.spans, &bundle.snapshot)?,
        SpanDispatch::Recorded => bundle.spans.clone(),
    };
    let (cloudlets, derived_epoch) =
        derive_cloudlets(&spans, &bundle.snapshot, &config.calibration, config.span_filter)?;
    let epoch = if cloudlets.is_empty() {
        bundle.metrics.iter().map(|m| m.t0_us).min().unwrap_or(0)
    } else {
        derived_epoch
    };
    let horizon = bundle
        .metrics
        .iter()
        .map(|m| m.end_us().saturating_sub(epoch))
        .max()
        .unwrap_or(0);
    simulate_utilization(
        &bundle.snapshot,
        &config.calibration,
        &cloudlets,
        epoch,
        config.bucket_us,
        horizon,
    )
}
