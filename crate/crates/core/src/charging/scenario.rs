//! Vehicle traffic against the charging-stations service, executed as a
//! deterministic discrete-event run that emits spans and ground-truth
//! utilization metrics.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::registry::{Registry, RegistryError};
use crate::engine::{Cloudlet, VmId};
use crate::mirror::{self, MirrorError, SpanFilter};
use crate::telemetry::{Span, SpanKind, TelemetryBundle, TelemetryError};
use crate::topology::{CalibrationConfig, ClusterSnapshot, NodeRole, NodeSpec, PodSpec, TopologyError};

pub const CHARGING_SERVICE: &str = "charging-stations";
pub const VEHICLE_SERVICE: &str = "vehicle-service";

pub const OP_COUNT: &str = "getChargerCount";
pub const OP_GET: &str = "getCharger";
pub const OP_CLOSEBY: &str = "getClosebyCharger";

/// Spacing of the background cloudlets that realize a base load.
pub const BASE_LOAD_PERIOD_US: u64 = 100_000;

const NOISE_SEED_SALT: u64 = 0x6e6f_6973_655f_7631;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("scenario file: {0}")]
    Parse(String),
    #[error("registry is empty but the scenario issues requests")]
    EmptyRegistry,
    #[error("no live {CHARGING_SERVICE} replica for a call at {at_us} us")]
    NoLiveReplica { at_us: u64 },
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Mirror(#[from] MirrorError),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
}

/// Share of vehicle ticks spent on each behavior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct CallMix {
    pub get_random_charger: f64,
    pub get_closeby_charger: f64,
}

/// Instruction cost of each operation, in MI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct OpCosts {
    pub count: f64,
    pub get: f64,
    /// Charged per registry row, as a linear scan would be.
    pub closeby_per_row: f64,
}

impl Default for OpCosts {
    fn default() -> Self {
        OpCosts {
            count: 10.0,
            get: 20.0,
            closeby_per_row: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Fault {
    pub replica_index: u32,
    pub kill_at_s: f64,
}

fn default_replicas() -> u32 {
    3
}

fn default_base_load() -> f64 {
    0.05
}

fn default_metric_step() -> u64 {
    1_000_000
}

fn default_start() -> u64 {
    1_700_000_000_000_000
}

fn default_vehicle_pods() -> u32 {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Scenario {
    pub vehicles: u32,
    pub period_s: f64,
    pub mix: CallMix,
    pub duration_s: f64,
    #[serde(default = "default_replicas")]
    pub replicas: u32,
    #[serde(default)]
    pub op_costs: OpCosts,
    #[serde(default = "default_base_load")]
    pub base_load: f64,
    #[serde(default)]
    pub faults: Vec<Fault>,
    pub rng_seed: u64,
    /// Half-width of the uniform noise added to observed utilization.
    #[serde(default)]
    pub noise: f64,
    #[serde(rename = "metricStepMicros", default = "default_metric_step")]
    pub metric_step_us: u64,
    #[serde(rename = "startMicros", default = "default_start")]
    pub start_us: u64,
    #[serde(default = "default_vehicle_pods")]
    pub vehicle_pods: u32,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    /// Cluster to run on; [`default_cluster`] when absent.
    #[serde(default)]
    pub cluster: Option<ClusterSnapshot>,
}

fn seconds_to_us(s: f64) -> u64 {
    (s * 1e6).round() as u64
}

impl Scenario {
    /// A fault-free scenario with default costs, cluster and calibration.
    pub fn new(vehicles: u32, period_s: f64, mix: CallMix, duration_s: f64, rng_seed: u64) -> Self {
        Scenario {
            vehicles,
            period_s,
            mix,
            duration_s,
            replicas: default_replicas(),
            op_costs: OpCosts::default(),
            base_load: default_base_load(),
            faults: Vec::new(),
            rng_seed,
            noise: 0.0,
            metric_step_us: default_metric_step(),
            start_us: default_start(),
            vehicle_pods: default_vehicle_pods(),
            calibration: CalibrationConfig::default(),
            cluster: None,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |msg: String| Err(ScenarioError::Invalid(msg));
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if self.vehicles == 0 {
            return invalid("vehicles must be positive".into());
        }
        if !positive(self.period_s) || seconds_to_us(self.period_s) == 0 {
            return invalid(format!("periodS {} must be at least 1 us", self.period_s));
        }
        if !positive(self.duration_s) || seconds_to_us(self.duration_s) == 0 {
            return invalid(format!("durationS {} must be at least 1 us", self.duration_s));
        }
        if self.replicas == 0 {
            return invalid("replicas must be positive".into());
        }
        let (r, c) = (self.mix.get_random_charger, self.mix.get_closeby_charger);
        if !(0.0..=1.0).contains(&r) || !(0.0..=1.0).contains(&c) || (r + c - 1.0).abs() > 1e-9 {
            return invalid(format!("mix fractions {r} and {c} must lie in [0, 1] and sum to 1"));
        }
        let costs = &self.op_costs;
        if !positive(costs.count) || !positive(costs.get) || !positive(costs.closeby_per_row) {
            return invalid("opCosts must be positive".into());
        }
        if !(0.0..1.0).contains(&self.base_load) {
            return invalid(format!("baseLoad {} must lie in [0, 1)", self.base_load));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return invalid(format!("noise {} must lie in [0, 1]", self.noise));
        }
        if self.metric_step_us == 0 {
            return invalid("metricStepMicros must be positive".into());
        }
        for f in &self.faults {
            if f.replica_index >= self.replicas {
                return invalid(format!("fault names replica {} of {}", f.replica_index, self.replicas));
            }
            if !(f.kill_at_s >= 0.0 && f.kill_at_s < self.duration_s) {
                return invalid(format!("killAtS {} must lie in [0, durationS)", f.kill_at_s));
            }
        }
        self.calibration.validate()?;
        Ok(())
    }

    /// The cluster the scenario runs on.
    pub fn snapshot(&self) -> Result<ClusterSnapshot, ScenarioError> {
        match &self.cluster {
            Some(c) => Ok(c.clone()),
            None => Ok(default_cluster(self.replicas, self.vehicle_pods, self.start_us)?),
        }
    }

    /// The same scenario with every fault removed.
    pub fn without_faults(&self) -> Scenario {
        Scenario {
            faults: Vec::new(),
            ..self.clone()
        }
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let scenario: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    scenario.validate()?;
    Ok(scenario)
}

/// An admin node hosting the vehicle pods plus one two-core worker per
/// charging-stations replica.
pub fn default_cluster(
    replicas: u32,
    vehicle_pods: u32,
    captured_at_us: u64,
) -> Result<ClusterSnapshot, TopologyError> {
    let mut nodes = vec![NodeSpec {
        name: "admin".into(),
        cpu_cores: 4,
        memory_mb: 8192,
        role: NodeRole::Admin,
        mips_per_core: None,
    }];
    let mut pods: Vec<PodSpec> = (0..vehicle_pods)
        .map(|k| PodSpec {
            name: format!("{VEHICLE_SERVICE}-{k}"),
            node: "admin".into(),
            service: VEHICLE_SERVICE.into(),
            replica_index: k,
        })
        .collect();
    for i in 0..replicas {
        let node = format!("worker-{}", i + 1);
        nodes.push(NodeSpec {
            name: node.clone(),
            cpu_cores: 2,
            memory_mb: 4096,
            role: NodeRole::Worker,
            mips_per_core: None,
        });
        pods.push(PodSpec {
            name: format!("{CHARGING_SERVICE}-{i}"),
            node,
            service: CHARGING_SERVICE.into(),
            replica_index: i,
        });
    }
    ClusterSnapshot::new(nodes, pods, captured_at_us)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    Tick { vehicle: u32 },
    Get { vehicle: u32, trace: u64, count: usize },
}

struct Replica<'a> {
    pod: &'a PodSpec,
    rate_mips: f64,
    kill_us: Option<u64>,
}

struct Dispatcher<'a> {
    replicas: Vec<Replica<'a>>,
    vehicle_pods: Vec<&'a PodSpec>,
    cursor: usize,
    next_span: u64,
    spans: Vec<Span>,
}

impl Dispatcher<'_> {
    /// Sends one call to the next live replica, recording a client span on
    /// the caller's pod and a server span on the replica. Returns the call's
    /// duration.
    fn dispatch(&mut self, at_us: u64, op: &str, cost_mi: f64, vehicle: u32, trace: u64) -> Result<u64, ScenarioError> {
        let busy_us = |rate: f64| ((cost_mi / rate * 1e6).ceil() as u64).max(1);
        let live: Vec<(usize, u64)> = self
            .replicas
            .iter()
            .enumerate()
            .map(|(i, r)| (i, busy_us(r.rate_mips)))
            .filter(|&(i, d)| self.replicas[i].kill_us.is_none_or(|k| at_us + d <= k))
            .collect();
        if live.is_empty() {
            return Err(ScenarioError::NoLiveReplica { at_us });
        }
        let (target, duration_us) = live[self.cursor % live.len()];
        self.cursor += 1;
        let pod = self.replicas[target].pod;
        let trace_id = format!("{trace:032x}");
        let parent = if self.vehicle_pods.is_empty() {
            None
        } else {
            let caller = self.vehicle_pods[vehicle as usize % self.vehicle_pods.len()];
            let id = format!("{:016x}", self.next_span);
            self.next_span += 1;
            self.spans.push(Span {
                trace_id: trace_id.clone(),
                span_id: id.clone(),
                parent_span_id: None,
                operation: op.into(),
                service_instance: caller.name.clone(),
                node: caller.node.clone(),
                start_us: at_us,
                duration_us,
                kind: SpanKind::Client,
            });
            Some(id)
        };
        self.spans.push(Span {
            trace_id,
            span_id: format!("{:016x}", self.next_span),
            parent_span_id: parent,
            operation: op.into(),
            service_instance: pod.name.clone(),
            node: pod.node.clone(),
            start_us: at_us,
            duration_us,
            kind: SpanKind::Server,
        });
        self.next_span += 1;
        Ok(duration_us)
    }
}

/// Runs the scenario on `snapshot` and returns the traces it produces
/// together with the utilization the cluster really exhibits: faults
/// applied and base load added.
pub fn run_scenario(
    registry: &Registry,
    snapshot: &ClusterSnapshot,
    scenario: &Scenario,
) -> Result<TelemetryBundle, ScenarioError> {
    scenario.validate()?;
    let calib = &scenario.calibration;
    if registry.charger_count() == 0 {
        return Err(ScenarioError::EmptyRegistry);
    }
    let bbox = registry.bounding_box().expect("non-empty registry");

    let mut kills: BTreeMap<u32, u64> = BTreeMap::new();
    for f in &scenario.faults {
        let at = scenario.start_us + seconds_to_us(f.kill_at_s);
        kills
            .entry(f.replica_index)
            .and_modify(|k| *k = (*k).min(at))
            .or_insert(at);
    }
    let replica_pods = snapshot.replicas(CHARGING_SERVICE);
    if replica_pods.len() != scenario.replicas as usize {
        return Err(ScenarioError::Invalid(format!(
            "cluster has {} {CHARGING_SERVICE} replicas, scenario expects {}",
            replica_pods.len(),
            scenario.replicas
        )));
    }
    for index in kills.keys() {
        if !replica_pods.iter().any(|p| p.replica_index == *index) {
            return Err(ScenarioError::Invalid(format!(
                "no {CHARGING_SERVICE} replica with index {index}"
            )));
        }
    }
    let replicas = replica_pods
        .into_iter()
        .map(|pod| {
            let node = snapshot.node(&pod.node).expect("snapshot invariants");
            Replica {
                pod,
                rate_mips: calib.node_mips(node) * calib.busy_fraction,
                kill_us: kills.get(&pod.replica_index).copied(),
            }
        })
        .collect();
    let mut dispatcher = Dispatcher {
        replicas,
        vehicle_pods: snapshot.replicas(VEHICLE_SERVICE),
        cursor: 0,
        next_span: 0,
        spans: Vec::new(),
    };

    let start = scenario.start_us;
    let end = start + seconds_to_us(scenario.duration_s);
    let period = seconds_to_us(scenario.period_s);
    let count = registry.charger_count();
    let closeby_cost = scenario.op_costs.closeby_per_row * count as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.rng_seed);
    let mut queue: BinaryHeap<Reverse<(u64, u64, Event)>> = BinaryHeap::new();
    let mut seq = 0u64;
    let mut push = |queue: &mut BinaryHeap<_>, at: u64, event: Event| {
        queue.push(Reverse((at, seq, event)));
        seq += 1;
    };
    for vehicle in 0..scenario.vehicles {
        let phase = (u128::from(vehicle) * u128::from(period) / u128::from(scenario.vehicles)) as u64;
        if start + phase < end {
            push(&mut queue, start + phase, Event::Tick { vehicle });
        }
    }
    let mut next_trace = 0u64;
    while let Some(Reverse((at, _, event))) = queue.pop() {
        match event {
            Event::Tick { vehicle } => {
                let trace = next_trace;
                next_trace += 1;
                if rng.gen::<f64>() < scenario.mix.get_random_charger {
                    let d = dispatcher.dispatch(at, OP_COUNT, scenario.op_costs.count, vehicle, trace)?;
                    push(&mut queue, at + d, Event::Get { vehicle, trace, count });
                } else {
                    let lat = rng.gen_range(bbox.min_lat..=bbox.max_lat);
                    let lon = rng.gen_range(bbox.min_lon..=bbox.max_lon);
                    registry.closest_charger(lat, lon)?;
                    dispatcher.dispatch(at, OP_CLOSEBY, closeby_cost, vehicle, trace)?;
                }
                if at + period < end {
                    push(&mut queue, at + period, Event::Tick { vehicle });
                }
            }
            Event::Get { vehicle, trace, count } => {
                let id = rng.gen_range(0..count);
                registry.get_charger(id as i64)?;
                dispatcher.dispatch(at, OP_GET, scenario.op_costs.get, vehicle, trace)?;
            }
        }
    }

    let spans = dispatcher.spans;
    let (mut cloudlets, epoch) = mirror::derive_cloudlets(&spans, snapshot, calib, SpanFilter::ServerSpansOnly)?;
    let epoch = if cloudlets.is_empty() { start } else { epoch };
    if scenario.base_load > 0.0 {
        let mut next_id = cloudlets.len() as u64;
        for (j, pod) in snapshot.pods().iter().enumerate() {
            let node = snapshot.node(&pod.node).expect("snapshot invariants");
            let capacity = calib.node_mips(node) * f64::from(calib.vm_cores_per_pod);
            let length = scenario.base_load * capacity * (BASE_LOAD_PERIOD_US as f64 / 1e6);
            let mut offset = 0;
            while epoch + offset < end {
                cloudlets.push(Cloudlet::new(next_id, VmId(j as u32), length, offset));
                next_id += 1;
                offset += BASE_LOAD_PERIOD_US;
            }
        }
    }
    let mut metrics = mirror::simulate_utilization(snapshot, calib, &cloudlets, epoch, scenario.metric_step_us, 0)?;
    if scenario.noise > 0.0 {
        let mut noise_rng = ChaCha8Rng::seed_from_u64(scenario.rng_seed ^ NOISE_SEED_SALT);
        for v in metrics.iter_mut().flat_map(|m| m.values.iter_mut()) {
            *v = (*v + noise_rng.gen_range(-scenario.noise..=scenario.noise)).clamp(0.0, 1.0);
        }
    }
    Ok(TelemetryBundle::new(spans, metrics, snapshot.clone())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charging::fixture::generate_fixture_csv;
    use crate::charging::registry::load_registry;

    fn registry() -> Registry {
        load_registry(&generate_fixture_csv(50, 1)).unwrap()
    }

    fn random_only() -> CallMix {
        CallMix {
            get_random_charger: 1.0,
            get_closeby_charger: 0.0,
        }
    }

    #[test]
    fn scenario_json_defaults() {
        let s = parse_scenario(
            r#"{"vehicles": 2, "periodS": 1.5, "durationS": 10, "rngSeed": 7,
                "mix": {"getRandomCharger": 0.5, "getClosebyCharger": 0.5}}"#,
        )
        .unwrap();
        assert_eq!(s.replicas, 3);
        assert_eq!(s.base_load, 0.05);
        assert_eq!(s.op_costs, OpCosts::default());
        assert!(s.faults.is_empty());
        assert!(parse_scenario(r#"{"vehicles": 2}"#).is_err());
    }

    #[test]
    fn rejects_bad_scenarios() {
        let base = Scenario::new(1, 1.0, random_only(), 10.0, 0);
        assert!(base.validate().is_ok());
        let mut s = base.clone();
        s.mix.get_closeby_charger = 0.5;
        assert!(s.validate().is_err());
        let mut s = base.clone();
        s.faults.push(Fault {
            replica_index: 0,
            kill_at_s: 10.0,
        });
        assert!(s.validate().is_err());
        let mut s = base.clone();
        s.faults.push(Fault {
            replica_index: 3,
            kill_at_s: 1.0,
        });
        assert!(s.validate().is_err());
        let mut s = base;
        s.vehicles = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn nine_equal_calls_split_three_ways() {
        // Nine vehicles, one closeby call each within a single period.
        let mut s = Scenario::new(
            9,
            10.0,
            CallMix {
                get_random_charger: 0.0,
                get_closeby_charger: 1.0,
            },
            10.0,
            1,
        );
        s.base_load = 0.0;
        let snap = s.snapshot().unwrap();
        let bundle = run_scenario(&registry(), &snap, &s).unwrap();
        let mut per: BTreeMap<&str, usize> = BTreeMap::new();
        for span in bundle.spans.iter().filter(|s| s.kind == SpanKind::Server) {
            *per.entry(span.service_instance.as_str()).or_default() += 1;
        }
        assert_eq!(per.values().copied().collect::<Vec<_>>(), vec![3, 3, 3]);
    }

    #[test]
    fn random_charger_issues_count_then_get() {
        let mut s = Scenario::new(1, 5.0, random_only(), 4.0, 3);
        s.vehicle_pods = 1;
        let snap = s.snapshot().unwrap();
        let bundle = run_scenario(&registry(), &snap, &s).unwrap();
        let server: Vec<&Span> = bundle.spans.iter().filter(|s| s.kind == SpanKind::Server).collect();
        assert_eq!(server.len(), 2);
        assert_eq!(server[0].operation, OP_COUNT);
        assert_eq!(server[1].operation, OP_GET);
        assert_eq!(server[1].start_us, server[0].end_us());
        assert_eq!(server[0].duration_us, 10_000);
        assert_eq!(server[0].trace_id, server[1].trace_id);
        assert_eq!(server[0].start_us, s.start_us);
        let clients = bundle.spans.iter().filter(|s| s.kind == SpanKind::Client).count();
        assert_eq!(clients, 2);
        assert!(server.iter().all(|s| s.parent_span_id.is_some()));
    }

    #[test]
    fn all_replicas_killed_is_an_error() {
        let mut s = Scenario::new(1, 1.0, random_only(), 10.0, 0);
        s.replicas = 1;
        s.faults.push(Fault {
            replica_index: 0,
            kill_at_s: 2.0,
        });
        let snap = s.snapshot().unwrap();
        assert!(matches!(
            run_scenario(&registry(), &snap, &s),
            Err(ScenarioError::NoLiveReplica { .. })
        ));
    }

    #[test]
    fn empty_registry_is_an_error() {
        let s = Scenario::new(1, 1.0, random_only(), 10.0, 0);
        let snap = s.snapshot().unwrap();
        assert!(matches!(
            run_scenario(&Registry::default(), &snap, &s),
            Err(ScenarioError::EmptyRegistry)
        ));
    }

    #[test]
    fn idle_cluster_shows_base_load() {
        let mut s = Scenario::new(1, 100.0, random_only(), 10.0, 0);
        s.base_load = 0.1;
        let snap = s.snapshot().unwrap();
        let bundle = run_scenario(&registry(), &snap, &s).unwrap();
        let vehicle = bundle
            .metrics
            .iter()
            .find(|m| m.subject == "vehicle-service-0")
            .unwrap();
        assert_eq!(vehicle.len(), 10);
        for v in &vehicle.values {
            assert!((v - 0.1).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn cluster_mismatch_is_rejected() {
        let mut s = Scenario::new(1, 1.0, random_only(), 10.0, 0);
        let snap = s.snapshot().unwrap();
        s.replicas = 2;
        assert!(matches!(
            run_scenario(&registry(), &snap, &s),
            Err(ScenarioError::Invalid(_))
        ));
    }
}
