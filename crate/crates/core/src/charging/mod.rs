//! The electric-vehicle charging use case: a charger registry, vehicle
//! clients calling a replicated charging-stations service, and ground-truth
//! telemetry for mirroring experiments.

pub mod fixture;
pub mod geo;
pub mod registry;
pub mod scenario;

pub use fixture::{generate_chargers, generate_fixture_csv, DEFAULT_FIXTURE_ROWS};
pub use geo::{haversine_km, GeoError, EARTH_RADIUS_KM};
pub use registry::{load_registry, write_registry_csv, Address, ChargePoint, Charger, Registry, RegistryError};
pub use scenario::{
    default_cluster, parse_scenario, run_scenario, CallMix, Fault, OpCosts, Scenario, ScenarioError, CHARGING_SERVICE,
    VEHICLE_SERVICE,
};
