//! The charging-station registry: CSV ingestion and the query operations
//! the charging-stations service exposes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::geo::{self, GeoError, LatitudeIndex};

pub const CSV_HEADER: &str =
    "operator;street;house_number;zip;city;state;district;latitude;longitude;points;plug_types;power_kw";

const COLUMNS: usize = 12;

#[derive(Debug, Error, PartialEq)]
pub enum RegistryError {
    #[error("charger CSV header mismatch: expected {CSV_HEADER:?}")]
    Header,
    #[error("row {row}: {reason}")]
    Row { row: usize, reason: String },
    #[error("no charger with id {0}")]
    NotFound(i64),
    #[error("registry is empty")]
    Empty,
    #[error(transparent)]
    Geo(#[from] GeoError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Address {
    pub street: String,
    pub house_number: String,
    pub zip: String,
    pub city: String,
    pub state: String,
    pub district: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ChargePoint {
    pub plug_type: String,
    pub power_kw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Charger {
    /// Position in the registry.
    pub id: usize,
    pub operator: String,
    pub address: Address,
    pub latitude: f64,
    pub longitude: f64,
    pub charge_points: Vec<ChargePoint>,
}

/// Chargers held in load order; a charger's id is its position.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    chargers: Vec<Charger>,
    index: LatitudeIndex,
}

/// Lat/lon bounding box of a registry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
}

impl Registry {
    pub fn from_chargers(mut chargers: Vec<Charger>) -> Self {
        for (i, c) in chargers.iter_mut().enumerate() {
            c.id = i;
        }
        let index = LatitudeIndex::new(chargers.iter().map(|c| (c.latitude, c.longitude)));
        Registry { chargers, index }
    }

    pub fn chargers(&self) -> &[Charger] {
        &self.chargers
    }

    pub fn charger_count(&self) -> usize {
        self.chargers.len()
    }

    pub fn get_charger(&self, id: i64) -> Result<&Charger, RegistryError> {
        usize::try_from(id)
            .ok()
            .and_then(|i| self.chargers.get(i))
            .ok_or(RegistryError::NotFound(id))
    }

    /// Nearest charger by great-circle distance; ties go to the lowest id.
    pub fn closest_charger(&self, lat: f64, lon: f64) -> Result<(&Charger, f64), RegistryError> {
        geo::check_coordinates(lat, lon)?;
        let (id, d) = self.index.nearest(lat, lon).ok_or(RegistryError::Empty)?;
        Ok((&self.chargers[id], d))
    }

    /// Chargers within `radius_km`, sorted by distance then id.
    pub fn chargers_in_range(&self, lat: f64, lon: f64, radius_km: f64) -> Result<Vec<(&Charger, f64)>, RegistryError> {
        geo::check_coordinates(lat, lon)?;
        if radius_km.is_nan() || radius_km < 0.0 {
            return Err(GeoError::Radius(radius_km).into());
        }
        Ok(self
            .index
            .within(lat, lon, radius_km)
            .into_iter()
            .map(|(id, d)| (&self.chargers[id], d))
            .collect())
    }

    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let first = self.chargers.first()?;
        let init = BoundingBox {
            min_lat: first.latitude,
            max_lat: first.latitude,
            min_lon: first.longitude,
            max_lon: first.longitude,
        };
        Some(self.chargers.iter().fold(init, |b, c| BoundingBox {
            min_lat: b.min_lat.min(c.latitude),
            max_lat: b.max_lat.max(c.latitude),
            min_lon: b.min_lon.min(c.longitude),
            max_lon: b.max_lon.max(c.longitude),
        }))
    }
}

fn parse_row(row: usize, rec: &csv::StringRecord) -> Result<Charger, RegistryError> {
    let err = |reason: String| RegistryError::Row { row, reason };
    if rec.len() != COLUMNS {
        return Err(err(format!("expected {COLUMNS} fields, found {}", rec.len())));
    }
    let field = |i: usize| rec.get(i).unwrap_or("").trim();
    let coord = |i: usize, name: &str| -> Result<f64, RegistryError> {
        field(i)
            .parse::<f64>()
            .map_err(|_| err(format!("{name} {:?} is not a number", field(i))))
    };
    let latitude = coord(7, "latitude")?;
    let longitude = coord(8, "longitude")?;
    geo::check_coordinates(latitude, longitude).map_err(|e| err(e.to_string()))?;
    let points: usize = field(9)
        .parse()
        .map_err(|_| err(format!("points {:?} is not a count", field(9))))?;
    if points == 0 {
        return Err(err("a charger needs at least one charge point".into()));
    }
    let plugs: Vec<&str> = field(10).split(',').map(str::trim).collect();
    let powers: Vec<&str> = field(11).split(',').map(str::trim).collect();
    if plugs.len() != points || powers.len() != points {
        return Err(err(format!(
            "points = {points} but {} plug types and {} power values",
            plugs.len(),
            powers.len()
        )));
    }
    let charge_points = plugs
        .iter()
        .zip(&powers)
        .map(|(plug, power)| {
            let power_kw: f64 = power
                .parse()
                .map_err(|_| err(format!("power {power:?} is not a number")))?;
            if !(power_kw > 0.0 && power_kw.is_finite()) {
                return Err(err(format!("power {power_kw} kW must be positive")));
            }
            Ok(ChargePoint {
                plug_type: plug.to_string(),
                power_kw,
            })
        })
        .collect::<Result<Vec<_>, RegistryError>>()?;
    Ok(Charger {
        id: row - 1,
        operator: field(0).to_string(),
        address: Address {
            street: field(1).to_string(),
            house_number: field(2).to_string(),
            zip: field(3).to_string(),
            city: field(4).to_string(),
            state: field(5).to_string(),
            district: field(6).to_string(),
        },
        latitude,
        longitude,
        charge_points,
    })
}

/// Loads a registry from charger CSV text. Rows are numbered from 1 after
/// the header; any bad row fails the whole load, since skipping it would
/// shift every later id.
pub fn load_registry(text: &str) -> Result<Registry, RegistryError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b';')
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|_| RegistryError::Header)?;
    if header.iter().map(str::trim).collect::<Vec<_>>().join(";") != CSV_HEADER {
        return Err(RegistryError::Header);
    }
    let mut chargers = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| RegistryError::Row {
            row,
            reason: e.to_string(),
        })?;
        chargers.push(parse_row(row, &rec)?);
    }
    Ok(Registry::from_chargers(chargers))
}

/// Serializes chargers in the CSV schema accepted by [`load_registry`].
pub fn write_registry_csv(chargers: &[Charger]) -> String {
    let mut out = String::with_capacity(chargers.len() * 96 + CSV_HEADER.len() + 1);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for c in chargers {
        let plugs: Vec<&str> = c.charge_points.iter().map(|p| p.plug_type.as_str()).collect();
        let powers: Vec<String> = c.charge_points.iter().map(|p| p.power_kw.to_string()).collect();
        let a = &c.address;
        out.push_str(&format!(
            "{};{};{};{};{};{};{};{};{};{};{};{}\n",
            c.operator,
            a.street,
            a.house_number,
            a.zip,
            a.city,
            a.state,
            a.district,
            c.latitude,
            c.longitude,
            c.charge_points.len(),
            plugs.join(","),
            powers.join(",")
        ));
    }
    out
}
