//! Seeded synthetic charger registries in the CSV schema of
//! [`load_registry`](super::registry::load_registry).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::registry::{write_registry_csv, Address, ChargePoint, Charger};

pub const DEFAULT_FIXTURE_ROWS: usize = 500;

// Roughly the extent of Germany.
const LAT_RANGE: (f64, f64) = (47.27, 55.06);
const LON_RANGE: (f64, f64) = (5.87, 15.04);

const OPERATORS: &[&str] = &[
    "EnBW mobility+ AG und Co.KG",
    "Stadtwerke München GmbH",
    "E.ON Drive GmbH",
    "Allego GmbH",
    "Tesla Germany GmbH",
    "IONITY GmbH",
    "Stadtwerke Leipzig GmbH",
    "Mainova AG",
];

const CITIES: &[(&str, &str, &str)] = &[
    ("Stuttgart", "Baden-Württemberg", "Stuttgart"),
    ("München", "Bayern", "München"),
    ("Berlin", "Berlin", "Berlin"),
    ("Hamburg", "Hamburg", "Hamburg"),
    ("Köln", "Nordrhein-Westfalen", "Köln"),
    ("Leipzig", "Sachsen", "Leipzig"),
    ("Frankfurt am Main", "Hessen", "Frankfurt am Main"),
    ("Heilbronn", "Baden-Württemberg", "Heilbronn"),
];

const STREETS: &[&str] = &[
    "Hauptstraße",
    "Bahnhofstraße",
    "Schillerstraße",
    "Industriestraße",
    "Marktplatz",
];

const PLUGS: &[(&str, &[f64])] = &[
    ("Type2", &[11.0, 22.0]),
    ("CCS", &[50.0, 150.0, 300.0]),
    ("CHAdeMO", &[50.0]),
    ("Schuko", &[3.7]),
];

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Generates `rows` chargers. About one in twenty shares the exact
/// coordinates of an earlier charger, as double stations do in real
/// registries.
pub fn generate_chargers(rows: usize, seed: u64) -> Vec<Charger> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Charger> = Vec::with_capacity(rows);
    for id in 0..rows {
        let (latitude, longitude) = if id > 0 && rng.gen_bool(0.05) {
            let twin = &out[rng.gen_range(0..id)];
            (twin.latitude, twin.longitude)
        } else {
            (
                round6(rng.gen_range(LAT_RANGE.0..LAT_RANGE.1)),
                round6(rng.gen_range(LON_RANGE.0..LON_RANGE.1)),
            )
        };
        let &(city, state, district) = CITIES.choose(&mut rng).expect("non-empty");
        let points = rng.gen_range(1..=4);
        let charge_points = (0..points)
            .map(|_| {
                let &(plug, powers) = PLUGS.choose(&mut rng).expect("non-empty");
                ChargePoint {
                    plug_type: plug.to_string(),
                    power_kw: *powers.choose(&mut rng).expect("non-empty"),
                }
            })
            .collect();
        out.push(Charger {
            id,
            operator: OPERATORS.choose(&mut rng).expect("non-empty").to_string(),
            address: Address {
                street: STREETS.choose(&mut rng).expect("non-empty").to_string(),
                house_number: rng.gen_range(1..200).to_string(),
                zip: format!("{:05}", rng.gen_range(1067..99999)),
                city: city.to_string(),
                state: state.to_string(),
                district: district.to_string(),
            },
            latitude,
            longitude,
            charge_points,
        });
    }
    out
}

/// Generated chargers rendered as CSV text.
pub fn generate_fixture_csv(rows: usize, seed: u64) -> String {
    write_registry_csv(&generate_chargers(rows, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charging::registry::load_registry;

    #[test]
    fn loads_back_identically() {
        let chargers = generate_chargers(200, 3);
        let reg = load_registry(&write_registry_csv(&chargers)).unwrap();
        assert_eq!(reg.chargers(), chargers.as_slice());
    }

    #[test]
    fn seeded_and_has_duplicates() {
        assert_eq!(generate_fixture_csv(50, 9), generate_fixture_csv(50, 9));
        assert_ne!(generate_fixture_csv(50, 9), generate_fixture_csv(50, 10));
        let c = generate_chargers(DEFAULT_FIXTURE_ROWS, 1);
        let dupes = c
            .iter()
            .enumerate()
            .filter(|(i, a)| {
                c[..*i]
                    .iter()
                    .any(|b| b.latitude == a.latitude && b.longitude == a.longitude)
            })
            .count();
        assert!(dupes > 0);
    }
}
