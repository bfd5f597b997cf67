//! Great-circle distances and nearest-charger queries.

use thiserror::Error;

/// Mean Earth radius (IUGG), km.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} outside [-180, 180]")]
    Longitude(f64),
    #[error("radius {0} km must be non-negative")]
    Radius(f64),
}

pub fn check_coordinates(lat: f64, lon: f64) -> Result<(), GeoError> {
    if !(-90.0..=90.0).contains(&lat) {
        return Err(GeoError::Latitude(lat));
    }
    if !(-180.0..=180.0).contains(&lon) {
        return Err(GeoError::Longitude(lon));
    }
    Ok(())
}

/// Haversine distance in km between two points given in degrees.
pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> Result<f64, GeoError> {
    check_coordinates(lat1, lon1)?;
    check_coordinates(lat2, lon2)?;
    Ok(haversine_unchecked(lat1, lon1, lat2, lon2))
}

pub(crate) fn haversine_unchecked(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let phi1 = lat1.to_radians();
    let phi2 = lat2.to_radians();
    let dphi = (lat2 - lat1).to_radians();
    let dlambda = (lon2 - lon1).to_radians();
    let a = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

/// Lower bound on the distance between points at these latitudes, whatever
/// their longitudes.
fn latitude_gap_km(lat1: f64, lat2: f64) -> f64 {
    (lat1 - lat2).abs().to_radians() * EARTH_RADIUS_KM
}

// Slack that keeps the pruning bound strictly conservative under rounding.
const PRUNE_SLACK: f64 = 1e-9;

/// Positions sorted by latitude, for pruned scans.
#[derive(Debug, Clone, Default)]
pub(crate) struct LatitudeIndex {
    /// (latitude, longitude, id), ascending by latitude then id.
    points: Vec<(f64, f64, usize)>,
}

impl LatitudeIndex {
    pub(crate) fn new(coords: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let mut points: Vec<(f64, f64, usize)> = coords
            .into_iter()
            .enumerate()
            .map(|(id, (lat, lon))| (lat, lon, id))
            .collect();
        points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
        LatitudeIndex { points }
    }

    fn lower_bound(&self, lat: f64) -> usize {
        self.points.partition_point(|p| p.0 < lat)
    }

    /// Nearest point by haversine distance, ties broken by lowest id.
    pub(crate) fn nearest(&self, lat: f64, lon: f64) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        let better = |cand: (usize, f64), best: Option<(usize, f64)>| match best {
            None => true,
            Some((id, d)) => cand.1 < d || (cand.1 == d && cand.0 < id),
        };
        let within = |p: &(f64, f64, usize), best: Option<(usize, f64)>| match best {
            None => true,
            Some((_, d)) => latitude_gap_km(p.0, lat) <= d + PRUNE_SLACK,
        };
        let split = self.lower_bound(lat);
        let (mut up, mut down) = (split, split);
        loop {
            let up_ok = up < self.points.len() && within(&self.points[up], best);
            let down_ok = down > 0 && within(&self.points[down - 1], best);
            if !up_ok && !down_ok {
                break;
            }
            if up_ok {
                let p = &self.points[up];
                let cand = (p.2, haversine_unchecked(lat, lon, p.0, p.1));
                if better(cand, best) {
                    best = Some(cand);
                }
                up += 1;
            }
            if down_ok {
                let p = &self.points[down - 1];
                let cand = (p.2, haversine_unchecked(lat, lon, p.0, p.1));
                if better(cand, best) {
                    best = Some(cand);
                }
                down -= 1;
            }
        }
        best
    }

    /// Every point within `radius_km`, sorted by (distance, id).
    pub(crate) fn within(&self, lat: f64, lon: f64, radius_km: f64) -> Vec<(usize, f64)> {
        let span_deg = (radius_km + PRUNE_SLACK) / EARTH_RADIUS_KM * 180.0 / std::f64::consts::PI;
        let lo = self.lower_bound(lat - span_deg - 1e-9);
        let mut out: Vec<(usize, f64)> = self.points[lo..]
            .iter()
            .take_while(|p| p.0 <= lat + span_deg + 1e-9)
            .map(|p| (p.2, haversine_unchecked(lat, lon, p.0, p.1)))
            .filter(|&(_, d)| d <= radius_km)
            .collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent great-circle formula: atan2 form of the central angle
    /// from 3-D unit vectors.
    fn vector_oracle(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
        let v = |lat: f64, lon: f64| {
            let (p, l) = (lat.to_radians(), lon.to_radians());
            [p.cos() * l.cos(), p.cos() * l.sin(), p.sin()]
        };
        let (a, b) = (v(lat1, lon1), v(lat2, lon2));
        let cross = [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ];
        let sin = (cross[0].powi(2) + cross[1].powi(2) + cross[2].powi(2)).sqrt();
        let cos = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        EARTH_RADIUS_KM * sin.atan2(cos)
    }

    #[test]
    fn same_point_is_zero() {
        assert_eq!(haversine_km(48.7758, 9.1829, 48.7758, 9.1829).unwrap(), 0.0);
    }

    #[test]
    fn antipodal_equator() {
        let d = haversine_km(0.0, 0.0, 0.0, 180.0).unwrap();
        assert!((d - std::f64::consts::PI * EARTH_RADIUS_KM).abs() < 1e-9);
        assert!((d - 20015.1).abs() < 0.1);
    }

    #[test]
    fn stuttgart_munich_matches_vector_oracle() {
        let d = haversine_km(48.7758, 9.1829, 48.1374, 11.5755).unwrap();
        let oracle = vector_oracle(48.7758, 9.1829, 48.1374, 11.5755);
        assert!(((d - oracle) / oracle).abs() < 1e-6, "{d} vs {oracle}");
        assert!((d - 190.6).abs() < 1.0);
    }

    #[test]
    fn symmetric_and_domain_checked() {
        let a = haversine_km(10.0, 20.0, -30.0, 170.0).unwrap();
        let b = haversine_km(-30.0, 170.0, 10.0, 20.0).unwrap();
        assert_eq!(a, b);
        assert_eq!(haversine_km(91.0, 0.0, 0.0, 0.0), Err(GeoError::Latitude(91.0)));
        assert_eq!(haversine_km(0.0, 0.0, 0.0, -180.5), Err(GeoError::Longitude(-180.5)));
        assert!(haversine_km(f64::NAN, 0.0, 0.0, 0.0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn agrees_with_vector_oracle(
                lat1 in -89.0f64..89.0, lon1 in -180.0f64..180.0,
                lat2 in -89.0f64..89.0, lon2 in -180.0f64..180.0,
            ) {
                let d = haversine_km(lat1, lon1, lat2, lon2).unwrap();
                let o = vector_oracle(lat1, lon1, lat2, lon2);
                prop_assert!(d >= 0.0);
                prop_assert!((d - o).abs() <= 1e-6 * o.max(1.0));
            }

            #[test]
            fn latitude_gap_is_a_lower_bound(
                lat1 in -90.0f64..90.0, lon1 in -180.0f64..180.0,
                lat2 in -90.0f64..90.0, lon2 in -180.0f64..180.0,
            ) {
                let d = haversine_unchecked(lat1, lon1, lat2, lon2);
                prop_assert!(latitude_gap_km(lat1, lat2) <= d + PRUNE_SLACK);
            }
        }
    }
}
