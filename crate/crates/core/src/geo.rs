//! Great-circle helpers on WGS84 latitude/longitude.

use serde::{Deserialize, Serialize};

/// Mean Earth radius in meters (IUGG).
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }
}

/// Haversine distance in meters.
pub fn haversine_m(a: LatLon, b: LatLon) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Total great-circle length of a polyline.
pub fn polyline_length_m(vertices: &[LatLon]) -> f64 {
    vertices.windows(2).map(|w| haversine_m(w[0], w[1])).sum()
}

/// Point at `distance_m` along the polyline, measured by great-circle arc
/// length. Within a segment the position is interpolated linearly in
/// lat/lon, so the result always lies on the drawn polyline. Distances past
/// either end are clamped.
pub fn point_along(vertices: &[LatLon], distance_m: f64) -> LatLon {
    let first = vertices[0];
    if distance_m <= 0.0 {
        return first;
    }
    let mut remaining = distance_m;
    for w in vertices.windows(2) {
        let seg = haversine_m(w[0], w[1]);
        if seg > 0.0 && remaining <= seg {
            let t = remaining / seg;
            return LatLon::new(
                w[0].lat + t * (w[1].lat - w[0].lat),
                w[0].lon + t * (w[1].lon - w[0].lon),
            );
        }
        remaining -= seg;
    }
    *vertices.last().unwrap_or(&first)
}
