//! Geographic points, haversine distance and great-circle waypoint plans.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
    #[serde(default)]
    pub alt: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64, alt: f64) -> Self {
        Self { lat, lon, alt }
    }

    pub fn validate(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.lat) {
            return Err(Error::invariant(format!("latitude {} outside [-90, 90]", self.lat)));
        }
        if !(-180.0..=180.0).contains(&self.lon) {
            return Err(Error::invariant(format!("longitude {} outside [-180, 180]", self.lon)));
        }
        if !self.alt.is_finite() {
            return Err(Error::invariant("altitude must be finite"));
        }
        Ok(())
    }
}

/// Great-circle distance in meters, ignoring altitude.
pub fn haversine_m(a: &GeoPoint, b: &GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

fn to_unit(p: &GeoPoint) -> [f64; 3] {
    let (lat, lon) = (p.lat.to_radians(), p.lon.to_radians());
    [lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()]
}

fn from_unit(v: [f64; 3], alt: f64) -> GeoPoint {
    let lat = v[2].clamp(-1.0, 1.0).asin().to_degrees();
    let lon = v[1].atan2(v[0]).to_degrees();
    GeoPoint { lat, lon, alt }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = dot(v, v).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Splits the great circle from `current` to `goal` into `ceil(d / step_m)`
/// equal segments and returns the segment end points. The start is not
/// included, the last waypoint is `goal` verbatim, and altitude is linearly
/// interpolated.
pub fn plan_goto(current: &GeoPoint, goal: &GeoPoint, step_m: f64) -> Result<Vec<GeoPoint>> {
    if !(step_m.is_finite() && step_m > 0.0) {
        return Err(Error::invariant("step must be positive"));
    }
    current.validate()?;
    goal.validate()?;
    let distance = haversine_m(current, goal);
    let segments = (distance / step_m).ceil() as usize;
    if segments <= 1 {
        return Ok(vec![*goal]);
    }

    let a = to_unit(current);
    let b = to_unit(goal);
    // Unit vector orthogonal to `a` in the plane of travel.
    let mut axis = cross(a, b);
    if dot(axis, axis) < 1e-24 {
        // Antipodal: every great circle works; pick one through a fixed pole.
        axis = cross(
            a,
            if a[2].abs() < 0.9 {
                [0.0, 0.0, 1.0]
            } else {
                [1.0, 0.0, 0.0]
            },
        );
    }
    let tangent = normalize(cross(normalize(axis), a));
    let angle = distance / EARTH_RADIUS_M;

    let mut waypoints = Vec::with_capacity(segments);
    for i in 1..segments {
        let f = i as f64 / segments as f64;
        let (s, c) = (angle * f).sin_cos();
        let v = [
            a[0] * c + tangent[0] * s,
            a[1] * c + tangent[1] * s,
            a[2] * c + tangent[2] * s,
        ];
        waypoints.push(from_unit(v, current.alt + (goal.alt - current.alt) * f));
    }
    waypoints.push(*goal);
    Ok(waypoints)
}
