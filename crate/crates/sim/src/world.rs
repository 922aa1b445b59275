//! The world itself: entities, units, sensing and motor semantics. No I/O.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use hivemind_core::ann::NetworkSpec;
use hivemind_core::geo::{GeoPoint, EARTH_RADIUS_M};
use hivemind_core::registry::{encode_motor_command, AdapterBinding, ArgType};
use hivemind_core::Id;
use serde::{Deserialize, Serialize};

use crate::SimError;

/// Outputs at or above this count as a detection.
pub const FIRE_LEVEL: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Bounds {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        (self.min_x..=self.max_x).contains(&x) && (self.min_y..=self.max_y).contains(&y)
    }

    pub fn clamp(&self, x: f64, y: f64) -> (f64, f64) {
        (x.clamp(self.min_x, self.max_x), y.clamp(self.min_y, self.max_y))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntitySpec {
    pub concept: String,
    pub x: f64,
    pub y: f64,
    pub features: Vec<f64>,
    /// Small things are only seen from up close. Unlimited when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visible_within: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub bounds: Bounds,
    pub feature_count: usize,
    #[serde(default)]
    pub entities: Vec<EntitySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldEntity {
    pub id: u64,
    /// Ground-truth label.
    pub concept: String,
    pub x: f64,
    pub y: f64,
    pub features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visible_within: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimUnit {
    pub machine_id: Id,
    pub x: f64,
    pub y: f64,
    /// Radians, counter-clockwise from +x.
    pub heading: f64,
    pub binding_id: Id,
    pub sensor_range: f64,
    /// Full field-of-view angle in radians.
    pub fov: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub seed: u64,
    pub tick: u64,
    pub bounds: Bounds,
    pub feature_count: usize,
    pub entities: Vec<WorldEntity>,
    pub units: Vec<SimUnit>,
}

/// How one unit's client turns sensor data into motion.
#[derive(Debug, Clone, PartialEq)]
pub struct Brain {
    pub binding: AdapterBinding,
    pub detection: NetworkSpec,
    pub response: NetworkSpec,
    /// Concept name for each detection output.
    pub labels: Vec<String>,
    /// Motor id to motor name; the name selects the motion semantics.
    pub motors: BTreeMap<Id, String>,
}

/// The nearest visible entity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sighting {
    pub entity: u64,
    pub distance: f64,
    /// Angle from the unit's heading to the entity, in (-pi, pi].
    pub bearing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub unit: Id,
    pub concept: String,
    pub confidence: f64,
    pub entity: Option<u64>,
    /// Whether the emitted concept is the sensed entity's true label.
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorldEvent {
    Detection(DetectionEvent),
    Command {
        unit: Id,
        motor: String,
        command: String,
        argument: String,
        value: f64,
    },
    Clamp {
        unit: Id,
        x: f64,
        y: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub tick: u64,
    pub events: Vec<WorldEvent>,
    pub sightings: Vec<Option<Sighting>>,
}

pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

fn check_finite(what: &str, values: &[f64]) -> Result<(), SimError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SimError::InvalidSpec(format!("{what} has a non-finite number")))
    }
}

/// Same `(spec, seed)` always yields the same world.
pub fn create_world(spec: &WorldSpec, seed: u64) -> Result<World, SimError> {
    let b = spec.bounds;
    check_finite("bounds", &[b.min_x, b.min_y, b.max_x, b.max_y])?;
    if !(b.min_x < b.max_x && b.min_y < b.max_y) {
        return Err(SimError::InvalidSpec("bounds are empty".into()));
    }
    let mut entities = Vec::with_capacity(spec.entities.len());
    for (i, e) in spec.entities.iter().enumerate() {
        let id = i as u64 + 1;
        check_finite(&format!("entity {id}"), &[e.x, e.y])?;
        check_finite(&format!("entity {id}"), &e.features)?;
        if !b.contains(e.x, e.y) {
            return Err(SimError::InvalidSpec(format!(
                "entity {id} ({}) lies outside the bounds",
                e.concept
            )));
        }
        if e.features.len() != spec.feature_count {
            return Err(SimError::InvalidSpec(format!(
                "entity {id} has {} features, the world uses {}",
                e.features.len(),
                spec.feature_count
            )));
        }
        if e.features.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(SimError::InvalidSpec(format!(
                "entity {id} has a feature outside [0, 1]"
            )));
        }
        if e.visible_within.is_some_and(|r| !(r.is_finite() && r >= 0.0)) {
            return Err(SimError::InvalidSpec(format!("entity {id} has a bad visibility range")));
        }
        entities.push(WorldEntity {
            id,
            concept: e.concept.clone(),
            x: e.x,
            y: e.y,
            features: e.features.clone(),
            visible_within: e.visible_within,
        });
    }
    Ok(World {
        seed,
        tick: 0,
        bounds: b,
        feature_count: spec.feature_count,
        entities,
        units: Vec::new(),
    })
}

impl World {
    pub fn place_unit(&mut self, unit: SimUnit) -> Result<usize, SimError> {
        check_finite("unit", &[unit.x, unit.y, unit.heading, unit.sensor_range, unit.fov])?;
        if !self.bounds.contains(unit.x, unit.y) {
            return Err(SimError::InvalidSpec(format!(
                "unit {} starts outside the bounds",
                unit.machine_id
            )));
        }
        if unit.sensor_range < 0.0 || unit.fov <= 0.0 {
            return Err(SimError::InvalidSpec(format!(
                "unit {} has a bad sensor",
                unit.machine_id
            )));
        }
        self.units.push(unit);
        Ok(self.units.len() - 1)
    }

    fn unit(&self, idx: usize) -> Result<&SimUnit, SimError> {
        self.units.get(idx).ok_or(SimError::UnknownUnit(idx))
    }

    /// Nearest entity in range and field of view; equal distances go to the lower id.
    pub fn sight(&self, idx: usize) -> Result<Option<Sighting>, SimError> {
        let u = self.unit(idx)?;
        let mut best: Option<Sighting> = None;
        for e in &self.entities {
            let (dx, dy) = (e.x - u.x, e.y - u.y);
            let distance = dx.hypot(dy);
            let reach = e.visible_within.map_or(u.sensor_range, |v| v.min(u.sensor_range));
            if distance > reach {
                continue;
            }
            let bearing = if distance == 0.0 {
                0.0
            } else {
                normalize_angle(dy.atan2(dx) - u.heading)
            };
            if bearing.abs() > u.fov / 2.0 {
                continue;
            }
            if best.is_none_or(|b| distance < b.distance) {
                best = Some(Sighting {
                    entity: e.id,
                    distance,
                    bearing,
                });
            }
        }
        Ok(best)
    }

    /// Detection-network input for a unit: the sighted entity's features routed
    /// through the binding's sensor map, or zeros when nothing is in view.
    pub fn sense(&self, idx: usize, binding: &AdapterBinding) -> Result<Vec<f64>, SimError> {
        let sighting = self.sight(idx)?;
        Ok(self.route(sighting, binding))
    }

    fn route(&self, sighting: Option<Sighting>, binding: &AdapterBinding) -> Vec<f64> {
        let features = sighting.map(|s| &self.entities[(s.entity - 1) as usize].features);
        binding
            .sensor_map
            .iter()
            .map(|c| features.and_then(|f| f.get(c.channel as usize)).copied().unwrap_or(0.0))
            .collect()
    }

    /// Applies one motor value: `drive` moves forward by millimetres,
    /// `turn` rotates by radians. Other motors have no effect on the world.
    pub fn actuate(&mut self, idx: usize, motor: &str, value: f64) -> Result<Option<WorldEvent>, SimError> {
        let bounds = self.bounds;
        let u = self.units.get_mut(idx).ok_or(SimError::UnknownUnit(idx))?;
        match motor {
            "drive" => {
                let d = value / 1000.0;
                let (x, y) = (u.x + d * u.heading.cos(), u.y + d * u.heading.sin());
                let (cx, cy) = bounds.clamp(x, y);
                u.x = cx;
                u.y = cy;
                if (cx, cy) != (x, y) {
                    return Ok(Some(WorldEvent::Clamp {
                        unit: u.machine_id,
                        x: cx,
                        y: cy,
                    }));
                }
            }
            "turn" => u.heading = normalize_angle(u.heading + value),
            _ => {}
        }
        Ok(None)
    }

    /// One detection-response cycle for every unit, then the tick advances.
    pub fn step(&mut self, brains: &[Brain]) -> Result<StepReport, SimError> {
        if brains.len() != self.units.len() {
            return Err(SimError::InvalidSpec(format!(
                "{} brains for {} units",
                brains.len(),
                self.units.len()
            )));
        }
        let mut events = Vec::new();
        let mut sightings = Vec::with_capacity(self.units.len());
        for (idx, brain) in brains.iter().enumerate() {
            let sighting = self.sight(idx)?;
            sightings.push(sighting);
            let input = self.route(sighting, &brain.binding);
            let detected = brain.detection.evaluate(&input)?;
            let Some(top) = argmax(&detected).filter(|&i| detected[i] >= FIRE_LEVEL) else {
                continue;
            };
            let unit = self.units[idx].machine_id;
            let concept = brain.labels.get(top).cloned().unwrap_or_else(|| format!("output{top}"));
            let truth = sighting.map(|s| &self.entities[(s.entity - 1) as usize].concept);
            events.push(WorldEvent::Detection(DetectionEvent {
                unit,
                success: truth == Some(&concept),
                concept,
                confidence: detected[top],
                entity: sighting.map(|s| s.entity),
            }));
            let response = brain.response.evaluate(&detected)?;
            for cmd in encode_motor_command(&brain.binding, &response)? {
                let motor = brain.motors.get(&cmd.motor_id).cloned().unwrap_or_default();
                let value = cmd.value();
                events.push(WorldEvent::Command {
                    unit,
                    motor: motor.clone(),
                    command: cmd.command,
                    argument: cmd.argument,
                    value,
                });
                events.extend(self.actuate(idx, &motor, value)?);
            }
        }
        self.tick += 1;
        Ok(StepReport {
            tick: self.tick,
            events,
            sightings,
        })
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if best.is_none_or(|b| *v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Round-trips a value through an argument's wire type.
pub fn quantize(ty: ArgType, value: f64) -> f64 {
    ty.decode(&ty.encode(value)).unwrap_or(0.0)
}

/// Metres east/north of an origin, on a local tangent plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalFrame {
    pub origin: GeoPoint,
}

impl LocalFrame {
    pub fn to_geo(&self, x: f64, y: f64) -> GeoPoint {
        let lat0 = self.origin.lat.to_radians();
        GeoPoint::new(
            self.origin.lat + (y / EARTH_RADIUS_M).to_degrees(),
            self.origin.lon + (x / (EARTH_RADIUS_M * lat0.cos())).to_degrees(),
            self.origin.alt,
        )
    }

    pub fn to_local(&self, p: &GeoPoint) -> (f64, f64) {
        let lat0 = self.origin.lat.to_radians();
        (
            (p.lon - self.origin.lon).to_radians() * EARTH_RADIUS_M * lat0.cos(),
            (p.lat - self.origin.lat).to_radians() * EARTH_RADIUS_M,
        )
    }
}
