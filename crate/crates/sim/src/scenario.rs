//! Scenario files: a world, where the units start, what they run and for how long.

use std::path::{Path, PathBuf};

use hivemind_core::geo::GeoPoint;
use hivemind_core::swarm::TaskScript;
use serde::{Deserialize, Serialize};

use crate::world::WorldSpec;
use crate::SimError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorRoute {
    pub sensor: String,
    pub channel: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotorRoute {
    pub motor: String,
    pub command: String,
    pub argument: String,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub offset: f64,
}

fn one() -> f64 {
    1.0
}

/// An adapter binding written with names instead of ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BindingRefs {
    pub detection_ann: String,
    pub response_ann: String,
    pub sensor_map: Vec<SensorRoute>,
    pub motor_map: Vec<MotorRoute>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitPlacement {
    /// Registered machine name.
    pub machine: String,
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub heading: f64,
    /// Start position is shifted by up to this much per axis, drawn from the run seed.
    #[serde(default)]
    pub jitter_m: f64,
    pub sensor_range: f64,
    pub fov: f64,
    /// Signed rotation per tick while searching.
    pub scan_rate: f64,
    /// Largest steering correction per tick.
    pub turn_rate: f64,
    /// Largest forward move per tick while following a goto step.
    #[serde(default = "default_speed")]
    pub speed_mm: f64,
    /// Concept name for each detection-network output.
    pub labels: Vec<String>,
    pub binding: BindingRefs,
}

fn default_speed() -> f64 {
    500.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    /// Reached when a unit is this close to any entity with this label.
    pub concept: String,
    pub within_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// Seed used when none is given on the command line.
    #[serde(default)]
    pub seed: u64,
    /// Seed files the scenario expects to be loaded, relative to the scenario file.
    #[serde(default)]
    pub seeds: Vec<String>,
    /// Geographic position of world coordinate (0, 0).
    pub origin: GeoPoint,
    pub world: WorldSpec,
    #[serde(default)]
    pub units: Vec<UnitPlacement>,
    pub script: TaskScript,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<Goal>,
    pub tick_budget: u64,
    /// Tick limit for `suggest_and_detect` steps.
    #[serde(default = "default_detect_ticks")]
    pub detect_ticks: u64,
}

fn default_detect_ticks() -> u64 {
    200
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        serde_json::from_str(text).map_err(|e| SimError::Scenario(format!("cannot parse scenario: {e}")))
    }

    /// Reads a scenario and returns it with the directory it came from.
    pub fn load(path: &Path) -> Result<(Self, PathBuf), SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Scenario(format!("cannot read {}: {e}", path.display())))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((Self::from_json(&text)?, dir))
    }

    pub fn seed_paths(&self, dir: &Path) -> Vec<PathBuf> {
        self.seeds.iter().map(|s| dir.join(s)).collect()
    }
}
