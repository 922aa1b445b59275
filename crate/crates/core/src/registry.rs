//! Machines, their motors and sensors, and adapter bindings that wire
//! sensors to a detection network and a response network's outputs to
//! motor command arguments.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::GeoPoint;
use crate::store::{Op, State, Store};
use crate::Id;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArgType {
    Int8,
    Int16,
    Float32,
}

impl ArgType {
    pub fn size(self) -> usize {
        match self {
            ArgType::Int8 => 1,
            ArgType::Int16 => 2,
            ArgType::Float32 => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ArgType::Int8 => "int8",
            ArgType::Int16 => "int16",
            ArgType::Float32 => "float32",
        }
    }

    /// Saturates `raw` into the type's range (ties-to-even for the integer
    /// types) and writes it little-endian. NaN encodes as zero.
    pub fn encode(self, raw: f64) -> Vec<u8> {
        let raw = if raw.is_nan() { 0.0 } else { raw };
        match self {
            ArgType::Int8 => {
                let v = raw.clamp(i8::MIN as f64, i8::MAX as f64).round_ties_even() as i8;
                v.to_le_bytes().to_vec()
            }
            ArgType::Int16 => {
                let v = raw.clamp(i16::MIN as f64, i16::MAX as f64).round_ties_even() as i16;
                v.to_le_bytes().to_vec()
            }
            ArgType::Float32 => {
                let v = raw.clamp(-(f32::MAX as f64), f32::MAX as f64) as f32;
                v.to_le_bytes().to_vec()
            }
        }
    }

    /// Inverse of [`ArgType::encode`] for a correctly sized slot.
    pub fn decode(self, bytes: &[u8]) -> Option<f64> {
        match self {
            ArgType::Int8 => Some(i8::from_le_bytes(bytes.try_into().ok()?) as f64),
            ArgType::Int16 => Some(i16::from_le_bytes(bytes.try_into().ok()?) as f64),
            ArgType::Float32 => Some(f32::from_le_bytes(bytes.try_into().ok()?) as f64),
        }
    }
}

impl fmt::Display for ArgType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArgType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "int8" => Ok(ArgType::Int8),
            "int16" => Ok(ArgType::Int16),
            "float32" => Ok(ArgType::Float32),
            other => Err(Error::invariant(format!("unknown argument type {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Argument {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ArgType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Command {
    pub name: String,
    #[serde(default)]
    pub arguments: Vec<Argument>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Motor {
    pub id: Id,
    pub name: String,
    pub commands: Vec<Command>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Visual,
    Audio,
    Pressure,
    Other,
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "visual" => Ok(Modality::Visual),
            "audio" => Ok(Modality::Audio),
            "pressure" => Ok(Modality::Pressure),
            "other" => Ok(Modality::Other),
            other => Err(Error::invariant(format!("unknown sensor modality {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sensor {
    pub id: Id,
    pub name: String,
    pub modality: Modality,
    pub channel_count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Machine {
    pub id: Id,
    pub name: String,
    pub platform: String,
    pub location: GeoPoint,
    pub motors: Vec<Motor>,
    pub sensors: Vec<Sensor>,
}

impl Machine {
    pub fn motor(&self, id: Id) -> Option<&Motor> {
        self.motors.iter().find(|m| m.id == id)
    }

    pub fn motor_by_name(&self, name: &str) -> Option<&Motor> {
        self.motors.iter().find(|m| m.name == name)
    }

    pub fn sensor(&self, id: Id) -> Option<&Sensor> {
        self.sensors.iter().find(|s| s.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MotorDef {
    pub name: String,
    #[serde(default)]
    pub commands: Vec<Command>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorDef {
    pub name: String,
    pub modality: Modality,
    pub channel_count: u32,
}

/// Registration payload; ids are assigned by the store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineDef {
    pub name: String,
    #[serde(default)]
    pub platform: String,
    pub location: GeoPoint,
    #[serde(default)]
    pub motors: Vec<MotorDef>,
    #[serde(default)]
    pub sensors: Vec<SensorDef>,
}

fn unique<'a>(what: &str, names: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = BTreeSet::new();
    for n in names {
        if n.trim().is_empty() {
            return Err(Error::invariant(format!("{what} name must not be empty")));
        }
        if !seen.insert(n) {
            return Err(Error::invariant(format!("duplicate {what} name {n:?}")));
        }
    }
    Ok(())
}

impl MachineDef {
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::invariant("machine name must not be empty"));
        }
        self.location.validate()?;
        unique("motor", self.motors.iter().map(|m| m.name.as_str()))?;
        unique("sensor", self.sensors.iter().map(|s| s.name.as_str()))?;
        for motor in &self.motors {
            unique("command", motor.commands.iter().map(|c| c.name.as_str()))?;
            for c in &motor.commands {
                unique("argument", c.arguments.iter().map(|a| a.name.as_str()))?;
            }
        }
        if let Some(s) = self.sensors.iter().find(|s| s.channel_count == 0) {
            return Err(Error::invariant(format!(
                "sensor {:?} needs at least one channel",
                s.name
            )));
        }
        Ok(())
    }
}

pub fn register_machine(store: &Store, def: &MachineDef) -> Result<Machine> {
    def.validate()?;
    store.commit(|state| {
        if state.machine_by_name(&def.name).is_some() {
            return Err(Error::DuplicateName {
                kind: "machine",
                name: def.name.clone(),
            });
        }
        let mut next = state.next_id();
        let mut take = || {
            let id = next;
            next += 1;
            id
        };
        let id = take();
        let motors = def
            .motors
            .iter()
            .map(|m| Motor {
                id: take(),
                name: m.name.clone(),
                commands: m.commands.clone(),
            })
            .collect();
        let sensors = def
            .sensors
            .iter()
            .map(|s| Sensor {
                id: take(),
                name: s.name.clone(),
                modality: s.modality,
                channel_count: s.channel_count,
            })
            .collect();
        let machine = Machine {
            id,
            name: def.name.clone(),
            platform: def.platform.clone(),
            location: def.location,
            motors,
            sensors,
        };
        Ok((Op::RegisterMachine(machine.clone()), machine))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorChannel {
    pub sensor_id: Id,
    pub channel: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotorTargetSpec {
    pub motor_id: Id,
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

/// Binding request. `sensor_map[i]` feeds detection input `i`;
/// `motor_map[k]` receives response output `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BindingSpec {
    pub detection_ann: Id,
    pub response_ann: Id,
    pub sensor_map: Vec<SensorChannel>,
    pub motor_map: Vec<MotorTargetSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotorTarget {
    pub motor_id: Id,
    pub command: String,
    pub argument: String,
    #[serde(rename = "type")]
    pub ty: ArgType,
    pub scale: f64,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterBinding {
    pub id: Id,
    pub machine_id: Id,
    pub detection_ann: Id,
    pub response_ann: Id,
    pub sensor_map: Vec<SensorChannel>,
    pub motor_map: Vec<MotorTarget>,
    pub response_outputs: usize,
}

/// Validates the wiring against the machine and both networks and persists it.
pub fn bind_adapter(store: &Store, machine_id: Id, spec: &BindingSpec) -> Result<AdapterBinding> {
    store.commit(|state| {
        let binding = resolve_binding(state, machine_id, spec)?;
        Ok((Op::BindAdapter(binding.clone()), binding))
    })
}

fn resolve_binding(state: &State, machine_id: Id, spec: &BindingSpec) -> Result<AdapterBinding> {
    let machine = state
        .machine(machine_id)
        .ok_or_else(|| Error::unknown("machine", machine_id))?;
    let detection = state
        .ann(spec.detection_ann)
        .ok_or_else(|| Error::unknown("ann", spec.detection_ann))?;
    let response = state
        .ann(spec.response_ann)
        .ok_or_else(|| Error::unknown("ann", spec.response_ann))?;

    for sc in &spec.sensor_map {
        let sensor = machine
            .sensor(sc.sensor_id)
            .ok_or_else(|| Error::unknown("sensor", sc.sensor_id))?;
        if sc.channel >= sensor.channel_count {
            return Err(Error::ShapeMismatch {
                part: "sensor_map",
                detail: format!(
                    "sensor {} has {} channels, channel {} requested",
                    sensor.id, sensor.channel_count, sc.channel
                ),
            });
        }
    }
    if spec.sensor_map.len() != detection.input_count {
        return Err(Error::ShapeMismatch {
            part: "sensor_map",
            detail: format!(
                "{} sensor channels for a detection network with {} inputs",
                spec.sensor_map.len(),
                detection.input_count
            ),
        });
    }
    if detection.output_count != response.input_count {
        return Err(Error::ShapeMismatch {
            part: "detection_response",
            detail: format!(
                "detection network emits {} values, response network takes {}",
                detection.output_count, response.input_count
            ),
        });
    }
    if spec.motor_map.len() > response.output_count {
        return Err(Error::ShapeMismatch {
            part: "motor_map",
            detail: format!(
                "{} motor targets for a response network with {} outputs",
                spec.motor_map.len(),
                response.output_count
            ),
        });
    }
    let motor_map =
        spec.motor_map
            .iter()
            .map(|t| {
                let motor = machine
                    .motor(t.motor_id)
                    .ok_or_else(|| Error::unknown("motor", t.motor_id))?;
                let command = motor
                    .commands
                    .iter()
                    .find(|c| c.name == t.command)
                    .ok_or_else(|| Error::unknown("command", format!("{}.{}", motor.name, t.command)))?;
                let arg = command.arguments.iter().find(|a| a.name == t.argument).ok_or_else(|| {
                    Error::unknown("argument", format!("{}.{}.{}", motor.name, t.command, t.argument))
                })?;
                if !(t.scale.is_finite() && t.offset.is_finite()) {
                    return Err(Error::invariant("scale and offset must be finite"));
                }
                Ok(MotorTarget {
                    motor_id: t.motor_id,
                    command: t.command.clone(),
                    argument: t.argument.clone(),
                    ty: arg.ty,
                    scale: t.scale,
                    offset: t.offset,
                })
            })
            .collect::<Result<Vec<_>>>()?;

    Ok(AdapterBinding {
        id: state.next_id(),
        machine_id,
        detection_ann: spec.detection_ann,
        response_ann: spec.response_ann,
        sensor_map: spec.sensor_map.clone(),
        motor_map,
        response_outputs: response.output_count,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MotorCommand {
    pub motor_id: Id,
    pub command: String,
    pub argument: String,
    #[serde(rename = "type")]
    pub ty: ArgType,
    pub bytes: Vec<u8>,
}

impl MotorCommand {
    pub fn value(&self) -> f64 {
        self.ty.decode(&self.bytes).unwrap_or(0.0)
    }
}

/// Turns response-network outputs into argument bytes: for entry `k`,
/// `output[k] * scale + offset`, saturated into the argument type and
/// serialized little-endian.
pub fn encode_motor_command(binding: &AdapterBinding, response_output: &[f64]) -> Result<Vec<MotorCommand>> {
    if response_output.len() != binding.response_outputs {
        return Err(Error::ShapeMismatch {
            part: "response_output",
            detail: format!(
                "{} values for a response network with {} outputs",
                response_output.len(),
                binding.response_outputs
            ),
        });
    }
    Ok(binding
        .motor_map
        .iter()
        .zip(response_output)
        .map(|(t, y)| MotorCommand {
            motor_id: t.motor_id,
            command: t.command.clone(),
            argument: t.argument.clone(),
            ty: t.ty,
            bytes: t.ty.encode(y * t.scale + t.offset),
        })
        .collect())
}
