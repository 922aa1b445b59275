//! Request and response bodies shared by the handlers and [`crate::ApiClient`].

use hivemind_core::ann::{NetworkSpec, Sample, TrainConfig};
use hivemind_core::geo::GeoPoint;
use hivemind_core::graph::{MappingKind, StrengthGrade};
use hivemind_core::interop::AnnPackage;
use hivemind_core::swarm::{AssignmentStatus, EfficacyRecord};
use hivemind_core::Id;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewConcept {
    pub name: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewMapping {
    pub kind: MappingKind,
    pub target: Id,
    pub strength: StrengthGrade,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Removed {
    pub removed: bool,
}

/// One entry of an inference ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub concept_id: Id,
    pub name: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptRef {
    pub id: Id,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Relevance {
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewAnn {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub notation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnUploaded {
    #[serde(flatten)]
    pub package: AnnPackage,
    pub created: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedAnn {
    pub package: AnnPackage,
    pub network: NetworkSpec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnMeta {
    pub name: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRequest {
    pub config: TrainConfig,
    pub dataset: Vec<Sample>,
    /// Stores the trained network under this name when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upload: Option<AnnMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub notation: String,
    pub epochs: usize,
    pub final_error: f64,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub package: Option<AnnPackage>,
}

/// A machine reporting whether a detection matched reality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub concept_id: Id,
    pub ann_id: Id,
    pub machine_id: Id,
    pub success: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficacyView {
    #[serde(flatten)]
    pub record: EfficacyRecord,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusUpdate {
    pub status: AssignmentStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionReport {
    pub machine_id: Id,
    pub location: GeoPoint,
    #[serde(default)]
    pub heading: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionSource {
    /// Last position a client reported.
    Telemetry,
    /// Registered location; nothing reported yet.
    Registry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitPosition {
    pub machine_id: Id,
    pub name: String,
    pub location: GeoPoint,
    pub heading: f64,
    pub source: PositionSource,
}

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<serde_json::Value>,
}
