use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use hivemind_core::ann::CodecError;
use hivemind_core::Error;
use serde_json::json;

use crate::wire::ErrorBody;

/// Every code a response body can carry.
pub const ERROR_CODES: &[&str] = &[
    "bad_request",
    "not_found",
    "method_not_allowed",
    "internal",
    "unknown_entity",
    "duplicate_name",
    "duplicate_mapping",
    "self_mapping",
    "kind_target_mismatch",
    "invariant_violation",
    "empty_evidence",
    "bad_expand",
    "unknown_entity_type",
    "cursor_exhausted",
    "shape_mismatch",
    "no_implementation",
    "invalid_transition",
    "malformed_notation",
    "non_finite_value",
    "invalid_network",
    "invalid_train_config",
    "storage_failure",
];

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code: code.to_string(),
                message: message.into(),
                detail: None,
            },
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }
}

pub fn status_for(code: &str) -> StatusCode {
    match code {
        "unknown_entity" | "not_found" => StatusCode::NOT_FOUND,
        "duplicate_name" | "duplicate_mapping" | "invalid_transition" => StatusCode::CONFLICT,
        "method_not_allowed" => StatusCode::METHOD_NOT_ALLOWED,
        "storage_failure" | "internal" => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    }
}

fn detail(e: &Error) -> Option<serde_json::Value> {
    Some(match e {
        Error::UnknownEntity { kind, key } => json!({ "kind": kind, "key": key }),
        Error::DuplicateName { kind, name } => json!({ "kind": kind, "name": name }),
        Error::DuplicateMapping {
            source_id,
            kind,
            target,
        } => json!({ "source": source_id, "kind": kind, "target": target }),
        Error::UnknownExpansionPath(path) => json!({ "path": path }),
        Error::ShapeMismatch { part, .. } => json!({ "part": part }),
        Error::NoImplementation(concept) => json!({ "concept": concept }),
        Error::InvalidTransition { from, to } => json!({ "from": from, "to": to }),
        Error::Codec(CodecError::MalformedNotation { offset, expected }) => {
            json!({ "offset": offset, "expected": expected })
        }
        Error::Codec(CodecError::NonFiniteValue { offset }) => json!({ "offset": offset }),
        Error::Codec(CodecError::ShapeMismatch {
            layer,
            neuron,
            expected,
            found,
        }) => json!({ "layer": layer, "neuron": neuron, "expected": expected, "found": found }),
        Error::Codec(CodecError::InvalidNetwork(report)) => serde_json::to_value(report).ok()?,
        _ => return None,
    })
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let code = e.code();
        Self {
            status: status_for(code),
            body: ErrorBody {
                code: code.to_string(),
                message: e.to_string(),
                detail: detail(&e),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(code = %self.body.code, "{}", self.body.message);
        }
        crate::routes::json_response(self.status, &self.body)
    }
}
