use crate::ann::CodecError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown {kind}: {key}")]
    UnknownEntity { kind: &'static str, key: String },
    #[error("{kind} name already taken: {name}")]
    DuplicateName { kind: &'static str, name: String },
    #[error("mapping {source_id} -{kind}-> {target} already exists")]
    DuplicateMapping {
        source_id: u64,
        kind: &'static str,
        target: u64,
    },
    #[error("concept {0} cannot be mapped to itself")]
    SelfMapping(u64),
    #[error("{kind} mapping cannot target {target}")]
    KindTargetMismatch { kind: &'static str, target: u64 },
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("evidence is empty")]
    EmptyEvidence,
    #[error("unknown expansion path: {0}")]
    UnknownExpansionPath(String),
    #[error("unknown entity type: {0}")]
    UnknownEntityType(String),
    #[error("cursor is exhausted")]
    CursorExhausted,
    #[error("shape mismatch in {part}: {detail}")]
    ShapeMismatch { part: &'static str, detail: String },
    #[error("no implementation available for concept {0}")]
    NoImplementation(String),
    #[error("assignment cannot move from {from} to {to}")]
    InvalidTransition { from: &'static str, to: &'static str },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("storage failure: {0}")]
    StorageFailure(String),
}

impl Error {
    /// Stable machine-readable code shared by the HTTP layer and the CLI.
    pub fn code(&self) -> &'static str {
        match self {
            Error::UnknownEntity { .. } => "unknown_entity",
            Error::DuplicateName { .. } => "duplicate_name",
            Error::DuplicateMapping { .. } => "duplicate_mapping",
            Error::SelfMapping(_) => "self_mapping",
            Error::KindTargetMismatch { .. } => "kind_target_mismatch",
            Error::InvariantViolation(_) => "invariant_violation",
            Error::EmptyEvidence => "empty_evidence",
            Error::UnknownExpansionPath(_) => "bad_expand",
            Error::UnknownEntityType(_) => "unknown_entity_type",
            Error::CursorExhausted => "cursor_exhausted",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::NoImplementation(_) => "no_implementation",
            Error::InvalidTransition { .. } => "invalid_transition",
            Error::Codec(CodecError::MalformedNotation { .. }) => "malformed_notation",
            Error::Codec(CodecError::ShapeMismatch { .. }) => "shape_mismatch",
            Error::Codec(CodecError::NonFiniteValue { .. }) => "non_finite_value",
            Error::Codec(CodecError::InvalidNetwork(_)) => "invalid_network",
            Error::Codec(CodecError::InvalidTrainConfig(_) | CodecError::EmptyDataset) => "invalid_train_config",
            Error::StorageFailure(_) => "storage_failure",
        }
    }

    pub(crate) fn unknown(kind: &'static str, key: impl ToString) -> Self {
        Error::UnknownEntity {
            kind,
            key: key.to_string(),
        }
    }

    pub(crate) fn invariant(msg: impl Into<String>) -> Self {
        Error::InvariantViolation(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::StorageFailure(e.to_string())
    }
}
