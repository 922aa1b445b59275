//! Stored ANN packages: canonical notation plus metadata.

use serde::{Deserialize, Serialize};

use crate::ann::{self, NetworkSpec};
use crate::error::{Error, Result};
use crate::store::{Op, Store};
use crate::Id;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnPackage {
    pub id: Id,
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Canonical notation text.
    pub notation: String,
    pub input_count: usize,
    pub output_count: usize,
    /// Retired packages stay stored (with their efficacy log) but are never selected.
    #[serde(default)]
    pub retired: bool,
}

impl AnnPackage {
    pub fn network(&self) -> Result<NetworkSpec> {
        Ok(ann::decode_network(self.notation.as_bytes())?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Upload {
    pub package: AnnPackage,
    /// False when an identical package with the same name already existed.
    pub created: bool,
}

/// Decodes, re-encodes canonically and stores. Uploading the same name with
/// the same canonical bytes returns the existing package.
pub fn upload_ann(store: &Store, name: &str, description: &str, notation: &[u8]) -> Result<Upload> {
    let name = name.trim();
    if name.is_empty() {
        return Err(Error::invariant("ann name must not be empty"));
    }
    let net = ann::decode_network(notation)?;
    let canonical = ann::encode_network(&net)?;
    store.commit(|state| {
        if let Some(existing) = state.ann_by_name(name) {
            if existing.notation == canonical {
                return Ok((
                    Op::Noop,
                    Upload {
                        package: existing.clone(),
                        created: false,
                    },
                ));
            }
            return Err(Error::DuplicateName {
                kind: "ann",
                name: name.to_string(),
            });
        }
        let package = AnnPackage {
            id: state.next_id(),
            name: name.to_string(),
            description: description.to_string(),
            notation: canonical.clone(),
            input_count: net.input_count,
            output_count: net.output_count(),
            retired: false,
        };
        Ok((Op::PutAnn(package.clone()), Upload { package, created: true }))
    })
}

/// Flags a package so selection skips it. Returns false if already retired.
pub fn retire_ann(store: &Store, id: Id) -> Result<bool> {
    store.commit(|state| {
        let ann = state.ann(id).ok_or_else(|| Error::unknown("ann", id))?;
        if ann.retired {
            return Ok((Op::Noop, false));
        }
        Ok((Op::RetireAnn { id }, true))
    })
}
