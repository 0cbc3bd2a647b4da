//! Programmatic features and learned representations.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::exec::FailureKind;

/// First 64 bits of the SHA-256 of a feature's source text, hex encoded.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureId(String);

impl FeatureId {
    pub fn of_source(source: &str) -> Self {
        let digest = Sha256::digest(source.as_bytes());
        FeatureId(hex::encode(&digest[..8]))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for FeatureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainerKind {
    F2,
    Did3,
    Manual,
}

impl fmt::Display for TrainerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainerKind::F2 => "f2",
            TrainerKind::Did3 => "did3",
            TrainerKind::Manual => "manual",
        })
    }
}

/// Where a feature was proposed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Origin {
    pub trainer: TrainerKind,
    pub iteration: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leaf: Option<usize>,
}

impl Origin {
    pub fn manual() -> Self {
        Origin {
            trainer: TrainerKind::Manual,
            iteration: 0,
            leaf: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum FeatureStatus {
    Candidate,
    Validated,
    Rejected { reason: FailureKind, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub id: FeatureId,
    pub source: String,
    pub docstring: String,
    pub origin: Origin,
    pub status: FeatureStatus,
}

impl Feature {
    pub fn new(source: impl Into<String>, docstring: impl Into<String>, origin: Origin) -> Self {
        let source = source.into();
        Feature {
            id: FeatureId::of_source(&source),
            source,
            docstring: docstring.into(),
            origin,
            status: FeatureStatus::Candidate,
        }
    }

    pub fn is_validated(&self) -> bool {
        self.status == FeatureStatus::Validated
    }

    /// Docstring, or the id when the proposer gave none.
    pub fn label(&self) -> &str {
        if self.docstring.is_empty() {
            self.id.as_str()
        } else {
            &self.docstring
        }
    }
}

/// One trainer iteration, as recorded for inspection and checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceEntry {
    pub iteration: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leaf: Option<usize>,
    /// Scores of the exemplars shown to the proposer (F2) at proposal time.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exemplar_scores: Vec<(FeatureId, f64)>,
    pub proposed: Vec<FeatureId>,
    pub accepted: Vec<FeatureId>,
}

/// The output of a trainer: an ordered list of validated features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Representation {
    pub features: Vec<Feature>,
    pub provenance: Vec<ProvenanceEntry>,
    pub importances: BTreeMap<FeatureId, f64>,
}

impl Representation {
    pub fn feature_ids(&self) -> Vec<FeatureId> {
        self.features.iter().map(|f| f.id.clone()).collect()
    }

    pub fn get(&self, id: &FeatureId) -> Option<&Feature> {
        self.features.iter().find(|f| &f.id == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn id_depends_only_on_source() {
        let a = Feature::new("native:ink_fraction", "doc one", Origin::manual());
        let b = Feature::new("native:ink_fraction", "doc two", Origin::manual());
        let c = Feature::new("native:ink_fraction ", "doc one", Origin::manual());
        assert_eq!(a.id, b.id);
        assert_ne!(a.id, c.id);
        assert_eq!(a.id.as_str().len(), 16);
    }
}
