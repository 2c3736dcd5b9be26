//! Label schemas. A label's position in `labels()` is its class id.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const URC_LABELS: [&str; 8] = [
    "brick",
    "stucco",
    "rustication",
    "metal",
    "siding",
    "wood",
    "null",
    "other",
];

pub const HRP_LABELS: [&str; 3] = ["stone", "curtain_wall", "concrete_panels"];

/// Labels that may be isolated against `null` and `other`.
pub const LABELS_OF_INTEREST: [&str; 2] = ["stucco", "siding"];

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum SchemaKind {
    Urc,
    Hrp,
    /// `{null, other, X}` with X the label of interest.
    Reduced(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelSchema {
    kind: SchemaKind,
    labels: Vec<String>,
}

impl LabelSchema {
    pub fn urc() -> Self {
        LabelSchema {
            kind: SchemaKind::Urc,
            labels: URC_LABELS.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn hrp() -> Self {
        LabelSchema {
            kind: SchemaKind::Hrp,
            labels: HRP_LABELS.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn reduced(label_of_interest: &str) -> Result<Self> {
        if !LABELS_OF_INTEREST.contains(&label_of_interest) {
            return Err(Error::Invalid(format!(
                "label of interest must be one of {LABELS_OF_INTEREST:?}, got {label_of_interest:?}"
            )));
        }
        Ok(LabelSchema {
            kind: SchemaKind::Reduced(label_of_interest.to_string()),
            labels: vec![
                "null".to_string(),
                "other".to_string(),
                label_of_interest.to_string(),
            ],
        })
    }

    pub fn kind(&self) -> &SchemaKind {
        &self.kind
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index_of(label).is_some()
    }

    pub fn label_of_interest(&self) -> Option<&str> {
        match &self.kind {
            SchemaKind::Reduced(x) => Some(x),
            _ => None,
        }
    }

    /// Class id of `label`, or an `UnknownLabel` error.
    pub fn require(&self, label: &str) -> Result<usize> {
        self.index_of(label).ok_or_else(|| Error::UnknownLabel {
            label: label.to_string(),
            schema: self.to_string(),
        })
    }
}

impl fmt::Display for LabelSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            SchemaKind::Urc => f.write_str("URC"),
            SchemaKind::Hrp => f.write_str("HRP"),
            SchemaKind::Reduced(x) => write!(f, "REDUCED({x})"),
        }
    }
}

impl FromStr for LabelSchema {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "URC" => Ok(LabelSchema::urc()),
            "HRP" => Ok(LabelSchema::hrp()),
            other => {
                let inner = other
                    .strip_prefix("REDUCED(")
                    .and_then(|rest| rest.strip_suffix(')'))
                    .ok_or_else(|| Error::parse("schema", format!("unknown schema {other:?}")))?;
                LabelSchema::reduced(inner)
            }
        }
    }
}

impl Serialize for LabelSchema {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LabelSchema {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
