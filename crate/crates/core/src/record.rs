use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SYNTHETIC_SIZE: u32 = 512;
pub const MANUAL_WIDTH: u32 = 400;
pub const MANUAL_HEIGHT: u32 = 600;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Manual,
    Synthetic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewStatus {
    Pending,
    Accepted,
    Rejected,
}

macro_rules! str_enum {
    ($ty:ident { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self {
                    $($ty::$variant => $name),+
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    other => Err(Error::parse(stringify!($ty), format!("unknown value {other:?}"))),
                }
            }
        }
    };
}

str_enum!(Provenance { Manual => "manual", Synthetic => "synthetic" });
str_enum!(ReviewStatus { Pending => "pending", Accepted => "accepted", Rejected => "rejected" });

/// One image together with its label, provenance and review state.
///
/// `path` is relative to the image store root.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub path: String,
    pub width: u32,
    pub height: u32,
    pub label: String,
    pub provenance: Provenance,
    pub prompt_id: Option<String>,
    pub city_keyword: Option<String>,
    pub review_status: ReviewStatus,
}

impl ImageRecord {
    pub fn manual(id: impl Into<String>, path: impl Into<String>, label: impl Into<String>) -> Self {
        ImageRecord {
            id: id.into(),
            path: path.into(),
            width: MANUAL_WIDTH,
            height: MANUAL_HEIGHT,
            label: label.into(),
            provenance: Provenance::Manual,
            prompt_id: None,
            city_keyword: None,
            review_status: ReviewStatus::Accepted,
        }
    }

    pub fn is_synthetic(&self) -> bool {
        self.provenance == Provenance::Synthetic
    }

    /// Checks the per-record invariants that do not depend on a schema.
    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| {
            Err(Error::Validation {
                record: self.id.clone(),
                message,
            })
        };
        if self.id.is_empty() {
            return fail("empty id".into());
        }
        match self.provenance {
            Provenance::Synthetic => {
                if self.prompt_id.as_deref().is_none_or(str::is_empty) {
                    return fail("synthetic record without prompt_id".into());
                }
                if (self.width, self.height) != (SYNTHETIC_SIZE, SYNTHETIC_SIZE) {
                    return fail(format!(
                        "synthetic image must be {SYNTHETIC_SIZE}x{SYNTHETIC_SIZE}, got {}x{}",
                        self.width, self.height
                    ));
                }
            }
            Provenance::Manual => {
                if self.prompt_id.is_some() {
                    return fail("manual record carries a prompt_id".into());
                }
                if self.review_status != ReviewStatus::Accepted {
                    return fail(format!("manual record with status {}", self.review_status));
                }
                if (self.width, self.height) != (MANUAL_WIDTH, MANUAL_HEIGHT) {
                    return fail(format!(
                        "manual image must be {MANUAL_WIDTH}x{MANUAL_HEIGHT}, got {}x{}",
                        self.width, self.height
                    ));
                }
            }
        }
        Ok(())
    }

    /// CSV fields in catalog order: `id,label,provenance,path,width,height,prompt_id,city,status`.
    pub(crate) fn to_fields(&self) -> [String; 9] {
        [
            self.id.clone(),
            self.label.clone(),
            self.provenance.to_string(),
            self.path.clone(),
            self.width.to_string(),
            self.height.to_string(),
            self.prompt_id.clone().unwrap_or_default(),
            self.city_keyword.clone().unwrap_or_default(),
            self.review_status.to_string(),
        ]
    }

    pub(crate) fn from_fields(fields: &[&str], location: &str) -> Result<Self> {
        if fields.len() != 9 {
            return Err(Error::parse(
                location,
                format!("expected 9 record fields, found {}", fields.len()),
            ));
        }
        let parse_dim = |s: &str| {
            s.parse::<u32>()
                .map_err(|e| Error::parse(location, format!("bad dimension {s:?}: {e}")))
        };
        let optional = |s: &str| (!s.is_empty()).then(|| s.to_string());
        Ok(ImageRecord {
            id: fields[0].to_string(),
            label: fields[1].to_string(),
            provenance: fields[2].parse().map_err(|e: Error| Error::parse(location, e))?,
            path: fields[3].to_string(),
            width: parse_dim(fields[4])?,
            height: parse_dim(fields[5])?,
            prompt_id: optional(fields[6]),
            city_keyword: optional(fields[7]),
            review_status: fields[8].parse().map_err(|e: Error| Error::parse(location, e))?,
        })
    }
}
