//! Train/test manifests and their line-oriented file format.
//!
//! ```text
//! schema=REDUCED(stucco);seed=42;tag=baseline-stucco
//! man_0001,train,stucco,manual,manual/0001.png,400,600,,,accepted
//! ```

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::record::{ImageRecord, ReviewStatus};
use crate::schema::LabelSchema;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::parse("split", format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub schema: LabelSchema,
    pub seed: u64,
    pub tag: String,
    pub train: Vec<ImageRecord>,
    pub test: Vec<ImageRecord>,
}

/// Per-label counts in schema order; labels with no records report 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassCounts {
    labels: Vec<String>,
    counts: Vec<usize>,
}

impl ClassCounts {
    pub fn zeros(schema: &LabelSchema) -> Self {
        ClassCounts {
            labels: schema.labels().to_vec(),
            counts: vec![0; schema.len()],
        }
    }

    pub fn from_records<'a>(
        schema: &LabelSchema,
        records: impl IntoIterator<Item = &'a ImageRecord>,
    ) -> Self {
        let mut counts = Self::zeros(schema);
        for r in records {
            if let Some(i) = schema.index_of(&r.label) {
                counts.counts[i] += 1;
            }
        }
        counts
    }

    pub fn get(&self, label: &str) -> usize {
        self.labels
            .iter()
            .position(|l| l == label)
            .map_or(0, |i| self.counts[i])
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn max(&self) -> usize {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> + '_ {
        self.labels.iter().map(String::as_str).zip(self.counts.iter().copied())
    }
}

impl DatasetManifest {
    pub fn new(schema: LabelSchema, seed: u64, tag: impl Into<String>) -> Self {
        DatasetManifest {
            schema,
            seed,
            tag: tag.into(),
            train: Vec::new(),
            test: Vec::new(),
        }
    }

    pub fn split(&self, split: Split) -> &[ImageRecord] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn class_counts(&self, split: Split) -> ClassCounts {
        ClassCounts::from_records(&self.schema, self.split(split))
    }

    /// Checks leakage, schema closure and per-record invariants.
    pub fn validate(&self) -> Result<()> {
        if self.tag.contains([';', '\n', '\r']) {
            return Err(Error::Validation {
                record: "<header>".into(),
                message: format!("tag {:?} contains a reserved character", self.tag),
            });
        }
        let mut train_ids = HashSet::new();
        for (split, records) in [(Split::Train, &self.train), (Split::Test, &self.test)] {
            let mut seen = HashSet::new();
            for r in records {
                r.validate()?;
                if !self.schema.contains(&r.label) {
                    return Err(Error::Validation {
                        record: r.id.clone(),
                        message: format!("unknown label {:?} for schema {}", r.label, self.schema),
                    });
                }
                if r.review_status != ReviewStatus::Accepted {
                    return Err(Error::Validation {
                        record: r.id.clone(),
                        message: format!("record with status {} in manifest", r.review_status),
                    });
                }
                if !seen.insert(r.id.as_str()) {
                    return Err(Error::Validation {
                        record: r.id.clone(),
                        message: format!("duplicate id in {split} split"),
                    });
                }
                match split {
                    Split::Train => {
                        train_ids.insert(r.id.as_str());
                    }
                    Split::Test if train_ids.contains(r.id.as_str()) => {
                        return Err(Error::Validation {
                            record: r.id.clone(),
                            message: "record appears in both train and test (leakage)".into(),
                        });
                    }
                    Split::Test => {}
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = format!("schema={};seed={};tag={}\n", self.schema, self.seed, self.tag)
            .into_bytes();
        let mut writer = csv::WriterBuilder::new()
            .has_headers(false)
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        for (split, records) in [(Split::Train, &self.train), (Split::Test, &self.test)] {
            for r in records {
                let f = r.to_fields();
                writer
                    .write_record([
                        f[0].as_str(),
                        split.as_str(),
                        &f[1],
                        &f[2],
                        &f[3],
                        &f[4],
                        &f[5],
                        &f[6],
                        &f[7],
                        &f[8],
                    ])
                    .map_err(|e| Error::parse("manifest", e))?;
            }
        }
        let body = writer
            .into_inner()
            .map_err(|e| Error::parse("manifest", e.to_string()))?;
        out.extend_from_slice(&body);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|e| Error::parse("manifest", e))?;
        let (header, body) = text.split_once('\n').unwrap_or((text, ""));
        let (schema, seed, tag) = parse_header(header.trim_end_matches('\r'))?;
        let mut manifest = DatasetManifest::new(schema, seed, tag);
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(body.as_bytes());
        for (i, row) in reader.records().enumerate() {
            let location = format!("line {}", i + 2);
            let row = row.map_err(|e| Error::parse(location.clone(), e))?;
            let fields: Vec<&str> = row.iter().collect();
            if fields.len() != 10 {
                return Err(Error::parse(
                    location,
                    format!("expected 10 fields, found {}", fields.len()),
                ));
            }
            let split: Split = fields[1].parse().map_err(|e: Error| Error::parse(location.clone(), e))?;
            let mut record_fields = Vec::with_capacity(9);
            record_fields.push(fields[0]);
            record_fields.extend_from_slice(&fields[2..]);
            let record = ImageRecord::from_fields(&record_fields, &location)?;
            match split {
                Split::Train => manifest.train.push(record),
                Split::Test => manifest.test.push(record),
            }
        }
        manifest.validate()?;
        Ok(manifest)
    }
}

fn parse_header(line: &str) -> Result<(LabelSchema, u64, String)> {
    let bad = |msg: &str| Error::parse("line 1", msg);
    let rest = line.strip_prefix("schema=").ok_or_else(|| bad("missing schema="))?;
    let (schema, rest) = rest.split_once(";seed=").ok_or_else(|| bad("missing ;seed="))?;
    let (seed, tag) = rest.split_once(";tag=").ok_or_else(|| bad("missing ;tag="))?;
    let schema = schema.parse()?;
    let seed = seed
        .parse()
        .map_err(|e| Error::parse("line 1", format!("bad seed {seed:?}: {e}")))?;
    Ok((schema, seed, tag.to_string()))
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    DatasetManifest::from_bytes(&bytes)
}

pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    manifest.validate()?;
    let path = path.as_ref();
    let bytes = manifest.to_bytes()?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
