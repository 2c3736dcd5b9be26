//! On-disk image store: PNG files plus an append-only `catalog.csv`.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::record::ImageRecord;

pub const CATALOG_FILE: &str = "catalog.csv";
pub const PROMPTS_FILE: &str = "prompts.csv";
pub const DECISIONS_FILE: &str = "decisions.log";
const CATALOG_HEADER: &str = "id,label,provenance,path,width,height,prompt_id,city,status";

/// Catalog records keep their generation-time status; review outcomes live in
/// the decision log and are overlaid by the triage state.
#[derive(Debug)]
pub struct ImageStore {
    root: PathBuf,
    records: Vec<ImageRecord>,
    index: HashMap<String, usize>,
}

impl ImageStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        let catalog = root.join(CATALOG_FILE);
        let mut store = ImageStore {
            root,
            records: Vec::new(),
            index: HashMap::new(),
        };
        if catalog.exists() {
            let mut reader = csv::Reader::from_path(&catalog)
                .map_err(|e| Error::parse(catalog.display().to_string(), e))?;
            for (i, row) in reader.records().enumerate() {
                let location = format!("{} row {}", catalog.display(), i + 2);
                let row = row.map_err(|e| Error::parse(location.clone(), e))?;
                let fields: Vec<&str> = row.iter().collect();
                let record = ImageRecord::from_fields(&fields, &location)?;
                store.insert_indexed(record)?;
            }
        }
        Ok(store)
    }

    fn insert_indexed(&mut self, record: ImageRecord) -> Result<()> {
        if self.index.contains_key(&record.id) {
            return Err(Error::Validation {
                record: record.id,
                message: "duplicate id in catalog".into(),
            });
        }
        self.index.insert(record.id.clone(), self.records.len());
        self.records.push(record);
        Ok(())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }

    /// Appends records to the catalog in the given order.
    pub fn append(&mut self, records: impl IntoIterator<Item = ImageRecord>) -> Result<()> {
        let catalog = self.root.join(CATALOG_FILE);
        let fresh = !catalog.exists();
        let mut writer = csv::WriterBuilder::new()
            .has_headers(false)
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let mut added: Vec<ImageRecord> = Vec::new();
        for record in records {
            record.validate()?;
            if self.contains(&record.id) || added.iter().any(|r| r.id == record.id) {
                return Err(Error::Validation {
                    record: record.id,
                    message: "duplicate id in catalog".into(),
                });
            }
            writer
                .write_record(record.to_fields())
                .map_err(|e| Error::parse("catalog", e))?;
            added.push(record);
        }
        if added.is_empty() {
            return Ok(());
        }
        for record in added {
            self.insert_indexed(record)?;
        }
        let body = writer
            .into_inner()
            .map_err(|e| Error::parse("catalog", e.to_string()))?;
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&catalog)
            .map_err(|e| Error::io(&catalog, e))?;
        if fresh {
            writeln!(file, "{CATALOG_HEADER}").map_err(|e| Error::io(&catalog, e))?;
        }
        file.write_all(&body).map_err(|e| Error::io(&catalog, e))
    }

    pub fn write_image(&self, relative: &str, bytes: &[u8]) -> Result<()> {
        write_image_at(&self.root, relative, bytes)
    }

    pub fn read_image(&self, relative: &str) -> Result<Vec<u8>> {
        let path = self.resolve(relative);
        fs::read(&path).map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn write_image_at(root: &Path, relative: &str, bytes: &[u8]) -> Result<()> {
    let path = root.join(relative);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    // write-then-rename so a crashed writer never leaves a truncated PNG at the address
    let tmp = path.with_extension("png.tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
}
