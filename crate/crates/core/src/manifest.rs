//! Dataset manifest: one record per planned image.
//!
//! On disk the manifest is JSON Lines. While a run is in progress every state
//! change is appended as a new line and the last line for an
//! `(identity_id, pose)` key wins. A finished run rewrites the file with one
//! line per record in plan order. A torn final line, left behind when a
//! process dies mid-write, is ignored on load.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::plan::DemographicSpec;

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("manifest I/O on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest line {line}: {source}")]
    Decode {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("record {image_id} would regress from generated to {status:?}")]
    Regression { image_id: String, status: Status },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Planned,
    Generated,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub identity_id: String,
    pub pose: String,
    pub demographics: DemographicSpec,
    pub triplet_key: String,
    pub prompt_fingerprint: String,
    pub generation_seed: u64,
    pub model_id: Option<String>,
    /// Relative to the output directory.
    pub image_path: String,
    pub image_sha256: Option<String>,
    pub status: Status,
    pub attempts: u32,
    pub last_error: Option<String>,
    pub created_at: String,
    pub updated_at: String,
}

impl ManifestRecord {
    pub fn image_id(&self) -> String {
        image_id(&self.identity_id, &self.pose)
    }

    pub fn key(&self) -> (String, String) {
        (self.identity_id.clone(), self.pose.clone())
    }

    /// Copy with timestamps blanked, for comparing runs.
    pub fn without_timestamps(&self) -> Self {
        Self {
            created_at: String::new(),
            updated_at: String::new(),
            ..self.clone()
        }
    }
}

pub fn image_id(identity_id: &str, pose: &str) -> String {
    format!("{identity_id}_{pose}")
}

pub fn image_file_name(identity_id: &str, pose: &str) -> String {
    format!("{}.png", image_id(identity_id, pose))
}

/// SHA-256 hex over `positive || 0x00 || negative`.
pub fn prompt_fingerprint(positive: &str, negative: &str) -> String {
    let mut h = Sha256::new();
    h.update(positive.as_bytes());
    h.update([0u8]);
    h.update(negative.as_bytes());
    hex::encode(h.finalize())
}

pub fn now_timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    records: Vec<ManifestRecord>,
    index: HashMap<(String, String), usize>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ManifestError> {
        let path = path.as_ref();
        let io = |source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        };
        let text = fs::read_to_string(path).map_err(io)?;
        let complete_tail = text.ends_with('\n');
        let lines: Vec<&str> = text.lines().collect();
        let mut manifest = Manifest::new();
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<ManifestRecord>(line) {
                Ok(record) => manifest.upsert(record),
                Err(e) if i + 1 == lines.len() && !complete_tail => {
                    tracing::warn!(line = i + 1, error = %e, "ignoring torn final manifest line");
                }
                Err(source) => return Err(ManifestError::Decode { line: i + 1, source }),
            }
        }
        Ok(manifest)
    }

    pub fn load_or_default(path: impl AsRef<Path>) -> Result<Self, ManifestError> {
        if path.as_ref().exists() {
            Self::load(path)
        } else {
            Ok(Self::new())
        }
    }

    /// Replaces the record with the same key, or appends a new one.
    pub fn upsert(&mut self, record: ManifestRecord) {
        match self.index.get(&record.key()) {
            Some(&i) => self.records[i] = record,
            None => {
                self.index.insert(record.key(), self.records.len());
                self.records.push(record);
            }
        }
    }

    /// Like [`Manifest::upsert`] but refuses to move a `generated` record to
    /// another status.
    pub fn apply(&mut self, record: ManifestRecord) -> Result<(), ManifestError> {
        if let Some(prev) = self.get(&record.identity_id, &record.pose) {
            if prev.status == Status::Generated && record.status != Status::Generated {
                return Err(ManifestError::Regression {
                    image_id: record.image_id(),
                    status: record.status,
                });
            }
        }
        self.upsert(record);
        Ok(())
    }

    pub fn get(&self, identity_id: &str, pose: &str) -> Option<&ManifestRecord> {
        self.index
            .get(&(identity_id.to_string(), pose.to_string()))
            .map(|&i| &self.records[i])
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn generated(&self) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(|r| r.status == Status::Generated)
    }

    pub fn count(&self, status: Status) -> usize {
        self.records.iter().filter(|r| r.status == status).count()
    }

    /// Reorders records to follow `keys`; records not listed keep their
    /// relative order at the end.
    pub fn sort_by_keys(&mut self, keys: &[(String, String)]) {
        let rank: HashMap<&(String, String), usize> = keys.iter().enumerate().map(|(i, k)| (k, i)).collect();
        self.records
            .sort_by_key(|r| rank.get(&r.key()).copied().unwrap_or(usize::MAX));
        self.index = self.records.iter().enumerate().map(|(i, r)| (r.key(), i)).collect();
    }

    /// Rewrites the file atomically with one line per record.
    pub fn write_compact(&self, path: impl AsRef<Path>) -> Result<(), ManifestError> {
        let path = path.as_ref();
        let tmp = path.with_extension("jsonl.tmp");
        let io = |source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        };
        {
            let mut w = BufWriter::new(File::create(&tmp).map_err(io)?);
            for r in &self.records {
                write_line(&mut w, r).map_err(io)?;
            }
            w.flush().map_err(io)?;
            w.get_ref().sync_all().map_err(io)?;
        }
        fs::rename(&tmp, path).map_err(io)
    }
}

fn write_line(w: &mut impl Write, record: &ManifestRecord) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, record)?;
    w.write_all(b"\n")
}

/// Append-only writer used while a run is in progress.
#[derive(Debug)]
pub struct ManifestAppender {
    path: PathBuf,
    file: File,
}

impl ManifestAppender {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ManifestError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|source| ManifestError::Io {
                path: path.clone(),
                source,
            })?;
        Ok(Self { path, file })
    }

    pub fn append(&mut self, record: &ManifestRecord) -> Result<(), ManifestError> {
        // One write call per line keeps lines whole unless the process dies mid-syscall.
        let mut line = serde_json::to_vec(record).expect("record serializes");
        line.push(b'\n');
        self.file.write_all(&line).map_err(|source| ManifestError::Io {
            path: self.path.clone(),
            source,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyStatus {
    Ok,
    Missing,
    ChecksumMismatch,
    /// Record is not `generated`; there is nothing to check.
    NotGenerated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyEntry {
    pub image_id: String,
    pub status: VerifyStatus,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub entries: Vec<VerifyEntry>,
}

impl VerifyReport {
    pub fn count(&self, status: VerifyStatus) -> usize {
        self.entries.iter().filter(|e| e.status == status).count()
    }

    pub fn all_ok(&self) -> bool {
        self.entries
            .iter()
            .all(|e| matches!(e.status, VerifyStatus::Ok | VerifyStatus::NotGenerated))
    }

    pub fn status_of(&self, image_id: &str) -> Option<VerifyStatus> {
        self.entries.iter().find(|e| e.image_id == image_id).map(|e| e.status)
    }
}

pub fn file_sha256(path: &Path) -> std::io::Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Checks one record against the image on disk.
pub fn verify_record(record: &ManifestRecord, out_dir: &Path) -> VerifyStatus {
    if record.status != Status::Generated {
        return VerifyStatus::NotGenerated;
    }
    match file_sha256(&out_dir.join(&record.image_path)) {
        Ok(sum) if Some(&sum) == record.image_sha256.as_ref() => VerifyStatus::Ok,
        Ok(_) => VerifyStatus::ChecksumMismatch,
        Err(_) => VerifyStatus::Missing,
    }
}

/// Read-only audit of every record.
pub fn verify_manifest(manifest: &Manifest, out_dir: impl AsRef<Path>) -> VerifyReport {
    let out_dir = out_dir.as_ref();
    VerifyReport {
        entries: manifest
            .records()
            .iter()
            .map(|r| VerifyEntry {
                image_id: r.image_id(),
                status: verify_record(r, out_dir),
            })
            .collect(),
    }
}

pub fn read_lines(path: &Path) -> std::io::Result<Vec<String>> {
    BufReader::new(File::open(path)?).lines().collect()
}
