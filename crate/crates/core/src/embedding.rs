//! Embedding matrices, the EMB1 file format and the deterministic oracle
//! embedder.
//!
//! EMB1 layout: the magic bytes `EMB1`, a little-endian `u32` dimension, a
//! little-endian `u64` row count, then `count * dim` little-endian `f32`
//! values in row-major order. A companion JSON file (same stem, extension
//! `index.json`) maps image ids to rows and records the model id.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::png_meta;
use crate::seed::{self, seed_from_parts};

pub const MAGIC: &[u8; 4] = b"EMB1";
pub const DEFAULT_DIM: usize = 512;
pub const NORM_TOLERANCE: f64 = 1e-4;

const HEADER_LEN: usize = 4 + 4 + 8;

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("I/O on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic bytes, expected EMB1")]
    BadMagic,
    #[error("file truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("file has {extra} trailing bytes after {count} rows")]
    TrailingBytes { count: u64, extra: u64 },
    #[error("index mismatch: {0}")]
    IndexMismatch(String),
    #[error("dimension mismatch: expected {expected}, got {got}{}", .image_id.as_ref().map(|i| format!(" for {i}")).unwrap_or_default())]
    DimensionMismatch {
        expected: usize,
        got: usize,
        image_id: Option<String>,
    },
    #[error("vector for {0} is zero or not finite")]
    DegenerateVector(String),
    #[error("duplicate image id {0}")]
    DuplicateId(String),
    #[error("{path}: missing PNG text chunk `{chunk}`")]
    MissingChunk { path: PathBuf, chunk: &'static str },
    #[error("{path}: {source}")]
    Png {
        path: PathBuf,
        #[source]
        source: png_meta::PngError,
    },
    #[error("index file: {0}")]
    IndexJson(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f32>,
    index: BTreeMap<String, usize>,
    model_id: String,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize, model_id: impl Into<String>) -> Self {
        Self {
            dim,
            data: Vec::new(),
            index: BTreeMap::new(),
            model_id: model_id.into(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn index(&self) -> &BTreeMap<String, usize> {
        &self.index
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn get(&self, image_id: &str) -> Option<&[f32]> {
        self.index.get(image_id).map(|&r| self.row(r))
    }

    pub fn contains(&self, image_id: &str) -> bool {
        self.index.contains_key(image_id)
    }

    /// Appends a row, normalizing it to unit L2 norm.
    pub fn push(&mut self, image_id: impl Into<String>, vector: &[f32]) -> Result<usize, EmbeddingError> {
        let image_id = image_id.into();
        if vector.len() != self.dim {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.dim,
                got: vector.len(),
                image_id: Some(image_id),
            });
        }
        if self.index.contains_key(&image_id) {
            return Err(EmbeddingError::DuplicateId(image_id));
        }
        let normalized = normalize(vector).ok_or_else(|| EmbeddingError::DegenerateVector(image_id.clone()))?;
        let row = self.len();
        self.data.extend_from_slice(&normalized);
        self.index.insert(image_id, row);
        Ok(row)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), EmbeddingError> {
        let path = path.as_ref();
        let io = |source| EmbeddingError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&(self.dim as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.len() as u64).to_le_bytes()).map_err(io)?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        w.flush().map_err(io)?;

        let index = IndexFile {
            format: "EMB1".into(),
            model_id: self.model_id.clone(),
            dim: self.dim,
            count: self.len(),
            index: self.index.clone(),
        };
        let index_path = index_path(path);
        fs::write(&index_path, serde_json::to_vec_pretty(&index)?).map_err(|source| EmbeddingError::Io {
            path: index_path,
            source,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, EmbeddingError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| EmbeddingError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let index_path = index_path(path);
        let index_text = fs::read(&index_path).map_err(|source| EmbeddingError::Io {
            path: index_path,
            source,
        })?;
        let index: IndexFile = serde_json::from_slice(&index_text)?;
        Self::from_parts(&bytes, index)
    }

    fn from_parts(bytes: &[u8], index: IndexFile) -> Result<Self, EmbeddingError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(EmbeddingError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(EmbeddingError::Truncated {
                expected: HEADER_LEN as u64,
                found: bytes.len() as u64,
            });
        }
        let dim = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let count = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let expected = (HEADER_LEN as u64).saturating_add(count.saturating_mul(dim as u64).saturating_mul(4));
        let found = bytes.len() as u64;
        if found < expected {
            return Err(EmbeddingError::Truncated { expected, found });
        }
        if found > expected {
            return Err(EmbeddingError::TrailingBytes {
                count,
                extra: found - expected,
            });
        }
        if dim == 0 && count > 0 {
            return Err(EmbeddingError::DimensionMismatch {
                expected: index.dim,
                got: 0,
                image_id: None,
            });
        }
        if index.dim != dim {
            return Err(EmbeddingError::DimensionMismatch {
                expected: index.dim,
                got: dim,
                image_id: None,
            });
        }
        let count = count as usize;
        if index.index.len() != count || index.count != count {
            return Err(EmbeddingError::IndexMismatch(format!(
                "index lists {} ids (count field {}), file holds {count} rows",
                index.index.len(),
                index.count
            )));
        }
        let mut seen = vec![false; count];
        for (id, &row) in &index.index {
            if row >= count {
                return Err(EmbeddingError::IndexMismatch(format!("{id} points at row {row} of {count}")));
            }
            if std::mem::replace(&mut seen[row], true) {
                return Err(EmbeddingError::IndexMismatch(format!("row {row} is indexed twice")));
            }
        }

        let mut data: Vec<f32> = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let ids_by_row = invert(&index.index, count);
        for (row, id) in ids_by_row.iter().enumerate() {
            let slice = &mut data[row * dim..(row + 1) * dim];
            let norm = l2_norm(slice);
            if !(norm.is_finite() && norm > 0.0) {
                return Err(EmbeddingError::DegenerateVector(id.to_string()));
            }
            // Rows already at unit norm stay bit-identical.
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                let fixed = normalize(slice).expect("non-zero");
                slice.copy_from_slice(&fixed);
            }
        }
        Ok(Self {
            dim,
            data,
            index: index.index,
            model_id: index.model_id,
        })
    }
}

fn invert(index: &BTreeMap<String, usize>, count: usize) -> Vec<&str> {
    let mut out = vec![""; count];
    for (id, &row) in index {
        out[row] = id;
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexFile {
    format: String,
    model_id: String,
    dim: usize,
    count: usize,
    index: BTreeMap<String, usize>,
}

/// `embeddings.emb1` → `embeddings.index.json`
pub fn index_path(path: &Path) -> PathBuf {
    path.with_extension("index.json")
}

pub fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

pub fn normalize(v: &[f32]) -> Option<Vec<f32>> {
    let norm = l2_norm(v);
    if !(norm.is_finite() && norm > 0.0) {
        return None;
    }
    Some(v.iter().map(|&x| (f64::from(x) / norm) as f32).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleParams {
    pub dim: usize,
    pub sigma: f64,
    pub seed_namespace: String,
}

impl Default for OracleParams {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            sigma: 0.25,
            seed_namespace: "sig-oracle".into(),
        }
    }
}

impl OracleParams {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.dim == 0 {
            v.push("oracle dim must be positive".into());
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            v.push("oracle sigma must be a non-negative number".into());
        }
        v
    }

    pub fn model_id(&self) -> String {
        format!("oracle/{}/sigma={}/dim={}", self.seed_namespace, self.sigma, self.dim)
    }
}

/// The text metadata the oracle keys off.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleKeys {
    pub identity: String,
    pub pose: String,
    pub seed: String,
}

pub const CHUNK_IDENTITY: &str = "sig.identity";
pub const CHUNK_POSE: &str = "sig.pose";
pub const CHUNK_SEED: &str = "sig.seed";

impl OracleKeys {
    pub fn from_png(bytes: &[u8], path: &Path) -> Result<Self, EmbeddingError> {
        let summary = png_meta::decode(bytes).map_err(|source| EmbeddingError::Png {
            path: path.to_path_buf(),
            source,
        })?;
        let get = |chunk: &'static str| {
            summary
                .text
                .get(chunk)
                .cloned()
                .ok_or_else(|| EmbeddingError::MissingChunk {
                    path: path.to_path_buf(),
                    chunk,
                })
        };
        Ok(Self {
            identity: get(CHUNK_IDENTITY)?,
            pose: get(CHUNK_POSE)?,
            seed: get(CHUNK_SEED)?,
        })
    }
}

fn gaussian_unit(seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = seed::rng(seed);
    let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// `normalize(v_id + sigma * u)`: `v_id` is a Gaussian direction seeded by
/// (namespace, identity) and `u` one seeded by (namespace, identity, pose, seed).
pub fn oracle_vector(params: &OracleParams, keys: &OracleKeys) -> Vec<f32> {
    let ns = params.seed_namespace.as_str();
    let identity = gaussian_unit(seed_from_parts(&[ns, &keys.identity]), params.dim);
    let noise = gaussian_unit(
        seed_from_parts(&[ns, &keys.identity, &keys.pose, &keys.seed]),
        params.dim,
    );
    let v: Vec<f64> = identity
        .iter()
        .zip(&noise)
        .map(|(a, b)| a + params.sigma * b)
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| (x / norm) as f32).collect()
}

/// Oracle embeddings for `(image_id, png path)` pairs, in the order given.
pub fn oracle_embed<'a, I>(images: I, params: &OracleParams) -> Result<EmbeddingMatrix, EmbeddingError>
where
    I: IntoIterator<Item = (&'a str, &'a Path)>,
{
    let mut matrix = EmbeddingMatrix::new(params.dim, params.model_id());
    for (image_id, path) in images {
        let bytes = fs::read(path).map_err(|source| EmbeddingError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let keys = OracleKeys::from_png(&bytes, path)?;
        matrix.push(image_id, &oracle_vector(params, &keys))?;
    }
    Ok(matrix)
}
