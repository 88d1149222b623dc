//! On-disk formats: parameter vectors, run manifests and the run-directory lock.

use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PARAMS_MAGIC: [u8; 8] = *b"DITSPRM\0";
pub const PARAMS_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8;

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: not a parameter file")]
    BadMagic { path: String },
    #[error("{path}: unsupported parameter file version {version}")]
    BadVersion { path: String, version: u32 },
    #[error("{path}: header declares {declared} values but the body holds {actual}")]
    BadLength { path: String, declared: u64, actual: u64 },
    #[error("{0} is locked by another run (remove {1} if no run is active)")]
    Locked(String, String),
    #[error("{path}: {message}")]
    Json { path: String, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ArtifactError + '_ {
    move |source| ArtifactError::Io { path: path.display().to_string(), source }
}

/// Encode as magic, `u32` version, `u64` length, then little-endian `f64` values.
pub fn encode_params(theta: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * theta.len());
    out.extend_from_slice(&PARAMS_MAGIC);
    out.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
    out.extend_from_slice(&(theta.len() as u64).to_le_bytes());
    for v in theta {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_params(bytes: &[u8], origin: &str) -> Result<Vec<f64>, ArtifactError> {
    if bytes.len() < HEADER_LEN || bytes[..8] != PARAMS_MAGIC {
        return Err(ArtifactError::BadMagic { path: origin.into() });
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != PARAMS_VERSION {
        return Err(ArtifactError::BadVersion { path: origin.into(), version });
    }
    let declared = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let body = &bytes[HEADER_LEN..];
    if !body.len().is_multiple_of(8) || body.len() as u64 / 8 != declared {
        return Err(ArtifactError::BadLength { path: origin.into(), declared, actual: body.len() as u64 / 8 });
    }
    Ok(body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

pub fn write_params(path: &Path, theta: &[f64]) -> Result<(), ArtifactError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    std::fs::write(path, encode_params(theta)).map_err(io_err(path))
}

pub fn read_params(path: &Path) -> Result<Vec<f64>, ArtifactError> {
    let mut bytes = Vec::new();
    File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(io_err(path))?;
    decode_params(&bytes, &path.display().to_string())
}

/// Exclusive claim on a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub const FILE: &'static str = ".dits.lock";

    pub fn acquire(dir: &Path) -> Result<Self, ArtifactError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(Self::FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(ArtifactError::Locked(dir.display().to_string(), path.display().to_string()))
            }
            Err(e) => Err(io_err(&path)(e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// SHA-256 of the canonical config rendering.
    pub config_digest: String,
    pub seed: u64,
    pub iterations_planned: usize,
    pub iterations_completed: usize,
    /// Paths relative to the run directory.
    pub artifacts: Vec<String>,
    pub created_unix: u64,
    pub updated_unix: u64,
    pub source_revision: String,
    pub notes: Vec<String>,
}

impl RunManifest {
    pub const FILE: &'static str = "manifest.json";

    pub fn new(config_digest: String, seed: u64, iterations_planned: usize) -> Self {
        let now = unix_now();
        Self {
            config_digest,
            seed,
            iterations_planned,
            iterations_completed: 0,
            artifacts: Vec::new(),
            created_unix: now,
            updated_unix: now,
            source_revision: source_revision(),
            notes: Vec::new(),
        }
    }

    pub fn load(dir: &Path) -> Result<Self, ArtifactError> {
        let path = dir.join(Self::FILE);
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| ArtifactError::Json { path: path.display().to_string(), message: e.to_string() })
    }

    pub fn save(&mut self, dir: &Path) -> Result<(), ArtifactError> {
        self.updated_unix = unix_now();
        self.artifacts.sort();
        self.artifacts.dedup();
        let path = dir.join(Self::FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(io_err(&path))
    }

    pub fn record(&mut self, artifact: impl Into<String>) {
        self.artifacts.push(artifact.into());
    }
}

fn unix_now() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Crate version, plus the git revision when `DITS_SOURCE_REVISION` is set at build time.
pub fn source_revision() -> String {
    match option_env!("DITS_SOURCE_REVISION") {
        Some(rev) => format!("dits {} ({rev})", env!("CARGO_PKG_VERSION")),
        None => format!("dits {}", env!("CARGO_PKG_VERSION")),
    }
}
