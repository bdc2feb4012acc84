//! Versioned binary container for chain snapshots.
//!
//! Layout: 8-byte magic `PINGCKPT`, little-endian `u32` version, the 32-byte
//! SHA-256 of the chain configuration, a little-endian `u64` payload length,
//! then the JSON payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::state::{AdaptationRecord, ChainState, DrawStore, RngState};
use super::ChainConfig;
use crate::error::{PingError, Result};

const MAGIC: &[u8; 8] = b"PINGCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER: usize = 8 + 4 + 32 + 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub state: ChainState,
    pub rng: RngState,
    pub draws: DrawStore,
    pub adaptations: Vec<AdaptationRecord>,
}

/// SHA-256 of the canonical JSON form of `config`.
pub fn config_hash(config: &ChainConfig) -> Result<[u8; 32]> {
    let bytes = serde_json::to_vec(config)?;
    Ok(Sha256::digest(&bytes).into())
}

pub fn save_checkpoint(path: &Path, hash: &[u8; 32], ck: &Checkpoint) -> Result<()> {
    let payload = serde_json::to_vec(ck)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(MAGIC)?;
    f.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    f.write_all(hash)?;
    f.write_all(&(payload.len() as u64).to_le_bytes())?;
    f.write_all(&payload)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Read a checkpoint, rejecting other versions and other configurations.
pub fn load_checkpoint(path: &Path, expected_hash: &[u8; 32]) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    if bytes.len() < HEADER || &bytes[..8] != MAGIC {
        return Err(PingError::Checkpoint(format!("{} is not a checkpoint", path.display())));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(PingError::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    if &bytes[12..44] != expected_hash {
        return Err(PingError::Checkpoint("checkpoint was written under a different configuration".into()));
    }
    let len = u64::from_le_bytes(bytes[44..52].try_into().expect("8 bytes")) as usize;
    if bytes.len() != HEADER + len {
        return Err(PingError::Checkpoint(format!(
            "payload length {len} does not match file size {}",
            bytes.len()
        )));
    }
    Ok(serde_json::from_slice(&bytes[HEADER..])?)
}
