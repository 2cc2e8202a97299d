//! Binary checkpoint format for trained networks.
//!
//! Layout: a single-line JSON header (architecture, seed, format version)
//! terminated by `\n`, followed by the raw parameter arrays as little-endian
//! 64-bit floats, row-major within each array, in the declared order
//! `H_1, b_1, W_2, H_2, b_2, ..., W_K, H_K, b_K, w, b`.
//!
//! Save followed by load is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LpnError, Result};
use crate::icnn::{IcnnArch, IcnnParams};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub arch: IcnnArch,
    pub seed: u64,
}

/// A trained (or freshly initialized) network together with its
/// architecture and originating seed.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub arch: IcnnArch,
    pub seed: u64,
    pub params: IcnnParams,
}

impl Checkpoint {
    pub fn new(arch: IcnnArch, seed: u64, params: IcnnParams) -> Result<Self> {
        if !params.matches_arch(&arch) {
            return Err(LpnError::CheckpointFormat(
                "parameter shapes do not match the architecture".into(),
            ));
        }
        Ok(Checkpoint { arch, seed, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        let header = CheckpointHeader {
            format_version: FORMAT_VERSION,
            arch: self.arch.clone(),
            seed: self.seed,
        };
        let mut line = serde_json::to_string(&header)?;
        line.push('\n');
        w.write_all(line.as_bytes())?;
        for v in self.params.to_flat() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read(&mut r)
    }

    pub fn read(r: &mut impl Read) -> Result<Self> {
        let mut line = Vec::new();
        let mut byte = [0u8; 1];
        loop {
            let n = r.read(&mut byte)?;
            if n == 0 {
                return Err(LpnError::CheckpointFormat(
                    "unterminated header line".into(),
                ));
            }
            if byte[0] == b'\n' {
                break;
            }
            line.push(byte[0]);
            if line.len() > 1 << 20 {
                return Err(LpnError::CheckpointFormat("header too large".into()));
            }
        }
        let header: CheckpointHeader = serde_json::from_slice(&line)?;
        if header.format_version != FORMAT_VERSION {
            return Err(LpnError::CheckpointFormat(format!(
                "unsupported format version {}",
                header.format_version
            )));
        }
        header.arch.validate()?;

        let mut params = IcnnParams::zeros(&header.arch);
        let count = params.num_params();
        let mut bytes = vec![0u8; count * 8];
        r.read_exact(&mut bytes).map_err(|e| {
            LpnError::CheckpointFormat(format!("truncated parameter payload: {e}"))
        })?;
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(LpnError::CheckpointFormat(
                "trailing bytes after parameter payload".into(),
            ));
        }
        let flat: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.assign_from_flat(&flat)?;
        Ok(Checkpoint {
            arch: header.arch,
            seed: header.seed,
            params,
        })
    }
}
