//! Binary checkpoint files.
//!
//! ```text
//! offset  size      field
//! 0       4         magic "BSCP"
//! 4       2         format version (u16 LE)
//! 6       1         activation id (0 tanh, 1 relu)
//! 7       1         layer count L (number of widths)
//! 8       4·L       layer widths (u32 LE)
//! 8+4L    8         seed (u64 LE)
//! 16+4L   8·n       parameters (f64 LE, canonical layout)
//! end-4   4         CRC32 of the parameter bytes (u32 LE)
//! ```

use std::fs;
use std::path::Path;

use basinscope::{Activation, MlpArch, ParamVector};

pub const MAGIC: [u8; 4] = *b"BSCP";
pub const VERSION: u16 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("cannot access checkpoint: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {VERSION})")]
    Version(u16),
    #[error("checkpoint length is {got} bytes, expected {expected}")]
    Length { expected: usize, got: usize },
    #[error("checkpoint payload CRC mismatch (stored {stored:08x}, computed {computed:08x})")]
    Crc { stored: u32, computed: u32 },
    #[error("invalid checkpoint header: {0}")]
    Header(String),
}

/// A decoded checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredParams {
    pub arch: MlpArch,
    pub params: ParamVector,
    pub seed: u64,
}

pub fn encode(arch: &MlpArch, params: &ParamVector, seed: u64) -> Result<Vec<u8>, CheckpointError> {
    params
        .validate(arch)
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    let widths = arch.widths();
    let layers = u8::try_from(widths.len())
        .map_err(|_| CheckpointError::Header(format!("{} layers do not fit the format", widths.len())))?;
    let mut out = Vec::with_capacity(20 + 4 * widths.len() + 8 * params.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(arch.activation().id());
    out.push(layers);
    for &w in widths {
        let w = u32::try_from(w).map_err(|_| CheckpointError::Header(format!("width {w} too large")))?;
        out.extend_from_slice(&w.to_le_bytes());
    }
    out.extend_from_slice(&seed.to_le_bytes());
    let payload_start = out.len();
    for x in params.as_slice() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    let crc = crc32fast::hash(&out[payload_start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn take(bytes: &[u8], at: usize, len: usize, expected: usize) -> Result<&[u8], CheckpointError> {
    bytes.get(at..at + len).ok_or(CheckpointError::Length {
        expected,
        got: bytes.len(),
    })
}

pub fn decode(bytes: &[u8]) -> Result<StoredParams, CheckpointError> {
    // The fixed prefix must be present before anything else can be checked.
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(if bytes.len() < 4 && MAGIC.starts_with(bytes) {
            CheckpointError::Length {
                expected: 8,
                got: bytes.len(),
            }
        } else {
            CheckpointError::BadMagic
        });
    }
    let version = u16::from_le_bytes(take(bytes, 4, 2, 8)?.try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let header = take(bytes, 6, 2, 8)?;
    let (activation_id, layers) = (header[0], header[1] as usize);
    let header_len = 8 + 4 * layers + 8;
    let widths: Vec<usize> = take(bytes, 8, 4 * layers, header_len)?
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let seed = u64::from_le_bytes(take(bytes, 8 + 4 * layers, 8, header_len)?.try_into().unwrap());
    let activation = Activation::from_id(activation_id)
        .ok_or_else(|| CheckpointError::Header(format!("unknown activation id {activation_id}")))?;
    let arch = MlpArch::new(widths, activation).map_err(|e| CheckpointError::Header(e.to_string()))?;

    let n = arch.param_count();
    let expected = header_len + 8 * n + 4;
    if bytes.len() != expected {
        return Err(CheckpointError::Length {
            expected,
            got: bytes.len(),
        });
    }
    let payload = &bytes[header_len..header_len + 8 * n];
    let stored = u32::from_le_bytes(bytes[expected - 4..].try_into().unwrap());
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(CheckpointError::Crc { stored, computed });
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let params = ParamVector::new(values);
    params
        .validate(&arch)
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    Ok(StoredParams { arch, params, seed })
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    arch: &MlpArch,
    params: &ParamVector,
    seed: u64,
) -> Result<(), CheckpointError> {
    fs::write(path, encode(arch, params, seed)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<StoredParams, CheckpointError> {
    decode(&fs::read(path)?)
}
