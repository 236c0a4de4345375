//! Binary checkpoint container.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "OGAE"
//! 4       4     version (u32 LE)
//! 8       4     architecture id (u32 LE; 1 = digit-ae, 2 = patch-ae)
//! 12      4     latent_dim (u32 LE)
//! 16      8     init seed (u64 LE)
//! 24      8     value count (u64 LE)
//! 32      8·k   values (f64 LE): parameters in layer order (encoder, then
//!               decoder), then running mean and variance of each batch norm
//! ```

use std::io::{Read, Write};

use super::{Architecture, Autoencoder, AutoencoderSpec};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"OGAE";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(model: &Autoencoder, mut w: impl Write) -> Result<()> {
    let spec = model.spec();
    let values = model.state_vector();
    let mut buf = Vec::with_capacity(32 + 8 * values.len());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&spec.architecture.id().to_le_bytes());
    buf.extend_from_slice(&(spec.latent_dim as u32).to_le_bytes());
    buf.extend_from_slice(&spec.seed.to_le_bytes());
    buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint(mut r: impl Read) -> Result<Autoencoder> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 32 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::format("not an OGAE checkpoint"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(format!("unsupported checkpoint version {version}")));
    }
    let spec = AutoencoderSpec {
        architecture: Architecture::from_id(u32_at(8))?,
        latent_dim: u32_at(12) as usize,
        seed: u64_at(16),
    };
    let count = u64_at(24) as usize;
    if bytes.len() != 32 + 8 * count {
        return Err(Error::format(format!(
            "checkpoint declares {count} values but holds {} bytes of payload",
            bytes.len() - 32
        )));
    }
    let values: Vec<f64> = bytes[32..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut model = Autoencoder::new(spec)?;
    model.load_state_vector(&values)?;
    Ok(model)
}
