//! Checkpoint container: a small binary format holding the run config, every
//! model tensor (weights and batch-norm running state alike), the iteration
//! counter, and the data RNG state.
//!
//! Layout: `"HANC"` | u32 version | u64 header length | JSON header | f64
//! little-endian payload. The header's tensor table is ordered by parameter
//! creation order, so save -> load -> save reproduces the bytes exactly.

use std::fs;
use std::io::Read;
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::HaNet;

const MAGIC: &[u8; 4] = b"HANC";
const VERSION: u32 = 1;

/// Enough ChaCha state to resume the stream exactly: seed, stream id, and
/// the 128-bit word position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed_hex: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> RngState {
        let seed = rng.get_seed();
        let seed_hex: String = seed.iter().map(|b| format!("{b:02x}")).collect();
        RngState {
            seed_hex,
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        if self.seed_hex.len() != 64 {
            return Err(Error::Checkpoint(format!(
                "rng seed hex has {} chars, expected 64",
                self.seed_hex.len()
            )));
        }
        let mut seed = [0u8; 32];
        for (i, byte) in seed.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&self.seed_hex[2 * i..2 * i + 2], 16)
                .map_err(|e| Error::Checkpoint(format!("bad rng seed hex: {e}")))?;
        }
        let word_pos: u128 = self
            .word_pos
            .parse()
            .map_err(|e| Error::Checkpoint(format!("bad rng word position: {e}")))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(word_pos);
        Ok(rng)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: [usize; 4],
    /// Element offset into the f64 payload.
    offset: usize,
    len: usize,
    trainable: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    run_config: RunConfig,
    iteration: u64,
    rng: RngState,
    tensors: Vec<TensorMeta>,
}

pub struct Checkpoint {
    pub config: RunConfig,
    pub model: HaNet,
    pub iteration: u64,
    pub rng: ChaCha8Rng,
}

pub fn save(
    path: &Path,
    config: &RunConfig,
    model: &HaNet,
    iteration: u64,
    rng: &ChaCha8Rng,
) -> Result<()> {
    let mut tensors = Vec::with_capacity(model.store.len());
    let mut payload: Vec<u8> = Vec::new();
    let mut offset = 0usize;
    for (_, p) in model.store.iter() {
        let s = p.value.shape;
        tensors.push(TensorMeta {
            name: p.name.clone(),
            shape: [s.n, s.c, s.h, s.w],
            offset,
            len: p.value.numel(),
            trainable: p.trainable,
        });
        for v in &p.value.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        offset += p.value.numel();
    }
    let header = Header {
        run_config: config.clone(),
        iteration,
        rng: RngState::capture(rng),
        tensors,
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");

    let mut buf = Vec::with_capacity(16 + header_json.len() + payload.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header_json);
    buf.extend_from_slice(&payload);
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut fixed = [0u8; 16];
    file.read_exact(&mut fixed).map_err(|e| Error::io(path, e))?;
    if &fixed[0..4] != MAGIC {
        return Err(Error::Checkpoint(format!("{}: not a checkpoint (bad magic)", path.display())));
    }
    let version = u32::from_le_bytes(fixed[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: format version {version}, this build reads {VERSION}",
            path.display()
        )));
    }
    let header_len = u64::from_le_bytes(fixed[8..16].try_into().unwrap()) as usize;
    let mut header_json = vec![0u8; header_len];
    file.read_exact(&mut header_json).map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_slice(&header_json)
        .map_err(|e| Error::Checkpoint(format!("{}: bad header: {e}", path.display())))?;
    let mut payload = Vec::new();
    file.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;

    let total: usize = header.tensors.iter().map(|t| t.len).sum();
    if payload.len() != total * 8 {
        return Err(Error::Checkpoint(format!(
            "{}: payload is {} bytes, header expects {}",
            path.display(),
            payload.len(),
            total * 8
        )));
    }

    // Rebuild the architecture from the stored config, then overwrite every
    // tensor. Mismatches mean the checkpoint came from different code.
    let mut model = HaNet::new(&header.run_config.model, header.run_config.seed)?;
    if model.store.len() != header.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "{}: stores {} tensors, current architecture has {}",
            path.display(),
            header.tensors.len(),
            model.store.len()
        )));
    }
    for meta in &header.tensors {
        let id = model.store.lookup(&meta.name).ok_or_else(|| {
            Error::Checkpoint(format!(
                "{}: tensor '{}' not present in the rebuilt architecture",
                path.display(),
                meta.name
            ))
        })?;
        let value = model.store.value_mut(id);
        let s = value.shape;
        if [s.n, s.c, s.h, s.w] != meta.shape || value.numel() != meta.len {
            return Err(Error::Checkpoint(format!(
                "{}: tensor '{}' shape {:?} does not match the architecture's {}",
                path.display(),
                meta.name,
                meta.shape,
                s
            )));
        }
        for (i, dst) in value.data.iter_mut().enumerate() {
            let at = (meta.offset + i) * 8;
            *dst = f64::from_le_bytes(payload[at..at + 8].try_into().unwrap());
        }
    }

    Ok(Checkpoint {
        config: header.run_config,
        model,
        iteration: header.iteration,
        rng: header.rng.restore()?,
    })
}
