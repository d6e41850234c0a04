//! Versioned binary checkpoint format (model + optimizer + RNG).
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "TXPCKPT\0"
//! version    u32      format version (currently 1)
//! header_len u64
//! header     TOML     step, rng state, model config, adam hyperparameters
//! blocks     one per parameter, in the canonical visit order:
//!     name_len  u32, name bytes (UTF-8)
//!     ndim      u32, extents (u64 each)
//!     count     u64, values        (f64 little-endian raw bits)
//!     count     u64, first moment  (f64)
//!     count     u64, second moment (f64)
//! checksum   u64      FNV-1a over every preceding byte
//! ```
//!
//! Values are stored as raw IEEE-754 bits, so a save/load round trip is
//! bitwise and training continuation from a checkpoint is exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diff::DiffArray;
use crate::error::{Error, Result};
use crate::model::{init_params, ModelConfig, ModelParams};
use crate::optim::{AdamHyper, AdamState, Moments};
use crate::rng::CounterRng;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"TXPCKPT\0";

/// Everything needed to resume training or run interventions at step `step`.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub step: u64,
    pub params: ModelParams,
    pub adam: AdamState,
    pub rng: CounterRng,
}

pub fn checkpoint_file_name(step: u64) -> String {
    format!("ckpt-{step}.bin")
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    step: u64,
    rng_key: u64,
    rng_counter: u64,
    adam_step: u64,
    adam: AdamHyper,
    model: ModelConfig,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn push_f64s(buf: &mut Vec<u8>, values: &[f64]) {
    buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let (rng_key, rng_counter) = checkpoint.rng.state();
    let header = Header {
        format_version: FORMAT_VERSION,
        step: checkpoint.step,
        rng_key,
        rng_counter,
        adam_step: checkpoint.adam.step,
        adam: checkpoint.adam.hyper,
        model: checkpoint.params.config.clone(),
    };
    let header_toml =
        toml::to_string(&header).map_err(|e| Error::CheckpointFormat(format!("header: {e}")))?;

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header_toml.len() as u64).to_le_bytes());
    buf.extend_from_slice(header_toml.as_bytes());

    let mut index = 0;
    let mut block_err = None;
    checkpoint.params.visit(&mut |name, arr| {
        if block_err.is_some() {
            return;
        }
        let slot = &checkpoint.adam.moments[index];
        if slot.name != name || slot.first.len() != arr.len() {
            block_err = Some(Error::CheckpointFormat(format!(
                "optimizer moments misaligned at `{name}`"
            )));
            return;
        }
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(arr.shape().len() as u32).to_le_bytes());
        for &dim in arr.shape() {
            buf.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        push_f64s(&mut buf, arr.values());
        push_f64s(&mut buf, &slot.first);
        push_f64s(&mut buf, &slot.second);
        index += 1;
    });
    if let Some(err) = block_err {
        return Err(err);
    }
    if index != checkpoint.adam.moments.len() {
        return Err(Error::CheckpointFormat(
            "optimizer state has more parameters than the model".into(),
        ));
    }

    let checksum = fnv1a(&buf);
    buf.extend_from_slice(&checksum.to_le_bytes());
    std::fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(Error::CheckpointFormat(format!(
                "truncated file while reading {what} (need {n} bytes at offset {})",
                self.offset
            )));
        }
        let slice = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, what: &str) -> Result<Vec<f64>> {
        let count = self.u64(what)? as usize;
        let raw = self.take(count * 8, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::MissingFile(format!("{}: {e}", path.display())))?;
    if bytes.len() < MAGIC.len() + 4 + 8 + 8 {
        return Err(Error::CheckpointFormat("file too short".into()));
    }

    let payload_len = bytes.len() - 8;
    let stored_checksum = u64::from_le_bytes(bytes[payload_len..].try_into().unwrap());
    let actual = fnv1a(&bytes[..payload_len]);
    if stored_checksum != actual {
        return Err(Error::CheckpointFormat(format!(
            "checksum mismatch: stored {stored_checksum:#018x}, computed {actual:#018x}"
        )));
    }

    let mut r = Reader { bytes: &bytes[..payload_len], offset: 0 };
    let magic = r.take(8, "magic")?;
    if magic != MAGIC {
        return Err(Error::CheckpointFormat(format!("bad magic {magic:02x?}")));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::CheckpointFormat(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let header_len = r.u64("header length")? as usize;
    let header_bytes = r.take(header_len, "header")?;
    let header_str = std::str::from_utf8(header_bytes)
        .map_err(|e| Error::CheckpointFormat(format!("header not UTF-8: {e}")))?;
    let header: Header = toml::from_str(header_str)
        .map_err(|e| Error::CheckpointFormat(format!("header parse: {e}")))?;
    header.model.validate()?;

    // read blocks in file order
    let mut blocks: Vec<(String, Vec<usize>, Vec<f64>, Vec<f64>, Vec<f64>)> = Vec::new();
    while r.offset < r.bytes.len() {
        let name_len = r.u32("parameter name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "parameter name")?)
            .map_err(|e| Error::CheckpointFormat(format!("parameter name not UTF-8: {e}")))?
            .to_string();
        let ndim = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64("extent")? as usize);
        }
        let values = r.f64s("values")?;
        let expect: usize = shape.iter().product();
        if values.len() != expect {
            return Err(Error::CheckpointFormat(format!(
                "`{name}`: shape {shape:?} needs {expect} values, block has {}",
                values.len()
            )));
        }
        let first = r.f64s("first moment")?;
        let second = r.f64s("second moment")?;
        if first.len() != values.len() || second.len() != values.len() {
            return Err(Error::CheckpointFormat(format!(
                "`{name}`: moment lengths do not match value count"
            )));
        }
        blocks.push((name, shape, values, first, second));
    }

    // rebuild the parameter set against the canonical order for this config
    let mut zero_cfg = header.model.clone();
    zero_cfg.init_std = 0.0;
    let skeleton = init_params(&zero_cfg, 0)?;
    let expected_names = skeleton.param_names();
    if blocks.len() != expected_names.len() {
        return Err(Error::CheckpointFormat(format!(
            "file has {} parameter blocks, config requires {}",
            blocks.len(),
            expected_names.len()
        )));
    }

    let mut index = 0;
    let mut moments = Vec::with_capacity(blocks.len());
    let mut build_err: Option<Error> = None;
    let mut params = skeleton.map(&mut |name, arr| {
        let (block_name, shape, values, first, second) = &blocks[index];
        index += 1;
        if build_err.is_some() {
            return arr.clone();
        }
        if block_name != name {
            build_err = Some(Error::CheckpointFormat(format!(
                "parameter order mismatch: file has `{block_name}`, expected `{name}`"
            )));
            return arr.clone();
        }
        if shape != arr.shape() {
            build_err = Some(Error::CheckpointFormat(format!(
                "`{name}`: shape {shape:?} does not match config shape {:?}",
                arr.shape()
            )));
            return arr.clone();
        }
        moments.push(Moments {
            name: block_name.clone(),
            first: first.clone(),
            second: second.clone(),
        });
        DiffArray::from_vec(shape.clone(), values.clone()).expect("length checked above")
    });
    if let Some(err) = build_err {
        return Err(err);
    }
    params.config = header.model.clone();

    Ok(Checkpoint {
        step: header.step,
        params,
        adam: AdamState { hyper: header.adam, step: header.adam_step, moments },
        rng: CounterRng::from_state(header.rng_key, header.rng_counter),
    })
}
