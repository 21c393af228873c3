//! Weight-file serialization.
//!
//! Layout (all integers little-endian):
//!   magic "GSTRIPW1" (8 ASCII bytes)
//!   header_len: u32
//!   header: UTF-8 key=value lines (format, fingerprint, fused, seed)
//!   tensor_count: u32
//!   per tensor: name (u16 length + UTF-8), rank u8, dims (u32 each),
//!               data (f32, row-major, last dim fastest)
//!
//! load(save(w)) is bit-identical; a header whose fingerprint does not parse
//! back to the same config is rejected.

use crate::ecm::{BlockKind, EcmParams};
use crate::error::{Error, Result};
use crate::model::{BlockParams, ModelConfig, ModelWeights};
use crate::nn::{ConvKernel, LinearMap};
use crate::tensor::Tensor;
use std::fs;
use std::path::Path;

pub const WEIGHTS_MAGIC: &[u8; 8] = b"GSTRIPW1";
pub const WEIGHTS_FORMAT_VERSION: u32 = 1;

fn block_tensors<'a>(prefix: &str, index: usize, block: &'a BlockParams) -> Vec<(String, &'a Tensor)> {
    let kernel = |name: &str, k: &'a ConvKernel| {
        vec![
            (format!("{prefix}.{index}.{name}.weight"), &k.weights),
            (format!("{prefix}.{index}.{name}.bias"), &k.bias),
        ]
    };
    match block {
        BlockParams::Conv(k) => kernel("conv", k),
        BlockParams::StOnly(k) => kernel("st", k),
        BlockParams::StFl { st, fl } => {
            let mut v = kernel("st", st);
            v.extend(kernel("fl", fl));
            v
        }
        BlockParams::Ecm(p) => {
            let mut v = kernel("st", &p.st);
            v.extend(kernel("fl", &p.fl));
            v.extend(kernel("spb_h", &p.spb_h));
            v.extend(kernel("spb_v", &p.spb_v));
            v
        }
        BlockParams::Fused(k) => kernel("fused", k),
    }
}

fn named_tensors(w: &ModelWeights) -> Vec<(String, &Tensor)> {
    let mut out = Vec::new();
    for (i, b) in w.shared.iter().enumerate() {
        out.extend(block_tensors("shared", i, b));
    }
    for (i, b) in w.low.iter().enumerate() {
        out.extend(block_tensors("low", i + w.config.split_after_block, b));
    }
    for (i, b) in w.high.iter().enumerate() {
        out.extend(block_tensors("high", i + w.config.split_after_block, b));
    }
    for (i, m) in w.bin_maps.iter().enumerate() {
        out.push((format!("bin.{i}.weight"), &m.weights));
        out.push((format!("bin.{i}.bias"), &m.bias));
    }
    out
}

pub fn save_weights(w: &ModelWeights, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(WEIGHTS_MAGIC);
    let header = format!(
        "format={}\nfingerprint={}\nfused={}\nseed={}\n",
        WEIGHTS_FORMAT_VERSION,
        w.config.fingerprint(),
        if w.fused { 1 } else { 0 },
        w.seed,
    );
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(header.as_bytes());

    let tensors = named_tensors(w);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(t.rank() as u8);
        for &d in t.dims() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated(what.to_string()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes(b.try_into().unwrap()))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn string(&mut self, len: usize, what: &str) -> Result<String> {
        let b = self.take(len, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Format(format!("{what}: invalid UTF-8")))
    }
}

fn read_tensor(r: &mut Reader) -> Result<(String, Tensor)> {
    let name_len = r.u16("tensor name length")? as usize;
    let name = r.string(name_len, "tensor name")?;
    let rank = r.u8(&format!("tensor {name} rank"))? as usize;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(r.u32(&format!("tensor {name} dims"))? as usize);
    }
    let count: usize = dims.iter().product();
    let raw = r.take(count * 4, &format!("tensor {name} data"))?;
    let data: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((name, Tensor::new(&dims, data)?))
}

struct TensorCursor {
    tensors: std::vec::IntoIter<(String, Tensor)>,
}

impl TensorCursor {
    fn next(&mut self, expected: &str) -> Result<Tensor> {
        let (name, t) = self
            .tensors
            .next()
            .ok_or_else(|| Error::Truncated(format!("tensor {expected}")))?;
        if name != expected {
            return Err(Error::Format(format!(
                "expected tensor {expected:?}, found {name:?}"
            )));
        }
        Ok(t)
    }

    fn kernel(&mut self, prefix: &str) -> Result<ConvKernel> {
        let w = self.next(&format!("{prefix}.weight"))?;
        let b = self.next(&format!("{prefix}.bias"))?;
        ConvKernel::new(w, b)
    }
}

fn read_block(
    cursor: &mut TensorCursor,
    cfg: &ModelConfig,
    prefix: &str,
    index: usize,
    fused: bool,
) -> Result<BlockParams> {
    let name = |comp: &str| format!("{prefix}.{index}.{comp}");
    if index < cfg.ecm_from_block {
        return Ok(BlockParams::Conv(cursor.kernel(&name("conv"))?));
    }
    if fused || cfg.block_kind == BlockKind::Fused {
        return Ok(BlockParams::Fused(cursor.kernel(&name("fused"))?));
    }
    match cfg.block_kind {
        BlockKind::StOnly => Ok(BlockParams::StOnly(cursor.kernel(&name("st"))?)),
        BlockKind::StFl => Ok(BlockParams::StFl {
            st: cursor.kernel(&name("st"))?,
            fl: cursor.kernel(&name("fl"))?,
        }),
        BlockKind::FullEcm => Ok(BlockParams::Ecm(EcmParams::new(
            cursor.kernel(&name("st"))?,
            cursor.kernel(&name("fl"))?,
            cursor.kernel(&name("spb_h"))?,
            cursor.kernel(&name("spb_v"))?,
        )?)),
        BlockKind::Fused => unreachable!(),
    }
}

pub fn load_weights(path: &Path) -> Result<ModelWeights> {
    let bytes = fs::read(path)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
    };
    let magic = r.take(8, "magic")?;
    if magic != WEIGHTS_MAGIC {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(WEIGHTS_MAGIC).into_owned(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let header_len = r.u32("header length")? as usize;
    let header = r.string(header_len, "header")?;
    let mut fingerprint = None;
    let mut fused = None;
    let mut seed = None;
    let mut format = None;
    for line in header.lines() {
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Format(format!("bad header line {line:?}")));
        };
        match k {
            "fingerprint" => fingerprint = Some(v.to_string()),
            "fused" => fused = Some(v == "1"),
            "seed" => {
                seed = Some(v.parse::<u64>().map_err(|_| {
                    Error::Format(format!("bad seed {v:?} in header"))
                })?)
            }
            "format" => {
                format = Some(v.parse::<u32>().map_err(|_| {
                    Error::Format(format!("bad format version {v:?}"))
                })?)
            }
            _ => {} // forward-compatible: unknown keys are ignored
        }
    }
    match format {
        Some(WEIGHTS_FORMAT_VERSION) => {}
        Some(v) => {
            return Err(Error::Format(format!(
                "unsupported format version {v}, expected {WEIGHTS_FORMAT_VERSION}"
            )))
        }
        None => return Err(Error::Format("header missing format version".into())),
    }
    let fingerprint =
        fingerprint.ok_or_else(|| Error::Format("header missing fingerprint".into()))?;
    let fused = fused.ok_or_else(|| Error::Format("header missing fused flag".into()))?;
    let seed = seed.ok_or_else(|| Error::Format("header missing seed".into()))?;
    let config = ModelConfig::from_fingerprint(&fingerprint)?;
    if config.fingerprint() != fingerprint {
        return Err(Error::FingerprintMismatch {
            expected: config.fingerprint(),
            found: fingerprint,
        });
    }

    let tensor_count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(tensor_count);
    for _ in 0..tensor_count {
        tensors.push(read_tensor(&mut r)?);
    }
    let mut cursor = TensorCursor {
        tensors: tensors.into_iter(),
    };

    let n = config.block_channels.len();
    let split = config.split_after_block;
    let shared = (0..split)
        .map(|i| read_block(&mut cursor, &config, "shared", i, fused))
        .collect::<Result<Vec<_>>>()?;
    let low = (split..n)
        .map(|i| read_block(&mut cursor, &config, "low", i, fused))
        .collect::<Result<Vec<_>>>()?;
    let high = (split..n)
        .map(|i| read_block(&mut cursor, &config, "high", i, fused))
        .collect::<Result<Vec<_>>>()?;
    let bin_maps = (0..config.bins())
        .map(|i| {
            let w = cursor.next(&format!("bin.{i}.weight"))?;
            let b = cursor.next(&format!("bin.{i}.bias"))?;
            LinearMap::new(w, b)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ModelWeights {
        config,
        shared,
        low,
        high,
        bin_maps,
        fused,
        seed,
    })
}

/// Loads weights and rejects them unless they match the expected config.
pub fn load_weights_expecting(path: &Path, expected: &ModelConfig) -> Result<ModelWeights> {
    let w = load_weights(path)?;
    if &w.config != expected {
        return Err(Error::FingerprintMismatch {
            expected: expected.fingerprint(),
            found: w.config.fingerprint(),
        });
    }
    Ok(w)
}
