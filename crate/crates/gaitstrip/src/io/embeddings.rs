//! Embedding-file serialization.
//!
//! Layout (integers little-endian):
//!   magic "GSTRIPE1" (8 ASCII bytes)
//!   bins: u32, dim: u32, count: u32
//!   per record: id (u16 length + UTF-8), label u32,
//!               view tag (u16 length + UTF-8, may be empty),
//!               data (bins*dim f32)

use crate::error::{Error, Result};
use crate::model::Embedding;
use crate::tensor::Tensor;
use std::fs;
use std::path::Path;

pub const EMBEDDINGS_MAGIC: &[u8; 8] = b"GSTRIPE1";

pub fn save_embeddings(
    path: &Path,
    bins: usize,
    dim: usize,
    records: &[Embedding],
) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(EMBEDDINGS_MAGIC);
    buf.extend_from_slice(&(bins as u32).to_le_bytes());
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    buf.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for e in records {
        if e.values.dims() != [bins, dim] {
            return Err(Error::shape_mismatch(
                e.values.dims(),
                &[bins, dim],
                "embedding record",
            ));
        }
        buf.extend_from_slice(&(e.id.len() as u16).to_le_bytes());
        buf.extend_from_slice(e.id.as_bytes());
        buf.extend_from_slice(&e.label.unwrap_or(0).to_le_bytes());
        let view = e.view.as_deref().unwrap_or("");
        buf.extend_from_slice(&(view.len() as u16).to_le_bytes());
        buf.extend_from_slice(view.as_bytes());
        for &v in e.values.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Returns (bins, dim, records).
pub fn load_embeddings(path: &Path) -> Result<(usize, usize, Vec<Embedding>)> {
    let bytes = fs::read(path)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize, what: &str| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::Truncated(what.to_string()));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let magic = take(&mut pos, 8, "magic")?;
    if magic != EMBEDDINGS_MAGIC {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(EMBEDDINGS_MAGIC).into_owned(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let u32_at = |pos: &mut usize, what: &str| -> Result<u32> {
        Ok(u32::from_le_bytes(take(pos, 4, what)?.try_into().unwrap()))
    };
    let u16_at = |pos: &mut usize, what: &str| -> Result<u16> {
        Ok(u16::from_le_bytes(take(pos, 2, what)?.try_into().unwrap()))
    };
    let bins = u32_at(&mut pos, "bins")? as usize;
    let dim = u32_at(&mut pos, "dim")? as usize;
    let count = u32_at(&mut pos, "count")? as usize;
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let id_len = u16_at(&mut pos, "record id length")? as usize;
        let id = String::from_utf8(take(&mut pos, id_len, "record id")?.to_vec())
            .map_err(|_| Error::Format(format!("record {i}: invalid UTF-8 id")))?;
        let label = u32_at(&mut pos, "record label")?;
        let view_len = u16_at(&mut pos, "record view length")? as usize;
        let view = String::from_utf8(take(&mut pos, view_len, "record view")?.to_vec())
            .map_err(|_| Error::Format(format!("record {i}: invalid UTF-8 view")))?;
        let raw = take(&mut pos, bins * dim * 4, &format!("record {id} data"))?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push(Embedding {
            values: Tensor::new(&[bins, dim], data)?,
            id,
            label: Some(label),
            view: Some(view),
        });
    }
    Ok((bins, dim, records))
}

/// Appends a record, creating the file if absent; bins/dim must agree with
/// the existing file.
pub fn append_embedding(path: &Path, bins: usize, dim: usize, record: Embedding) -> Result<()> {
    let mut records = if path.exists() {
        let (fb, fd, records) = load_embeddings(path)?;
        if (fb, fd) != (bins, dim) {
            return Err(Error::shape_mismatch(
                &[fb, fd],
                &[bins, dim],
                "embedding file layout",
            ));
        }
        records
    } else {
        Vec::new()
    };
    records.push(record);
    save_embeddings(path, bins, dim, &records)
}
