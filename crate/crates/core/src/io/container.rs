//! `LEADW1` container, little-endian throughout:
//!
//! ```text
//! magic      6 bytes  "LEADW1"
//! count      u32      number of tensors
//! per tensor:
//!   name_len u32, name (UTF-8), ndim u8, dims u32 x ndim,
//!   dtype u8 (0 = f32), payload f32 x product(dims)
//! crc        u32      CRC-32 (IEEE) of every byte between magic and crc
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{WeightStore, WeightTensor};
use crate::tensor::Tensor;

use super::write_atomic;

pub const CONTAINER_MAGIC: &[u8; 6] = b"LEADW1";
const DTYPE_F32: u8 = 0;

pub fn encode_weights(store: &WeightStore) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + store.parameter_count() * 4);
    out.extend_from_slice(CONTAINER_MAGIC);
    out.extend_from_slice(&u32::try_from(store.len()).map_err(|_| too_big("tensor count"))?.to_le_bytes());
    for (name, t) in store.iter() {
        let name_len = u32::try_from(name.len()).map_err(|_| too_big("name"))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let ndim = u8::try_from(t.dims().len()).map_err(|_| too_big("rank"))?;
        out.push(ndim);
        for &d in t.dims() {
            out.extend_from_slice(&u32::try_from(d).map_err(|_| too_big("dimension"))?.to_le_bytes());
        }
        out.push(DTYPE_F32);
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out[CONTAINER_MAGIC.len()..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn too_big(what: &str) -> Error {
    Error::Container(format!("{what} does not fit the container's field width"))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Truncated(format!("{what} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
}

/// Parses a container. Checks, in order: magic, presence of the checksum,
/// the checksum itself, then the directory.
pub fn decode_weights(bytes: &[u8]) -> Result<WeightStore> {
    if bytes.len() < CONTAINER_MAGIC.len() || &bytes[..CONTAINER_MAGIC.len()] != CONTAINER_MAGIC {
        if CONTAINER_MAGIC.starts_with(bytes) {
            return Err(Error::Truncated("file ends inside the magic".into()));
        }
        return Err(Error::Container("missing LEADW1 magic".into()));
    }
    if bytes.len() < CONTAINER_MAGIC.len() + 8 {
        return Err(Error::Truncated("file too short for count and checksum".into()));
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc.try_into().unwrap());
    let computed = crc32fast::hash(&body[CONTAINER_MAGIC.len()..]);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let mut cur = Cursor {
        bytes: body,
        pos: CONTAINER_MAGIC.len(),
    };
    let count = cur.u32("tensor count")?;
    let mut store = WeightStore::new();
    for k in 0..count {
        let name_len = cur.u32("name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "name")?)
            .map_err(|_| Error::Container(format!("tensor {k} has a non-UTF-8 name")))?
            .to_string();
        let ndim = cur.u8("rank")? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(cur.u32("dimension")? as usize);
        }
        let dtype = cur.u8("dtype")?;
        if dtype != DTYPE_F32 {
            return Err(Error::Container(format!("tensor `{name}` has unknown dtype tag {dtype}")));
        }
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Container(format!("tensor `{name}` is too large")))?;
        let payload = cur.take(n, "payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.insert(name, WeightTensor::new(dims, data)?)?;
    }
    if cur.pos != body.len() {
        return Err(Error::Container(format!(
            "{} unexpected bytes after the last tensor",
            body.len() - cur.pos
        )));
    }
    Ok(store)
}

pub fn read_weights(path: impl AsRef<Path>) -> Result<WeightStore> {
    decode_weights(&std::fs::read(path)?)
}

pub fn write_weights(path: impl AsRef<Path>, store: &WeightStore) -> Result<()> {
    write_atomic(path, &encode_weights(store)?)
}

/// Packs dense maps into a store, one `(height, width, channels)` tensor per
/// name, so they can travel losslessly in the same container.
pub fn maps_to_store(maps: &[(&str, &Tensor)]) -> Result<WeightStore> {
    let mut store = WeightStore::new();
    for (name, t) in maps {
        let (h, w, c) = t.shape();
        store.insert(*name, WeightTensor::new(vec![h, w, c], t.data().to_vec())?)?;
    }
    Ok(store)
}

/// Inverse of [`maps_to_store`] for one entry.
pub fn store_to_maps(store: &WeightStore, name: &str) -> Result<Tensor> {
    let t = store
        .get(name)
        .ok_or_else(|| Error::MissingTensor(name.to_string()))?;
    match *t.dims() {
        [h, w, c] => Tensor::from_vec(h, w, c, t.data().to_vec()),
        _ => Err(Error::ShapeMismatch {
            name: name.to_string(),
            expected: vec![0, 0, 0],
            found: t.dims().to_vec(),
        }),
    }
}
