//! Binary checkpoints.
//!
//! Layout, all integers little-endian u32:
//!
//! ```text
//! "WCNN" | version | json_len | json (CheckpointMeta + tensor_count)
//! repeated tensor_count times:
//!     name_len | name (UTF-8) | rank | extents[rank] | f32 payload
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use wrecon_core::model::CheckpointMeta;
use wrecon_core::{Checkpoint, Tensor};

use crate::error::{put_f32s, put_u32, to_u32, FormatError, Reader, Result};
use crate::fsutil;

pub const MAGIC: [u8; 4] = *b"WCNN";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    #[serde(flatten)]
    meta: CheckpointMeta,
    tensor_count: usize,
}

pub fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        meta: ck.meta.clone(),
        tensor_count: ck.tensors.len(),
    })?;
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, to_u32(header.len(), "header length")?);
    out.extend_from_slice(&header);
    for (name, t) in &ck.tensors {
        put_u32(&mut out, to_u32(name.len(), "name length")?);
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, to_u32(t.rank(), "rank")?);
        for &e in t.shape() {
            put_u32(&mut out, to_u32(e, "extent")?);
        }
        put_f32s(&mut out, t.data());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(FormatError::Version {
            expected: VERSION,
            found: version,
        });
    }
    let len = r.u32("header length")? as usize;
    let header: Header = serde_json::from_slice(r.take(len, "header")?)?;
    let mut tensors = Vec::with_capacity(header.tensor_count.min(1 << 16));
    for _ in 0..header.tensor_count {
        let n = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(n, "tensor name")?)
            .map_err(|e| FormatError::invalid("tensor name", e.to_string()))?
            .to_owned();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32("extent")? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| FormatError::Overflow(format!("tensor {name} shape {shape:?}")))?;
        let data = r.f32s(count, "tensor payload")?;
        let t = Tensor::new(&shape, data).map_err(|e| FormatError::invalid("tensor", format!("{name}: {e}")))?;
        tensors.push((name, t));
    }
    r.finish()?;
    Ok(Checkpoint {
        meta: header.meta,
        tensors,
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, &encode(ck)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode(&fsutil::read(path)?)
}
