//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "DDET" | u32 version (1) | table(params) | table(optimizer) | u32 crc32
//! table  := u32 count, entry*
//! entry  := u32 name_len, name (UTF-8), u8 dtype (0 = f32, 1 = f64),
//!           u8 rank, u32 dims[rank], values (LE, dtype-sized)
//! ```
//!
//! The optimizer table holds `adam.m/<param>`, `adam.v/<param>`, `adam.step`
//! and `init_seed`. The CRC covers every byte before it.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::params::ModelParams;
use crate::optim::AdamState;
use crate::tensor::{Scalar, Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"DDET";
pub const VERSION: u32 = 1;

const STEP_KEY: &str = "adam.step";
const SEED_KEY: &str = "init_seed";
const M_PREFIX: &str = "adam.m/";
const V_PREFIX: &str = "adam.v/";

struct Entry {
    name: String,
    dtype: u8,
    shape: Shape,
    values: Vec<f64>,
    raw: Vec<u8>,
}

fn write_entry<T: Scalar>(out: &mut Vec<u8>, name: &str, shape: Shape, data: &[T]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(T::DTYPE);
    out.push(4);
    for d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in data {
        v.write_le(out);
    }
}

/// Serializes parameters and optimizer state to bytes.
pub fn encode<T: Scalar>(params: &ModelParams<T>, state: &AdamState<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        write_entry(&mut out, name, t.shape(), t.data());
    }
    let opt_count = state.m.len() + state.v.len() + 2;
    out.extend_from_slice(&(opt_count as u32).to_le_bytes());
    for (name, m) in &state.m {
        write_entry(&mut out, &format!("{M_PREFIX}{name}"), [m.len(), 1, 1, 1], m);
    }
    for (name, v) in &state.v {
        write_entry(&mut out, &format!("{V_PREFIX}{name}"), [v.len(), 1, 1, 1], v);
    }
    write_entry(&mut out, STEP_KEY, [1, 1, 1, 1], &[state.step as f64]);
    write_entry(&mut out, SEED_KEY, [1, 1, 1, 1], &[params.init_seed as f64]);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn checkpoint_save<T: Scalar>(params: &ModelParams<T>, state: &AdamState<T>, path: &Path) -> Result<()> {
    let bytes = encode(params, state);
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!("truncated file at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn entry(&mut self) -> Result<Entry> {
        let len = self.u32()? as usize;
        let name = std::str::from_utf8(self.take(len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let dtype = self.u8()?;
        let width = match dtype {
            0 => 4,
            1 => 8,
            other => return Err(Error::Format(format!("unknown dtype code {other} for `{name}`"))),
        };
        let rank = self.u8()? as usize;
        if rank > 4 {
            return Err(Error::Format(format!("rank {rank} of `{name}` exceeds 4")));
        }
        let mut shape = [1usize; 4];
        for d in shape.iter_mut().take(rank) {
            *d = self.u32()? as usize;
        }
        let count: usize = shape.iter().product();
        let raw = self.take(count * width)?.to_vec();
        let values = raw
            .chunks_exact(width)
            .map(|c| if width == 4 { f32::read_le(c) as f64 } else { f64::read_le(c) })
            .collect();
        Ok(Entry {
            name,
            dtype,
            shape,
            values,
            raw,
        })
    }

    fn table(&mut self) -> Result<Vec<Entry>> {
        let count = self.u32()?;
        (0..count).map(|_| self.entry()).collect()
    }
}

fn to_vec<T: Scalar>(e: &Entry) -> Vec<T> {
    if e.dtype == T::DTYPE {
        let width = e.raw.len() / e.values.len().max(1);
        e.raw.chunks_exact(width.max(1)).map(T::read_le).collect()
    } else {
        e.values.iter().map(|&v| T::from_f64(v)).collect()
    }
}

/// Parses checkpoint bytes.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<(ModelParams<T>, AdamState<T>)> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic bytes (expected \"DDET\")".into()));
    }
    if bytes.len() < 12 {
        return Err(Error::Format("truncated header".into()));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}, expected {VERSION}")));
    }
    let params_table = r.table()?;
    let opt_table = r.table()?;
    if r.pos != body.len() {
        return Err(Error::Format(format!("{} trailing bytes before checksum", body.len() - r.pos)));
    }
    let stored = u32::from_le_bytes(crc_bytes.try_into().expect("4 bytes"));
    if stored != crc32fast::hash(body) {
        return Err(Error::Format("checksum mismatch".into()));
    }

    let mut tensors = BTreeMap::new();
    for e in &params_table {
        let t = Tensor::from_vec(e.shape, to_vec(e))?;
        if tensors.insert(e.name.clone(), t).is_some() {
            return Err(Error::Format(format!("duplicate tensor `{}`", e.name)));
        }
    }
    let mut state = AdamState::new();
    let mut seed = 0;
    for e in &opt_table {
        if let Some(n) = e.name.strip_prefix(M_PREFIX) {
            state.m.insert(n.to_string(), to_vec(e));
        } else if let Some(n) = e.name.strip_prefix(V_PREFIX) {
            state.v.insert(n.to_string(), to_vec(e));
        } else if e.name == STEP_KEY {
            state.step = e.values.first().copied().unwrap_or(0.0) as u64;
        } else if e.name == SEED_KEY {
            seed = e.values.first().copied().unwrap_or(0.0) as u64;
        } else {
            return Err(Error::Format(format!("unknown optimizer entry `{}`", e.name)));
        }
    }
    Ok((ModelParams::from_map(tensors, seed), state))
}

pub fn checkpoint_load<T: Scalar>(path: &Path) -> Result<(ModelParams<T>, AdamState<T>)> {
    decode(&fs::read(path)?)
}

/// Loads and checks every parameter name and shape against `cfg`.
pub fn checkpoint_load_for<T: Scalar>(path: &Path, cfg: &ModelConfig) -> Result<(ModelParams<T>, AdamState<T>)> {
    let (params, state) = checkpoint_load(path)?;
    params.check_config(cfg)?;
    Ok((params, state))
}
