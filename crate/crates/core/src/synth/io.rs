//! Binary dataset container.
//!
//! Layout (little endian): magic `NGCS1`, `u32` version, `u32` sample count,
//! then per sample a `u32`-length-prefixed JSON metadata block, a `u32` tensor
//! count and named tensors (`u32` name length, UTF-8 name, `u32` rank, `u64`
//! extents, `f64` data). Tensors are named `L0.<field>` for the global level
//! and `W<w>.L<l>.<field>` for refinements.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{read_tensor, write_tensor, CountingReader};
use crate::tensor::Tensor;

use super::{FieldSet, ReservoirSample, SampleMeta};

pub const DATASET_MAGIC: &[u8; 5] = b"NGCS1";
const VERSION: u32 = 1;
const MAX_NAME: u32 = 256;
const MAX_JSON: u32 = 1 << 24;

fn prefix(well: Option<usize>, level: usize) -> String {
    match well {
        None => "L0".to_string(),
        Some(w) => format!("W{w}.L{level}"),
    }
}

pub fn write_dataset<W: Write>(mut w: W, samples: &[ReservoirSample]) -> Result<()> {
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(samples.len() as u32).to_le_bytes())?;
    for s in samples {
        let json = serde_json::to_vec(&s.meta)?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        let mut named: Vec<(String, &Tensor)> = Vec::new();
        for (n, t) in FieldSet::NAMES.iter().zip(s.global.tensors()) {
            named.push((format!("{}.{n}", prefix(None, 0)), t));
        }
        for (wi, levels) in s.wells.iter().enumerate() {
            for (li, set) in levels.iter().enumerate() {
                for (n, t) in FieldSet::NAMES.iter().zip(set.tensors()) {
                    named.push((format!("{}.{n}", prefix(Some(wi), li + 1)), t));
                }
            }
        }
        w.write_all(&(named.len() as u32).to_le_bytes())?;
        for (name, t) in named {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            write_tensor(&mut w, t.shape(), t.data())?;
        }
    }
    Ok(())
}

pub fn write_dataset_bytes(samples: &[ReservoirSample]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_dataset(&mut buf, samples)?;
    Ok(buf)
}

pub fn save_dataset(path: &Path, samples: &[ReservoirSample]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_dataset(&mut w, samples)?;
    w.flush()?;
    Ok(())
}

fn format_err(offset: u64, message: impl Into<String>) -> Error {
    Error::Format {
        offset,
        message: message.into(),
    }
}

fn take_set(map: &mut HashMap<String, Tensor>, p: &str, grid: [usize; 3], nt: usize, at: u64) -> Result<FieldSet> {
    let mut get = |n: &str, dynamic: bool| -> Result<Tensor> {
        let name = format!("{p}.{n}");
        let t = map.remove(&name).ok_or_else(|| format_err(at, format!("missing tensor {name}")))?;
        let mut want = if dynamic { vec![nt] } else { Vec::new() };
        want.extend_from_slice(&grid);
        if t.shape() != want.as_slice() {
            return Err(format_err(at, format!("tensor {name} has shape {:?}, expected {want:?}", t.shape())));
        }
        Ok(t)
    };
    Ok(FieldSet {
        ln_k: get("lnk", false)?,
        temperature: get("temp", false)?,
        initial_pressure: get("p0", false)?,
        pressure: get("dp", true)?,
        saturation: get("sat", true)?,
    })
}

pub fn read_dataset<R: Read>(r: R) -> Result<Vec<ReservoirSample>> {
    let mut r = CountingReader { inner: r, offset: 0 };
    let mut magic = [0u8; 5];
    r.read_exact_at(&mut magic, "magic")?;
    if &magic != DATASET_MAGIC {
        return Err(format_err(0, "bad dataset magic"));
    }
    let version = r.read_u32("version")?;
    if version != VERSION {
        return Err(format_err(5, format!("unsupported dataset version {version}")));
    }
    let count = r.read_u32("sample count")? as usize;
    let mut samples = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let at = r.offset;
        let len = r.read_u32("metadata length")?;
        if len > MAX_JSON {
            return Err(format_err(at, format!("implausible metadata length {len}")));
        }
        let mut json = vec![0u8; len as usize];
        r.read_exact_at(&mut json, "metadata")?;
        let meta: SampleMeta =
            serde_json::from_slice(&json).map_err(|e| format_err(at + 4, format!("metadata json: {e}")))?;
        let n_tensors = r.read_u32("tensor count")?;
        let mut map = HashMap::new();
        for _ in 0..n_tensors {
            let nat = r.offset;
            let nlen = r.read_u32("name length")?;
            if nlen == 0 || nlen > MAX_NAME {
                return Err(format_err(nat, format!("implausible name length {nlen}")));
            }
            let mut name = vec![0u8; nlen as usize];
            r.read_exact_at(&mut name, "tensor name")?;
            let name = String::from_utf8(name).map_err(|_| format_err(nat, "tensor name is not UTF-8"))?;
            let (shape, data) = read_tensor(&mut r)?;
            if map.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
                return Err(format_err(nat, format!("duplicate tensor {name}")));
            }
        }
        let g = &meta.geometry;
        g.validate().map_err(|e| format_err(at, format!("metadata geometry: {e}")))?;
        let nt = meta.times.len();
        let global = take_set(&mut map, &prefix(None, 0), g.global, nt, at)?;
        let mut wells = Vec::with_capacity(meta.wells.len());
        for wi in 0..meta.wells.len() {
            let mut levels = Vec::new();
            for l in 1..g.n_levels() {
                levels.push(take_set(&mut map, &prefix(Some(wi), l), g.grid(l), nt, at)?);
            }
            wells.push(levels);
        }
        if let Some(extra) = map.keys().next() {
            return Err(format_err(at, format!("unexpected tensor {extra}")));
        }
        samples.push(ReservoirSample { meta, global, wells });
    }
    let mut extra = [0u8; 1];
    if r.inner.read(&mut extra)? != 0 {
        return Err(format_err(r.offset, "trailing bytes after last sample"));
    }
    Ok(samples)
}

pub fn read_dataset_bytes(bytes: &[u8]) -> Result<Vec<ReservoirSample>> {
    read_dataset(bytes)
}

pub fn load_dataset(path: &Path) -> Result<Vec<ReservoirSample>> {
    read_dataset(std::io::BufReader::new(std::fs::File::open(path)?))
}
