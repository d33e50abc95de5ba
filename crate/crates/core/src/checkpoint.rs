//! Binary checkpoint format for parameter stores.
//!
//! Layout: magic `NPK1`, then u32-LE tensor count, then per tensor:
//! u32-LE name length, UTF-8 name bytes, u32-LE ndim, u32-LE dims, f64-LE
//! data. Tensors are written in sorted-name order, so save → load → save is
//! byte-identical.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"NPK1";

pub fn write_params(store: &ParamStore, w: &mut impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, tensor) in store.iter() {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u32).to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
        for &d in tensor.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_params(r: &mut impl Read) -> Result<ParamStore> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}, expected \"NPK1\"")));
    }
    let count = read_u32(r, "tensor count")?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = read_u32(r, "name length")? as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact(r, &mut name_bytes, "name")?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let ndim = read_u32(r, "ndim")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u32(r, "dim")? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut buf = [0u8; 8];
        for _ in 0..numel {
            read_exact(r, &mut buf, "tensor data")?;
            data.push(f64::from_le_bytes(buf));
        }
        store.insert(name, Tensor::new(shape, data)?)?;
    }
    Ok(store)
}

pub fn save_params(store: &ParamStore, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_params(store, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<ParamStore> {
    let bytes = fs::read(path)?;
    read_params(&mut bytes.as_slice())
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, what)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format(format!("truncated checkpoint while reading {what}")))
}
