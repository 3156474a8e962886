//! "FTNS" binary tensor files.
//!
//! Layout (all little-endian): ASCII `FTNS`, `u32` version (1), `u32` ndim,
//! ndim × `u32` dims, then the row-major `f32` payload.
//!
//! A named-tensor file is a sequence of records, each a `u32` name length,
//! the UTF-8 name, then one FTNS tensor.

use std::io::{self, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::Tensor;
use crate::error::{Error, Result};

pub const FTNS_MAGIC: &[u8; 4] = b"FTNS";
const VERSION: u32 = 1;
const MAX_NAME_LEN: u32 = 4096;

pub fn write_ftns<W: Write>(tensor: &Tensor<f32>, mut w: W) -> Result<()> {
    w.write_all(FTNS_MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(tensor.ndim() as u32)?;
    for &d in tensor.shape() {
        w.write_u32::<LittleEndian>(d as u32)?;
    }
    for &v in tensor.data() {
        w.write_f32::<LittleEndian>(v)?;
    }
    Ok(())
}

fn truncated(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::Format("unexpected end of tensor data".into())
    } else {
        Error::Io(e)
    }
}

pub fn read_ftns<R: Read>(mut r: R) -> Result<Tensor<f32>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != FTNS_MAGIC {
        return Err(Error::Format("not an FTNS tensor file".into()));
    }
    let version = r.read_u32::<LittleEndian>().map_err(truncated)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported FTNS version {version}")));
    }
    let ndim = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    if ndim == 0 || ndim > 16 {
        return Err(Error::Format(format!("bad FTNS rank {ndim}")));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(r.read_u32::<LittleEndian>().map_err(truncated)? as usize);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Format(format!("bad FTNS dims {shape:?}")))?;
    let mut data = vec![0f32; n];
    r.read_f32_into::<LittleEndian>(&mut data).map_err(truncated)?;
    Tensor::new(&shape, data)
}

pub fn write_named_ftns<W: Write>(tensors: &[(String, Tensor<f32>)], mut w: W) -> Result<()> {
    for (name, t) in tensors {
        w.write_u32::<LittleEndian>(name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        write_ftns(t, &mut w)?;
    }
    Ok(())
}

pub fn read_named_ftns<R: Read>(mut r: R) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut out = Vec::new();
    loop {
        let len = match r.read_u32::<LittleEndian>() {
            Ok(n) => n,
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        };
        if len > MAX_NAME_LEN {
            return Err(Error::Format(format!("tensor name length {len} is implausible")));
        }
        let mut name = vec![0u8; len as usize];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        out.push((name, read_ftns(&mut r)?));
    }
    Ok(out)
}
