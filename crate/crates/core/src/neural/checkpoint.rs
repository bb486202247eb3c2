//! Binary parameter checkpoints.
//!
//! Layout (little-endian): magic `SHCK`, format version `u32`, element width
//! in bytes `u8` (4 or 8), tensor count `u32`; then per tensor: name length
//! `u32`, UTF-8 name, rank `u32`, each dimension as `u64`, and the row-major
//! payload at the declared width.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

use super::{NumericMode, ParamSet, Real, Tensor};

const MAGIC: &[u8; 4] = b"SHCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<T: Real, W: Write>(mut w: W, params: &ParamSet<T>) -> Result<()> {
    let io = |e| Error::io("<checkpoint>", e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION).map_err(io)?;
    w.write_u8(T::MODE.bytes() as u8).map_err(io)?;
    w.write_u32::<LittleEndian>(params.len() as u32).map_err(io)?;
    for (name, t) in params.iter() {
        w.write_u32::<LittleEndian>(name.len() as u32).map_err(io)?;
        w.write_all(name.as_bytes()).map_err(io)?;
        w.write_u32::<LittleEndian>(t.shape().len() as u32).map_err(io)?;
        for &d in t.shape() {
            w.write_u64::<LittleEndian>(d as u64).map_err(io)?;
        }
        for &v in t.data() {
            match T::MODE {
                NumericMode::F32 => w.write_f32::<LittleEndian>(v.as_f64() as f32),
                NumericMode::F64 => w.write_f64::<LittleEndian>(v.as_f64()),
            }
            .map_err(io)?;
        }
    }
    Ok(())
}

/// Reads a checkpoint of either width, converting to `T`.
pub fn read_checkpoint<T: Real, R: Read>(mut r: R) -> Result<ParamSet<T>> {
    let fmt = |e: std::io::Error| Error::Format(format!("truncated checkpoint: {e}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(fmt)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.read_u32::<LittleEndian>().map_err(fmt)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Unsupported(format!("checkpoint version {version}")));
    }
    let width = r.read_u8().map_err(fmt)?;
    if width != 4 && width != 8 {
        return Err(Error::Format(format!("element width {width}")));
    }
    let count = r.read_u32::<LittleEndian>().map_err(fmt)?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let len = r.read_u32::<LittleEndian>().map_err(fmt)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(fmt)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = r.read_u32::<LittleEndian>().map_err(fmt)? as usize;
        let shape = (0..rank)
            .map(|_| r.read_u64::<LittleEndian>().map(|d| d as usize).map_err(fmt))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                if width == 4 {
                    r.read_f32::<LittleEndian>().map(|v| T::from_f64(v as f64))
                } else {
                    r.read_f64::<LittleEndian>().map(T::from_f64)
                }
                .map_err(fmt)
            })
            .collect::<Result<Vec<_>>>()?;
        params.add(name, Tensor::new(&shape, data)?)?;
    }
    Ok(params)
}

pub fn save_checkpoint<T: Real>(path: impl AsRef<Path>, params: &ParamSet<T>) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_checkpoint(&mut w, params)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<ParamSet<T>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Initializer;

    #[test]
    fn round_trip_both_widths() {
        let mut init = Initializer::new(3);
        let mut p: ParamSet<f64> = ParamSet::new();
        p.add("a.weight", init.uniform(&[3, 2], 1.0)).unwrap();
        p.add("a.bias", init.uniform(&[3], 1.0)).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p).unwrap();
        let back: ParamSet<f64> = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back, p);
        let narrow: ParamSet<f32> = p.cast();
        let mut buf32 = Vec::new();
        write_checkpoint(&mut buf32, &narrow).unwrap();
        assert!(buf32.len() < buf.len());
        let widened: ParamSet<f64> = read_checkpoint(&buf32[..]).unwrap();
        assert_eq!(widened.get(0).shape(), &[3, 2]);
        assert!((widened.get(0).data()[0] - p.get(0).data()[0]).abs() < 1e-6);
        assert!(matches!(read_checkpoint::<f64, _>(&buf[..7]), Err(Error::Format(_))));
    }
}
