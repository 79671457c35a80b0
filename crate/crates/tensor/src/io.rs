//! Binary tensor dump for debugging: magic "DRBT", u32 version, u8 dtype
//! code (0 = f32, 1 = f64), u32 rank, u32 dims, little-endian payload.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DUMP_MAGIC: &[u8; 4] = b"DRBT";
pub const DUMP_VERSION: u32 = 1;

pub fn write_tensor_to<T: Scalar>(w: &mut impl Write, t: &Tensor<T>) -> Result<()> {
    w.write_all(DUMP_MAGIC)?;
    w.write_all(&DUMP_VERSION.to_le_bytes())?;
    w.write_all(&[T::DTYPE])?;
    let shape = t.shape();
    w.write_all(&(shape.len() as u32).to_le_bytes())?;
    for d in &shape {
        w.write_all(&(*d as u32).to_le_bytes())?;
    }
    for v in t.data().iter() {
        match T::DTYPE {
            0 => w.write_all(&((*v).as_f64() as f32).to_le_bytes())?,
            _ => w.write_all(&(*v).as_f64().to_le_bytes())?,
        }
    }
    Ok(())
}

pub fn read_tensor_from<T: Scalar>(r: &mut impl Read) -> Result<Tensor<T>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != DUMP_MAGIC {
        return Err(TensorError::BadDump(format!("bad magic {magic:?}")));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != DUMP_VERSION {
        return Err(TensorError::BadDump(format!("unsupported version {version}")));
    }
    let mut dtype = [0u8; 1];
    r.read_exact(&mut dtype)?;
    if dtype[0] != T::DTYPE {
        return Err(TensorError::BadDump(format!(
            "dtype code {} does not match requested element type",
            dtype[0]
        )));
    }
    r.read_exact(&mut u32buf)?;
    let rank = u32::from_le_bytes(u32buf) as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        r.read_exact(&mut u32buf)?;
        shape.push(u32::from_le_bytes(u32buf) as usize);
    }
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    match T::DTYPE {
        0 => {
            let mut b = [0u8; 4];
            for _ in 0..n {
                r.read_exact(&mut b)?;
                data.push(T::from_f64(f32::from_le_bytes(b) as f64));
            }
        }
        _ => {
            let mut b = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut b)?;
                data.push(T::from_f64(f64::from_le_bytes(b)));
            }
        }
    }
    Tensor::from_vec(&shape, data)
}

pub fn dump_tensor<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    write_tensor_to(&mut f, t)
}

pub fn load_tensor<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let mut f = std::fs::File::open(path)?;
    read_tensor_from(&mut f)
}
