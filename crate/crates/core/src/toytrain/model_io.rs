//! Flat binary model file: magic `E2EK`, a little-endian `u16` version, a
//! `u32` matrix count, then per matrix `u32` rows, `u32` cols and row-major
//! little-endian `f64` values.

use std::io::{Read, Write};

use super::head::ToyHead;
use crate::error::{Error, Result};
use crate::matrix::ParamMatrix;

pub const MODEL_MAGIC: [u8; 4] = *b"E2EK";
pub const MODEL_VERSION: u16 = 1;
const MAX_DIM: u32 = 1 << 16;

pub fn write_model<W: Write>(mut w: W, head: &ToyHead) -> Result<()> {
    w.write_all(&MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    w.write_all(&2u32.to_le_bytes())?;
    for m in [&head.w_cls, &head.w_reg] {
        w.write_all(&(m.rows() as u32).to_le_bytes())?;
        w.write_all(&(m.cols() as u32).to_le_bytes())?;
        for v in m.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::ModelFormat("truncated file".into()),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

pub fn read_model<R: Read>(mut r: R) -> Result<ToyHead> {
    if read_array::<4, _>(&mut r)? != MODEL_MAGIC {
        return Err(Error::ModelFormat("bad magic".into()));
    }
    let version = u16::from_le_bytes(read_array(&mut r)?);
    if version != MODEL_VERSION {
        return Err(Error::ModelFormat(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)?;
    if count != 2 {
        return Err(Error::ModelFormat(format!("expected 2 matrices, found {count}")));
    }
    let mut mats = Vec::with_capacity(2);
    for _ in 0..count {
        let rows = read_u32(&mut r)?;
        let cols = read_u32(&mut r)?;
        if rows == 0 || cols == 0 || rows > MAX_DIM || cols > MAX_DIM {
            return Err(Error::ModelFormat(format!("implausible matrix shape {rows}x{cols}")));
        }
        let mut data = Vec::with_capacity((rows * cols) as usize);
        for _ in 0..rows * cols {
            let v = f64::from_le_bytes(read_array(&mut r)?);
            if !v.is_finite() {
                return Err(Error::ModelFormat("non-finite weight".into()));
            }
            data.push(v);
        }
        mats.push(ParamMatrix::from_vec(rows as usize, cols as usize, data)?);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::ModelFormat("trailing bytes".into()));
    }
    let w_reg = mats.pop().unwrap();
    let w_cls = mats.pop().unwrap();
    let classes = w_cls.rows();
    if w_reg.rows() != 4 || w_reg.cols() != w_cls.cols() || w_cls.cols() != 5 + 2 * classes {
        return Err(Error::ModelFormat(format!(
            "inconsistent head shapes: cls {:?}, reg {:?}",
            w_cls.shape(),
            w_reg.shape()
        )));
    }
    Ok(ToyHead { w_cls, w_reg })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toytrain::SceneLayout;

    #[test]
    fn roundtrip_is_exact() {
        let head = ToyHead::init(&SceneLayout::default(), 9);
        let mut buf = Vec::new();
        write_model(&mut buf, &head).unwrap();
        assert_eq!(&buf[..4], b"E2EK");
        assert_eq!(buf.len(), 4 + 2 + 4 + 2 * 8 + 8 * (3 * 11 + 4 * 11));
        assert_eq!(read_model(buf.as_slice()).unwrap(), head);
    }

    #[test]
    fn corrupt_files_rejected() {
        let head = ToyHead::init(&SceneLayout::default(), 9);
        let mut buf = Vec::new();
        write_model(&mut buf, &head).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_model(bad.as_slice()), Err(Error::ModelFormat(_))));
        let mut bad = buf.clone();
        bad[4] = 7;
        assert!(read_model(bad.as_slice()).is_err());
        assert!(matches!(read_model(&buf[..buf.len() - 3]), Err(Error::ModelFormat(_))));
        let mut long = buf.clone();
        long.push(0);
        assert!(read_model(long.as_slice()).is_err());
    }
}
