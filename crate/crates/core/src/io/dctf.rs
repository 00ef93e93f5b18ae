//! DCTF: a bit-exact binary tensor file format.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic   4 bytes  0x44 0x43 0x54 0x46 ("DCTF")
//! version u8       1
//! dtype   u8       1 (f32 little-endian)
//! pad     u16      0
//! ndim    u32
//! dims    ndim x u32
//! payload product(dims) x f32, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::TensorF32;

pub const MAGIC: [u8; 4] = *b"DCTF";
pub const VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 1;

pub fn write_tensor(t: &TensorF32, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor_to(t, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_tensor_to(t: &TensorF32, w: &mut impl Write) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&[VERSION, DTYPE_F32])?;
    w.write_all(&0u16.to_le_bytes())?;
    w.write_all(&(t.ndim() as u32).to_le_bytes())?;
    for &d in t.dims() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<TensorF32> {
    let mut r = BufReader::new(File::open(path)?);
    read_tensor_from(&mut r)
}

pub fn read_tensor_from(r: &mut impl Read) -> Result<TensorF32> {
    let mut head = [0u8; 8];
    read_exact_or_truncated(r, &mut head, 8)?;
    if head[0..4] != MAGIC {
        return Err(Error::BadMagic {
            found: [head[0], head[1], head[2], head[3]],
        });
    }
    if head[4] != VERSION {
        return Err(Error::UnsupportedVersion(head[4]));
    }
    if head[5] != DTYPE_F32 {
        return Err(Error::UnsupportedDtype(head[5]));
    }
    let pad = u16::from_le_bytes([head[6], head[7]]);
    if pad != 0 {
        return Err(Error::NonzeroPad(pad));
    }

    let mut b4 = [0u8; 4];
    read_exact_or_truncated(r, &mut b4, 4)?;
    let ndim = u32::from_le_bytes(b4) as usize;
    if ndim == 0 {
        return Err(Error::InvalidDims(vec![]));
    }
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        read_exact_or_truncated(r, &mut b4, 4)?;
        dims.push(u32::from_le_bytes(b4) as usize);
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidDims(dims));
    }

    let count: usize = dims.iter().product();
    let expected = count * 4;
    let mut payload = vec![0u8; expected];
    read_exact_or_truncated(r, &mut payload, expected)?;

    let mut trailing = [0u8; 1];
    match r.read(&mut trailing)? {
        0 => {}
        _ => {
            // count whatever else is left
            let mut rest = Vec::new();
            r.read_to_end(&mut rest)?;
            return Err(Error::TrailingBytes(1 + rest.len()));
        }
    }

    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    TensorF32::new(dims, data)
}

fn read_exact_or_truncated(r: &mut impl Read, buf: &mut [u8], expected: usize) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            return Err(Error::TruncatedPayload {
                expected,
                got: filled,
            });
        }
        filled += n;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bytes_of(t: &TensorF32) -> Vec<u8> {
        let mut buf = Vec::new();
        write_tensor_to(t, &mut buf).unwrap();
        buf
    }

    #[test]
    fn golden_bytes_scalarish_tensor() {
        // dims [1], value 1.0
        let t = TensorF32::new(vec![1], vec![1.0]).unwrap();
        let expected: Vec<u8> = vec![
            0x44, 0x43, 0x54, 0x46, // "DCTF"
            0x01, 0x01, 0x00, 0x00, // version, dtype, pad
            0x01, 0x00, 0x00, 0x00, // ndim = 1
            0x01, 0x00, 0x00, 0x00, // dims[0] = 1
            0x00, 0x00, 0x80, 0x3F, // 1.0f32 LE
        ];
        assert_eq!(bytes_of(&t), expected);
    }

    #[test]
    fn roundtrip_identity() {
        let t = TensorF32::new(vec![2, 3], vec![1.5, -2.25, 0.0, f32::MIN_POSITIVE, 1e30, -0.5])
            .unwrap();
        let buf = bytes_of(&t);
        let back = read_tensor_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.dims(), t.dims());
        // bit-identical, not just approximately equal
        for (a, b) in t.data().iter().zip(back.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.dctf");
        let t = TensorF32::from_fn(&[3, 2, 2], |i| (i as f32) * 0.37 - 1.0);
        write_tensor(&t, &p).unwrap();
        assert_eq!(read_tensor(&p).unwrap(), t);
    }

    #[test]
    fn bad_magic() {
        let mut buf = bytes_of(&TensorF32::new(vec![1], vec![1.0]).unwrap());
        buf[0..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            read_tensor_from(&mut buf.as_slice()),
            Err(Error::BadMagic { found }) if &found == b"XXXX"
        ));
    }

    #[test]
    fn unsupported_version_and_dtype() {
        let good = bytes_of(&TensorF32::new(vec![1], vec![1.0]).unwrap());

        let mut buf = good.clone();
        buf[4] = 9;
        assert!(matches!(
            read_tensor_from(&mut buf.as_slice()),
            Err(Error::UnsupportedVersion(9))
        ));

        let mut buf = good;
        buf[5] = 2;
        assert!(matches!(
            read_tensor_from(&mut buf.as_slice()),
            Err(Error::UnsupportedDtype(2))
        ));
    }

    #[test]
    fn truncated_and_trailing() {
        let good = bytes_of(&TensorF32::new(vec![2], vec![1.0, 2.0]).unwrap());

        let short = &good[..good.len() - 3];
        assert!(matches!(
            read_tensor_from(&mut &short[..]),
            Err(Error::TruncatedPayload { .. })
        ));

        let mut long = good;
        long.extend_from_slice(&[0, 1, 2]);
        assert!(matches!(
            read_tensor_from(&mut long.as_slice()),
            Err(Error::TrailingBytes(3))
        ));
    }

    #[test]
    fn zero_dim_rejected() {
        let mut buf = Vec::new();
        buf.extend_from_slice(&MAGIC);
        buf.extend_from_slice(&[VERSION, DTYPE_F32, 0, 0]);
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            read_tensor_from(&mut buf.as_slice()),
            Err(Error::InvalidDims(_))
        ));
    }

    #[test]
    fn nonzero_pad_rejected() {
        let mut buf = bytes_of(&TensorF32::new(vec![1], vec![1.0]).unwrap());
        buf[6] = 0xAB;
        assert!(matches!(
            read_tensor_from(&mut buf.as_slice()),
            Err(Error::NonzeroPad(0x00AB))
        ));
    }
}
