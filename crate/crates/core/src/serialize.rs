//! Binary tensor format used for checkpoints.
//!
//! ```text
//! "TNSR1"            5 bytes magic
//! rank               u32 LE
//! extents            rank × u32 LE
//! dtype              u8 (1 = f32, 2 = f64)
//! data               numel × dtype, little-endian, row-major
//! ```
//!
//! A checkpoint is a plain concatenation of such records.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};
use crate::real::{DType, Real};
use crate::tensor::Tensor;

pub const TENSOR_MAGIC: &[u8; 5] = b"TNSR1";

pub fn write_tensor<T: Real, W: Write>(out: &mut W, t: &Tensor<T>) -> Result<()> {
    let mut buf = Vec::with_capacity(5 + 4 + 4 * t.rank() + 1 + t.len() * T::DTYPE.size());
    buf.extend_from_slice(TENSOR_MAGIC);
    buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    buf.push(T::DTYPE.code());
    for &v in t.data() {
        v.write_le(&mut buf);
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Reads one tensor record. Returns `Ok(None)` on a clean end of stream.
pub fn read_tensor<T: Real, R: Read>(input: &mut R) -> Result<Option<Tensor<T>>> {
    let mut magic = [0u8; 5];
    match read_exact_or_eof(input, &mut magic)? {
        false => return Ok(None),
        true if &magic != TENSOR_MAGIC => {
            return Err(Error::format("tensor", format!("bad magic {magic:?}")))
        }
        true => {}
    }
    let rank = read_u32(input)? as usize;
    if rank > 16 {
        return Err(Error::format("tensor", format!("implausible rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u32(input)? as usize);
    }
    let mut code = [0u8; 1];
    input.read_exact(&mut code)?;
    let dtype = DType::from_code(code[0])
        .ok_or_else(|| Error::format("tensor", format!("unknown dtype code {}", code[0])))?;
    if dtype != T::DTYPE {
        return Err(Error::format(
            "tensor",
            format!("stored dtype {dtype:?}, requested {:?}", T::DTYPE),
        ));
    }
    let numel: usize = shape.iter().product();
    let mut raw = vec![0u8; numel * dtype.size()];
    input.read_exact(&mut raw)?;
    let data = raw.chunks_exact(dtype.size()).map(T::read_le).collect();
    Tensor::from_vec(&shape, data).map(Some)
}

pub fn write_tensors<T: Real, W: Write>(out: &mut W, tensors: &[Tensor<T>]) -> Result<()> {
    for t in tensors {
        write_tensor(out, t)?;
    }
    Ok(())
}

pub fn read_tensors<T: Real, R: Read>(input: &mut R) -> Result<Vec<Tensor<T>>> {
    let mut out = Vec::new();
    while let Some(t) = read_tensor(input)? {
        out.push(t);
    }
    Ok(out)
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_exact_or_eof<R: Read>(input: &mut R, buf: &mut [u8]) -> Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        match input.read(&mut buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(false),
            Ok(0) => return Err(Error::Io(io::ErrorKind::UnexpectedEof.into())),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::<f32>::from_vec(&[2, 1], vec![1.0, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let mut want = b"TNSR1".to_vec();
        want.extend_from_slice(&2u32.to_le_bytes());
        want.extend_from_slice(&2u32.to_le_bytes());
        want.extend_from_slice(&1u32.to_le_bytes());
        want.push(1);
        want.extend_from_slice(&1.0f32.to_le_bytes());
        want.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(buf, want);
    }

    #[test]
    fn dtype_mismatch_and_bad_magic_rejected() {
        let t = Tensor::<f64>::scalar(3.5);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert!(read_tensor::<f32, _>(&mut buf.as_slice()).is_err());
        buf[0] = b'X';
        assert!(read_tensor::<f64, _>(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn truncated_record_is_an_error() {
        let t = Tensor::<f32>::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(read_tensor::<f32, _>(&mut buf.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(shape in proptest::collection::vec(1usize..5, 0..4), seed in any::<u64>()) {
            let numel: usize = shape.iter().product();
            let mut rng = crate::rng::Rng::new(seed);
            let data: Vec<f64> = (0..numel).map(|_| rng.normal(0.0, 10.0)).collect();
            let t = Tensor::from_vec(&shape, data).unwrap();
            let mut buf = Vec::new();
            write_tensors(&mut buf, &[t.clone(), t.clone()]).unwrap();
            let back = read_tensors::<f64, _>(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back, vec![t.clone(), t]);
        }
    }
}
