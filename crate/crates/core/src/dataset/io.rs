//! Binary containers for the dataset and splits, plus PGM export.
//! All integers are little-endian.

use std::io::{Read, Write};

use sha2::{Digest, Sha256};

use crate::dataset::split::{Split, SplitKind};
use crate::dataset::{BinaryMap, Example, CENTER_MAX, CENTER_MIN, EXAMPLE_COUNT, PIXELS};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"NSCLEVR1";
pub const SPLIT_MAGIC: &[u8; 6] = b"SPLIT1";
const PACKED: usize = PIXELS / 8;

fn read_array<const N: usize, R: Read>(input: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    input.read_exact(&mut buf)?;
    Ok(buf)
}

fn encode_dataset(examples: &[Example]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(12 + examples.len() * (2 + 2 * PACKED));
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&(examples.len() as u32).to_le_bytes());
    for ex in examples {
        buf.push(ex.x);
        buf.push(ex.y);
        buf.extend_from_slice(&ex.onehot.to_packed());
        buf.extend_from_slice(&ex.image.to_packed());
    }
    buf
}

/// Layout: magic, u32 count, then per example `u8 x, u8 y`, the packed
/// one-hot map and the packed image.
pub fn write_dataset<W: Write>(out: &mut W, examples: &[Example]) -> Result<()> {
    out.write_all(&encode_dataset(examples))?;
    Ok(())
}

pub fn read_dataset<R: Read>(input: &mut R) -> Result<Vec<Example>> {
    let magic: [u8; 8] = read_array(input)?;
    if &magic != DATASET_MAGIC {
        return Err(Error::format("dataset", format!("bad magic {magic:?}")));
    }
    let count = u32::from_le_bytes(read_array(input)?) as usize;
    if count > EXAMPLE_COUNT {
        return Err(Error::format("dataset", format!("implausible count {count}")));
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let [x, y]: [u8; 2] = read_array(input)?;
        let range = CENTER_MIN as u8..=CENTER_MAX as u8;
        if !range.contains(&x) || !range.contains(&y) {
            return Err(Error::format("dataset", format!("example {i}: center ({x},{y}) out of range")));
        }
        let onehot = BinaryMap::from_packed(&read_array::<PACKED, _>(input)?);
        let image = BinaryMap::from_packed(&read_array::<PACKED, _>(input)?);
        out.push(Example { x, y, onehot, image });
    }
    Ok(out)
}

/// Hex SHA-256 of the serialized dataset.
pub fn dataset_hash(examples: &[Example]) -> String {
    Sha256::digest(encode_dataset(examples))
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Layout: magic, u8 kind, u32 seed, u32 train count, u32 test count, then
/// the train and test indices as u16.
pub fn write_split<W: Write>(out: &mut W, split: &Split) -> Result<()> {
    let mut buf = Vec::with_capacity(19 + 2 * (split.train.len() + split.test.len()));
    buf.extend_from_slice(SPLIT_MAGIC);
    buf.push(split.kind.code());
    buf.extend_from_slice(&split.seed.to_le_bytes());
    buf.extend_from_slice(&(split.train.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(split.test.len() as u32).to_le_bytes());
    for &i in split.train.iter().chain(&split.test) {
        buf.extend_from_slice(&i.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_split<R: Read>(input: &mut R) -> Result<Split> {
    let magic: [u8; 6] = read_array(input)?;
    if &magic != SPLIT_MAGIC {
        return Err(Error::format("split", format!("bad magic {magic:?}")));
    }
    let [code] = read_array(input)?;
    let kind = SplitKind::from_code(code)
        .ok_or_else(|| Error::format("split", format!("unknown kind code {code}")))?;
    let seed = u32::from_le_bytes(read_array(input)?);
    let n_train = u32::from_le_bytes(read_array(input)?) as usize;
    let n_test = u32::from_le_bytes(read_array(input)?) as usize;
    if n_train + n_test > EXAMPLE_COUNT {
        return Err(Error::format("split", format!("{n_train}+{n_test} exceeds dataset size")));
    }
    let mut read_list = |n: usize| -> Result<Vec<u16>> {
        (0..n)
            .map(|_| {
                let i = u16::from_le_bytes(read_array(input)?);
                if i as usize >= EXAMPLE_COUNT {
                    return Err(Error::format("split", format!("index {i} out of range")));
                }
                Ok(i)
            })
            .collect()
    };
    let train = read_list(n_train)?;
    let test = read_list(n_test)?;
    Ok(Split { kind, seed, train, test })
}

/// Binary greymap (P5). Values are clamped to `[0, 1]` and scaled to 255.
pub fn write_pgm<W: Write>(out: &mut W, width: usize, height: usize, values: &[f64]) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::invalid(format!(
            "pgm: {} values for a {width}x{height} image",
            values.len()
        )));
    }
    let mut buf = format!("P5\n{width} {height}\n255\n").into_bytes();
    buf.extend(values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out.write_all(&buf)?;
    Ok(())
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_dataset, make_split};

    #[test]
    fn dataset_roundtrip() {
        let ds = generate_dataset();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &ds).unwrap();
        assert_eq!(buf.len(), 12 + 3136 * 1026);
        assert_eq!(&buf[..8], b"NSCLEVR1");
        assert_eq!(&buf[8..12], &3136u32.to_le_bytes());
        assert_eq!(read_dataset(&mut buf.as_slice()).unwrap(), ds);
    }

    #[test]
    fn dataset_errors() {
        let ds = generate_dataset();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &ds[..3]).unwrap();
        assert!(read_dataset(&mut &buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_dataset(&mut bad.as_slice()), Err(Error::Format { .. })));
        let mut off = buf.clone();
        off[12] = 2;
        assert!(matches!(read_dataset(&mut off.as_slice()), Err(Error::Format { .. })));
    }

    #[test]
    fn split_roundtrip() {
        for kind in [SplitKind::Uniform, SplitKind::Quadrant] {
            let split = make_split(kind, 77);
            let mut buf = Vec::new();
            write_split(&mut buf, &split).unwrap();
            assert_eq!(buf.len(), 19 + 2 * 3136);
            assert_eq!(read_split(&mut buf.as_slice()).unwrap(), split);
        }
    }

    #[test]
    fn hash_is_stable() {
        let a = dataset_hash(&generate_dataset());
        assert_eq!(a.len(), 64);
        assert_eq!(a, dataset_hash(&generate_dataset()));
    }

    #[test]
    fn pgm_header_and_scaling() {
        let mut buf = Vec::new();
        write_pgm(&mut buf, 2, 1, &[0.0, 1.0]).unwrap();
        assert_eq!(buf, b"P5\n2 1\n255\n\x00\xff");
        assert!(write_pgm(&mut buf, 2, 2, &[0.0]).is_err());
    }
}
