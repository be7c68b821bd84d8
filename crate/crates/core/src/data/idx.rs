//! IDX container: big-endian magic `0x0000 TT NN` (type code, rank),
//! big-endian u32 dimensions, then the raw payload.

use std::path::Path;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

const TYPE_U8: u8 = 0x08;
const TYPE_I32: u8 = 0x0C;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdxData {
    U8(Vec<u8>),
    I32(Vec<i32>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: IdxData,
}

impl IdxArray {
    pub fn u8(dims: Vec<usize>, data: Vec<u8>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Self {
            dims,
            data: IdxData::U8(data),
        }
    }

    pub fn magic(&self) -> u32 {
        let code = match self.data {
            IdxData::U8(_) => TYPE_U8,
            IdxData::I32(_) => TYPE_I32,
        };
        ((code as u32) << 8) | self.dims.len() as u32
    }
}

pub fn parse_idx(bytes: &[u8], origin: &Path) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(Error::format(origin, 0, "truncated magic"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::format(origin, 0, "bad magic: leading bytes must be zero"));
    }
    let (code, rank) = (bytes[2], bytes[3] as usize);
    let width = match code {
        TYPE_U8 => 1,
        TYPE_I32 => 4,
        other => return Err(Error::format(origin, 2, format!("unsupported IDX element type 0x{other:02x}"))),
    };
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(Error::format(origin, bytes.len() as u64, "truncated dimension header"));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let count = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
    let expected = count.and_then(|c| c.checked_mul(width)).and_then(|c| c.checked_add(header));
    match expected {
        Some(n) if n == bytes.len() => {}
        Some(n) if n > bytes.len() => {
            return Err(Error::format(
                origin,
                bytes.len() as u64,
                format!("truncated payload: expected {n} bytes, file has {}", bytes.len()),
            ))
        }
        Some(n) => return Err(Error::format(origin, n as u64, "trailing bytes after payload")),
        None => return Err(Error::format(origin, 4, "dimension product overflows")),
    }
    let payload = &bytes[header..];
    let data = match code {
        TYPE_U8 => IdxData::U8(payload.to_vec()),
        _ => IdxData::I32(
            payload
                .chunks_exact(4)
                .map(|c| i32::from_be_bytes(c.try_into().expect("4 bytes")))
                .collect(),
        ),
    };
    Ok(IdxArray { dims, data })
}

pub fn encode_idx(array: &IdxArray) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&array.magic().to_be_bytes());
    for &d in &array.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    match &array.data {
        IdxData::U8(v) => out.extend_from_slice(v),
        IdxData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
    }
    out
}

pub fn read_idx(path: &Path) -> Result<IdxArray> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes, path)
}

pub fn write_idx(path: &Path, array: &IdxArray) -> Result<()> {
    std::fs::write(path, encode_idx(array)).map_err(|e| Error::io(path, e))
}

fn expect_magic(array: &IdxArray, magic: u32, kind: &str, origin: &Path) -> Result<()> {
    if array.magic() != magic {
        return Err(Error::format(
            origin,
            0,
            format!("expected {kind} file (magic 0x{magic:08x}), found magic 0x{:08x}", array.magic()),
        ));
    }
    Ok(())
}

/// Raw `N×rows×cols` u8 images.
pub fn parse_images(bytes: &[u8], origin: &Path) -> Result<(Vec<u8>, [usize; 3])> {
    let array = parse_idx(bytes, origin)?;
    expect_magic(&array, IMAGES_MAGIC, "image", origin)?;
    let dims = [array.dims[0], array.dims[1], array.dims[2]];
    match array.data {
        IdxData::U8(v) => Ok((v, dims)),
        IdxData::I32(_) => unreachable!("magic checked"),
    }
}

pub fn parse_labels(bytes: &[u8], origin: &Path) -> Result<Vec<u8>> {
    let array = parse_idx(bytes, origin)?;
    expect_magic(&array, LABELS_MAGIC, "label", origin)?;
    match array.data {
        IdxData::U8(v) => Ok(v),
        IdxData::I32(_) => unreachable!("magic checked"),
    }
}

pub fn load_images(path: &Path) -> Result<(Vec<u8>, [usize; 3])> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_images(&bytes, path)
}

pub fn load_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_byte_exact() {
        let a = IdxArray::u8(vec![2, 2, 3], (0..12).collect());
        let bytes = encode_idx(&a);
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        let back = parse_idx(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, a);
        assert_eq!(encode_idx(&back), bytes);

        let b = IdxArray {
            dims: vec![3],
            data: IdxData::I32(vec![-1, 0, 70000]),
        };
        assert_eq!(parse_idx(&encode_idx(&b), Path::new("mem")).unwrap(), b);
    }

    #[test]
    fn wrong_kind_rejected() {
        let imgs = encode_idx(&IdxArray::u8(vec![1, 2, 2], vec![0; 4]));
        let err = parse_labels(&imgs, Path::new("labels")).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }), "{err}");
        let labels = encode_idx(&IdxArray::u8(vec![3], vec![1, 2, 3]));
        assert!(parse_images(&labels, Path::new("images")).is_err());
        assert_eq!(parse_labels(&labels, Path::new("l")).unwrap(), vec![1, 2, 3]);
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = encode_idx(&IdxArray::u8(vec![2, 2, 2], vec![7; 8]));
        match parse_idx(&bytes[..bytes.len() - 1], Path::new("t")).unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, bytes.len() as u64 - 1),
            e => panic!("{e}"),
        }
        assert!(parse_idx(&bytes[..6], Path::new("t")).is_err());
        assert!(parse_idx(&[0, 0, 9, 1, 0, 0, 0, 0], Path::new("t")).is_err());
    }
}
