//! The MXFT binary tensor format.
//!
//! Layout (all integers little-endian `u32`):
//!
//! | offset | field                          |
//! |--------|--------------------------------|
//! | 0..4   | ASCII `MXFT`                   |
//! | 4..8   | version, currently 1           |
//! | 8..12  | dtype code, 0 = `f32`          |
//! | 12..16 | ndim, always 3                 |
//! | 16..28 | dims `C`, `H`, `W`             |
//! | 28..   | `C*H*W` little-endian `f32`    |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, SpatialMap};

pub const MAGIC: &[u8; 4] = b"MXFT";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 0;
pub const HEADER_LEN: usize = 28;

/// Writes `map` and returns the number of bytes emitted.
pub fn write_tensor<W: Write>(map: &FeatureMap, sink: &mut W) -> Result<usize> {
    let (c, h, w) = map.shape();
    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(MAGIC);
    for word in [VERSION, DTYPE_F32, 3, c as u32, h as u32, w as u32] {
        header.extend_from_slice(&word.to_le_bytes());
    }
    sink.write_all(&header)?;

    let mut payload = Vec::with_capacity(map.as_slice().len() * 4);
    for v in map.as_slice() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    sink.write_all(&payload)?;
    Ok(header.len() + payload.len())
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn read_up_to<R: Read>(source: &mut R, len: usize) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(len);
    source.take(len as u64).read_to_end(&mut buf)?;
    Ok(buf)
}

/// Reads one tensor from `source`. Bytes after the payload are left unread.
pub fn read_tensor<R: Read>(source: &mut R) -> Result<FeatureMap> {
    let header = read_up_to(source, HEADER_LEN)?;
    if header.len() < 4 || &header[..4] != MAGIC {
        return Err(Error::NotMxft);
    }
    if header.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            got: header.len(),
        });
    }
    let version = read_u32(&header, 4);
    if version == 0 || version > VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dtype = read_u32(&header, 8);
    if dtype != DTYPE_F32 {
        return Err(Error::UnsupportedDtype(dtype));
    }
    let ndim = read_u32(&header, 12);
    if ndim != 3 {
        return Err(Error::UnsupportedNdim(ndim));
    }
    let (c, h, w) = (
        read_u32(&header, 16) as usize,
        read_u32(&header, 20) as usize,
        read_u32(&header, 24) as usize,
    );
    let count = c
        .checked_mul(h)
        .and_then(|n| n.checked_mul(w))
        .ok_or_else(|| Error::invalid("dims", format!("{c}x{h}x{w} overflows")))?;
    let expected = count * 4;
    let payload = read_up_to(source, expected)?;
    if payload.len() != expected {
        return Err(Error::Truncated {
            expected,
            got: payload.len(),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    FeatureMap::new(c, h, w, data)
}

/// Serializes a spatial map as a `1 x H x W` tensor.
pub fn write_spatial<W: Write>(map: &SpatialMap, sink: &mut W) -> Result<usize> {
    write_tensor(&map.to_feature_map()?, sink)
}

pub fn read_spatial<R: Read>(source: &mut R) -> Result<SpatialMap> {
    SpatialMap::from_feature_map(&read_tensor(source)?)
}

pub fn save(map: &FeatureMap, path: impl AsRef<Path>) -> Result<usize> {
    let mut out = BufWriter::new(File::create(path)?);
    let n = write_tensor(map, &mut out)?;
    out.flush()?;
    Ok(n)
}

pub fn load(path: impl AsRef<Path>) -> Result<FeatureMap> {
    read_tensor(&mut BufReader::new(File::open(path)?))
}
