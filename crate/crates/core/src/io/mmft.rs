//! MMFT, a minimal little-endian tensor container.
//!
//! ```text
//! offset  size         field
//! 0       4            magic "MMFT" (4D 4D 46 54)
//! 4       1            version = 1
//! 5       1            dtype code = 1 (f32, little-endian)
//! 6       1            order, 1..=3
//! 7       1            reserved = 0
//! 8       8 · order    extents, u64 little-endian
//! ...     4 · ∏dims    payload, row-major f32 little-endian
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

pub const MAGIC: [u8; 4] = *b"MMFT";
pub const VERSION: u8 = 1;
pub const DTYPE_F32_LE: u8 = 1;
const FIXED_HEADER: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MmftHeader {
    pub version: u8,
    pub dtype_code: u8,
    pub dims: Vec<u64>,
}

impl MmftHeader {
    pub fn for_dims(dims: &[usize]) -> Self {
        Self {
            version: VERSION,
            dtype_code: DTYPE_F32_LE,
            dims: dims.iter().map(|&d| d as u64).collect(),
        }
    }

    pub fn header_len(&self) -> usize {
        FIXED_HEADER + 8 * self.dims.len()
    }

    pub fn payload_len(&self) -> u64 {
        4 * self.dims.iter().product::<u64>()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.header_len());
        out.extend_from_slice(&MAGIC);
        out.push(self.version);
        out.push(self.dtype_code);
        out.push(self.dims.len() as u8);
        out.push(0);
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out
    }

    /// Parses and validates a header from the start of `bytes`.
    pub fn parse(bytes: &[u8], path: &Path) -> Result<Self> {
        let format = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < FIXED_HEADER {
            return Err(format(format!("{} bytes is too short for a header", bytes.len())));
        }
        if bytes[..4] != MAGIC {
            return Err(format(format!("bad magic {:02X?}", &bytes[..4])));
        }
        let (version, dtype_code, order) = (bytes[4], bytes[5], bytes[6] as usize);
        if version != VERSION {
            return Err(format(format!("unsupported version {version}")));
        }
        if dtype_code != DTYPE_F32_LE {
            return Err(format(format!("unsupported dtype code {dtype_code}")));
        }
        if !(1..=3).contains(&order) {
            return Err(format(format!("order {order} outside 1..=3")));
        }
        let end = FIXED_HEADER + 8 * order;
        if bytes.len() < end {
            return Err(format("header truncated inside the extents".into()));
        }
        let dims: Vec<u64> = bytes[FIXED_HEADER..end]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if dims.contains(&0) {
            return Err(format(format!("zero extent in {dims:?}")));
        }
        Ok(Self {
            version,
            dtype_code,
            dims,
        })
    }
}

/// Writes `t` rounded to `f32`.
pub fn write_mmft(t: &Tensor, path: &Path) -> Result<()> {
    let header = MmftHeader::for_dims(t.dims());
    let mut bytes = header.to_bytes();
    bytes.reserve(t.data().len() * 4);
    for &v in t.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_mmft(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let header = MmftHeader::parse(&bytes, path)?;
    let payload = &bytes[header.header_len()..];
    if payload.len() as u64 != header.payload_len() {
        return Err(Error::Length {
            path: path.to_path_buf(),
            expected: header.payload_len(),
            found: payload.len() as u64,
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
        .collect();
    let dims = header.dims.iter().map(|&d| d as usize).collect();
    Ok(Tensor::new(dims, data)?.with_precision(Precision::F32))
}

/// Reads only the header, e.g. to check declared slice counts.
pub fn read_mmft_header(path: &Path) -> Result<MmftHeader> {
    let mut buf = [0u8; FIXED_HEADER + 24];
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut filled = 0;
    loop {
        let n = file.read(&mut buf[filled..]).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        filled += n;
        if filled == buf.len() {
            break;
        }
    }
    MmftHeader::parse(&buf[..filled], path)
}
