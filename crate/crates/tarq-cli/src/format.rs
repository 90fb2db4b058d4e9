//! The `TQT1` tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "TQT1" | u32 version = 1 | u32 section_count | sections...
//! section: u8 type | u64 payload_len | payload
//! ```
//!
//! Section payloads:
//!
//! - `0x01` fp-tensor: `u32 ndim | u64 dims[ndim] | f32 data` (row-major)
//! - `0x02` packed-quant: `u32 bits | u32 group | u64 rows | u64 cols |
//!   f32 scales (rows x ceil(cols/group), row-major) | packed 4-bit codes
//!   (two per byte, low nibble first, rows padded to whole bytes)`
//! - `0x03` fp-column sidecar: `u64 rows | u64 col_count |
//!   u64 indices[col_count] | f32 values (rows x col_count, row-major)`
//!
//! Writing is byte-deterministic; reading rejects anything that does not
//! parse exactly.

use std::fmt;
use std::path::Path;

/// Container magic.
pub const MAGIC: &[u8; 4] = b"TQT1";
/// Current format version.
pub const VERSION: u32 = 1;

const TYPE_FP_TENSOR: u8 = 0x01;
const TYPE_PACKED_QUANT: u8 = 0x02;
const TYPE_FP_COLUMNS: u8 = 0x03;

/// Parse failures for the container format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FormatError {
    BadMagic,
    BadVersion(u32),
    Truncated,
    TrailingBytes(usize),
    BadSectionType(u8),
    PayloadMismatch { section: usize },
}

impl fmt::Display for FormatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FormatError::BadMagic => write!(f, "not a TQT1 file"),
            FormatError::BadVersion(v) => write!(f, "unsupported format version {v}"),
            FormatError::Truncated => write!(f, "file truncated"),
            FormatError::TrailingBytes(n) => write!(f, "{n} trailing bytes after last section"),
            FormatError::BadSectionType(t) => write!(f, "unknown section type {t:#04x}"),
            FormatError::PayloadMismatch { section } => {
                write!(f, "section {section}: payload length does not match contents")
            }
        }
    }
}

impl std::error::Error for FormatError {}

/// One section of a container file.
#[derive(Debug, Clone, PartialEq)]
pub enum Section {
    FpTensor {
        dims: Vec<u64>,
        data: Vec<f32>,
    },
    PackedQuant {
        bits: u32,
        group: u32,
        rows: u64,
        cols: u64,
        scales: Vec<f32>,
        packed: Vec<u8>,
    },
    FpColumns {
        rows: u64,
        indices: Vec<u64>,
        values: Vec<f32>,
    },
}

impl Section {
    fn type_byte(&self) -> u8 {
        match self {
            Section::FpTensor { .. } => TYPE_FP_TENSOR,
            Section::PackedQuant { .. } => TYPE_PACKED_QUANT,
            Section::FpColumns { .. } => TYPE_FP_COLUMNS,
        }
    }

    fn payload(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Section::FpTensor { dims, data } => {
                out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
                for &d in dims {
                    out.extend_from_slice(&d.to_le_bytes());
                }
                for &v in data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Section::PackedQuant {
                bits,
                group,
                rows,
                cols,
                scales,
                packed,
            } => {
                out.extend_from_slice(&bits.to_le_bytes());
                out.extend_from_slice(&group.to_le_bytes());
                out.extend_from_slice(&rows.to_le_bytes());
                out.extend_from_slice(&cols.to_le_bytes());
                for &s in scales {
                    out.extend_from_slice(&s.to_le_bytes());
                }
                out.extend_from_slice(packed);
            }
            Section::FpColumns {
                rows,
                indices,
                values,
            } => {
                out.extend_from_slice(&rows.to_le_bytes());
                out.extend_from_slice(&(indices.len() as u64).to_le_bytes());
                for &i in indices {
                    out.extend_from_slice(&i.to_le_bytes());
                }
                for &v in values {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }
}

/// An in-memory container file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorFile {
    pub sections: Vec<Section>,
}

/// Cursor over a byte slice with exact-length checks.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.pos + n > self.buf.len() {
            return Err(FormatError::Truncated);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn parse_section(idx: usize, ty: u8, payload: &[u8]) -> Result<Section, FormatError> {
    let mut r = Reader {
        buf: payload,
        pos: 0,
    };
    let section = match ty {
        TYPE_FP_TENSOR => {
            let ndim = r.u32()? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(r.u64()?);
            }
            let count: u64 = dims.iter().product();
            let mut data = Vec::with_capacity(count as usize);
            for _ in 0..count {
                data.push(r.f32()?);
            }
            Section::FpTensor { dims, data }
        }
        TYPE_PACKED_QUANT => {
            let bits = r.u32()?;
            let group = r.u32()?;
            let rows = r.u64()?;
            let cols = r.u64()?;
            let group_count = (cols as usize).div_ceil(group.max(1) as usize);
            let n_scales = rows as usize * group_count;
            let mut scales = Vec::with_capacity(n_scales);
            for _ in 0..n_scales {
                scales.push(r.f32()?);
            }
            let n_packed = rows as usize * (cols as usize).div_ceil(2);
            let packed = r.take(n_packed)?.to_vec();
            Section::PackedQuant {
                bits,
                group,
                rows,
                cols,
                scales,
                packed,
            }
        }
        TYPE_FP_COLUMNS => {
            let rows = r.u64()?;
            let count = r.u64()? as usize;
            let mut indices = Vec::with_capacity(count);
            for _ in 0..count {
                indices.push(r.u64()?);
            }
            let n_values = rows as usize * count;
            let mut values = Vec::with_capacity(n_values);
            for _ in 0..n_values {
                values.push(r.f32()?);
            }
            Section::FpColumns {
                rows,
                indices,
                values,
            }
        }
        other => return Err(FormatError::BadSectionType(other)),
    };
    if !r.done() {
        return Err(FormatError::PayloadMismatch { section: idx });
    }
    Ok(section)
}

impl TensorFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for s in &self.sections {
            let payload = s.payload();
            out.push(s.type_byte());
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(&payload);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(FormatError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(FormatError::BadVersion(version));
        }
        let count = r.u32()? as usize;
        let mut sections = Vec::with_capacity(count);
        for idx in 0..count {
            let ty = r.u8()?;
            let len = r.u64()? as usize;
            let payload = r.take(len)?;
            sections.push(parse_section(idx, ty, payload)?);
        }
        if !r.done() {
            return Err(FormatError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(Self { sections })
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, crate::CliError> {
        let bytes = std::fs::read(path)
            .map_err(|e| crate::CliError::Parse(format!("{}: {e}", path.display())))?;
        Ok(Self::from_bytes(&bytes)?)
    }
}

/// Widen a 2-D fp-tensor section into a dense matrix.
pub fn matrix_from_section(section: &Section) -> Result<tarq::Matrix, FormatError> {
    match section {
        Section::FpTensor { dims, data } if dims.len() == 2 => {
            let (rows, cols) = (dims[0] as usize, dims[1] as usize);
            Ok(tarq::Matrix::from_vec(
                rows,
                cols,
                data.iter().map(|&v| v as f64).collect(),
            ))
        }
        Section::FpTensor { .. } => Err(FormatError::BadSectionType(TYPE_FP_TENSOR)),
        _ => Err(FormatError::BadSectionType(0)),
    }
}

/// Narrow a dense matrix into a 2-D fp-tensor section.
pub fn section_from_matrix(m: &tarq::Matrix) -> Section {
    Section::FpTensor {
        dims: vec![m.rows() as u64, m.cols() as u64],
        data: m.as_slice().iter().map(|&v| v as f32).collect(),
    }
}
