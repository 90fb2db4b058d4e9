//! The uniform group-scaled quantization lattice.
//!
//! Weights quantize row-wise in groups of `group_size` contiguous input
//! channels. Each group gets one scale `s = (max - min) / (2^b - 1)` and
//! codes are `clamp(round(w / s), -2^(b-1), 2^(b-1) - 1)` with
//! round-half-away-from-zero. There is no zero-point: the clamp is
//! symmetric around zero even though the scale comes from the min-max
//! range. Groups with zero range fall back to `scale_floor`, which keeps
//! the scheme total (never NaN) at the cost of clamping constant nonzero
//! groups to the lattice edge.
//!
//! 4-bit codes pack two per byte in row-major order: even column in the
//! low nibble, odd column in the high nibble, each nibble the
//! two's-complement encoding of the code. Odd-length rows pad the final
//! high nibble with zero.

use crate::error::TarqError;
use crate::matrix::Matrix;
use crate::Result;

/// How a group's scale is derived from its value range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScaleMode {
    /// `s = (max - min) / (2^b - 1)`. The default.
    #[default]
    MinMax,
    /// `s = max|w| / (2^(b-1) - 1)`. Optional alternative for strongly
    /// one-sided groups; never the default.
    AbsMax,
}

/// Bit-width, grouping, and scale handling for one quantization run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantConfig {
    pub bits: u32,
    pub group_size: usize,
    pub scale_floor: f64,
    pub scale_mode: ScaleMode,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            bits: 4,
            group_size: 128,
            scale_floor: 1e-12,
            scale_mode: ScaleMode::MinMax,
        }
    }
}

impl QuantConfig {
    pub fn new(bits: u32, group_size: usize) -> Self {
        assert!((2..=8).contains(&bits), "bits must be in [2, 8]");
        assert!(group_size >= 1, "group_size must be positive");
        Self {
            bits,
            group_size,
            ..Self::default()
        }
    }

    /// Smallest representable code, `-2^(b-1)`.
    pub fn code_min(&self) -> i32 {
        -(1 << (self.bits - 1))
    }

    /// Largest representable code, `2^(b-1) - 1`.
    pub fn code_max(&self) -> i32 {
        (1 << (self.bits - 1)) - 1
    }

    /// Number of scale groups for `cols` input channels.
    pub fn group_count(&self, cols: usize) -> usize {
        cols.div_ceil(self.group_size)
    }
}

/// Packed low-bit approximation of a weight matrix: integer codes plus one
/// scale per row-wise group.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    rows: usize,
    cols: usize,
    config: QuantConfig,
    /// Row-major `rows x cols` codes, each in `[code_min, code_max]`.
    codes: Vec<i8>,
    /// `rows x group_count(cols)` scales, all >= scale_floor.
    scales: Matrix,
}

impl QuantizedTensor {
    /// Assemble from parts, checking the lattice invariants.
    pub fn new(rows: usize, cols: usize, config: QuantConfig, codes: Vec<i8>, scales: Matrix) -> Self {
        assert_eq!(codes.len(), rows * cols, "code buffer shape mismatch");
        assert_eq!(scales.rows(), rows, "scale rows mismatch");
        assert_eq!(scales.cols(), config.group_count(cols), "scale groups mismatch");
        let q = Self {
            rows,
            cols,
            config,
            codes,
            scales,
        };
        q.assert_in_lattice();
        q
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn config(&self) -> &QuantConfig {
        &self.config
    }

    pub fn code(&self, i: usize, j: usize) -> i8 {
        self.codes[i * self.cols + j]
    }

    pub fn codes(&self) -> &[i8] {
        &self.codes
    }

    pub fn scales(&self) -> &Matrix {
        &self.scales
    }

    pub fn scale_for(&self, row: usize, col: usize) -> f64 {
        self.scales[(row, col / self.config.group_size)]
    }

    /// Shared lattice-membership assertion: every code in range, every
    /// scale at or above the floor.
    pub fn assert_in_lattice(&self) {
        let (lo, hi) = (self.config.code_min(), self.config.code_max());
        for &c in &self.codes {
            assert!(
                (c as i32) >= lo && (c as i32) <= hi,
                "code {c} outside [{lo}, {hi}]"
            );
        }
        for i in 0..self.scales.rows() {
            for j in 0..self.scales.cols() {
                assert!(
                    self.scales[(i, j)] >= self.config.scale_floor,
                    "scale below floor"
                );
            }
        }
    }
}

/// One scale per row-wise group of contiguous input channels. A trailing
/// partial group uses its actual extent.
pub fn group_scales(w: &Matrix, cfg: &QuantConfig) -> Matrix {
    let groups = cfg.group_count(w.cols());
    let levels = ((1u32 << cfg.bits) - 1) as f64;
    let top = cfg.code_max() as f64;
    Matrix::from_fn(w.rows(), groups, |i, g| {
        let start = g * cfg.group_size;
        let end = ((g + 1) * cfg.group_size).min(w.cols());
        let slice = &w.row(i)[start..end];
        let s = match cfg.scale_mode {
            ScaleMode::MinMax => {
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for &v in slice {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                (hi - lo) / levels
            }
            ScaleMode::AbsMax => {
                let m = slice.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
                m / top
            }
        };
        if s < cfg.scale_floor {
            cfg.scale_floor
        } else {
            s
        }
    })
}

/// Quantize one value against a known scale.
#[inline]
pub fn quantize_value(w: f64, scale: f64, cfg: &QuantConfig) -> i8 {
    // f64::round rounds half away from zero, matching the scheme's tie rule.
    let c = (w / scale).round();
    let c = c.max(cfg.code_min() as f64).min(cfg.code_max() as f64);
    c as i8
}

/// Round-to-nearest projection onto the lattice with fresh group scales.
pub fn quantize_rtn(w: &Matrix, cfg: &QuantConfig) -> QuantizedTensor {
    let scales = group_scales(w, cfg);
    quantize_rtn_with_scales(w, cfg, scales)
}

/// Round-to-nearest against externally supplied scales (used by sweeps
/// that freeze scales before error propagation).
pub fn quantize_rtn_with_scales(w: &Matrix, cfg: &QuantConfig, scales: Matrix) -> QuantizedTensor {
    let mut codes = Vec::with_capacity(w.rows() * w.cols());
    for i in 0..w.rows() {
        for j in 0..w.cols() {
            let s = scales[(i, j / cfg.group_size)];
            codes.push(quantize_value(w[(i, j)], s, cfg));
        }
    }
    QuantizedTensor::new(w.rows(), w.cols(), *cfg, codes, scales)
}

/// Exact element-wise reconstruction `scale * code`.
pub fn dequantize(q: &QuantizedTensor) -> Matrix {
    Matrix::from_fn(q.rows(), q.cols(), |i, j| {
        q.scale_for(i, j) * q.code(i, j) as f64
    })
}

/// Pack 4-bit codes two per byte (low nibble first).
pub fn pack4(q: &QuantizedTensor) -> Result<Vec<u8>> {
    if q.config().bits != 4 {
        return Err(TarqError::BitsUnsupported {
            bits: q.config().bits,
        });
    }
    let bytes_per_row = q.cols().div_ceil(2);
    let mut out = Vec::with_capacity(q.rows() * bytes_per_row);
    for i in 0..q.rows() {
        for jb in 0..bytes_per_row {
            let lo = (q.code(i, 2 * jb) as u8) & 0x0F;
            let hi = if 2 * jb + 1 < q.cols() {
                (q.code(i, 2 * jb + 1) as u8) & 0x0F
            } else {
                0
            };
            out.push(lo | (hi << 4));
        }
    }
    Ok(out)
}

/// Sign-extend a 4-bit two's-complement nibble.
#[inline]
fn nibble_to_code(n: u8) -> i8 {
    ((n << 4) as i8) >> 4
}

/// Exact inverse of [`pack4`].
pub fn unpack4(
    bytes: &[u8],
    rows: usize,
    cols: usize,
    scales: Matrix,
    cfg: &QuantConfig,
) -> Result<QuantizedTensor> {
    if cfg.bits != 4 {
        return Err(TarqError::BitsUnsupported { bits: cfg.bits });
    }
    let bytes_per_row = cols.div_ceil(2);
    if bytes.len() != rows * bytes_per_row {
        return Err(TarqError::LengthMismatch {
            expected: rows * bytes_per_row,
            got: bytes.len(),
        });
    }
    let mut codes = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let row = &bytes[i * bytes_per_row..(i + 1) * bytes_per_row];
        for j in 0..cols {
            let byte = row[j / 2];
            let nib = if j % 2 == 0 { byte & 0x0F } else { byte >> 4 };
            codes.push(nibble_to_code(nib));
        }
    }
    Ok(QuantizedTensor::new(rows, cols, *cfg, codes, scales))
}
