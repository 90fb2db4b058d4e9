//! Symmetric dense linear algebra shared by all solvers.
//!
//! Second moments enter every solver as quadratic forms, so this module
//! keeps them behind [`SymMatrix`], which guarantees exact (bit-level)
//! symmetry on construction. Inversion is always damped: callers choose an
//! absolute diagonal shift or a relative one proportional to the mean
//! diagonal (the `percdamp` convention).

use crate::error::TarqError;
use crate::matrix::Matrix;
use crate::Result;

/// Hard floor under which a Cholesky pivot counts as singular. Callers
/// control damping explicitly; we do not regularize further on their
/// behalf.
const PIVOT_FLOOR: f64 = 1e-300;

/// Tolerance for clamping tiny negative quadratic-form values to zero.
const LOSS_CLAMP: f64 = 1e-12;

/// Diagonal damping for an inversion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Damping {
    /// Add `delta` to every diagonal entry.
    Absolute(f64),
    /// Add `delta * mean(diag)` to every diagonal entry.
    Relative(f64),
}

impl Damping {
    /// Resolve to an absolute diagonal shift for the given matrix.
    pub fn absolute_shift(self, h: &SymMatrix) -> f64 {
        match self {
            Damping::Absolute(d) => d,
            Damping::Relative(d) => d * h.trace() / h.dim() as f64,
        }
    }
}

/// Dense symmetric matrix. `entries[i][j] == entries[j][i]` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    mat: Matrix,
}

impl SymMatrix {
    /// Wrap a square matrix, requiring exact symmetry.
    pub fn from_matrix(mat: Matrix) -> Result<Self> {
        if mat.rows() != mat.cols() {
            return Err(TarqError::DimMismatch {
                expected: (mat.rows(), mat.rows()),
                got: (mat.rows(), mat.cols()),
            });
        }
        for i in 0..mat.rows() {
            for j in (i + 1)..mat.cols() {
                if mat[(i, j)] != mat[(j, i)] {
                    return Err(TarqError::DimMismatch {
                        expected: (i, j),
                        got: (j, i),
                    });
                }
            }
        }
        Ok(Self { mat })
    }

    /// Symmetrize a square matrix as `(A + Aᵀ)/2`.
    pub fn symmetrized(mat: &Matrix) -> Self {
        assert_eq!(mat.rows(), mat.cols(), "symmetrize needs a square matrix");
        let n = mat.rows();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            out[(i, i)] = mat[(i, i)];
            for j in (i + 1)..n {
                let v = 0.5 * (mat[(i, j)] + mat[(j, i)]);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        Self { mat: out }
    }

    /// Build from the upper triangle of a closure, mirroring exactly.
    pub fn from_upper_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Self { mat: m }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            mat: Matrix::identity(n),
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            mat: Matrix::zeros(n, n),
        }
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Matrix::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        Self { mat: m }
    }

    pub fn dim(&self) -> usize {
        self.mat.rows()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.mat[(i, j)]
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.mat
    }

    pub fn into_matrix(self) -> Matrix {
        self.mat
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.mat[(i, i)]).sum()
    }

    /// Scalar multiple (symmetry is preserved exactly).
    pub fn scale(&self, k: f64) -> SymMatrix {
        SymMatrix {
            mat: self.mat.scale(k),
        }
    }

    /// Element-wise sum (symmetry is preserved exactly).
    pub fn add(&self, other: &SymMatrix) -> Result<SymMatrix> {
        Ok(SymMatrix {
            mat: self.mat.add(&other.mat)?,
        })
    }

    /// `self + k * other`.
    pub fn add_scaled(&self, k: f64, other: &SymMatrix) -> Result<SymMatrix> {
        Ok(SymMatrix {
            mat: self.mat.add_scaled(k, &other.mat)?,
        })
    }
}

/// Upper-triangular Cholesky factor of a damped inverse:
/// `upperᵀ·upper` reconstructs `(H + δI)⁻¹`.
#[derive(Debug, Clone)]
pub struct CholFactor {
    upper: Matrix,
}

impl CholFactor {
    pub fn dim(&self) -> usize {
        self.upper.rows()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.upper[(i, j)]
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.upper
    }

    /// Reconstruct `upperᵀ·upper`.
    pub fn product(&self) -> SymMatrix {
        let n = self.dim();
        SymMatrix::from_upper_fn(n, |i, j| {
            (0..=i.min(j))
                .map(|k| self.upper[(k, i)] * self.upper[(k, j)])
                .sum()
        })
    }
}

/// Standard upper Cholesky `A = Rᵀ·R` of `H + shift·I`.
fn cholesky_upper(h: &SymMatrix, shift: f64) -> Result<Matrix> {
    let n = h.dim();
    let mut r = Matrix::zeros(n, n);
    for j in 0..n {
        let mut s = h.entry(j, j) + shift;
        for k in 0..j {
            s -= r[(k, j)] * r[(k, j)];
        }
        if s < PIVOT_FLOOR || s.is_nan() {
            return Err(TarqError::SingularMetric { pivot: s, index: j });
        }
        let d = s.sqrt();
        r[(j, j)] = d;
        for i in (j + 1)..n {
            let mut v = h.entry(j, i) + if i == j { shift } else { 0.0 };
            for k in 0..j {
                v -= r[(k, j)] * r[(k, i)];
            }
            r[(j, i)] = v / d;
        }
    }
    Ok(r)
}

/// Invert an upper-triangular matrix by back substitution.
fn invert_upper(r: &Matrix) -> Matrix {
    let n = r.rows();
    let mut u = Matrix::zeros(n, n);
    for j in 0..n {
        u[(j, j)] = 1.0 / r[(j, j)];
        for i in (0..j).rev() {
            let mut s = 0.0;
            for k in (i + 1)..=j {
                s += r[(i, k)] * u[(k, j)];
            }
            u[(i, j)] = -s / r[(i, i)];
        }
    }
    u
}

/// `(H + δI)⁻¹` with the damping convention resolved by `damping`.
///
/// The result is exactly symmetric (computed on the upper triangle and
/// mirrored).
pub fn damped_inverse(h: &SymMatrix, damping: Damping) -> Result<SymMatrix> {
    let shift = damping.absolute_shift(h);
    let r = cholesky_upper(h, shift)?;
    let u = invert_upper(&r);
    let n = h.dim();
    // (RᵀR)⁻¹ = U·Uᵀ with U = R⁻¹.
    Ok(SymMatrix::from_upper_fn(n, |i, j| {
        (j..n).map(|k| u[(i, k)] * u[(j, k)]).sum()
    }))
}

/// Upper Cholesky factor of `(H + δI)⁻¹`: forms the damped inverse and
/// factors it, so `upperᵀ·upper` reconstructs the inverse. The rows of
/// this factor carry, up to scale, the leading rows of the inverses of
/// the trailing submatrices of the damped metric, which is what the
/// column sweep consumes.
pub fn cholesky_of_inverse(h: &SymMatrix, damping: Damping) -> Result<CholFactor> {
    let inv = damped_inverse(h, damping)?;
    Ok(CholFactor {
        upper: cholesky_upper(&inv, 0.0)?,
    })
}

/// Metric-weighted Frobenius inner product `tr(A·H·Bᵀ)`.
pub fn weighted_inner(a: &Matrix, b: &Matrix, h: &SymMatrix) -> Result<f64> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(TarqError::DimMismatch {
            expected: (a.rows(), a.cols()),
            got: (b.rows(), b.cols()),
        });
    }
    if h.dim() != a.cols() {
        return Err(TarqError::DimMismatch {
            expected: (a.cols(), a.cols()),
            got: (h.dim(), h.dim()),
        });
    }
    let ah = a.matmul(h.as_matrix())?;
    let mut acc = 0.0;
    for i in 0..a.rows() {
        let m = ah.row(i);
        let br = b.row(i);
        for (x, y) in m.iter().zip(br) {
            acc += x * y;
        }
    }
    Ok(acc)
}

/// Quadratic loss `tr(ΔW·H·ΔWᵀ)`, clamped to zero when a rounding-level
/// negative (within `1e-12`) appears on a PSD metric.
pub fn weighted_loss(delta_w: &Matrix, h: &SymMatrix) -> Result<f64> {
    let raw = weighted_inner(delta_w, delta_w, h)?;
    if (-LOSS_CLAMP..0.0).contains(&raw) {
        Ok(0.0)
    } else {
        Ok(raw)
    }
}
