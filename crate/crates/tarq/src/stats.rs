//! Calibration statistics: group-partitioned second moments, the
//! trace-equalized rebalanced metric, and loss decompositions.
//!
//! Calibration positions arrive as pairs of activation vectors, the
//! full-precision stream and the partially-quantized stream, with a
//! rarity tag. Second moments accumulate over the partially-quantized
//! stream (that is the geometry the solver actually faces); the
//! full-precision stream only enters through the drift cross-moment.
//! Moments are stored unnormalized since a positive scale does not change
//! the rounding optimum.

use crate::error::TarqError;
use crate::linalg::{weighted_loss, SymMatrix};
use crate::matrix::Matrix;
use crate::Result;

/// Rarity tag for one calibration position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    Common,
    Tail,
}

/// One calibration position: paired activations plus tag.
#[derive(Debug, Clone)]
pub struct Position {
    pub x_fp: Vec<f64>,
    pub x_q: Vec<f64>,
    pub tag: Tag,
}

/// A per-layer calibration batch.
#[derive(Debug, Clone)]
pub struct TaggedActivations {
    dim: usize,
    positions: Vec<Position>,
}

impl TaggedActivations {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            positions: Vec::new(),
        }
    }

    /// Zip parallel streams into a batch.
    pub fn from_streams(x_fp: &[Vec<f64>], x_q: &[Vec<f64>], tags: &[Tag]) -> Result<Self> {
        if x_fp.len() != x_q.len() || x_fp.len() != tags.len() {
            return Err(TarqError::DimMismatch {
                expected: (x_fp.len(), x_fp.len()),
                got: (x_q.len(), tags.len()),
            });
        }
        if x_fp.is_empty() {
            return Err(TarqError::EmptyBatch);
        }
        let dim = x_fp[0].len();
        let mut batch = Self::new(dim);
        for ((fp, q), &tag) in x_fp.iter().zip(x_q).zip(tags) {
            batch.push(fp.clone(), q.clone(), tag)?;
        }
        Ok(batch)
    }

    pub fn push(&mut self, x_fp: Vec<f64>, x_q: Vec<f64>, tag: Tag) -> Result<()> {
        if x_fp.len() != self.dim || x_q.len() != self.dim {
            return Err(TarqError::DimMismatch {
                expected: (self.dim, 1),
                got: (x_fp.len().max(x_q.len()), 1),
            });
        }
        self.positions.push(Position { x_fp, x_q, tag });
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    /// (common, tail) position counts.
    pub fn counts(&self) -> (usize, usize) {
        let tail = self
            .positions
            .iter()
            .filter(|p| p.tag == Tag::Tail)
            .count();
        (self.positions.len() - tail, tail)
    }

    /// Same activations with tags replaced position-for-position.
    pub fn retagged(&self, tags: &[Tag]) -> Result<Self> {
        if tags.len() != self.positions.len() {
            return Err(TarqError::DimMismatch {
                expected: (self.positions.len(), 1),
                got: (tags.len(), 1),
            });
        }
        let positions = self
            .positions
            .iter()
            .zip(tags)
            .map(|(p, &tag)| Position { tag, ..p.clone() })
            .collect();
        Ok(Self {
            dim: self.dim,
            positions,
        })
    }
}

/// Group-partitioned second moments and the drift cross-moment.
#[derive(Debug, Clone)]
pub struct GroupedMoments {
    pub h_common: SymMatrix,
    pub h_tail: SymMatrix,
    /// `sum_t (x_fp - x_q) x_qT` over all positions; not symmetric.
    pub h_delta: Matrix,
    pub n_common: usize,
    pub n_tail: usize,
}

impl GroupedMoments {
    pub fn dim(&self) -> usize {
        self.h_common.dim()
    }

    /// Plain (unrebalanced) metric: `h_common + h_tail`.
    pub fn plain_metric(&self) -> SymMatrix {
        self.h_common
            .add(&self.h_tail)
            .expect("group moments share a dimension")
    }
}

/// The rebalanced metric `h_common + lambda * h_tail` with
/// `lambda = c * tr(h_common) / (tr(h_tail) + eps)`.
#[derive(Debug, Clone)]
pub struct RarebalMetric {
    pub h_rb: SymMatrix,
    pub lambda: f64,
    pub cost_ratio_c: f64,
    pub eps: f64,
}

/// Accumulate per-group second moments and the drift cross-moment, in
/// sequence order.
pub fn accumulate_moments(batch: &TaggedActivations) -> Result<GroupedMoments> {
    if batch.is_empty() {
        return Err(TarqError::EmptyBatch);
    }
    let n = batch.dim();
    let mut common_upper = Matrix::zeros(n, n);
    let mut tail_upper = Matrix::zeros(n, n);
    let mut delta = Matrix::zeros(n, n);
    let (mut n_common, mut n_tail) = (0usize, 0usize);

    for pos in batch.positions() {
        let target = match pos.tag {
            Tag::Common => {
                n_common += 1;
                &mut common_upper
            }
            Tag::Tail => {
                n_tail += 1;
                &mut tail_upper
            }
        };
        for i in 0..n {
            let xi = pos.x_q[i];
            let row = target.row_mut(i);
            for (slot, &xj) in row[i..].iter_mut().zip(&pos.x_q[i..]) {
                *slot += xi * xj;
            }
        }
        for i in 0..n {
            let di = pos.x_fp[i] - pos.x_q[i];
            if di == 0.0 {
                continue;
            }
            for (slot, &xj) in delta.row_mut(i).iter_mut().zip(&pos.x_q) {
                *slot += di * xj;
            }
        }
    }

    let mirror = |m: &Matrix| SymMatrix::from_upper_fn(n, |i, j| m[(i, j)]);
    Ok(GroupedMoments {
        h_common: mirror(&common_upper),
        h_tail: mirror(&tail_upper),
        h_delta: delta,
        n_common,
        n_tail,
    })
}

/// Build the rebalanced metric. `eps` is an absolute floor on the tail
/// trace; callers usually derive it as a small fraction of the common
/// trace so behavior stays scale-invariant.
///
/// A zero tail moment degenerates exactly: `h_rb == h_common` bit-for-bit
/// (no multiply is performed, so an unbounded `lambda` cannot leak NaN).
pub fn rarebal_metric(m: &GroupedMoments, c: f64, eps: f64) -> RarebalMetric {
    let tr_common = m.h_common.trace();
    let tr_tail = m.h_tail.trace();
    let lambda = c * tr_common / (tr_tail + eps);
    let h_rb = if tr_tail == 0.0 {
        m.h_common.clone()
    } else {
        m.h_common
            .add_scaled(lambda, &m.h_tail)
            .expect("group moments share a dimension")
    };
    RarebalMetric {
        h_rb,
        lambda,
        cost_ratio_c: c,
        eps,
    }
}

/// Per-group quadratic losses `(tr(dW h_common dWT), tr(dW h_tail dWT))`.
pub fn group_losses(delta_w: &Matrix, m: &GroupedMoments) -> Result<(f64, f64)> {
    Ok((
        weighted_loss(delta_w, &m.h_common)?,
        weighted_loss(delta_w, &m.h_tail)?,
    ))
}

/// The frequency-mixture view of the reconstruction loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureDecomposition {
    /// Mean squared reconstruction error over all positions.
    pub l_rec: f64,
    /// Tail share `p = n_tail / n`.
    pub tail_share: f64,
    /// Group mean over common positions (0 when there are none).
    pub common_avg: f64,
    /// Group mean over tail positions (0 when there are none).
    pub tail_avg: f64,
}

/// Decompose the mean reconstruction loss into its common/tail mixture:
/// `l_rec == (1 - p) * common_avg + p * tail_avg`.
///
/// Uses the partially-quantized stream, matching [`accumulate_moments`].
pub fn mixture_decompose(
    batch: &TaggedActivations,
    delta_w: &Matrix,
) -> Result<MixtureDecomposition> {
    if batch.is_empty() {
        return Err(TarqError::EmptyBatch);
    }
    if delta_w.cols() != batch.dim() {
        return Err(TarqError::DimMismatch {
            expected: (delta_w.rows(), batch.dim()),
            got: (delta_w.rows(), delta_w.cols()),
        });
    }
    let mut total = 0.0;
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for pos in batch.positions() {
        let y = delta_w.matvec(&pos.x_q)?;
        let sq: f64 = y.iter().map(|v| v * v).sum();
        total += sq;
        let g = match pos.tag {
            Tag::Common => 0,
            Tag::Tail => 1,
        };
        sums[g] += sq;
        counts[g] += 1;
    }
    let n = batch.len() as f64;
    let avg = |g: usize| {
        if counts[g] == 0 {
            0.0
        } else {
            sums[g] / counts[g] as f64
        }
    };
    Ok(MixtureDecomposition {
        l_rec: total / n,
        tail_share: counts[1] as f64 / n,
        common_avg: avg(0),
        tail_avg: avg(1),
    })
}

/// Fraction of total second-moment trace mass held by tail positions.
pub fn rare_mass_share(m: &GroupedMoments) -> Result<f64> {
    let tr_common = m.h_common.trace();
    let tr_tail = m.h_tail.trace();
    let total = tr_common + tr_tail;
    if total <= 0.0 {
        return Err(TarqError::EmptyBatch);
    }
    Ok(tr_tail / total)
}
