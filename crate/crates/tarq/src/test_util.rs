//! Seeded random inputs shared by unit tests.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::linalg::SymMatrix;
use crate::matrix::Matrix;

pub fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Random SPD matrix `AᵀA + 0.1·I` (condition kept moderate).
pub fn random_spd(n: usize, rng: &mut impl Rng) -> SymMatrix {
    let a = random_matrix(n, n, rng);
    let ata = a.transpose().matmul(&a).unwrap();
    let sym = SymMatrix::symmetrized(&ata);
    sym.add_scaled(0.1, &SymMatrix::identity(n)).unwrap()
}
