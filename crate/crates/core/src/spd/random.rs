//! Seeded random matrix generators shared by initialization, synthetic data and tests.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::symmetrize;

pub type SeededRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with sign fix).
pub fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    random_stiefel(rng, n, n)
}

/// `rows × cols` matrix with orthonormal columns (`rows >= cols`) or rows (`rows < cols`).
pub fn random_stiefel<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    if rows < cols {
        return random_stiefel(rng, cols, rows).transpose();
    }
    let g = gaussian_matrix(rng, rows, cols);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..cols {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// SPD matrix with log-eigenvalues uniform in `[-1.5, 1.5]` and a random eigenbasis.
pub fn random_spd<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    random_spd_with_spread(rng, n, 1.5)
}

pub fn random_spd_with_spread<R: Rng + ?Sized>(rng: &mut R, n: usize, log_spread: f64) -> DMatrix<f64> {
    let q = random_orthogonal(rng, n);
    let lam = DVector::from_fn(n, |_, _| rng.gen_range(-log_spread..=log_spread).exp());
    symmetrize(&(&q * DMatrix::from_diagonal(&lam) * q.transpose()))
}

pub fn random_symmetric<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    symmetrize(&gaussian_matrix(rng, n, n))
}

/// Invertible matrix with singular values in `[e^-1, e]`.
pub fn random_invertible<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let u = random_orthogonal(rng, n);
    let v = random_orthogonal(rng, n);
    let s = DVector::from_fn(n, |_, _| rng.gen_range(-1.0f64..=1.0).exp());
    u * DMatrix::from_diagonal(&s) * v.transpose()
}
