use nalgebra::DMatrix;

use super::eig::{sym_eig_unchecked, symmetrize};
use super::func::MatrixFunction;
use super::{SpdMatrix, SymmetricMatrix};
use crate::error::{Error, Result};

fn same_dim(a: &SpdMatrix, b: &SpdMatrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(())
}

/// `S1^{-1/2} S2 S1^{-1/2}`.
fn whiten(s1: &SpdMatrix, s2: &SpdMatrix) -> DMatrix<f64> {
    let w = s1.inv_sqrt();
    symmetrize(&(w.as_matrix() * s2.as_matrix() * w.as_matrix()))
}

/// Affine-invariant distance `‖log(S1^{-1/2} S2 S1^{-1/2})‖_F`.
pub fn airm_distance(s1: &SpdMatrix, s2: &SpdMatrix) -> Result<f64> {
    same_dim(s1, s2)?;
    if s1 == s2 {
        return Ok(0.0);
    }
    let e = sym_eig_unchecked(&whiten(s1, s2));
    let min = e.min_eigenvalue();
    if !(min > 0.0) {
        return Err(Error::NumericalBreakdown(format!(
            "whitened matrix has eigenvalue {min:.3e}"
        )));
    }
    Ok(e.values.iter().map(|l| l.ln().powi(2)).sum::<f64>().sqrt())
}

/// Distance between two class covariances from the spectrum `λ` of
/// `(S⁺ + S⁻)⁻¹ S⁺`: `sqrt(Σ log²(λ / (1 - λ)))`.
///
/// Every `λ` lies in `(0, 1)` for SPD inputs, and the result equals
/// `airm_distance(S⁺, S⁻)`.
pub fn csp_spectrum_distance(splus: &SpdMatrix, sminus: &SpdMatrix) -> Result<f64> {
    same_dim(splus, sminus)?;
    let lam = csp_spectrum(splus, sminus)?;
    Ok(lam
        .iter()
        .map(|&l| (l / (1.0 - l)).ln().powi(2))
        .sum::<f64>()
        .sqrt())
}

/// Descending eigenvalues of `(S⁺ + S⁻)⁻¹ S⁺`, computed by whitening with the composite.
pub(crate) fn csp_spectrum(splus: &SpdMatrix, sminus: &SpdMatrix) -> Result<Vec<f64>> {
    let composite = SpdMatrix::from_raw(splus.as_matrix() + sminus.as_matrix());
    let e = sym_eig_unchecked(&whiten(&composite, splus));
    let lam: Vec<f64> = e.values.iter().copied().collect();
    if let Some(bad) = lam.iter().find(|&&l| !(l > 0.0 && l < 1.0)) {
        return Err(Error::NumericalBreakdown(format!(
            "CSP eigenvalue {bad:.17e} outside (0, 1)"
        )));
    }
    Ok(lam)
}

/// Point at parameter `tau` on the geodesic from `s1` to `s2`:
/// `S1^{1/2} (S1^{-1/2} S2 S1^{-1/2})^τ S1^{1/2}`.
pub fn geodesic(s1: &SpdMatrix, s2: &SpdMatrix, tau: f64) -> Result<SpdMatrix> {
    same_dim(s1, s2)?;
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidParameter(format!("geodesic parameter {tau} outside [0, 1]")));
    }
    if tau == 0.0 {
        return Ok(s1.clone());
    }
    if tau == 1.0 {
        return Ok(s2.clone());
    }
    let (root, inv_root) = s1.sqrt_and_inv_sqrt();
    let inner = symmetrize(&(inv_root.as_matrix() * s2.as_matrix() * inv_root.as_matrix()));
    let powered = sym_eig_unchecked(&inner).map(MatrixFunction::Pow(tau));
    Ok(SpdMatrix::from_raw(root.as_matrix() * powered * root.as_matrix()))
}

#[derive(Clone, Copy, Debug)]
pub struct KarcherOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for KarcherOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iterations: 50,
        }
    }
}

/// Weighted Fréchet (Karcher) mean under the affine-invariant metric.
pub fn frechet_mean(points: &[SpdMatrix], weights: &[f64]) -> Result<SpdMatrix> {
    frechet_mean_with(points, weights, KarcherOptions::default())
}

pub fn frechet_mean_with(points: &[SpdMatrix], weights: &[f64], opts: KarcherOptions) -> Result<SpdMatrix> {
    let first = points
        .first()
        .ok_or_else(|| Error::InvalidParameter("barycenter of an empty set".into()))?;
    if weights.len() != points.len() {
        return Err(Error::Shape(format!(
            "{} weights for {} points",
            weights.len(),
            points.len()
        )));
    }
    if weights.iter().any(|&w| !(w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(
            "barycenter weights must be nonnegative and sum to 1".into(),
        ));
    }
    let n = first.dim();
    for p in points {
        if p.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: p.dim(),
            });
        }
    }
    if points.len() == 1 {
        return Ok(first.clone());
    }

    let mut g = DMatrix::zeros(n, n);
    for (p, &w) in points.iter().zip(weights) {
        g += p.as_matrix() * w;
    }
    let mut g = SpdMatrix::from_raw(g);

    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iterations {
        let (root, inv_root) = g.sqrt_and_inv_sqrt();
        let mut tangent = DMatrix::zeros(n, n);
        for (p, &w) in points.iter().zip(weights) {
            if w == 0.0 {
                continue;
            }
            let inner = symmetrize(&(inv_root.as_matrix() * p.as_matrix() * inv_root.as_matrix()));
            tangent += sym_eig_unchecked(&inner).map(MatrixFunction::Log) * w;
        }
        residual = tangent.norm();
        let step = sym_eig_unchecked(&tangent).map(MatrixFunction::Exp);
        g = SpdMatrix::from_raw(root.as_matrix() * step * root.as_matrix());
        if residual < opts.tolerance {
            return Ok(g);
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iterations,
        residual,
    })
}

/// Congruence `W S Wᵀ` for a rectangular `W`.
pub fn congruence(w: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<SymmetricMatrix> {
    if s.nrows() != s.ncols() || w.ncols() != s.nrows() {
        return Err(Error::Shape(format!(
            "cannot form W S Wᵀ with W {}x{} and S {}x{}",
            w.nrows(),
            w.ncols(),
            s.nrows(),
            s.ncols()
        )));
    }
    Ok(SymmetricMatrix::from_raw(w * s * w.transpose()))
}
