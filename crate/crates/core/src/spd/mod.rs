//! Symmetric positive-definite matrices under the affine-invariant metric.
//!
//! Everything here is a pure function over immutable inputs. Every matrix that
//! leaves this module is re-symmetrized as `(M + Mᵀ) / 2` so that rounding
//! drift does not accumulate through stacked layers.

mod eig;
mod func;
mod metric;
pub mod random;

pub use eig::{max_asymmetry, sym_eig, symmetrize, EigenPair};
pub(crate) use eig::sym_eig_unchecked;
pub use func::{loewner_backward, matrix_function, MatrixFunction, DEGENERATE_GAP};
pub use metric::{
    airm_distance, congruence, csp_spectrum_distance, frechet_mean, frechet_mean_with,
    geodesic, KarcherOptions,
};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative symmetry tolerance: `max |S - Sᵀ| <= SYMMETRY_TOL * max |S|`.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// A real symmetric matrix; eigenvalues unrestricted (tangent vectors, log-domain images).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DMatrix<f64>", into = "DMatrix<f64>")]
pub struct SymmetricMatrix(DMatrix<f64>);

/// A real symmetric matrix with strictly positive spectrum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DMatrix<f64>", into = "DMatrix<f64>")]
pub struct SpdMatrix(DMatrix<f64>);

fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Shape(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Err(Error::Shape("empty matrix".into()));
    }
    Ok(())
}

pub(crate) fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    check_square(m)?;
    let scale = m.amax();
    let asym = max_asymmetry(m);
    let tol = SYMMETRY_TOL * scale;
    if asym > tol || !asym.is_finite() {
        return Err(Error::NotSymmetric {
            asymmetry: asym,
            tolerance: tol,
        });
    }
    Ok(())
}

impl SymmetricMatrix {
    /// Validates symmetry and stores the symmetrized matrix.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_symmetric(&m)?;
        Ok(Self(symmetrize(&m)))
    }

    pub(crate) fn from_raw(m: DMatrix<f64>) -> Self {
        Self(symmetrize(&m))
    }

    pub fn zeros(n: usize) -> Self {
        Self(DMatrix::zeros(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn eig(&self) -> EigenPair {
        eig::sym_eig_unchecked(&self.0)
    }

    /// Matrix exponential; always SPD.
    pub fn exp(&self) -> SpdMatrix {
        SpdMatrix(self.eig().map(MatrixFunction::Exp))
    }

    /// Eigenvalue clipping `U max(eps, Λ) Uᵀ`.
    pub fn clip(&self, eps: f64) -> Result<SpdMatrix> {
        if !(eps > 0.0) {
            return Err(Error::InvalidParameter(format!("clip threshold must be > 0, got {eps}")));
        }
        Ok(SpdMatrix(self.eig().map(MatrixFunction::Clip(eps))))
    }

    /// Nearest positive semidefinite matrix: negative eigenvalues set to zero.
    pub fn psd_projection(&self) -> SymmetricMatrix {
        let e = self.eig();
        SymmetricMatrix(e.reconstruct(&e.values.map(|l| l.max(0.0))))
    }

    /// Checks the spectrum and converts.
    pub fn into_spd(self) -> Result<SpdMatrix> {
        let min = self.eig().min_eigenvalue();
        if !(min > 0.0) {
            return Err(Error::NotPositiveDefinite { eigenvalue: min });
        }
        Ok(SpdMatrix(self.0))
    }
}

impl SpdMatrix {
    /// Validates symmetry and positive-definiteness (via eigendecomposition).
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        SymmetricMatrix::new(m)?.into_spd()
    }

    /// Caller guarantees the matrix is SPD (e.g. it came out of `exp` or a clip).
    pub(crate) fn from_raw(m: DMatrix<f64>) -> Self {
        Self(symmetrize(&m))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn eig(&self) -> EigenPair {
        eig::sym_eig_unchecked(&self.0)
    }

    pub fn log(&self) -> SymmetricMatrix {
        SymmetricMatrix(self.eig().map(MatrixFunction::Log))
    }

    pub fn sqrt(&self) -> SpdMatrix {
        SpdMatrix(self.eig().map(MatrixFunction::Sqrt))
    }

    pub fn inv_sqrt(&self) -> SpdMatrix {
        SpdMatrix(self.eig().map(MatrixFunction::InvSqrt))
    }

    /// `(S^{1/2}, S^{-1/2})` from a single eigendecomposition.
    pub fn sqrt_and_inv_sqrt(&self) -> (SpdMatrix, SpdMatrix) {
        let e = self.eig();
        (
            SpdMatrix(e.map(MatrixFunction::Sqrt)),
            SpdMatrix(e.map(MatrixFunction::InvSqrt)),
        )
    }

    pub fn powf(&self, p: f64) -> SpdMatrix {
        SpdMatrix(self.eig().map(MatrixFunction::Pow(p)))
    }

    pub fn to_symmetric(&self) -> SymmetricMatrix {
        SymmetricMatrix(self.0.clone())
    }

    pub fn scale(&self, a: f64) -> Result<SpdMatrix> {
        if !(a > 0.0) {
            return Err(Error::InvalidParameter(format!("scale must be > 0, got {a}")));
        }
        Ok(SpdMatrix(&self.0 * a))
    }
}

impl TryFrom<DMatrix<f64>> for SymmetricMatrix {
    type Error = Error;
    fn try_from(m: DMatrix<f64>) -> Result<Self> {
        Self::new(m)
    }
}

impl TryFrom<DMatrix<f64>> for SpdMatrix {
    type Error = Error;
    fn try_from(m: DMatrix<f64>) -> Result<Self> {
        Self::new(m)
    }
}

impl From<SymmetricMatrix> for DMatrix<f64> {
    fn from(m: SymmetricMatrix) -> Self {
        m.0
    }
}

impl From<SpdMatrix> for DMatrix<f64> {
    fn from(m: SpdMatrix) -> Self {
        m.0
    }
}

impl AsRef<DMatrix<f64>> for SpdMatrix {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl AsRef<DMatrix<f64>> for SymmetricMatrix {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.0
    }
}
