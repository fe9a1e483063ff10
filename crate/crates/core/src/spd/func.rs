use nalgebra::DMatrix;

use super::eig::{sym_eig, symmetrize, EigenPair};
use crate::error::{Error, Result};

/// Eigen-gap below which divided differences fall back to the derivative.
pub const DEGENERATE_GAP: f64 = 1e-9;

/// Scalar function applied to the spectrum of a symmetric matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MatrixFunction {
    Log,
    Exp,
    Sqrt,
    InvSqrt,
    /// `max(eps, λ)`
    Clip(f64),
    /// `λ^p`
    Pow(f64),
}

impl MatrixFunction {
    pub fn name(self) -> &'static str {
        match self {
            MatrixFunction::Log => "log",
            MatrixFunction::Exp => "exp",
            MatrixFunction::Sqrt => "sqrt",
            MatrixFunction::InvSqrt => "invsqrt",
            MatrixFunction::Clip(_) => "clip",
            MatrixFunction::Pow(_) => "pow",
        }
    }

    fn needs_positive(self) -> bool {
        !matches!(self, MatrixFunction::Exp | MatrixFunction::Clip(_))
    }

    pub fn value(self, l: f64) -> f64 {
        match self {
            MatrixFunction::Log => l.ln(),
            MatrixFunction::Exp => l.exp(),
            MatrixFunction::Sqrt => l.sqrt(),
            MatrixFunction::InvSqrt => 1.0 / l.sqrt(),
            MatrixFunction::Clip(eps) => l.max(eps),
            MatrixFunction::Pow(p) => l.powf(p),
        }
    }

    pub fn derivative(self, l: f64) -> f64 {
        match self {
            MatrixFunction::Log => 1.0 / l,
            MatrixFunction::Exp => l.exp(),
            MatrixFunction::Sqrt => 0.5 / l.sqrt(),
            MatrixFunction::InvSqrt => -0.5 / (l * l.sqrt()),
            MatrixFunction::Clip(eps) => {
                if l > eps {
                    1.0
                } else {
                    0.0
                }
            }
            MatrixFunction::Pow(p) => p * l.powf(p - 1.0),
        }
    }

    /// First divided difference `(f(a) - f(b)) / (a - b)`, switching to
    /// `f'` when `|a - b| < DEGENERATE_GAP`.
    pub fn divided_difference(self, a: f64, b: f64) -> f64 {
        let d = a - b;
        if d.abs() < DEGENERATE_GAP {
            return self.derivative(0.5 * (a + b));
        }
        match self {
            MatrixFunction::Log => (d / b).ln_1p() / d,
            MatrixFunction::Exp => b.exp() * d.exp_m1() / d,
            MatrixFunction::Sqrt => 1.0 / (a.sqrt() + b.sqrt()),
            MatrixFunction::InvSqrt => {
                let (sa, sb) = (a.sqrt(), b.sqrt());
                -1.0 / (sa * sb * (sa + sb))
            }
            _ => (self.value(a) - self.value(b)) / d,
        }
    }
}

/// `U f(Λ) Uᵀ` with domain checking.
pub fn matrix_function(m: &DMatrix<f64>, f: MatrixFunction) -> Result<DMatrix<f64>> {
    if let MatrixFunction::Clip(eps) = f {
        if !(eps > 0.0) {
            return Err(Error::InvalidParameter(format!("clip threshold must be > 0, got {eps}")));
        }
    }
    let e = sym_eig(m)?;
    if f.needs_positive() {
        let min = e.min_eigenvalue();
        if !(min > 0.0) {
            return Err(Error::Domain {
                function: f.name(),
                eigenvalue: min,
            });
        }
    }
    Ok(e.map(f))
}

/// Reverse-mode rule for `Y = U f(Λ) Uᵀ`.
///
/// Given `∂L/∂Y`, returns `∂L/∂S = U (K ∘ (Uᵀ sym(∂L/∂Y) U)) Uᵀ` where `K` is
/// the Loewner matrix of first divided differences of `f`.
pub fn loewner_backward(eig: &EigenPair, f: MatrixFunction, grad_out: &DMatrix<f64>) -> DMatrix<f64> {
    let u = &eig.vectors;
    let lam = &eig.values;
    let n = lam.len();
    let mut inner = u.transpose() * symmetrize(grad_out) * u;
    for i in 0..n {
        for j in 0..n {
            inner[(i, j)] *= f.divided_difference(lam[i], lam[j]);
        }
    }
    symmetrize(&(u * inner * u.transpose()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spd::random::{random_spd, random_symmetric, rng_from_seed};
    use nalgebra::DVector;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(v))
    }

    #[test]
    fn log_of_diagonal() {
        let e = std::f64::consts::E;
        let out = matrix_function(&diag(&[e, e * e]), MatrixFunction::Log).unwrap();
        assert!((out - diag(&[1.0, 2.0])).amax() < 1e-14);
    }

    #[test]
    fn clip_floors_negative_eigenvalue() {
        let out = matrix_function(&diag(&[5.0, -1.0]), MatrixFunction::Clip(1e-6)).unwrap();
        assert!((out - diag(&[5.0, 1e-6])).amax() < 1e-15);
    }

    #[test]
    fn domain_error_names_eigenvalue() {
        for f in [MatrixFunction::Log, MatrixFunction::Sqrt, MatrixFunction::InvSqrt] {
            match matrix_function(&diag(&[2.0, -0.5]), f) {
                Err(Error::Domain { eigenvalue, function }) => {
                    assert_eq!(eigenvalue, -0.5);
                    assert_eq!(function, f.name());
                }
                other => panic!("unexpected {other:?}"),
            }
        }
        assert!(matrix_function(&diag(&[2.0, -0.5]), MatrixFunction::Exp).is_ok());
    }

    #[test]
    fn invsqrt_whitens() {
        let mut rng = rng_from_seed(3);
        for _ in 0..100 {
            let s = random_spd(&mut rng, 8);
            let w = matrix_function(&s, MatrixFunction::InvSqrt).unwrap();
            let id = &w * &s * &w;
            assert!((id - DMatrix::identity(8, 8)).norm() < 1e-8 * (8f64).sqrt());
        }
    }

    #[test]
    fn round_trips() {
        let mut rng = rng_from_seed(4);
        for _ in 0..50 {
            let s = random_spd(&mut rng, 6);
            let l = matrix_function(&s, MatrixFunction::Log).unwrap();
            let back = matrix_function(&l, MatrixFunction::Exp).unwrap();
            assert!((&back - &s).norm() <= 1e-8 * s.norm());
            let r = matrix_function(&s, MatrixFunction::Sqrt).unwrap();
            assert!((&r * &r - &s).norm() <= 1e-8 * s.norm());
        }
    }

    #[test]
    fn spectral_functions_ignore_eigenbasis_choice() {
        // Degenerate spectrum: any orthonormal basis of the eigenspace is acceptable.
        let mut rng = rng_from_seed(5);
        let q1 = crate::spd::random::random_orthogonal(&mut rng, 5);
        let q2 = crate::spd::random::random_orthogonal(&mut rng, 5);
        let lam = diag(&[3.0, 3.0, 3.0, 0.5, 0.5]);
        let s = &q1 * &lam * q1.transpose();
        let rotated = &q2 * &s * q2.transpose();
        for f in [MatrixFunction::Log, MatrixFunction::Sqrt, MatrixFunction::Pow(0.3)] {
            let a = matrix_function(&rotated, f).unwrap();
            let b = &q2 * matrix_function(&s, f).unwrap() * q2.transpose();
            assert!((a - b).amax() < 1e-12);
        }
    }

    #[test]
    fn divided_differences_match_generic_form() {
        let fs = [
            MatrixFunction::Log,
            MatrixFunction::Exp,
            MatrixFunction::Sqrt,
            MatrixFunction::InvSqrt,
            MatrixFunction::Pow(1.7),
        ];
        for f in fs {
            let (a, b) = (2.3, 0.7);
            let generic = (f.value(a) - f.value(b)) / (a - b);
            assert!((f.divided_difference(a, b) - generic).abs() < 1e-13);
            assert!((f.divided_difference(1.0, 1.0 + 1e-12) - f.derivative(1.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn loewner_matches_finite_differences() {
        let mut rng = rng_from_seed(8);
        let fs = [
            MatrixFunction::Log,
            MatrixFunction::Exp,
            MatrixFunction::Sqrt,
            MatrixFunction::InvSqrt,
            MatrixFunction::Clip(0.3),
        ];
        for f in fs {
            let s = random_spd(&mut rng, 5);
            let g = random_symmetric(&mut rng, 5);
            let dir = random_symmetric(&mut rng, 5);
            let e = crate::spd::sym_eig(&s).unwrap();
            let grad = loewner_backward(&e, f, &g);
            let h = 1e-6;
            let loss = |m: &DMatrix<f64>| (matrix_function(m, f).unwrap().component_mul(&g)).sum();
            let fd = (loss(&(&s + &dir * h)) - loss(&(&s - &dir * h))) / (2.0 * h);
            let an = grad.component_mul(&dir).sum();
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "{f:?}: {fd} vs {an}");
        }
    }
}
