//! Per-matrix layer primitives with their reverse-mode rules.
//!
//! Gradients are taken with respect to full (not symmetry-reduced) matrix
//! entries; incoming gradients on symmetric outputs are symmetrized first.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::spd::{loewner_backward, symmetrize, EigenPair, MatrixFunction};

pub(crate) fn eig(m: &DMatrix<f64>) -> EigenPair {
    crate::spd::sym_eig_unchecked(m)
}

/// Row-stochastic neighbourhood aggregation `Aᵢ = Σⱼ Pᵢⱼ Hⱼ`.
pub fn aggregate(p: &DMatrix<f64>, h: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
    if p.nrows() != h.len() || p.ncols() != h.len() {
        return Err(Error::Shape(format!(
            "propagation matrix {}x{} for {} nodes",
            p.nrows(),
            p.ncols(),
            h.len()
        )));
    }
    let n = h[0].nrows();
    Ok((0..h.len())
        .map(|i| {
            let mut acc = DMatrix::zeros(n, n);
            for (j, hj) in h.iter().enumerate() {
                let w = p[(i, j)];
                if w != 0.0 {
                    acc += hj * w;
                }
            }
            acc
        })
        .collect())
}

/// `∂L/∂Hⱼ = Σᵢ Pᵢⱼ ∂L/∂Aᵢ`.
pub fn aggregate_backward(p: &DMatrix<f64>, grad: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    let n = grad[0].nrows();
    (0..grad.len())
        .map(|j| {
            let mut acc = DMatrix::zeros(n, n);
            for (i, gi) in grad.iter().enumerate() {
                let w = p[(i, j)];
                if w != 0.0 {
                    acc += gi * w;
                }
            }
            acc
        })
        .collect()
}

/// `Y = W A Wᵀ`.
pub fn bimap(w: &DMatrix<f64>, a: &DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&(w * a * w.transpose()))
}

/// Returns `(∂L/∂W, ∂L/∂A)` for `Y = W A Wᵀ` with symmetric `A`.
pub fn bimap_backward(w: &DMatrix<f64>, a: &DMatrix<f64>, grad: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let g = symmetrize(grad);
    let dw = (&g * w * a) * 2.0;
    let da = symmetrize(&(w.transpose() * g * w));
    (dw, da)
}

/// `U max(εI, Λ) Uᵀ`, returning the eigenpair of the input for the backward pass.
pub fn reeig(y: &DMatrix<f64>, eps: f64) -> (DMatrix<f64>, EigenPair) {
    let e = eig(y);
    (e.map(MatrixFunction::Clip(eps)), e)
}

pub fn reeig_backward(e: &EigenPair, eps: f64, grad: &DMatrix<f64>) -> DMatrix<f64> {
    loewner_backward(e, MatrixFunction::Clip(eps), grad)
}

/// Tangent-space map `U log(Λ) Uᵀ`.
pub fn log_map(s: &DMatrix<f64>) -> Result<(DMatrix<f64>, EigenPair)> {
    let e = eig(s);
    if !(e.min_eigenvalue() > 0.0) {
        return Err(Error::Domain {
            function: "log",
            eigenvalue: e.min_eigenvalue(),
        });
    }
    Ok((e.map(MatrixFunction::Log), e))
}

pub fn log_backward(e: &EigenPair, grad: &DMatrix<f64>) -> DMatrix<f64> {
    loewner_backward(e, MatrixFunction::Log, grad)
}

/// Recentring and biasing: `B^{1/2} G^{-1/2} R G^{-1/2} B^{1/2}`.
pub fn rbn_apply(r: &DMatrix<f64>, g_inv_sqrt: &DMatrix<f64>, b_sqrt: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let centered = symmetrize(&(g_inv_sqrt * r * g_inv_sqrt));
    let out = symmetrize(&(b_sqrt * &centered * b_sqrt));
    (out, centered)
}

/// Returns `(∂L/∂R, ∂L/∂B^{1/2})` with the barycenter held fixed.
pub fn rbn_apply_backward(
    centered: &DMatrix<f64>,
    g_inv_sqrt: &DMatrix<f64>,
    b_sqrt: &DMatrix<f64>,
    grad: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let g = symmetrize(grad);
    let d_centered = b_sqrt * &g * b_sqrt;
    let dr = symmetrize(&(g_inv_sqrt * d_centered * g_inv_sqrt));
    let d_root = &g * b_sqrt * centered + centered * b_sqrt * &g;
    (dr, d_root)
}

/// Logits, mean cross-entropy and `∂L/∂logits` for a linear head without bias.
///
/// `features` is batch × d, `weights` is classes × d.
pub fn head_and_loss(
    features: &DMatrix<f64>,
    weights: &DMatrix<f64>,
    labels: &[u32],
) -> Result<(DMatrix<f64>, f64, DMatrix<f64>)> {
    if features.ncols() != weights.ncols() || features.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "head expects {} features for {} labels, got {}x{}",
            weights.ncols(),
            labels.len(),
            features.nrows(),
            features.ncols()
        )));
    }
    let c = weights.nrows();
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= c) {
        return Err(Error::InvalidParameter(format!("label {bad} out of range for {c} classes")));
    }
    let logits = features * weights.transpose();
    let b = labels.len() as f64;
    let mut loss = 0.0;
    let mut grad = DMatrix::zeros(logits.nrows(), c);
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.max();
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + z.ln();
        loss += log_z - row[label as usize];
        for k in 0..c {
            grad[(r, k)] = (row[k] - log_z).exp() / b;
        }
        grad[(r, label as usize)] -= 1.0 / b;
    }
    Ok((logits, loss / b, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spd::random::{gaussian_matrix, random_spd, random_stiefel, random_symmetric, rng_from_seed};
    use nalgebra::DVector;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(v))
    }

    fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        a.component_mul(b).sum()
    }

    /// Central difference of `f` along direction `d` at step 1e-5.
    fn directional(f: impl Fn(&DMatrix<f64>) -> f64, x: &DMatrix<f64>, d: &DMatrix<f64>) -> f64 {
        let h = 1e-5;
        (f(&(x + d * h)) - f(&(x - d * h))) / (2.0 * h)
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
    }

    #[test]
    fn identity_bimap() {
        let mut rng = rng_from_seed(1);
        let a = random_spd(&mut rng, 4);
        assert!((bimap(&DMatrix::identity(4, 4), &a) - &a).amax() < 1e-15);
    }

    #[test]
    fn aggregation_of_equal_nodes() {
        let h = vec![diag(&[1.0, 2.0]), diag(&[1.0, 2.0])];
        let p = DMatrix::from_element(2, 2, 0.5);
        let a = aggregate(&p, &h).unwrap();
        assert_eq!(a[0], a[1]);
        assert_eq!(a[0], h[0]);
        assert!(aggregate(&DMatrix::identity(3, 3), &h).is_err());
    }

    #[test]
    fn aggregate_is_adjoint() {
        let mut rng = rng_from_seed(2);
        let p = gaussian_matrix(&mut rng, 3, 3).abs();
        let h: Vec<_> = (0..3).map(|_| random_symmetric(&mut rng, 2)).collect();
        let g: Vec<_> = (0..3).map(|_| random_symmetric(&mut rng, 2)).collect();
        let fwd = aggregate(&p, &h).unwrap();
        let back = aggregate_backward(&p, &g);
        let lhs: f64 = fwd.iter().zip(&g).map(|(a, b)| inner(a, b)).sum();
        let rhs: f64 = h.iter().zip(&back).map(|(a, b)| inner(a, b)).sum();
        assert!(rel(lhs, rhs) < 1e-12);
    }

    #[test]
    fn reeig_examples() {
        let (z, _) = reeig(&diag(&[5.0, -1.0]), 1e-6);
        assert!((z - diag(&[5.0, 1e-6])).amax() < 1e-15);
        let mut rng = rng_from_seed(3);
        let s = random_spd(&mut rng, 5);
        let (z, _) = reeig(&s, 1e-6);
        assert!((&z - &s).amax() < 1e-10);
        let (zz, _) = reeig(&z, 1e-6);
        assert!((zz - z).amax() < 1e-12);
        // rank-deficient congruence becomes strictly positive-definite
        let w = random_stiefel(&mut rng, 7, 5);
        let (z, _) = reeig(&bimap(&w, &s), 1e-6);
        assert!(eig(&z).min_eigenvalue() >= 1e-6 * (1.0 - 1e-9));
    }

    #[test]
    fn reeig_gradient_vanishes_in_clipped_directions() {
        let y = diag(&[3.0, -2.0]);
        let (_, e) = reeig(&y, 1e-6);
        let g = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(reeig_backward(&e, 1e-6, &g).amax(), 0.0);
    }

    #[test]
    fn log_examples() {
        let (l, _) = log_map(&diag(&[1f64.exp(), 2f64.exp()])).unwrap();
        assert!((l - diag(&[1.0, 2.0])).amax() < 1e-14);
        let (l, _) = log_map(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(l.amax(), 0.0);
        assert!(log_map(&diag(&[1.0, -1.0])).is_err());
    }

    #[test]
    fn congruence_gradient_matches_closed_form() {
        let mut rng = rng_from_seed(4);
        let a_mat = gaussian_matrix(&mut rng, 3, 3);
        let s = random_spd(&mut rng, 4);
        let w = gaussian_matrix(&mut rng, 3, 4);
        let (dw, _) = bimap_backward(&w, &s, &a_mat);
        let expected = (&a_mat + a_mat.transpose()) * &w * &s;
        assert!((&dw - &expected).amax() < 1e-12);
        let d = gaussian_matrix(&mut rng, 3, 4);
        let fd = directional(|w| inner(&a_mat, &(w * &s * w.transpose())), &w, &d);
        assert!(rel(fd, inner(&expected, &d)) < 1e-8);
    }

    #[test]
    fn layer_gradients_match_finite_differences() {
        let mut rng = rng_from_seed(5);
        let n = 6;
        let s = random_spd(&mut rng, n);
        let probe = random_symmetric(&mut rng, n);
        let dir = random_symmetric(&mut rng, n);

        let (_, e) = log_map(&s).unwrap();
        let fd = directional(|x| inner(&probe, &log_map(x).unwrap().0), &s, &dir);
        assert!(rel(fd, inner(&log_backward(&e, &probe), &dir)) < 1e-6);

        let y = random_symmetric(&mut rng, n);
        let eps = 0.05;
        let (_, e) = reeig(&y, eps);
        let fd = directional(|x| inner(&probe, &reeig(x, eps).0), &y, &dir);
        assert!(rel(fd, inner(&reeig_backward(&e, eps, &probe), &dir)) < 1e-6);

        let g_inv = random_spd(&mut rng, n);
        let b_root = random_spd(&mut rng, n);
        let (_, c) = rbn_apply(&s, &g_inv, &b_root);
        let (dr, db) = rbn_apply_backward(&c, &g_inv, &b_root, &probe);
        let fd = directional(|x| inner(&probe, &rbn_apply(x, &g_inv, &b_root).0), &s, &dir);
        assert!(rel(fd, inner(&dr, &dir)) < 1e-6);
        let fd = directional(|x| inner(&probe, &rbn_apply(&s, &g_inv, x).0), &b_root, &dir);
        assert!(rel(fd, inner(&db, &dir)) < 1e-6);
    }

    #[test]
    fn head_examples() {
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 0.0]);
        let (logits, loss, _) = head_and_loss(&x, &DMatrix::zeros(4, 3), &[0, 3]).unwrap();
        assert_eq!(logits.amax(), 0.0);
        assert!((loss - 4f64.ln()).abs() < 1e-14);
        let w = DMatrix::from_row_slice(2, 3, &[100.0, 0.0, 0.0, -100.0, 0.0, 0.0]);
        let (_, loss, _) = head_and_loss(&x.rows(0, 1).into_owned(), &w, &[0]).unwrap();
        assert!(loss < 1e-40);
        assert!(head_and_loss(&x, &DMatrix::zeros(2, 3), &[0, 2]).is_err());
    }

    #[test]
    fn head_gradient() {
        let mut rng = rng_from_seed(6);
        let x = gaussian_matrix(&mut rng, 5, 4);
        let w = gaussian_matrix(&mut rng, 3, 4);
        let labels = [0, 1, 2, 1, 0];
        let (_, _, dlogits) = head_and_loss(&x, &w, &labels).unwrap();
        let dw = dlogits.transpose() * &x;
        let d = gaussian_matrix(&mut rng, 3, 4);
        let fd = directional(|w| head_and_loss(&x, w, &labels).unwrap().1, &w, &d);
        assert!(rel(fd, inner(&dw, &d)) < 1e-8);
    }
}
