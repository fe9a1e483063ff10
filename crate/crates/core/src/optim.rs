//! First-order Riemannian optimization for Stiefel stacks and SPD biases.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{orthonormality_drift, Gradients, ModelParams};
use crate::spd::{symmetrize, MatrixFunction, SpdMatrix};

/// Orthonormality drift beyond which a point is not accepted as lying on its Stiefel manifold.
pub const STIEFEL_TOL: f64 = 1e-6;

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(m)
}

/// Tangent projection at `W`: `G − W sym(Wᵀ G)` for orthonormal columns and the
/// transposed rule `G − sym(G Wᵀ) W` for orthonormal rows.
pub fn stiefel_project(w: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if w.shape() != g.shape() {
        return Err(Error::Shape(format!("gradient {:?} for a point {:?}", g.shape(), w.shape())));
    }
    let drift = orthonormality_drift(w);
    if !(drift <= STIEFEL_TOL) {
        return Err(Error::InvalidParameter(format!(
            "point is off its Stiefel manifold (drift {drift:e})"
        )));
    }
    Ok(project_unchecked(w, g))
}

fn project_unchecked(w: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    if w.nrows() >= w.ncols() {
        g - w * sym(&(w.transpose() * g))
    } else {
        g - sym(&(g * w.transpose())) * w
    }
}

/// QR retraction of `W + ξ` with the sign of `R`'s diagonal made positive.
pub fn stiefel_retract(w: &DMatrix<f64>, xi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if w.shape() != xi.shape() {
        return Err(Error::Shape(format!("step {:?} for a point {:?}", xi.shape(), w.shape())));
    }
    if xi.iter().all(|&v| v == 0.0) {
        return Ok(w.clone());
    }
    if w.nrows() < w.ncols() {
        return Ok(qr_orthonormalize(&(w + xi).transpose())?.transpose());
    }
    qr_orthonormalize(&(w + xi))
}

fn qr_orthonormalize(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let cols = m.ncols();
    let qr = m.clone().qr();
    let r = qr.r();
    let mut q = qr.q();
    let scale = m.norm().max(f64::MIN_POSITIVE);
    for j in 0..cols {
        let d = r[(j, j)];
        if !(d.abs() > 1e-12 * scale) {
            return Err(Error::NumericalBreakdown(format!(
                "retraction lost rank (|R[{j},{j}]| = {:e})",
                d.abs()
            )));
        }
        if d < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(q)
}

/// Projection-based transport of `m` into the tangent space at `W'`.
pub fn vector_transport(w_new: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    project_unchecked(w_new, m)
}

/// Distance of `ξ` from the tangent space at `W`: `max |sym(Wᵀξ)|` (or `sym(ξWᵀ)` for row-orthonormal `W`).
pub fn tangency_defect(w: &DMatrix<f64>, xi: &DMatrix<f64>) -> f64 {
    if w.nrows() >= w.ncols() {
        sym(&(w.transpose() * xi)).amax()
    } else {
        sym(&(xi * w.transpose())).amax()
    }
}

/// Exponential-map descent step on the SPD bias:
/// `B' = B^{1/2} exp(−lr B^{1/2} sym(G) B^{1/2}) B^{1/2}`, i.e. along the
/// Riemannian gradient `B sym(G) B`.
pub fn spd_bias_step(b: &SpdMatrix, g: &DMatrix<f64>, lr: f64) -> Result<SpdMatrix> {
    if g.shape() != b.as_matrix().shape() {
        return Err(Error::DimensionMismatch {
            expected: b.dim(),
            found: g.nrows(),
        });
    }
    let root = b.sqrt();
    let r = root.as_matrix();
    let step = sym(&(r * sym(g) * r)) * (-lr);
    let e = crate::spd::sym_eig_unchecked(&step).map(MatrixFunction::Exp);
    Ok(SpdMatrix::from_raw(r * e * r))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }

    fn corrections(&self, t: u64) -> (f64, f64) {
        let t = t as i32;
        (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t))
    }
}

/// First moment in a tangent space plus a scalar second moment.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldMoment {
    pub m: DMatrix<f64>,
    pub v: f64,
}

impl ManifoldMoment {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            m: DMatrix::zeros(rows, cols),
            v: 0.0,
        }
    }
}

fn check_finite(name: &str, g: &DMatrix<f64>) -> Result<()> {
    if g.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteGradient(name.to_string()))
    }
}

/// One adaptive step on a single Stiefel point; `t` is the 1-based step count.
pub fn stiefel_adam_update(
    w: &mut DMatrix<f64>,
    grad: &DMatrix<f64>,
    state: &mut ManifoldMoment,
    cfg: &AdamConfig,
    t: u64,
) -> Result<()> {
    let xi = stiefel_project(w, grad)?;
    state.m = &state.m * cfg.beta1 + &xi * (1.0 - cfg.beta1);
    state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * xi.norm_squared();
    let (c1, c2) = cfg.corrections(t);
    let step = &state.m * (-cfg.lr / c1 / ((state.v / c2).sqrt() + cfg.eps));
    let next = stiefel_retract(w, &step)?;
    state.m = vector_transport(&next, &state.m);
    *w = next;
    Ok(())
}

/// One adaptive step on an SPD point. The moment is kept in whitened
/// coordinates `B^{1/2} sym(G) B^{1/2}` and parallel-transported along the step.
pub fn spd_adam_update(b: &mut SpdMatrix, grad: &DMatrix<f64>, state: &mut ManifoldMoment, cfg: &AdamConfig, t: u64) -> Result<()> {
    let (root, inv_root) = b.sqrt_and_inv_sqrt();
    let (r, ri) = (root.as_matrix(), inv_root.as_matrix());
    let zeta = sym(&(r * sym(grad) * r));
    state.m = &state.m * cfg.beta1 + &zeta * (1.0 - cfg.beta1);
    state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * zeta.norm_squared();
    let (c1, c2) = cfg.corrections(t);
    let lr = cfg.lr / c1 / ((state.v / c2).sqrt() + cfg.eps);
    if state.m.iter().all(|&v| v == 0.0) {
        return Ok(());
    }
    // B^{-1/2} m B^{-1/2} is the Euclidean gradient whose whitened form is m.
    let next = spd_bias_step(b, &sym(&(ri * &state.m * ri)), lr)?;
    // Parallel transport along the geodesic B -> B': E = B^{1/2} exp(X/2) B^{-1/2},
    // expressed in whitened coordinates at B' through Q = B'^{-1/2} E B^{1/2}.
    let half = crate::spd::sym_eig_unchecked(&(&state.m * (-0.5 * lr))).map(MatrixFunction::Exp);
    let q = next.inv_sqrt().into_inner() * r * half;
    state.m = sym(&(&q * &state.m * q.transpose()));
    *b = next;
    Ok(())
}

/// Riemannian Adam over all model parameters.
#[derive(Clone, Debug)]
pub struct RiemannianAdam {
    pub config: AdamConfig,
    pub step: u64,
    stiefel: Vec<Vec<ManifoldMoment>>,
    bias: Vec<Option<ManifoldMoment>>,
    head_m: DMatrix<f64>,
    head_v: DMatrix<f64>,
}

impl RiemannianAdam {
    pub fn new(config: AdamConfig, params: &ModelParams) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            stiefel: params
                .layers
                .iter()
                .map(|s| s.mats.iter().map(|w| ManifoldMoment::zeros(w.nrows(), w.ncols())).collect())
                .collect(),
            bias: params
                .rbn
                .iter()
                .map(|r| r.as_ref().map(|r| ManifoldMoment::zeros(r.bias.dim(), r.bias.dim())))
                .collect(),
            head_m: DMatrix::zeros(params.head.nrows(), params.head.ncols()),
            head_v: DMatrix::zeros(params.head.nrows(), params.head.ncols()),
        })
    }

    /// Applies one update. Gradients are checked for finiteness before anything changes.
    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients) -> Result<()> {
        for (l, layer) in grads.layers.iter().enumerate() {
            for (i, g) in layer.iter().enumerate() {
                check_finite(&format!("layer{}.W[{i}]", l + 1), g)?;
            }
        }
        for (l, g) in grads.rbn_bias.iter().enumerate() {
            if let Some(g) = g {
                check_finite(&format!("rbn{}.bias", l + 1), g)?;
            }
        }
        check_finite("head", &grads.head)?;

        self.step += 1;
        let t = self.step;
        let cfg = self.config;
        for ((stack, layer_grads), moments) in params.layers.iter_mut().zip(&grads.layers).zip(&mut self.stiefel) {
            for ((w, g), state) in stack.mats.iter_mut().zip(layer_grads).zip(moments) {
                stiefel_adam_update(w, g, state, &cfg, t)?;
            }
        }
        for ((rbn, g), state) in params.rbn.iter_mut().zip(&grads.rbn_bias).zip(&mut self.bias) {
            if let (Some(rbn), Some(g), Some(state)) = (rbn, g, state) {
                spd_adam_update(&mut rbn.bias, g, state, &cfg, t)?;
            }
        }
        let (c1, c2) = cfg.corrections(t);
        for ((w, g), (m, v)) in params
            .head
            .iter_mut()
            .zip(grads.head.iter())
            .zip(self.head_m.iter_mut().zip(self.head_v.iter_mut()))
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *w -= cfg.lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
        }
        Ok(())
    }

    /// Largest tangency defect of any Stiefel first moment at the current iterate.
    pub fn max_moment_defect(&self, params: &ModelParams) -> f64 {
        params
            .layers
            .iter()
            .zip(&self.stiefel)
            .flat_map(|(s, ms)| s.mats.iter().zip(ms))
            .map(|(w, m)| tangency_defect(w, &m.m))
            .fold(0.0, f64::max)
    }
}
