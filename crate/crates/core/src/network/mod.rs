//! Graph BiMap network: aggregation and per-node congruence, ReEig, Riemannian
//! batch normalization, LOG and a linear head, with hand-written reverse mode.

pub mod layers;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spd::random::{gaussian_matrix, random_stiefel};
use crate::spd::{frechet_mean, geodesic, loewner_backward, EigenPair, MatrixFunction, SpdMatrix};

pub use layers::{
    aggregate, aggregate_backward, bimap, bimap_backward, head_and_loss, log_backward, log_map, rbn_apply,
    rbn_apply_backward, reeig, reeig_backward,
};

/// Largest entrywise deviation of `W Wᵀ` (rows ≤ cols) or `Wᵀ W` (rows > cols) from the identity.
pub fn orthonormality_drift(w: &DMatrix<f64>) -> f64 {
    let gram = if w.nrows() <= w.ncols() {
        w * w.transpose()
    } else {
        w.transpose() * w
    };
    let k = gram.nrows();
    (gram - DMatrix::<f64>::identity(k, k)).amax()
}

/// One transformation matrix per graph node, each `out × in` on its Stiefel manifold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StiefelStack {
    pub mats: Vec<DMatrix<f64>>,
}

impl StiefelStack {
    pub fn random<R: Rng + ?Sized>(rng: &mut R, n_nodes: usize, out_dim: usize, in_dim: usize) -> Self {
        Self {
            mats: (0..n_nodes).map(|_| random_stiefel(rng, out_dim, in_dim)).collect(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.mats.len()
    }

    pub fn out_dim(&self) -> usize {
        self.mats[0].nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.mats[0].ncols()
    }

    pub fn max_drift(&self) -> f64 {
        self.mats.iter().map(orthonormality_drift).fold(0.0, f64::max)
    }
}

/// Shared SPD bias and per-node running barycenters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbnState {
    pub bias: SpdMatrix,
    pub running_mean: Vec<SpdMatrix>,
    pub momentum: f64,
}

impl RbnState {
    pub fn identity(n_nodes: usize, dim: usize, momentum: f64) -> Self {
        Self {
            bias: SpdMatrix::identity(dim),
            running_mean: vec![SpdMatrix::identity(dim); n_nodes],
            momentum,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_nodes: usize,
    /// `(o₁, o₂, ..., o_L)`: input dimension followed by each layer's output dimension.
    pub dims: Vec<usize>,
    pub n_classes: usize,
    #[serde(default = "default_reeig_eps")]
    pub reeig_eps: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    /// Batch normalization after every layer instead of only the last.
    #[serde(default)]
    pub rbn_every_layer: bool,
}

fn default_reeig_eps() -> f64 {
    1e-6
}

fn default_momentum() -> f64 {
    0.9
}

impl ModelConfig {
    pub fn new(n_nodes: usize, dims: Vec<usize>, n_classes: usize) -> Self {
        Self {
            n_nodes,
            dims,
            n_classes,
            reeig_eps: default_reeig_eps(),
            momentum: default_momentum(),
            rbn_every_layer: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_nodes == 0 {
            return Err(Error::Config("model needs at least one graph node".into()));
        }
        if self.dims.len() < 2 || self.dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!(
                "dims must list the input and at least one positive layer width, got {:?}",
                self.dims
            )));
        }
        if self.n_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.n_classes)));
        }
        if !(self.reeig_eps > 0.0) {
            return Err(Error::Config(format!("ReEig threshold {} must be > 0", self.reeig_eps)));
        }
        if !(self.momentum > 0.0 && self.momentum < 1.0) {
            return Err(Error::Config(format!("momentum {} must lie in (0, 1)", self.momentum)));
        }
        Ok(())
    }

    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn has_rbn(&self, layer: usize) -> bool {
        self.rbn_every_layer || layer + 1 == self.n_layers()
    }

    pub fn feature_len(&self) -> usize {
        self.n_nodes * self.output_dim() * self.output_dim()
    }

    /// Trainable scalars: transformation stacks, SPD biases and head weights.
    pub fn param_count(&self) -> usize {
        let n = self.n_nodes;
        let stacks: usize = self.dims.windows(2).map(|d| n * d[0] * d[1]).sum();
        let biases: usize = (0..self.n_layers())
            .filter(|&l| self.has_rbn(l))
            .map(|l| self.dims[l + 1].pow(2))
            .sum();
        stacks + biases + self.n_classes * self.feature_len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub layers: Vec<StiefelStack>,
    /// One entry per layer; `Some` where batch normalization follows it.
    pub rbn: Vec<Option<RbnState>>,
    /// `classes × (N·o_L²)`.
    pub head: DMatrix<f64>,
}

impl ModelParams {
    /// Random Stiefel stacks, identity biases and running means, Gaussian head with variance `1/fan_in`.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let n = config.n_nodes;
        let layers = config
            .dims
            .windows(2)
            .map(|d| StiefelStack::random(rng, n, d[1], d[0]))
            .collect();
        let rbn = (0..config.n_layers())
            .map(|l| config.has_rbn(l).then(|| RbnState::identity(n, config.dims[l + 1], config.momentum)))
            .collect();
        let d = config.feature_len();
        let head = gaussian_matrix(rng, config.n_classes, d) * (1.0 / (d as f64).sqrt());
        Ok(Self {
            config,
            layers,
            rbn,
            head,
        })
    }

    pub fn param_count(&self) -> usize {
        let stacks: usize = self.layers.iter().flat_map(|s| &s.mats).map(|w| w.len()).sum();
        let biases: usize = self.rbn.iter().flatten().map(|r| r.bias.as_matrix().len()).sum();
        stacks + biases + self.head.len()
    }

    pub fn max_stiefel_drift(&self) -> f64 {
        self.layers.iter().map(StiefelStack::max_drift).fold(0.0, f64::max)
    }

    pub fn min_bias_eigenvalue(&self) -> f64 {
        self.rbn
            .iter()
            .flatten()
            .map(|r| r.bias.eig().min_eigenvalue())
            .fold(f64::INFINITY, f64::min)
    }
}

/// How batch normalization picks its barycenters.
#[derive(Clone, Copy, Debug)]
pub enum Mode<'a> {
    /// Per-node Fréchet mean of the current batch.
    Train,
    /// Stored running means.
    Eval,
    /// Externally supplied barycenters, one list per layer (finite-difference checks).
    Fixed(&'a [Option<Vec<SpdMatrix>>]),
}

/// Per-trial node matrices: `batch[t][i]`.
pub type Batch = Vec<Vec<DMatrix<f64>>>;

struct RbnCache {
    g_inv_sqrt: Vec<DMatrix<f64>>,
    b_sqrt: DMatrix<f64>,
    b_eig: EigenPair,
    centered: Batch,
}

struct LayerCache {
    inputs: Batch,
    reeig: Vec<Vec<EigenPair>>,
    rbn: Option<RbnCache>,
}

/// Intermediate values retained for the backward pass.
pub struct ForwardCache {
    propagation: Option<DMatrix<f64>>,
    layers: Vec<LayerCache>,
    log_eig: Vec<Vec<EigenPair>>,
    pub features: DMatrix<f64>,
    /// Barycenters used by each batch-normalized layer.
    pub barycenters: Vec<Option<Vec<SpdMatrix>>>,
    /// Smallest eigenvalue over all ReEig outputs.
    pub min_reeig_eigenvalue: f64,
}

impl ForwardCache {
    /// `(min |λ − eps|, min gap between adjacent eigenvalues not both below eps)` over every ReEig input.
    pub fn reeig_margins(&self, eps: f64) -> (f64, f64) {
        let (mut to_eps, mut gap) = (f64::INFINITY, f64::INFINITY);
        for e in self.layers.iter().flat_map(|l| l.reeig.iter().flatten()) {
            for (k, &v) in e.values.iter().enumerate() {
                to_eps = to_eps.min((v - eps).abs());
                // pairs inside the clamped region map to the same constant and have no gap sensitivity
                if k > 0 && e.values[k - 1] > eps {
                    gap = gap.min(e.values[k - 1] - v);
                }
            }
        }
        (to_eps, gap)
    }
}

/// `W_i (Σⱼ Pᵢⱼ Hⱼ) W_iᵀ` for every node of every trial; `p = None` means `P = I`.
pub fn graph_bimap_forward(h: &[Vec<DMatrix<f64>>], p: Option<&DMatrix<f64>>, w: &StiefelStack) -> Result<Batch> {
    h.iter()
        .map(|trial| {
            check_nodes(trial, w)?;
            let agg;
            let inputs = match p {
                Some(p) => {
                    agg = aggregate(p, trial)?;
                    &agg
                }
                None => trial,
            };
            Ok(inputs.iter().zip(&w.mats).map(|(a, wi)| bimap(wi, a)).collect())
        })
        .collect()
}

fn check_nodes(trial: &[DMatrix<f64>], w: &StiefelStack) -> Result<()> {
    if trial.len() != w.n_nodes() {
        return Err(Error::Shape(format!("{} nodes for a stack of {}", trial.len(), w.n_nodes())));
    }
    for m in trial {
        if m.nrows() != w.in_dim() || m.ncols() != w.in_dim() {
            return Err(Error::DimensionMismatch {
                expected: w.in_dim(),
                found: m.nrows(),
            });
        }
    }
    Ok(())
}

/// Per-node barycenter of a batch under the affine-invariant metric.
pub fn batch_barycenters(batch: &[Vec<DMatrix<f64>>]) -> Result<Vec<SpdMatrix>> {
    let n_nodes = batch[0].len();
    let weights = vec![1.0 / batch.len() as f64; batch.len()];
    (0..n_nodes)
        .map(|i| {
            let points: Vec<SpdMatrix> = batch.iter().map(|t| SpdMatrix::from_raw(t[i].clone())).collect();
            frechet_mean(&points, &weights)
        })
        .collect()
}

fn flatten_features(logs: &[Vec<DMatrix<f64>>]) -> DMatrix<f64> {
    let d: usize = logs[0].iter().map(|m| m.len()).sum();
    let mut x = DMatrix::zeros(logs.len(), d);
    for (t, trial) in logs.iter().enumerate() {
        let mut k = 0;
        for m in trial {
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    x[(t, k)] = m[(r, c)];
                    k += 1;
                }
            }
        }
    }
    x
}

fn unflatten_row(x: &DMatrix<f64>, t: usize, n_nodes: usize, o: usize) -> Vec<DMatrix<f64>> {
    (0..n_nodes)
        .map(|i| DMatrix::from_fn(o, o, |r, c| x[(t, i * o * o + r * o + c)]))
        .collect()
}

/// Runs the network on a batch and returns `(logits, cache)`.
///
/// `p` is the row-normalized propagation matrix applied before the first
/// congruence; pass `None` when the inputs are already aggregated.
pub fn model_forward(
    inputs: &[Vec<DMatrix<f64>>],
    p: Option<&DMatrix<f64>>,
    params: &ModelParams,
    mode: Mode<'_>,
) -> Result<(DMatrix<f64>, ForwardCache)> {
    if inputs.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    let cfg = &params.config;
    let eps = cfg.reeig_eps;
    let mut current: Batch = match p {
        Some(p) => inputs.iter().map(|t| aggregate(p, t)).collect::<Result<_>>()?,
        None => inputs.to_vec(),
    };
    let mut layers = Vec::with_capacity(cfg.n_layers());
    let mut barycenters = Vec::with_capacity(cfg.n_layers());
    let mut min_reeig = f64::INFINITY;

    for (l, stack) in params.layers.iter().enumerate() {
        let mut outputs = Vec::with_capacity(current.len());
        let mut eigs = Vec::with_capacity(current.len());
        for trial in &current {
            check_nodes(trial, stack)?;
            let mut out_t = Vec::with_capacity(trial.len());
            let mut eig_t = Vec::with_capacity(trial.len());
            for (a, w) in trial.iter().zip(&stack.mats) {
                let (z, e) = reeig(&bimap(w, a), eps);
                min_reeig = min_reeig.min(e.min_eigenvalue().max(eps));
                out_t.push(z);
                eig_t.push(e);
            }
            outputs.push(out_t);
            eigs.push(eig_t);
        }

        let (rbn, bary) = match &params.rbn[l] {
            None => (None, None),
            Some(state) => {
                let g = match mode {
                    Mode::Train => batch_barycenters(&outputs)?,
                    Mode::Eval => state.running_mean.clone(),
                    Mode::Fixed(fixed) => fixed
                        .get(l)
                        .and_then(|b| b.clone())
                        .ok_or_else(|| Error::Shape(format!("no fixed barycenters for layer {l}")))?,
                };
                let g_inv_sqrt: Vec<_> = g.iter().map(|gi| gi.inv_sqrt().into_inner()).collect();
                let b_eig = state.bias.eig();
                let b_sqrt = b_eig.map(MatrixFunction::Sqrt);
                let mut centered = Vec::with_capacity(outputs.len());
                for trial in outputs.iter_mut() {
                    let mut c_t = Vec::with_capacity(trial.len());
                    for (r, gi) in trial.iter_mut().zip(&g_inv_sqrt) {
                        let (out, c) = rbn_apply(r, gi, &b_sqrt);
                        *r = out;
                        c_t.push(c);
                    }
                    centered.push(c_t);
                }
                (
                    Some(RbnCache {
                        g_inv_sqrt,
                        b_sqrt,
                        b_eig,
                        centered,
                    }),
                    Some(g),
                )
            }
        };
        barycenters.push(bary);
        layers.push(LayerCache {
            inputs: std::mem::replace(&mut current, outputs),
            reeig: eigs,
            rbn,
        });
    }

    let mut log_eig = Vec::with_capacity(current.len());
    let mut logs = Vec::with_capacity(current.len());
    for trial in &current {
        let mut l_t = Vec::with_capacity(trial.len());
        let mut e_t = Vec::with_capacity(trial.len());
        for s in trial {
            let (l, e) = log_map(s)?;
            l_t.push(l);
            e_t.push(e);
        }
        logs.push(l_t);
        log_eig.push(e_t);
    }
    let features = flatten_features(&logs);
    if features.ncols() != params.head.ncols() {
        return Err(Error::Shape(format!(
            "head expects {} features, network produced {}",
            params.head.ncols(),
            features.ncols()
        )));
    }
    let logits = &features * params.head.transpose();
    Ok((
        logits,
        ForwardCache {
            propagation: p.cloned(),
            layers,
            log_eig,
            features,
            barycenters,
            min_reeig_eigenvalue: min_reeig,
        },
    ))
}

/// Euclidean gradients for every parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    /// `layers[l][i]`: gradient for node `i`'s matrix in layer `l`.
    pub layers: Vec<Vec<DMatrix<f64>>>,
    pub rbn_bias: Vec<Option<DMatrix<f64>>>,
    pub head: DMatrix<f64>,
    /// Gradient with respect to the raw (pre-aggregation) inputs, when requested.
    pub inputs: Option<Batch>,
}

/// Backward rule for ReEig; replaceable so that a faulty rule can be shown to be caught.
pub type ReEigRule = fn(&EigenPair, f64, &DMatrix<f64>) -> DMatrix<f64>;

#[derive(Clone, Copy)]
pub struct BackwardOptions {
    pub reeig_rule: ReEigRule,
    pub input_gradients: bool,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        Self {
            reeig_rule: reeig_backward,
            input_gradients: false,
        }
    }
}

pub fn model_backward(params: &ModelParams, cache: &ForwardCache, dlogits: &DMatrix<f64>) -> Result<Gradients> {
    model_backward_with(params, cache, dlogits, BackwardOptions::default())
}

pub fn model_backward_with(
    params: &ModelParams,
    cache: &ForwardCache,
    dlogits: &DMatrix<f64>,
    opts: BackwardOptions,
) -> Result<Gradients> {
    let cfg = &params.config;
    let n_trials = cache.features.nrows();
    if dlogits.nrows() != n_trials || dlogits.ncols() != params.head.nrows() {
        return Err(Error::Shape(format!(
            "logit gradient is {}x{}, expected {}x{}",
            dlogits.nrows(),
            dlogits.ncols(),
            n_trials,
            params.head.nrows()
        )));
    }
    let head = dlogits.transpose() * &cache.features;
    let dfeat = dlogits * &params.head;
    let o = cfg.output_dim();
    let n_nodes = cfg.n_nodes;

    let mut grad: Batch = (0..n_trials)
        .map(|t| {
            unflatten_row(&dfeat, t, n_nodes, o)
                .iter()
                .zip(&cache.log_eig[t])
                .map(|(g, e)| log_backward(e, g))
                .collect()
        })
        .collect();

    let n_layers = cfg.n_layers();
    let mut layer_grads = vec![Vec::new(); n_layers];
    let mut bias_grads = vec![None; n_layers];
    for l in (0..n_layers).rev() {
        let lc = &cache.layers[l];
        if let Some(rc) = &lc.rbn {
            let mut d_root = DMatrix::zeros(rc.b_sqrt.nrows(), rc.b_sqrt.ncols());
            for (t, trial) in grad.iter_mut().enumerate() {
                for (i, g) in trial.iter_mut().enumerate() {
                    let (dr, db) = rbn_apply_backward(&rc.centered[t][i], &rc.g_inv_sqrt[i], &rc.b_sqrt, g);
                    d_root += db;
                    *g = dr;
                }
            }
            bias_grads[l] = Some(loewner_backward(&rc.b_eig, MatrixFunction::Sqrt, &d_root));
        }
        let stack = &params.layers[l];
        let mut dws: Vec<DMatrix<f64>> = stack.mats.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect();
        let need_input = l > 0 || opts.input_gradients;
        for (t, trial) in grad.iter_mut().enumerate() {
            for (i, g) in trial.iter_mut().enumerate() {
                let dy = (opts.reeig_rule)(&lc.reeig[t][i], cfg.reeig_eps, g);
                let (dw, da) = bimap_backward(&stack.mats[i], &lc.inputs[t][i], &dy);
                dws[i] += dw;
                if need_input {
                    *g = da;
                }
            }
        }
        layer_grads[l] = dws;
    }

    let inputs = if opts.input_gradients {
        Some(match &cache.propagation {
            Some(p) => grad.iter().map(|t| aggregate_backward(p, t)).collect(),
            None => grad,
        })
    } else {
        None
    };
    Ok(Gradients {
        layers: layer_grads,
        rbn_bias: bias_grads,
        head,
        inputs,
    })
}

/// Moves each running mean toward the batch barycenter: `G ← γ(G, G_batch; momentum)`.
pub fn commit_batch_statistics(params: &mut ModelParams, cache: &ForwardCache) -> Result<()> {
    for (state, bary) in params.rbn.iter_mut().zip(&cache.barycenters) {
        if let (Some(state), Some(bary)) = (state, bary) {
            for (g, b) in state.running_mean.iter_mut().zip(bary) {
                *g = geodesic(g, b, state.momentum)?;
            }
        }
    }
    Ok(())
}

/// Mean cross-entropy loss, logits and gradients for one batch.
pub fn loss_and_gradients(
    inputs: &[Vec<DMatrix<f64>>],
    p: Option<&DMatrix<f64>>,
    labels: &[u32],
    params: &ModelParams,
    mode: Mode<'_>,
) -> Result<(f64, DMatrix<f64>, Gradients, ForwardCache)> {
    let (logits, cache) = model_forward(inputs, p, params, mode)?;
    let (_, loss, dlogits) = head_and_loss(&cache.features, &params.head, labels)?;
    let grads = model_backward(params, &cache, &dlogits)?;
    Ok((loss, logits, grads, cache))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spd::random::{random_invertible, random_spd, rng_from_seed};
    use crate::spd::airm_distance;

    fn spd(m: &DMatrix<f64>) -> SpdMatrix {
        SpdMatrix::new(m.clone()).unwrap()
    }

    fn random_batch(seed: u64, trials: usize, nodes: usize, dim: usize) -> Batch {
        let mut rng = rng_from_seed(seed);
        (0..trials)
            .map(|_| (0..nodes).map(|_| random_spd(&mut rng, dim)).collect())
            .collect()
    }

    #[test]
    fn reference_parameter_count() {
        let cfg = ModelConfig::new(48, vec![22, 36, 22], 4);
        assert_eq!(cfg.param_count(), 169_444);
        let params = ModelParams::init(cfg, &mut rng_from_seed(0)).unwrap();
        assert_eq!(params.param_count(), 169_444);
        assert_eq!(params.head.len(), 92_928);
    }

    #[test]
    fn stacks_start_orthonormal() {
        let params = ModelParams::init(ModelConfig::new(4, vec![6, 8, 3], 2), &mut rng_from_seed(1)).unwrap();
        assert!(params.max_stiefel_drift() < 1e-12);
        assert_eq!(params.layers[0].out_dim(), 8);
        assert_eq!(params.layers[1].in_dim(), 8);
    }

    #[test]
    fn identity_stack_is_identity_map() {
        let h = random_batch(2, 2, 3, 4);
        let w = StiefelStack {
            mats: vec![DMatrix::identity(4, 4); 3],
        };
        let out = graph_bimap_forward(&h, None, &w).unwrap();
        for (a, b) in out.iter().flatten().zip(h.iter().flatten()) {
            assert!((a - b).amax() < 1e-14);
        }
    }

    #[test]
    fn square_congruence_preserves_distances() {
        let h = random_batch(3, 2, 3, 5);
        let mut rng = rng_from_seed(4);
        let w = StiefelStack {
            mats: (0..3).map(|_| random_invertible(&mut rng, 5)).collect(),
        };
        let out = graph_bimap_forward(&h, None, &w).unwrap();
        for i in 0..3 {
            let before = airm_distance(&spd(&h[0][i]), &spd(&h[1][i])).unwrap();
            let after = airm_distance(&spd(&out[0][i]), &spd(&out[1][i])).unwrap();
            assert!((before - after).abs() <= 1e-8 * before);
        }
    }

    #[test]
    fn rbn_centres_the_batch() {
        let cfg = ModelConfig::new(2, vec![3, 3], 2);
        let mut params = ModelParams::init(cfg, &mut rng_from_seed(5)).unwrap();
        params.layers[0].mats = vec![DMatrix::identity(3, 3); 2];
        let h = random_batch(6, 5, 2, 3);
        let (_, cache) = model_forward(&h, None, &params, Mode::Train).unwrap();
        // with B = I, the logs of the outputs average to zero at the barycenter
        let logs: Vec<SpdMatrix> = (0..5)
            .map(|t| spd(&{ let e = &cache.log_eig[t][0]; e.reconstruct(&e.values) }))
            .collect();
        let mean = frechet_mean(&logs, &[0.2; 5]).unwrap();
        assert!((mean.as_matrix() - DMatrix::<f64>::identity(3, 3)).amax() < 1e-6);
    }

    #[test]
    fn identical_batch_maps_to_bias() {
        let cfg = ModelConfig::new(1, vec![3, 3], 2);
        let mut params = ModelParams::init(cfg, &mut rng_from_seed(7)).unwrap();
        let bias = random_spd(&mut rng_from_seed(8), 3);
        params.rbn[0].as_mut().unwrap().bias = spd(&bias);
        let s = random_spd(&mut rng_from_seed(9), 3);
        let h = vec![vec![s.clone()]; 4];
        let (_, cache) = model_forward(&h, None, &params, Mode::Train).unwrap();
        for t in 0..4 {
            let out = { let e = &cache.log_eig[t][0]; e.reconstruct(&e.values) };
            assert!((out - &bias).amax() < 1e-8);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = ModelConfig::new(3, vec![4, 5, 2], 3);
        let params = ModelParams::init(cfg, &mut rng_from_seed(10)).unwrap();
        let h = random_batch(11, 4, 3, 4);
        let p = DMatrix::from_element(3, 3, 1.0 / 3.0);
        let (a, _) = model_forward(&h, Some(&p), &params, Mode::Train).unwrap();
        let (b, _) = model_forward(&h, Some(&p), &params, Mode::Train).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identical_nodes_commute_with_node_order() {
        let cfg = ModelConfig::new(3, vec![3, 2], 2);
        let mut params = ModelParams::init(cfg, &mut rng_from_seed(12)).unwrap();
        let w = params.layers[0].mats[0].clone();
        params.layers[0].mats = vec![w; 3];
        let h = vec![vec![DMatrix::identity(3, 3); 3]; 2];
        let (a, _) = model_forward(&h, None, &params, Mode::Eval).unwrap();
        let mut permuted = params.clone();
        permuted.layers[0].mats.reverse();
        let (b, _) = model_forward(&h, None, &permuted, Mode::Eval).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn running_mean_moves_along_geodesic() {
        let cfg = ModelConfig::new(1, vec![2, 2], 2);
        let mut params = ModelParams::init(cfg, &mut rng_from_seed(13)).unwrap();
        params.layers[0].mats = vec![DMatrix::identity(2, 2)];
        let s = DMatrix::identity(2, 2) * 4.0;
        let (_, cache) = model_forward(&[vec![s.clone()]], None, &params, Mode::Train).unwrap();
        commit_batch_statistics(&mut params, &cache).unwrap();
        let g = params.rbn[0].as_ref().unwrap().running_mean[0].as_matrix().clone();
        let expected = DMatrix::<f64>::identity(2, 2) * 4f64.powf(0.9);
        assert!((g - expected).amax() < 1e-12);
    }

    #[test]
    fn dimension_increase_stays_positive_definite() {
        let cfg = ModelConfig::new(2, vec![3, 6, 4], 2);
        let params = ModelParams::init(cfg, &mut rng_from_seed(14)).unwrap();
        let h = random_batch(15, 3, 2, 3);
        let (_, cache) = model_forward(&h, None, &params, Mode::Train).unwrap();
        assert!(cache.min_reeig_eigenvalue >= 1e-6);
    }

    #[test]
    fn shape_errors() {
        let params = ModelParams::init(ModelConfig::new(2, vec![3, 2], 2), &mut rng_from_seed(16)).unwrap();
        let h = random_batch(17, 1, 3, 3);
        assert!(model_forward(&h, None, &params, Mode::Eval).is_err());
        assert!(ModelConfig::new(2, vec![3], 2).validate().is_err());
    }
}
