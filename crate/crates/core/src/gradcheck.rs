//! Central finite-difference checks of the hand-written backward passes.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::row_normalize;
use crate::network::{
    aggregate, aggregate_backward, bimap, bimap_backward, head_and_loss, log_backward, log_map, model_backward_with,
    model_forward, rbn_apply, rbn_apply_backward, reeig, reeig_backward, BackwardOptions, Batch, Gradients, Mode,
    ModelConfig, ModelParams, ReEigRule,
};
use crate::spd::random::{gaussian_matrix, random_spd, random_stiefel, random_symmetric, rng_from_seed};
use crate::spd::{symmetrize, EigenPair, MatrixFunction, SpdMatrix};

fn default_channels() -> usize {
    5
}
fn default_nodes() -> usize {
    6
}
fn default_classes() -> usize {
    3
}
fn default_batch() -> usize {
    4
}
fn default_eps() -> f64 {
    0.5
}
fn default_step() -> f64 {
    1e-5
}
fn default_threshold() -> f64 {
    1e-4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckConfig {
    #[serde(default = "default_channels")]
    pub n_channels: usize,
    #[serde(default = "default_nodes")]
    pub n_nodes: usize,
    /// Defaults to `(n_C, n_C − 1, n_C − 2)`, floored at 2.
    #[serde(default)]
    pub dims: Option<Vec<usize>>,
    #[serde(default = "default_classes")]
    pub n_classes: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Placed inside the input spectra so that the clamped branch is exercised.
    #[serde(default = "default_eps")]
    pub reeig_eps: f64,
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl GradcheckConfig {
    pub fn dims(&self) -> Vec<usize> {
        self.dims.clone().unwrap_or_else(|| {
            let n = self.n_channels;
            vec![n, n.saturating_sub(1).max(2), n.saturating_sub(2).max(2)]
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_channels < 2 || self.n_channels > 6 || self.n_nodes == 0 || self.n_nodes > 8 {
            return Err(Error::Config(format!(
                "gradient checks need 2 ≤ n_C ≤ 6 and 1 ≤ N ≤ 8, got n_C={} N={}",
                self.n_channels, self.n_nodes
            )));
        }
        if self.dims().first() != Some(&self.n_channels) {
            return Err(Error::Config("first dimension must equal the channel count".into()));
        }
        if self.batch_size < 2 || self.n_classes < 2 {
            return Err(Error::Config("gradient checks need a batch of ≥ 2 trials and ≥ 2 classes".into()));
        }
        if !(self.step > 0.0) || !(self.threshold > 0.0) || !(self.reeig_eps > 0.0) {
            return Err(Error::Config("step, threshold and ReEig eps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// A parameter tensor of the full network.
    Parameter,
    /// A single layer in isolation.
    Layer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckEntry {
    pub name: String,
    pub kind: CheckKind,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub threshold: f64,
    pub step: f64,
    /// Sampling attempts needed to keep every ReEig spectrum away from its kink.
    pub attempts: usize,
    pub entries: Vec<CheckEntry>,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn failures(&self) -> Vec<&CheckEntry> {
        self.entries.iter().filter(|e| !e.passed).collect()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    /// `Err` listing every entry over threshold.
    pub fn into_result(self) -> Result<Self> {
        if self.passed {
            return Ok(self);
        }
        let listed: Vec<String> = self
            .failures()
            .iter()
            .map(|e| format!("{} ({:.3e})", e.name, e.max_rel_error))
            .collect();
        Err(Error::GradientCheck(format!(
            "over threshold {:.1e}: {}",
            self.threshold,
            listed.join(", ")
        )))
    }
}

/// `‖a − b‖_F / max(‖a‖_F, ‖b‖_F)`.
pub fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = a.norm().max(b.norm());
    if scale < 1e-12 {
        return (a - b).norm();
    }
    (a - b).norm() / scale
}

/// Finite-difference gradient of `f` over every entry of `x`.
pub fn fd_gradient(f: impl Fn(&DMatrix<f64>) -> Result<f64>, x: &DMatrix<f64>, h: f64) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    let mut xp = x.clone();
    for j in 0..x.ncols() {
        for i in 0..x.nrows() {
            let v = x[(i, j)];
            xp[(i, j)] = v + h;
            let fp = f(&xp)?;
            xp[(i, j)] = v - h;
            let fm = f(&xp)?;
            xp[(i, j)] = v;
            out[(i, j)] = (fp - fm) / (2.0 * h);
        }
    }
    Ok(out)
}

/// Finite-difference gradient of `f` restricted to symmetric perturbations.
///
/// The result is comparable with `sym(∇f)`.
pub fn fd_gradient_sym(f: impl Fn(&DMatrix<f64>) -> Result<f64>, x: &DMatrix<f64>, h: f64) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    let mut out = DMatrix::zeros(n, n);
    let mut xp = x.clone();
    for i in 0..n {
        for j in i..n {
            let (vi, vj) = (x[(i, j)], x[(j, i)]);
            xp[(i, j)] = vi + h;
            xp[(j, i)] = vj + h;
            let fp = f(&xp)?;
            xp[(i, j)] = vi - h;
            xp[(j, i)] = vj - h;
            let fm = f(&xp)?;
            xp[(i, j)] = vi;
            xp[(j, i)] = vj;
            let d = (fp - fm) / (2.0 * h);
            if i == j {
                out[(i, i)] = d;
            } else {
                out[(i, j)] = d / 2.0;
                out[(j, i)] = d / 2.0;
            }
        }
    }
    Ok(out)
}

fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(b).sum()
}

/// ReEig backward that drops the off-diagonal divided differences. Used as a negative control.
pub fn faulty_reeig_backward(e: &EigenPair, eps: f64, grad: &DMatrix<f64>) -> DMatrix<f64> {
    let g = e.vectors.transpose() * symmetrize(grad) * &e.vectors;
    let d = DVector::from_iterator(
        e.dim(),
        (0..e.dim()).map(|k| g[(k, k)] * MatrixFunction::Clip(eps).derivative(e.values[k])),
    );
    e.reconstruct(&d)
}

struct Setup {
    params: ModelParams,
    inputs: Batch,
    labels: Vec<u32>,
    p: DMatrix<f64>,
    barycenters: Vec<Option<Vec<SpdMatrix>>>,
}

fn sample_setup<R: Rng + ?Sized>(cfg: &GradcheckConfig, rng: &mut R) -> Result<Setup> {
    let model_cfg = ModelConfig {
        reeig_eps: cfg.reeig_eps,
        rbn_every_layer: true,
        ..ModelConfig::new(cfg.n_nodes, cfg.dims(), cfg.n_classes)
    };
    let mut params = ModelParams::init(model_cfg, rng)?;
    for state in params.rbn.iter_mut().flatten() {
        state.bias = SpdMatrix::new(random_spd(rng, state.bias.dim()))?;
    }
    let n = cfg.n_nodes;
    let mut adj = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>());
    adj = symmetrize(&adj);
    adj.fill_diagonal(0.0);
    let p = row_normalize(&adj);
    let inputs: Batch = (0..cfg.batch_size)
        .map(|_| (0..n).map(|_| random_spd(rng, cfg.n_channels)).collect())
        .collect();
    let labels = (0..cfg.batch_size).map(|t| (t % cfg.n_classes) as u32).collect();
    let (_, cache) = model_forward(&inputs, Some(&p), &params, Mode::Train)?;
    Ok(Setup {
        params,
        inputs,
        labels,
        p,
        barycenters: cache.barycenters,
    })
}

fn setup_margins(s: &Setup) -> Result<(f64, f64)> {
    let (_, cache) = model_forward(&s.inputs, Some(&s.p), &s.params, Mode::Fixed(&s.barycenters))?;
    Ok(cache.reeig_margins(s.params.config.reeig_eps))
}

fn model_loss(s: &Setup, params: &ModelParams, inputs: &[Vec<DMatrix<f64>>]) -> Result<f64> {
    let (_, cache) = model_forward(inputs, Some(&s.p), params, Mode::Fixed(&s.barycenters))?;
    Ok(head_and_loss(&cache.features, &params.head, &s.labels)?.1)
}

fn analytic(s: &Setup, rule: ReEigRule) -> Result<Gradients> {
    let (_, cache) = model_forward(&s.inputs, Some(&s.p), &s.params, Mode::Fixed(&s.barycenters))?;
    let (_, _, dlogits) = head_and_loss(&cache.features, &s.params.head, &s.labels)?;
    let opts = BackwardOptions {
        reeig_rule: rule,
        input_gradients: true,
    };
    model_backward_with(&s.params, &cache, &dlogits, opts)
}

fn entry(name: impl Into<String>, kind: CheckKind, err: f64, threshold: f64) -> CheckEntry {
    CheckEntry {
        name: name.into(),
        kind,
        max_rel_error: err,
        passed: err < threshold,
    }
}

fn parameter_checks(s: &Setup, grads: &Gradients, cfg: &GradcheckConfig) -> Result<Vec<CheckEntry>> {
    let h = cfg.step;
    let mut out = Vec::new();
    for (l, stack) in s.params.layers.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for (i, w) in stack.mats.iter().enumerate() {
            let fd = fd_gradient(
                |x| {
                    let mut p = s.params.clone();
                    p.layers[l].mats[i] = x.clone();
                    model_loss(s, &p, &s.inputs)
                },
                w,
                h,
            )?;
            worst = worst.max(relative_error(&grads.layers[l][i], &fd));
        }
        out.push(entry(format!("layer{}.W", l + 1), CheckKind::Parameter, worst, cfg.threshold));
    }
    for (l, state) in s.params.rbn.iter().enumerate() {
        let (Some(state), Some(g)) = (state, &grads.rbn_bias[l]) else {
            continue;
        };
        let fd = fd_gradient_sym(
            |x| {
                let mut p = s.params.clone();
                p.rbn[l].as_mut().expect("rbn layer").bias = SpdMatrix::new(x.clone())?;
                model_loss(s, &p, &s.inputs)
            },
            state.bias.as_matrix(),
            h,
        )?;
        let err = relative_error(&symmetrize(g), &fd);
        out.push(entry(format!("rbn{}.bias", l + 1), CheckKind::Parameter, err, cfg.threshold));
    }
    let fd = fd_gradient(
        |x| {
            let mut p = s.params.clone();
            p.head = x.clone();
            model_loss(s, &p, &s.inputs)
        },
        &s.params.head,
        h,
    )?;
    out.push(entry("head", CheckKind::Parameter, relative_error(&grads.head, &fd), cfg.threshold));

    let dinputs = grads.inputs.as_ref().expect("input gradients requested");
    let mut worst: f64 = 0.0;
    for t in 0..s.inputs.len() {
        for i in 0..s.inputs[t].len() {
            let fd = fd_gradient_sym(
                |x| {
                    let mut inputs = s.inputs.clone();
                    inputs[t][i] = x.clone();
                    model_loss(s, &s.params, &inputs)
                },
                &s.inputs[t][i],
                h,
            )?;
            worst = worst.max(relative_error(&symmetrize(&dinputs[t][i]), &fd));
        }
    }
    out.push(entry("inputs", CheckKind::Parameter, worst, cfg.threshold));
    Ok(out)
}

/// Each layer alone under a random linear functional `⟨G, f(x)⟩`.
fn layer_checks<R: Rng + ?Sized>(cfg: &GradcheckConfig, rng: &mut R, rule: ReEigRule) -> Result<Vec<CheckEntry>> {
    let (h, thr) = (cfg.step, cfg.threshold);
    let n = cfg.n_channels;
    let mut out = Vec::new();

    let nodes: Vec<DMatrix<f64>> = (0..cfg.n_nodes).map(|_| random_spd(rng, n)).collect();
    let mut adj = DMatrix::from_fn(cfg.n_nodes, cfg.n_nodes, |_, _| rng.gen::<f64>());
    adj.fill_diagonal(0.0);
    let p = row_normalize(&adj);
    let gs: Vec<DMatrix<f64>> = (0..cfg.n_nodes).map(|_| random_symmetric(rng, n)).collect();
    let back = aggregate_backward(&p, &gs);
    let mut worst: f64 = 0.0;
    for j in 0..nodes.len() {
        let fd = fd_gradient(
            |x| {
                let mut h_nodes = nodes.clone();
                h_nodes[j] = x.clone();
                let agg = aggregate(&p, &h_nodes)?;
                Ok(agg.iter().zip(&gs).map(|(a, g)| inner(g, a)).sum())
            },
            &nodes[j],
            h,
        )?;
        worst = worst.max(relative_error(&back[j], &fd));
    }
    out.push(entry("aggregate", CheckKind::Layer, worst, thr));

    let m = n.saturating_sub(1).max(2);
    let w = random_stiefel(rng, m, n);
    let a = random_spd(rng, n);
    let g = random_symmetric(rng, m);
    let (dw, da) = bimap_backward(&w, &a, &g);
    let fd_w = fd_gradient(|x| Ok(inner(&g, &bimap(x, &a))), &w, h)?;
    let fd_a = fd_gradient_sym(|x| Ok(inner(&g, &bimap(&w, x))), &a, h)?;
    out.push(entry("bimap.W", CheckKind::Layer, relative_error(&dw, &fd_w), thr));
    out.push(entry("bimap.A", CheckKind::Layer, relative_error(&symmetrize(&da), &fd_a), thr));

    // spectrum straddling eps, kept clear of the kink
    let eps = cfg.reeig_eps;
    let q = random_stiefel(rng, n, n);
    let lambdas = DVector::from_iterator(
        n,
        (0..n).map(|k| {
            let side = if k % 2 == 0 { 1.0 } else { -1.0 };
            eps * (1.0 + side * (0.2 + 0.6 * rng.gen::<f64>()))
        }),
    );
    let y = symmetrize(&(&q * DMatrix::from_diagonal(&lambdas) * q.transpose()));
    let g = random_symmetric(rng, n);
    let (_, e) = reeig(&y, eps);
    let dy = rule(&e, eps, &g);
    let fd = fd_gradient_sym(|x| Ok(inner(&g, &reeig(x, eps).0)), &y, h)?;
    out.push(entry("reeig", CheckKind::Layer, relative_error(&symmetrize(&dy), &fd), thr));

    let r = random_spd(rng, n);
    let gi = SpdMatrix::new(random_spd(rng, n))?.inv_sqrt().into_inner();
    let bs = SpdMatrix::new(random_spd(rng, n))?.sqrt().into_inner();
    let g = random_symmetric(rng, n);
    let (_, centered) = rbn_apply(&r, &gi, &bs);
    let (dr, db) = rbn_apply_backward(&centered, &gi, &bs, &g);
    let fd_r = fd_gradient_sym(|x| Ok(inner(&g, &rbn_apply(x, &gi, &bs).0)), &r, h)?;
    let fd_b = fd_gradient_sym(|x| Ok(inner(&g, &rbn_apply(&r, &gi, x).0)), &bs, h)?;
    out.push(entry("rbn.R", CheckKind::Layer, relative_error(&symmetrize(&dr), &fd_r), thr));
    out.push(entry("rbn.B_sqrt", CheckKind::Layer, relative_error(&symmetrize(&db), &fd_b), thr));

    let s = random_spd(rng, n);
    let g = random_symmetric(rng, n);
    let (_, e) = log_map(&s)?;
    let ds = log_backward(&e, &g);
    let fd = fd_gradient_sym(|x| Ok(inner(&g, &log_map(x)?.0)), &s, h)?;
    out.push(entry("log", CheckKind::Layer, relative_error(&symmetrize(&ds), &fd), thr));

    let batch = cfg.batch_size;
    let d = 2 * n;
    let feats = gaussian_matrix(rng, batch, d);
    let wts = gaussian_matrix(rng, cfg.n_classes, d);
    let labels: Vec<u32> = (0..batch).map(|t| (t % cfg.n_classes) as u32).collect();
    let (_, _, dl) = head_and_loss(&feats, &wts, &labels)?;
    let fd_w = fd_gradient(|x| Ok(head_and_loss(&feats, x, &labels)?.1), &wts, h)?;
    let fd_f = fd_gradient(|x| Ok(head_and_loss(x, &wts, &labels)?.1), &feats, h)?;
    out.push(entry("head.W", CheckKind::Layer, relative_error(&(dl.transpose() * &feats), &fd_w), thr));
    out.push(entry("head.features", CheckKind::Layer, relative_error(&(&dl * &wts), &fd_f), thr));
    Ok(out)
}

const MAX_ATTEMPTS: usize = 32;
const KINK_MARGIN: f64 = 1e-3;
const MIN_GAP: f64 = 1e-6;

/// Compares every backward pass with central finite differences.
pub fn gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    gradcheck_with(cfg, reeig_backward)
}

/// As [`gradcheck`], with a substitute ReEig backward rule.
pub fn gradcheck_with(cfg: &GradcheckConfig, rule: ReEigRule) -> Result<GradcheckReport> {
    cfg.validate()?;
    let mut rng = rng_from_seed(cfg.seed);
    let mut attempts = 0;
    let setup = loop {
        attempts += 1;
        let s = sample_setup(cfg, &mut rng)?;
        let (to_eps, gap) = setup_margins(&s)?;
        if to_eps > KINK_MARGIN && gap > MIN_GAP {
            break s;
        }
        if attempts == MAX_ATTEMPTS {
            return Err(Error::NumericalBreakdown(format!(
                "no well-separated sample in {MAX_ATTEMPTS} attempts (kink margin {to_eps:.2e}, gap {gap:.2e})"
            )));
        }
    };
    let grads = analytic(&setup, rule)?;
    let mut entries = parameter_checks(&setup, &grads, cfg)?;
    entries.extend(layer_checks(cfg, &mut rng, rule)?);
    let passed = entries.iter().all(|e| e.passed);
    Ok(GradcheckReport {
        threshold: cfg.threshold,
        step: cfg.step,
        attempts,
        entries,
        passed,
    })
}
