//! From raw epochs to a time-frequency stack of SPD covariance matrices.

mod dataset;
mod filter;
mod plan;

pub use dataset::EpochDataset;
pub use filter::{bandpass, bandpass_gain, periodogram_band_power, Bandpass, TRANSITION_HZ};
pub use plan::{Band, BandGroup, NodeMeta, SegmentationPlan};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spd::SpdMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceOptions {
    /// Ridge added as `shrinkage * (trace / n) * I`.
    pub shrinkage: f64,
    /// Divide by the trace before regularizing.
    #[serde(default)]
    pub trace_normalize: bool,
}

impl Default for CovarianceOptions {
    fn default() -> Self {
        Self {
            shrinkage: 1e-5,
            trace_normalize: false,
        }
    }
}

/// Channel covariance of a channels × T segment with trace-scaled shrinkage.
pub fn covariance(segment: &DMatrix<f64>, shrinkage: f64) -> Result<SpdMatrix> {
    covariance_with(
        segment,
        &CovarianceOptions {
            shrinkage,
            trace_normalize: false,
        },
    )
}

pub fn covariance_with(segment: &DMatrix<f64>, opts: &CovarianceOptions) -> Result<SpdMatrix> {
    let (n, t) = segment.shape();
    if t < 2 {
        return Err(Error::Shape(format!("covariance needs at least 2 samples, got {t}")));
    }
    if n == 0 {
        return Err(Error::Shape("covariance of zero channels".into()));
    }
    if !(opts.shrinkage >= 0.0) {
        return Err(Error::InvalidParameter(format!("shrinkage {} must be >= 0", opts.shrinkage)));
    }
    if segment.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("segment contains non-finite samples".into()));
    }
    let mut centered = segment.clone();
    for mut row in centered.row_iter_mut() {
        let mean = row.mean();
        row.add_scalar_mut(-mean);
    }
    let mut cov = &centered * centered.transpose() / t as f64;
    let mut trace = cov.trace();
    if opts.trace_normalize && trace > 0.0 {
        cov /= trace;
        trace = 1.0;
    }
    // A silent segment regularizes as if it had unit average variance.
    let scale = if trace > 0.0 { trace / n as f64 } else { 1.0 };
    for i in 0..n {
        cov[(i, i)] += opts.shrinkage * scale;
    }
    SpdMatrix::new(crate::spd::symmetrize(&cov))
}

/// One band-filtered window of an epoch.
#[derive(Clone, Debug)]
pub struct Segment {
    pub meta: NodeMeta,
    pub data: DMatrix<f64>,
}

fn check_compatible(plan: &SegmentationPlan, n_samples: usize, fs: f64) -> Result<()> {
    plan.validate()?;
    let span = plan.span_samples(fs)?;
    if span > n_samples {
        return Err(Error::Plan(format!(
            "plan spans {span} samples but epochs have {n_samples}"
        )));
    }
    for k in 0..plan.bands.len() {
        let w = plan.window_samples(k, fs)?;
        let hop = plan.hop_samples(k, fs)?;
        let count = plan.windows_in_band(k)?;
        if (count - 1) * hop + w > span {
            return Err(Error::Plan(format!("band {k}: windows overrun the span")));
        }
        let b = &plan.bands[k];
        if !(b.hi < fs / 2.0) {
            return Err(Error::Plan(format!("band {k}: {} Hz exceeds Nyquist at {fs} Hz", b.hi)));
        }
    }
    Ok(())
}

fn filters_for(plan: &SegmentationPlan, fs: f64, n_samples: usize) -> Result<Vec<Bandpass>> {
    plan.bands
        .iter()
        .map(|b| Bandpass::new(b.lo, b.hi, fs, n_samples))
        .collect()
}

fn cut(
    epoch: &DMatrix<f64>,
    plan: &SegmentationPlan,
    filters: &[Bandpass],
    meta: &[NodeMeta],
    fs: f64,
) -> Result<Vec<Segment>> {
    let filtered: Vec<DMatrix<f64>> = filters.iter().map(|f| f.apply(epoch)).collect::<Result<_>>()?;
    meta.iter()
        .map(|m| {
            let w = plan.window_samples(m.band, fs)?;
            let start = m.window * plan.hop_samples(m.band, fs)?;
            Ok(Segment {
                meta: *m,
                data: filtered[m.band].columns(start, w).into_owned(),
            })
        })
        .collect()
}

/// Band-pass the epoch once per band, then cut each band into its windows.
pub fn segment(epoch: &DMatrix<f64>, plan: &SegmentationPlan, fs: f64) -> Result<Vec<Segment>> {
    check_compatible(plan, epoch.ncols(), fs)?;
    let filters = filters_for(plan, fs, epoch.ncols())?;
    cut(epoch, plan, &filters, &plan.node_meta()?, fs)
}

/// Per-trial time-frequency covariance stack.
#[derive(Clone, Debug)]
pub struct TfStack {
    /// `matrices[trial][node]`
    pub matrices: Vec<Vec<SpdMatrix>>,
    pub node_meta: Vec<NodeMeta>,
    pub labels: Vec<u32>,
}

impl TfStack {
    pub fn n_trials(&self) -> usize {
        self.matrices.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.node_meta.len()
    }

    pub fn dim(&self) -> usize {
        self.matrices[0][0].dim()
    }

    pub fn select(&self, trials: &[usize]) -> TfStack {
        TfStack {
            matrices: trials.iter().map(|&t| self.matrices[t].clone()).collect(),
            node_meta: self.node_meta.clone(),
            labels: trials.iter().map(|&t| self.labels[t]).collect(),
        }
    }
}

pub fn build_tf_stack(dataset: &EpochDataset, plan: &SegmentationPlan, opts: &CovarianceOptions) -> Result<TfStack> {
    dataset.validate()?;
    let fs = dataset.sampling_rate;
    check_compatible(plan, dataset.n_samples, fs)?;
    let filters = filters_for(plan, fs, dataset.n_samples)?;
    let meta = plan.node_meta()?;
    let matrices = (0..dataset.n_trials)
        .map(|t| {
            cut(&dataset.trial(t), plan, &filters, &meta, fs)?
                .iter()
                .map(|s| covariance_with(&s.data, opts))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TfStack {
        matrices,
        node_meta: meta,
        labels: dataset.labels.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spd::random::rng_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::PI;

    fn noise_dataset(n_trials: usize, n_ch: usize, fs: f64, secs: f64, seed: u64) -> EpochDataset {
        let n = (secs * fs).round() as usize;
        let mut rng = rng_from_seed(seed);
        let data = (0..n_trials * n_ch * n).map(|_| rng.sample(StandardNormal)).collect();
        let labels = (0..n_trials).map(|t| (t % 2) as u32).collect();
        EpochDataset::new(n_ch, n, fs, data, labels).unwrap()
    }

    #[test]
    fn uncorrelated_unit_channels() {
        let mut rng = rng_from_seed(1);
        let x = DMatrix::from_fn(2, 5000, |_, _| rng.sample::<f64, _>(StandardNormal));
        let c = covariance(&x, 0.0).unwrap();
        let m = c.as_matrix();
        assert!((m[(0, 0)] - 1.0).abs() < 0.05 && (m[(1, 1)] - 1.0).abs() < 0.05);
        assert!(m[(0, 1)].abs() < 0.05);
    }

    #[test]
    fn tone_variance_is_half_amplitude_squared() {
        let fs = 250.0;
        let a = 3.0;
        let x = DMatrix::from_fn(2, 500, |r, i| {
            if r == 0 {
                a * (2.0 * PI * 10.0 * i as f64 / fs).sin()
            } else {
                0.0
            }
        });
        let c = covariance(&x, 1e-5).unwrap();
        assert!((c.as_matrix()[(0, 0)] / (a * a / 2.0) - 1.0).abs() < 0.02);
    }

    #[test]
    fn shrinkage_floor_on_rank_one() {
        let x = DMatrix::from_fn(3, 100, |r, i| (r as f64 + 1.0) * (i as f64 * 0.37).sin());
        let c = covariance(&x, 1e-5).unwrap();
        let centered_trace = {
            let mut y = x.clone();
            for mut row in y.row_iter_mut() {
                let m = row.mean();
                row.add_scalar_mut(-m);
            }
            (&y * y.transpose()).trace() / 100.0
        };
        assert!(c.eig().min_eigenvalue() >= 1e-5 * centered_trace / 3.0 * (1.0 - 1e-9));
    }

    #[test]
    fn silent_segment_falls_back_to_unit_scale() {
        let c = covariance(&DMatrix::zeros(4, 10), 1e-5).unwrap();
        assert_eq!(*c.as_matrix(), DMatrix::identity(4, 4) * 1e-5);
        assert!(covariance(&DMatrix::zeros(4, 1), 1e-5).is_err());
    }

    #[test]
    fn segment_counts_for_presets() {
        let cases = [
            (SegmentationPlan::ku(), 256.0, 60),
            (SegmentationPlan::bnci2014001(), 256.0, 48),
            (SegmentationPlan::cho2017(), 250.0, 33),
        ];
        for (plan, fs, expected) in cases {
            let n = (plan.span * fs).round() as usize;
            let epoch = DMatrix::from_fn(2, n, |r, i| ((r + 1) as f64 * i as f64 * 0.1).sin());
            let segs = segment(&epoch, &plan, fs).unwrap();
            assert_eq!(segs.len(), expected);
            assert_eq!(segs[0].data.ncols(), plan.window_samples(0, fs).unwrap());
        }
    }

    #[test]
    fn segment_rejects_fractional_windows() {
        let plan = SegmentationPlan::cho2017();
        let epoch = DMatrix::zeros(2, 768);
        assert!(matches!(segment(&epoch, &plan, 512.0), Err(Error::Plan(_))));
    }

    #[test]
    fn stack_shape_and_determinism() {
        let ds = noise_dataset(10, 4, 128.0, 2.5, 2);
        let plan = SegmentationPlan::ku();
        let opts = CovarianceOptions::default();
        let stack = build_tf_stack(&ds, &plan, &opts).unwrap();
        assert_eq!(stack.n_trials(), 10);
        assert_eq!(stack.n_nodes(), 60);
        assert_eq!(stack.dim(), 4);

        let order: Vec<usize> = (0..10).rev().collect();
        let permuted = build_tf_stack(&ds.select(&order), &plan, &opts).unwrap();
        for (k, &t) in order.iter().enumerate() {
            assert_eq!(permuted.matrices[k], stack.matrices[t]);
        }
    }

    #[test]
    fn silent_dataset_yields_shrinkage_identity() {
        let ds = EpochDataset::new(3, 320, 128.0, vec![0.0; 2 * 3 * 320], vec![0, 1]).unwrap();
        let stack = build_tf_stack(&ds, &SegmentationPlan::ku(), &CovarianceOptions::default()).unwrap();
        for m in stack.matrices.iter().flatten() {
            assert_eq!(*m.as_matrix(), DMatrix::identity(3, 3) * 1e-5);
        }
    }

    #[test]
    fn band_power_matches_covariance_diagonal() {
        // One tone per channel at the centre of band k; windows are long enough
        // that every centre frequency falls on a periodogram bin.
        let fs = 256.0;
        let plan = SegmentationPlan::bnci2014002();
        let n = (plan.span * fs) as usize;
        let amps: Vec<f64> = (0..9).map(|k| 0.5 + 0.25 * k as f64).collect();
        let epoch = DMatrix::from_fn(9, n, |r, i| {
            let b = &plan.bands[r];
            let f = 0.5 * (b.lo + b.hi);
            amps[r] * (2.0 * PI * f * i as f64 / fs + 0.3 * r as f64).cos()
        });
        let segs = segment(&epoch, &plan, fs).unwrap();
        assert_eq!(segs.len(), 60);
        for s in segs {
            let ch = s.meta.band;
            let band = &plan.bands[ch];
            let cov = covariance(&s.data, 1e-5).unwrap();
            let start = s.meta.window * plan.window_samples(ch, fs).unwrap();
            let raw: Vec<f64> = epoch.row(ch).iter().skip(start).take(s.data.ncols()).copied().collect();
            let p = periodogram_band_power(&raw, fs, band.lo, band.hi);
            let v = cov.as_matrix()[(ch, ch)];
            assert!((v / p - 1.0).abs() < 0.05, "band {ch} window {}: {v} vs {p}", s.meta.window);
            assert!((p / (amps[ch] * amps[ch] / 2.0) - 1.0).abs() < 1e-9);
        }
    }
}
