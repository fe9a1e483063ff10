//! Common spatial patterns with a log-variance logistic-regression classifier.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{bandpass, covariance, EpochDataset};
use crate::spd::{airm_distance, csp_spectrum_distance, symmetrize, SpdMatrix};

/// Arithmetic class means `(S⁺, S⁻)` for labels 0 and 1.
pub fn class_means(covs: &[SpdMatrix], labels: &[u32]) -> Result<(SpdMatrix, SpdMatrix)> {
    if covs.len() != labels.len() {
        return Err(Error::Shape(format!("{} covariances for {} labels", covs.len(), labels.len())));
    }
    let mean = |class: u32| -> Result<SpdMatrix> {
        let members: Vec<&SpdMatrix> = covs.iter().zip(labels).filter(|(_, &l)| l == class).map(|(c, _)| c).collect();
        let first = members
            .first()
            .ok_or_else(|| Error::Dataset(format!("class {class} has no trials")))?;
        let mut acc = DMatrix::zeros(first.dim(), first.dim());
        for m in &members {
            if m.dim() != first.dim() {
                return Err(Error::DimensionMismatch {
                    expected: first.dim(),
                    found: m.dim(),
                });
            }
            acc += m.as_matrix();
        }
        SpdMatrix::new(acc / members.len() as f64)
    };
    Ok((mean(0)?, mean(1)?))
}

/// Spatial filters from the generalized eigenproblem `(S⁺+S⁻)⁻¹S⁺ w = λ w`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CspFilters {
    /// `m × n_C`; row `j` is filter `w_j`. The first `m/2` have the largest λ.
    pub filters: DMatrix<f64>,
    /// λ of the selected filters, in filter order.
    pub selected: Vec<f64>,
    /// Full spectrum in descending order; every value lies in (0, 1).
    pub spectrum: Vec<f64>,
}

/// Whitens by `(S⁺+S⁻)^{-1/2}`, diagonalizes the whitened `S⁺`, and keeps
/// `m/2` filters from each end of the spectrum.
pub fn csp_filters(splus: &SpdMatrix, sminus: &SpdMatrix, m: usize) -> Result<CspFilters> {
    let n = splus.dim();
    if sminus.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: sminus.dim(),
        });
    }
    if m == 0 || m > n || m % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "number of filters must be even and within 1..={n}, got {m}"
        )));
    }
    let composite = SpdMatrix::new(splus.as_matrix() + sminus.as_matrix())?;
    let p = composite.inv_sqrt().into_inner();
    let whitened = symmetrize(&(&p * splus.as_matrix() * &p));
    let e = crate::spd::sym_eig_unchecked(&whitened);
    let spectrum: Vec<f64> = e.values.iter().copied().collect();
    if let Some(&bad) = spectrum.iter().find(|&&l| !(l > 0.0 && l < 1.0)) {
        return Err(Error::NumericalBreakdown(format!("CSP eigenvalue {bad} outside (0, 1)")));
    }
    let all = e.vectors.transpose() * &p;
    let picks: Vec<usize> = (0..m / 2).chain(n - m / 2..n).collect();
    let filters = DMatrix::from_fn(m, n, |r, c| all[(picks[r], c)]);
    Ok(CspFilters {
        filters,
        selected: picks.iter().map(|&k| spectrum[k]).collect(),
        spectrum,
    })
}

/// `√Σ log²(λ/(1−λ))` over a full CSP spectrum.
pub fn spectrum_distance(spectrum: &[f64]) -> f64 {
    spectrum.iter().map(|&l| (l / (1.0 - l)).ln().powi(2)).sum::<f64>().sqrt()
}

/// `z_j = log(w_j S w_jᵀ)` per filter row.
pub fn log_var_features(s: &DMatrix<f64>, filters: &DMatrix<f64>) -> Result<Vec<f64>> {
    if filters.ncols() != s.nrows() {
        return Err(Error::Shape(format!(
            "filters have {} channels, covariance has {}",
            filters.ncols(),
            s.nrows()
        )));
    }
    filters
        .row_iter()
        .enumerate()
        .map(|(j, w)| {
            let v = (w * s * w.transpose())[(0, 0)];
            if v > 0.0 {
                Ok(v.ln())
            } else {
                Err(Error::NumericalBreakdown(format!(
                    "filter {j}: projected variance {v} is not positive"
                )))
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    pub iterations: usize,
    pub lr: f64,
    pub l2: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            lr: 0.1,
            l2: 1e-4,
        }
    }
}

/// Multinomial logistic regression on standardized features, fit by full-batch gradient descent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// `classes × features`.
    pub weights: DMatrix<f64>,
    pub intercept: Vec<f64>,
}

impl LogisticRegression {
    pub fn fit(features: &DMatrix<f64>, labels: &[u32], cfg: &LogisticConfig) -> Result<Self> {
        let (n, d) = features.shape();
        if n != labels.len() || n == 0 {
            return Err(Error::Shape(format!("{n} feature rows for {} labels", labels.len())));
        }
        let c = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0).max(2);
        let mean: Vec<f64> = (0..d).map(|j| features.column(j).mean()).collect();
        let scale: Vec<f64> = (0..d)
            .map(|j| {
                let sd = features.column(j).iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / n as f64;
                if sd > 0.0 {
                    sd.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let mut model = Self {
            mean,
            scale,
            weights: DMatrix::zeros(c, d),
            intercept: vec![0.0; c],
        };
        let x = model.standardize(features);
        for _ in 0..cfg.iterations {
            let probs = model.probabilities_standardized(&x);
            let mut err = probs;
            for (r, &l) in labels.iter().enumerate() {
                err[(r, l as usize)] -= 1.0;
            }
            err /= n as f64;
            let gw = err.transpose() * &x + &model.weights * cfg.l2;
            model.weights -= gw * cfg.lr;
            for k in 0..c {
                model.intercept[k] -= cfg.lr * err.column(k).sum();
            }
        }
        Ok(model)
    }

    fn standardize(&self, features: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(features.nrows(), features.ncols(), |r, j| {
            (features[(r, j)] - self.mean[j]) / self.scale[j]
        })
    }

    fn probabilities_standardized(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x * self.weights.transpose();
        for mut row in z.row_iter_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v += self.intercept[k];
            }
            let max = row.max();
            row.apply(|v| *v = (*v - max).exp());
            let s = row.sum();
            row /= s;
        }
        z
    }

    pub fn predict(&self, features: &DMatrix<f64>) -> Vec<u32> {
        let p = self.probabilities_standardized(&self.standardize(features));
        p.row_iter().map(|r| r.transpose().argmax().0 as u32).collect()
    }
}

pub fn accuracy(predicted: &[u32], labels: &[u32]) -> f64 {
    let hits = predicted.iter().zip(labels).filter(|(a, b)| a == b).count();
    hits as f64 / labels.len().max(1) as f64
}

/// Fitted two-class CSP pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CspModel {
    pub filters: CspFilters,
    pub splus: SpdMatrix,
    pub sminus: SpdMatrix,
    pub classifier: LogisticRegression,
}

impl CspModel {
    pub fn fit(covs: &[SpdMatrix], labels: &[u32], m: usize, cfg: &LogisticConfig) -> Result<Self> {
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::Dataset("CSP handles two classes (labels 0 and 1)".into()));
        }
        for class in 0..2u32 {
            if labels.iter().filter(|&&l| l == class).count() < 2 {
                return Err(Error::Dataset(format!("class {class} needs at least two trials")));
            }
        }
        let (splus, sminus) = class_means(covs, labels)?;
        let filters = csp_filters(&splus, &sminus, m)?;
        let features = Self::features_with(&filters, covs)?;
        let classifier = LogisticRegression::fit(&features, labels, cfg)?;
        Ok(Self {
            filters,
            splus,
            sminus,
            classifier,
        })
    }

    fn features_with(filters: &CspFilters, covs: &[SpdMatrix]) -> Result<DMatrix<f64>> {
        let m = filters.filters.nrows();
        let mut x = DMatrix::zeros(covs.len(), m);
        for (r, c) in covs.iter().enumerate() {
            for (j, z) in log_var_features(c.as_matrix(), &filters.filters)?.into_iter().enumerate() {
                x[(r, j)] = z;
            }
        }
        Ok(x)
    }

    pub fn features(&self, covs: &[SpdMatrix]) -> Result<DMatrix<f64>> {
        Self::features_with(&self.filters, covs)
    }

    pub fn predict(&self, covs: &[SpdMatrix]) -> Result<Vec<u32>> {
        Ok(self.classifier.predict(&self.features(covs)?))
    }

    /// Relative gap between the spectrum form and the direct affine-invariant distance of the class means.
    pub fn distance_residual(&self) -> Result<f64> {
        let direct = airm_distance(&self.splus, &self.sminus)?;
        let spectral = spectrum_distance(&self.filters.spectrum);
        Ok((spectral - direct).abs() / direct.max(f64::MIN_POSITIVE))
    }

    /// Same identity through the library's own spectrum routine.
    pub fn library_distance_residual(&self) -> Result<f64> {
        let direct = airm_distance(&self.splus, &self.sminus)?;
        let spectral = csp_spectrum_distance(&self.splus, &self.sminus)?;
        Ok((spectral - direct).abs() / direct.max(f64::MIN_POSITIVE))
    }
}

/// Per-trial covariances of a band-passed time window `[start, end)` in seconds.
pub fn band_covariances(
    dataset: &EpochDataset,
    band: (f64, f64),
    window: (f64, f64),
    shrinkage: f64,
) -> Result<Vec<SpdMatrix>> {
    let fs = dataset.sampling_rate;
    let a = (window.0 * fs).round();
    let b = (window.1 * fs).round();
    if !(a >= 0.0 && b > a + 1.0 && b <= dataset.n_samples as f64) {
        return Err(Error::InvalidParameter(format!(
            "window [{}, {}) s does not fit a {} s epoch",
            window.0,
            window.1,
            dataset.duration()
        )));
    }
    let (a, b) = (a as usize, b as usize);
    (0..dataset.n_trials)
        .map(|t| {
            let x = dataset.trial(t).columns(a, b - a).into_owned();
            covariance(&bandpass(&x, band, fs)?, shrinkage)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CspCvReport {
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    /// Largest relative gap between the filter-spectrum distance and the AIRM distance over folds.
    pub max_distance_residual: f64,
}

/// Cross-validated CSP with log-variance features; `folds` lists the test trials of each fold.
pub fn csp_cross_validate(
    covs: &[SpdMatrix],
    labels: &[u32],
    folds: &[Vec<usize>],
    m: usize,
    cfg: &LogisticConfig,
) -> Result<CspCvReport> {
    if covs.len() != labels.len() {
        return Err(Error::Shape(format!("{} covariances for {} labels", covs.len(), labels.len())));
    }
    let mut fold_accuracies = Vec::with_capacity(folds.len());
    let mut max_distance_residual: f64 = 0.0;
    for test in folds {
        let mut in_test = vec![false; covs.len()];
        for &t in test {
            *in_test.get_mut(t).ok_or_else(|| Error::Shape(format!("fold index {t} out of range")))? = true;
        }
        let train: Vec<usize> = (0..covs.len()).filter(|&t| !in_test[t]).collect();
        let pick = |idx: &[usize]| -> (Vec<SpdMatrix>, Vec<u32>) {
            (idx.iter().map(|&t| covs[t].clone()).collect(), idx.iter().map(|&t| labels[t]).collect())
        };
        let (train_covs, train_labels) = pick(&train);
        let (test_covs, test_labels) = pick(test);
        let model = CspModel::fit(&train_covs, &train_labels, m, cfg)?;
        fold_accuracies.push(accuracy(&model.predict(&test_covs)?, &test_labels));
        max_distance_residual = max_distance_residual.max(model.distance_residual()?);
    }
    let mean_accuracy = fold_accuracies.iter().sum::<f64>() / fold_accuracies.len().max(1) as f64;
    Ok(CspCvReport {
        fold_accuracies,
        mean_accuracy,
        max_distance_residual,
    })
}
