use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Labelled multichannel epochs, stored row-major as (trial, channel, sample).
#[derive(Clone, Debug, PartialEq)]
pub struct EpochDataset {
    pub n_trials: usize,
    pub n_channels: usize,
    pub n_samples: usize,
    pub sampling_rate: f64,
    pub data: Vec<f64>,
    pub labels: Vec<u32>,
}

impl EpochDataset {
    pub fn new(
        n_channels: usize,
        n_samples: usize,
        sampling_rate: f64,
        data: Vec<f64>,
        labels: Vec<u32>,
    ) -> Result<Self> {
        let ds = Self {
            n_trials: labels.len(),
            n_channels,
            n_samples,
            sampling_rate,
            data,
            labels,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sampling_rate > 0.0) || !self.sampling_rate.is_finite() {
            return Err(Error::Dataset(format!("sampling rate {} must be > 0", self.sampling_rate)));
        }
        if self.n_trials == 0 || self.n_channels == 0 || self.n_samples == 0 {
            return Err(Error::Dataset("empty dataset".into()));
        }
        if self.labels.len() != self.n_trials {
            return Err(Error::Dataset(format!(
                "{} labels for {} trials",
                self.labels.len(),
                self.n_trials
            )));
        }
        let expected = self.n_trials * self.n_channels * self.n_samples;
        if self.data.len() != expected {
            return Err(Error::Dataset(format!(
                "data has {} values, expected {expected}",
                self.data.len()
            )));
        }
        let n_classes = self.n_classes();
        for c in 0..n_classes as u32 {
            if !self.labels.contains(&c) {
                return Err(Error::Dataset(format!("class {c} has no trials")));
            }
        }
        Ok(())
    }

    /// `max(label) + 1`.
    pub fn n_classes(&self) -> usize {
        self.labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0)
    }

    pub fn duration(&self) -> f64 {
        self.n_samples as f64 / self.sampling_rate
    }

    /// One trial as a channels × samples matrix.
    pub fn trial(&self, t: usize) -> DMatrix<f64> {
        let stride = self.n_channels * self.n_samples;
        let block = &self.data[t * stride..(t + 1) * stride];
        DMatrix::from_row_slice(self.n_channels, self.n_samples, block)
    }

    /// Sub-dataset with the given trials, in the given order.
    pub fn select(&self, trials: &[usize]) -> EpochDataset {
        let stride = self.n_channels * self.n_samples;
        let mut data = Vec::with_capacity(trials.len() * stride);
        for &t in trials {
            data.extend_from_slice(&self.data[t * stride..(t + 1) * stride]);
        }
        EpochDataset {
            n_trials: trials.len(),
            n_channels: self.n_channels,
            n_samples: self.n_samples,
            sampling_rate: self.sampling_rate,
            data,
            labels: trials.iter().map(|&t| self.labels[t]).collect(),
        }
    }
}
