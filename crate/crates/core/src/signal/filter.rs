use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Width of each raised-cosine transition band, in Hz.
pub const TRANSITION_HZ: f64 = 2.0;

/// Zero-phase gain: 1 inside `[lo, hi]`, raised-cosine roll-off over
/// `TRANSITION_HZ` on each side, 0 beyond.
pub fn bandpass_gain(f: f64, lo: f64, hi: f64) -> f64 {
    let f = f.abs();
    if f >= lo && f <= hi {
        1.0
    } else if f < lo && f > lo - TRANSITION_HZ {
        0.5 * (1.0 + (PI * (lo - f) / TRANSITION_HZ).cos())
    } else if f > hi && f < hi + TRANSITION_HZ {
        0.5 * (1.0 + (PI * (f - hi) / TRANSITION_HZ).cos())
    } else {
        0.0
    }
}

/// FFT-domain band-pass filter for signals of a fixed length.
///
/// Each channel's DFT is multiplied by a real, even gain (zero phase). The
/// signal is treated as periodic, so for content in the pass band the output
/// variance equals the periodogram power of the input.
pub struct Bandpass {
    n: usize,
    gain: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Bandpass {
    pub fn new(lo: f64, hi: f64, fs: f64, n_samples: usize) -> Result<Self> {
        if !(fs > 0.0) {
            return Err(Error::InvalidParameter(format!("sampling rate {fs} must be > 0")));
        }
        if !(lo > 0.0 && lo < hi && hi < fs / 2.0) {
            return Err(Error::InvalidParameter(format!(
                "band ({lo}, {hi}) Hz must satisfy 0 < lo < hi < {} (Nyquist)",
                fs / 2.0
            )));
        }
        if n_samples == 0 {
            return Err(Error::InvalidParameter("empty signal".into()));
        }
        let m = n_samples;
        let gain = (0..m)
            .map(|k| {
                let k = if k <= m / 2 { k as f64 } else { k as f64 - m as f64 };
                bandpass_gain(k * fs / m as f64, lo, hi)
            })
            .collect();
        let mut planner = FftPlanner::new();
        Ok(Self {
            n: n_samples,
            gain,
            forward: planner.plan_fft_forward(m),
            inverse: planner.plan_fft_inverse(m),
        })
    }

    pub fn apply_channel(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        for (c, g) in buf.iter_mut().zip(&self.gain) {
            *c *= *g;
        }
        self.inverse.process(&mut buf);
        buf.iter().map(|c| c.re / n as f64).collect()
    }

    /// Filters every row of a channels × samples matrix.
    pub fn apply(&self, signal: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if signal.ncols() != self.n {
            return Err(Error::Shape(format!(
                "filter built for {} samples, got {}",
                self.n,
                signal.ncols()
            )));
        }
        let mut out = DMatrix::zeros(signal.nrows(), self.n);
        for r in 0..signal.nrows() {
            let row: Vec<f64> = signal.row(r).iter().copied().collect();
            for (c, v) in self.apply_channel(&row).into_iter().enumerate() {
                out[(r, c)] = v;
            }
        }
        Ok(out)
    }
}

/// One-shot band-pass of a channels × samples signal.
pub fn bandpass(signal: &DMatrix<f64>, band: (f64, f64), fs: f64) -> Result<DMatrix<f64>> {
    Bandpass::new(band.0, band.1, fs, signal.ncols())?.apply(signal)
}

/// One-sided periodogram power of `x` integrated over `[lo, hi]` Hz.
///
/// Normalized so that a sinusoid of amplitude `a` on an FFT bin contributes `a²/2`.
pub fn periodogram_band_power(x: &[f64], fs: f64, lo: f64, hi: f64) -> f64 {
    let n = x.len();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let mut power = 0.0;
    for (k, c) in buf.iter().enumerate().take(n / 2 + 1) {
        let f = k as f64 * fs / n as f64;
        if f < lo || f > hi {
            continue;
        }
        let mut p = c.norm_sqr() / (n as f64 * n as f64);
        if k != 0 && !(n % 2 == 0 && k == n / 2) {
            p *= 2.0;
        }
        power += p;
    }
    power
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spd::random::rng_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn tone(freq: f64, amp: f64, fs: f64, n: usize, phase: f64) -> Vec<f64> {
        (0..n)
            .map(|i| amp * (2.0 * PI * freq * i as f64 / fs + phase).sin())
            .collect()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn gain_shape() {
        assert_eq!(bandpass_gain(10.0, 8.0, 12.0), 1.0);
        assert!((bandpass_gain(7.0, 8.0, 12.0) - 0.5).abs() < 1e-12);
        assert!((bandpass_gain(13.0, 8.0, 12.0) - 0.5).abs() < 1e-12);
        assert_eq!(bandpass_gain(5.9, 8.0, 12.0), 0.0);
        assert_eq!(bandpass_gain(-10.0, 8.0, 12.0), 1.0);
    }

    #[test]
    fn in_band_tone_is_preserved() {
        let fs = 250.0;
        for &(n, phase) in &[(1000usize, 0.3), (937, 1.1)] {
            let x = tone(10.0, 1.0, fs, n, phase);
            let bp = Bandpass::new(8.0, 12.0, fs, n).unwrap();
            let y = bp.apply_channel(&x);
            assert!((rms(&y) / rms(&x) - 1.0).abs() < 0.01, "n={n}");
        }
    }

    #[test]
    fn out_of_band_tone_is_attenuated() {
        // whole numbers of cycles; off-bin records leak on their own (see below)
        let fs = 250.0;
        for &(n, phase) in &[(1000usize, 0.0), (500, 0.7), (250, 2.0)] {
            let x = tone(10.0, 1.0, fs, n, phase);
            let y = Bandpass::new(20.0, 24.0, fs, n).unwrap().apply_channel(&x);
            assert!(rms(&y) <= 10f64.powf(-30.0 / 20.0) * rms(&x), "n={n}: {}", rms(&y) / rms(&x));
        }
    }

    #[test]
    fn output_power_is_gain_weighted_periodogram() {
        let fs = 250.0;
        let n = 313;
        let x = tone(10.0, 1.0, fs, n, 2.0);
        let y = Bandpass::new(20.0, 24.0, fs, n).unwrap().apply_channel(&x);
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let expected: f64 = buf
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let f = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 } * fs / n as f64;
                (bandpass_gain(f, 20.0, 24.0) * c.norm()).powi(2)
            })
            .sum::<f64>()
            / (n * n) as f64;
        let power = y.iter().map(|v| v * v).sum::<f64>() / n as f64;
        assert!((power - expected).abs() < 1e-12 * expected.max(1e-300));
    }

    #[test]
    fn white_noise_energy_stays_in_band() {
        let fs = 250.0;
        let n = 2000;
        let mut rng = rng_from_seed(9);
        let x: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let (lo, hi) = (8.0, 12.0);
        let y = Bandpass::new(lo, hi, fs, n).unwrap().apply_channel(&x);
        let total = periodogram_band_power(&y, fs, 0.0, fs / 2.0);
        let inside = periodogram_band_power(&y, fs, lo - TRANSITION_HZ, hi + TRANSITION_HZ);
        assert!((total - inside) / total <= 1e-3, "leak {}", (total - inside) / total);
    }

    #[test]
    fn linearity() {
        let fs = 128.0;
        let n = 300;
        let mut rng = rng_from_seed(10);
        let x = DMatrix::from_fn(3, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DMatrix::from_fn(3, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let (a, b) = (1.7, -0.4);
        let lhs = bandpass(&(&x * a + &y * b), (12.0, 16.0), fs).unwrap();
        let rhs = bandpass(&x, (12.0, 16.0), fs).unwrap() * a + bandpass(&y, (12.0, 16.0), fs).unwrap() * b;
        assert!((lhs - rhs).amax() < 1e-10);
    }

    #[test]
    fn rejects_band_beyond_nyquist() {
        let x = DMatrix::zeros(1, 64);
        assert!(bandpass(&x, (30.0, 70.0), 128.0).is_err());
        assert!(bandpass(&x, (0.0, 10.0), 128.0).is_err());
        assert!(bandpass(&x, (12.0, 10.0), 128.0).is_err());
    }

    #[test]
    fn periodogram_of_tone() {
        let x = tone(10.0, 2.0, 100.0, 500, 0.4);
        assert!((periodogram_band_power(&x, 100.0, 8.0, 12.0) - 2.0).abs() < 1e-9);
    }
}
