//! Synthetic two-class epochs: spatially mixed pink-like noise plus
//! class-dependent band-limited bursts.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{Bandpass, EpochDataset};
use crate::spd::random::rng_from_seed;

/// Band-limited activity added to some channels of one class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Burst {
    pub class: u32,
    pub channels: Vec<usize>,
    /// Hz.
    pub band: (f64, f64),
    /// Seconds from epoch start, `[start, end)`.
    pub window: (f64, f64),
    /// RMS amplitude inside the window, relative to unit-variance background noise.
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthProfile {
    /// Class 0: 8–12 Hz on channels 0–2 in the second half; class 1: 20–24 Hz on channels 3–5 in the first half.
    Default,
    /// No class-dependent activity.
    ZeroContrast,
    /// Class 0: one 8–12 Hz burst in the second 1 s window on channels 0–2; class 1: the
    /// same energy in the same band and channels spread over the whole epoch.
    Localized,
    Custom(Vec<Burst>),
}

impl SynthProfile {
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(SynthProfile::Default),
            "zero" | "zero_contrast" | "zero-contrast" => Ok(SynthProfile::ZeroContrast),
            "localized" => Ok(SynthProfile::Localized),
            other => Err(Error::Config(format!("unknown synthetic profile '{other}'"))),
        }
    }

    pub fn bursts(&self, span: f64) -> Vec<Burst> {
        let half = span / 2.0;
        match self {
            SynthProfile::Default => vec![
                Burst {
                    class: 0,
                    channels: vec![0, 1, 2],
                    band: (8.0, 12.0),
                    window: (half, span),
                    amplitude: 1.0,
                },
                Burst {
                    class: 1,
                    channels: vec![3, 4, 5],
                    band: (20.0, 24.0),
                    window: (0.0, half),
                    amplitude: 1.0,
                },
            ],
            SynthProfile::ZeroContrast => Vec::new(),
            SynthProfile::Localized => {
                let amp = 1.0;
                let cell = (span - 1.0).max(0.0);
                vec![
                    Burst {
                        class: 0,
                        channels: vec![0, 1, 2],
                        band: (8.0, 12.0),
                        window: (cell, span),
                        amplitude: amp,
                    },
                    Burst {
                        class: 1,
                        channels: vec![0, 1, 2],
                        band: (8.0, 12.0),
                        window: (0.0, span),
                        amplitude: amp * ((span - cell) / span).sqrt(),
                    },
                ]
            }
            SynthProfile::Custom(b) => b.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_trials: usize,
    pub n_channels: usize,
    pub sampling_rate: f64,
    /// Epoch length in seconds.
    pub span: f64,
    pub profile: SynthProfile,
    pub seed: u64,
}

impl SynthSpec {
    /// 200 trials, 8 channels, 128 Hz, 2 s, default profile.
    pub fn standard(profile: SynthProfile, seed: u64) -> Self {
        Self {
            n_trials: 200,
            n_channels: 8,
            sampling_rate: 128.0,
            span: 2.0,
            profile,
            seed,
        }
    }
}

fn check_feasible(spec: &SynthSpec, bursts: &[Burst], n_samples: usize) -> Result<()> {
    let nyquist = spec.sampling_rate / 2.0;
    for (k, b) in bursts.iter().enumerate() {
        if b.class > 1 {
            return Err(Error::Config(format!("burst {k}: class {} (generator is two-class)", b.class)));
        }
        if let Some(&c) = b.channels.iter().find(|&&c| c >= spec.n_channels) {
            return Err(Error::Config(format!(
                "burst {k}: channel {c} does not exist ({} channels)",
                spec.n_channels
            )));
        }
        if !(b.band.0 > 0.0 && b.band.0 < b.band.1 && b.band.1 < nyquist) {
            return Err(Error::Config(format!(
                "burst {k}: band {:?} Hz infeasible below Nyquist {nyquist} Hz",
                b.band
            )));
        }
        let (a, e) = window_samples(b.window, spec.sampling_rate);
        if !(b.window.0 >= 0.0 && e <= n_samples && e > a + 1) {
            return Err(Error::Config(format!(
                "burst {k}: window {:?} s outside the {} s epoch",
                b.window, spec.span
            )));
        }
        if !(b.amplitude >= 0.0) || !b.amplitude.is_finite() {
            return Err(Error::Config(format!("burst {k}: amplitude must be finite and >= 0")));
        }
    }
    Ok(())
}

fn window_samples(w: (f64, f64), fs: f64) -> (usize, usize) {
    ((w.0 * fs).round().max(0.0) as usize, (w.1 * fs).round().max(0.0) as usize)
}

fn white<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normalize(x: &mut [f64], rms: f64) {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let cur = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
    let s = if cur > 0.0 { rms / cur } else { 0.0 };
    for v in x.iter_mut() {
        *v = (*v - mean) * s;
    }
}

/// `1/f`-power noise (amplitude ∝ `1/√f`, flat below 1 Hz), unit variance.
fn pink<R: Rng>(rng: &mut R, n: usize, fs: f64, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = white(rng, n).into_iter().map(|v| Complex::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let kk = if k <= n / 2 { k } else { n - k };
        let f = kk as f64 * fs / n as f64;
        *c *= 1.0 / f.max(1.0).sqrt();
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut x: Vec<f64> = buf.iter().map(|c| c.re).collect();
    normalize(&mut x, 1.0);
    x
}

/// Generates a balanced, shuffled two-class dataset; deterministic per seed.
pub fn synth_generate(spec: &SynthSpec) -> Result<EpochDataset> {
    if spec.n_trials < 2 || spec.n_channels == 0 {
        return Err(Error::Config("need at least 2 trials and 1 channel".into()));
    }
    if !(spec.sampling_rate > 0.0 && spec.span > 0.0) {
        return Err(Error::Config("sampling rate and span must be > 0".into()));
    }
    let n = (spec.span * spec.sampling_rate).round() as usize;
    if n < 4 {
        return Err(Error::Config(format!("epoch of {n} samples is too short")));
    }
    let bursts = spec.profile.bursts(spec.span);
    check_feasible(spec, &bursts, n)?;

    let mut rng = rng_from_seed(spec.seed);
    let c = spec.n_channels;
    // fixed spatial mixing: identity plus weak random cross-talk
    let mixing: Vec<Vec<f64>> = (0..c)
        .map(|i| {
            (0..c)
                .map(|j| if i == j { 1.0 } else { 0.15 * rng.sample::<f64, _>(StandardNormal) })
                .collect()
        })
        .collect();
    let filters: Vec<Bandpass> = bursts
        .iter()
        .map(|b| Bandpass::new(b.band.0, b.band.1, spec.sampling_rate, n))
        .collect::<Result<_>>()?;
    let patterns: Vec<Vec<f64>> = bursts
        .iter()
        .map(|b| b.channels.iter().map(|_| rng.gen_range(0.8..1.2)).collect())
        .collect();

    let mut labels: Vec<u32> = (0..spec.n_trials).map(|t| (t % 2) as u32).collect();
    labels.shuffle(&mut rng);

    let mut planner = FftPlanner::new();
    let mut data = Vec::with_capacity(spec.n_trials * c * n);
    for &label in &labels {
        let sources: Vec<Vec<f64>> = (0..c).map(|_| pink(&mut rng, n, spec.sampling_rate, &mut planner)).collect();
        let mut trial: Vec<Vec<f64>> = (0..c)
            .map(|i| {
                (0..n)
                    .map(|s| (0..c).map(|j| mixing[i][j] * sources[j][s]).sum())
                    .collect()
            })
            .collect();
        for ((b, filt), pattern) in bursts.iter().zip(&filters).zip(&patterns) {
            // draw for every burst so that both classes consume the same random stream shape
            let raw = white(&mut rng, n);
            if b.class != label || b.amplitude == 0.0 {
                continue;
            }
            let (a, e) = window_samples(b.window, spec.sampling_rate);
            let mut src = filt.apply_channel(&raw);
            let taper = tukey(e - a, 0.1);
            let mut seg: Vec<f64> = src[a..e].iter().zip(&taper).map(|(v, w)| v * w).collect();
            normalize(&mut seg, b.amplitude);
            src.iter_mut().for_each(|v| *v = 0.0);
            src[a..e].copy_from_slice(&seg);
            for (&ch, &w) in b.channels.iter().zip(pattern) {
                for (x, s) in trial[ch].iter_mut().zip(&src) {
                    *x += w * s;
                }
            }
        }
        for row in trial {
            data.extend(row);
        }
    }
    EpochDataset::new(c, n, spec.sampling_rate, data, labels)
}

fn tukey(len: usize, alpha: f64) -> Vec<f64> {
    let ramp = ((alpha * len as f64) / 2.0).floor() as usize;
    (0..len)
        .map(|i| {
            let k = i.min(len - 1 - i);
            if k < ramp {
                0.5 * (1.0 - (std::f64::consts::PI * k as f64 / ramp as f64).cos())
            } else {
                1.0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(profile: SynthProfile, seed: u64) -> SynthSpec {
        SynthSpec {
            n_trials: 20,
            ..SynthSpec::standard(profile, seed)
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = synth_generate(&small(SynthProfile::Default, 3)).unwrap();
        let b = synth_generate(&small(SynthProfile::Default, 3)).unwrap();
        assert_eq!(a, b);
        let c = synth_generate(&small(SynthProfile::Default, 4)).unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn balanced_labels_and_shape() {
        let ds = synth_generate(&small(SynthProfile::Localized, 1)).unwrap();
        assert_eq!(ds.labels.iter().filter(|&&l| l == 0).count(), 10);
        assert_eq!((ds.n_channels, ds.n_samples), (8, 256));
    }

    #[test]
    fn default_profile_puts_power_where_declared() {
        let ds = synth_generate(&small(SynthProfile::Default, 2)).unwrap();
        let fs = ds.sampling_rate;
        let band_power = |t: usize, ch: usize, lo: f64, hi: f64, from: usize, to: usize| {
            let x = ds.trial(t);
            let row: Vec<f64> = x.row(ch).iter().copied().collect();
            let y = Bandpass::new(lo, hi, fs, row.len()).unwrap().apply_channel(&row);
            y[from..to].iter().map(|v| v * v).sum::<f64>() / (to - from) as f64
        };
        let (mut a, mut b) = (0.0, 0.0);
        for t in 0..ds.n_trials {
            let p = band_power(t, 0, 8.0, 12.0, 128, 256);
            if ds.labels[t] == 0 {
                a += p;
            } else {
                b += p;
            }
        }
        assert!(a > 3.0 * b, "class-0 alpha power {a} vs class-1 {b}");
    }

    #[test]
    fn infeasible_profiles_are_rejected() {
        let bad_band = SynthProfile::Custom(vec![Burst {
            class: 0,
            channels: vec![0],
            band: (60.0, 70.0),
            window: (0.0, 1.0),
            amplitude: 1.0,
        }]);
        assert!(synth_generate(&small(bad_band, 0)).is_err());
        let bad_window = SynthProfile::Custom(vec![Burst {
            class: 0,
            channels: vec![0],
            band: (8.0, 12.0),
            window: (1.5, 3.0),
            amplitude: 1.0,
        }]);
        assert!(synth_generate(&small(bad_window, 0)).is_err());
        let mut spec = small(SynthProfile::Default, 0);
        spec.n_channels = 4;
        assert!(synth_generate(&spec).is_err());
    }
}
