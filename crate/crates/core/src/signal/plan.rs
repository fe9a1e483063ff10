use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frequency component a band belongs to; graph edges never cross components.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandGroup {
    Theta,
    Mu,
    Beta,
    Gamma,
}

impl BandGroup {
    pub const ALL: [BandGroup; 4] = [BandGroup::Theta, BandGroup::Mu, BandGroup::Beta, BandGroup::Gamma];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            BandGroup::Theta => "theta",
            BandGroup::Mu => "mu",
            BandGroup::Beta => "beta",
            BandGroup::Gamma => "gamma",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
    /// Time-window length in seconds.
    pub window: f64,
    pub group: BandGroup,
}

/// Position of one graph node in the time-frequency tiling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeMeta {
    pub band: usize,
    pub window: usize,
    pub group: BandGroup,
}

/// Time-frequency tiling of an epoch: per-band windows over a common span.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationPlan {
    pub bands: Vec<Band>,
    /// Epoch span in seconds, starting at sample 0.
    pub span: f64,
    /// Hop as a fraction of each band's window; `None` tiles without overlap.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hop_fraction: Option<f64>,
}

const INTEGRAL_TOL: f64 = 1e-9;

fn integral(x: f64) -> Option<usize> {
    let r = x.round();
    ((x - r).abs() <= INTEGRAL_TOL * x.abs().max(1.0) && r >= 0.0).then_some(r as usize)
}

const BAND_EDGES: [(f64, f64, BandGroup); 9] = [
    (4.0, 8.0, BandGroup::Theta),
    (8.0, 12.0, BandGroup::Mu),
    (12.0, 16.0, BandGroup::Beta),
    (16.0, 20.0, BandGroup::Beta),
    (20.0, 24.0, BandGroup::Beta),
    (24.0, 28.0, BandGroup::Beta),
    (28.0, 32.0, BandGroup::Gamma),
    (32.0, 36.0, BandGroup::Gamma),
    (36.0, 40.0, BandGroup::Gamma),
];

impl SegmentationPlan {
    /// Nine 4 Hz bands from 4 to 40 Hz; the six lower bands use `low_window`,
    /// the three gamma bands use `high_window`.
    pub fn nine_band(span: f64, low_window: f64, high_window: f64) -> Self {
        let bands = BAND_EDGES
            .iter()
            .map(|&(lo, hi, group)| Band {
                lo,
                hi,
                window: if group == BandGroup::Gamma { high_window } else { low_window },
                group,
            })
            .collect();
        Self {
            bands,
            span,
            hop_fraction: None,
        }
    }

    /// KU / BNCI2014002-style short epochs: 2.5 s, 0.5 s and 0.25 s windows (60 nodes).
    pub fn ku() -> Self {
        Self::nine_band(2.5, 0.5, 0.25)
    }

    /// BNCI2014001: 1 s, 0.25 s and 0.125 s windows (48 nodes).
    pub fn bnci2014001() -> Self {
        Self::nine_band(1.0, 0.25, 0.125)
    }

    /// BNCI2014002 / BNCI2015001: 5 s, 1 s and 0.5 s windows (60 nodes).
    pub fn bnci2014002() -> Self {
        Self::nine_band(5.0, 1.0, 0.5)
    }

    /// Cho2017: 1.5 s, 0.5 s and 0.3 s windows (33 nodes).
    pub fn cho2017() -> Self {
        Self::nine_band(1.5, 0.5, 0.3)
    }

    /// Plan used for the synthetic benchmark: 2 s, 1 s and 0.5 s windows (24 nodes).
    pub fn synthetic() -> Self {
        Self::nine_band(2.0, 1.0, 0.5)
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "ku" => Ok(Self::ku()),
            "bnci2014001" => Ok(Self::bnci2014001()),
            "bnci2014002" | "bnci2015001" => Ok(Self::bnci2014002()),
            "cho2017" => Ok(Self::cho2017()),
            "synth" | "synthetic" => Ok(Self::synthetic()),
            other => Err(Error::Plan(format!("unknown plan '{other}'"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands.is_empty() {
            return Err(Error::Plan("no bands".into()));
        }
        if !(self.span > 0.0) {
            return Err(Error::Plan(format!("span {} must be > 0", self.span)));
        }
        if let Some(h) = self.hop_fraction {
            if !(h > 0.0) {
                return Err(Error::Plan(format!("hop fraction {h} must be > 0")));
            }
        }
        for (k, b) in self.bands.iter().enumerate() {
            if !(b.lo > 0.0 && b.lo < b.hi) {
                return Err(Error::Plan(format!("band {k}: need 0 < f_lo < f_hi, got ({}, {})", b.lo, b.hi)));
            }
            if !(b.window > 0.0 && b.window <= self.span + INTEGRAL_TOL) {
                return Err(Error::Plan(format!("band {k}: window {} outside (0, span]", b.window)));
            }
            if k > 0 {
                let prev = &self.bands[k - 1];
                if (prev.group, prev.lo) >= (b.group, b.lo) {
                    return Err(Error::Plan(format!(
                        "bands must be ordered by group then frequency (band {k})"
                    )));
                }
            }
            self.windows_in_band(k)?;
        }
        Ok(())
    }

    /// Number of windows in band `k`.
    pub fn windows_in_band(&self, k: usize) -> Result<usize> {
        let b = &self.bands[k];
        match self.hop_fraction {
            None => integral(self.span / b.window).filter(|&w| w > 0).ok_or_else(|| {
                Error::Plan(format!(
                    "band {k}: window {} s does not tile the {} s span",
                    b.window, self.span
                ))
            }),
            Some(h) => {
                let hop = b.window * h;
                Ok(((self.span - b.window) / hop + INTEGRAL_TOL).floor() as usize + 1)
            }
        }
    }

    pub fn node_count(&self) -> Result<usize> {
        self.validate()?;
        (0..self.bands.len()).map(|k| self.windows_in_band(k)).sum()
    }

    /// Node ordering: group-major, then frequency row, then time.
    pub fn node_meta(&self) -> Result<Vec<NodeMeta>> {
        self.validate()?;
        let mut meta = Vec::new();
        for (k, b) in self.bands.iter().enumerate() {
            for w in 0..self.windows_in_band(k)? {
                meta.push(NodeMeta {
                    band: k,
                    window: w,
                    group: b.group,
                });
            }
        }
        Ok(meta)
    }

    /// Window length in samples for band `k` at `fs`; must be integral.
    pub fn window_samples(&self, k: usize, fs: f64) -> Result<usize> {
        let b = &self.bands[k];
        integral(b.window * fs).filter(|&n| n >= 2).ok_or_else(|| {
            Error::Plan(format!(
                "band {k}: window {} s at {fs} Hz is not an integral sample count of at least 2",
                b.window
            ))
        })
    }

    /// Hop between consecutive windows of band `k`, in samples.
    pub fn hop_samples(&self, k: usize, fs: f64) -> Result<usize> {
        match self.hop_fraction {
            None => self.window_samples(k, fs),
            Some(h) => {
                let b = &self.bands[k];
                integral(b.window * h * fs).filter(|&n| n > 0).ok_or_else(|| {
                    Error::Plan(format!("band {k}: hop is not an integral sample count at {fs} Hz"))
                })
            }
        }
    }

    pub fn span_samples(&self, fs: f64) -> Result<usize> {
        integral(self.span * fs)
            .ok_or_else(|| Error::Plan(format!("span {} s at {fs} Hz is not integral", self.span)))
    }
}
