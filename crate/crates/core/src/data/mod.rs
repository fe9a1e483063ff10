//! Dataset files and synthetic data.

pub mod cov1;
pub mod synth;

pub use cov1::{read_cov1, read_header, write_cov1, Cov1Header};
pub use synth::{synth_generate, Burst, SynthProfile, SynthSpec};
