//! `COV1` little-endian epoch container.
//!
//! ```text
//! magic "COV1" | version u32 | n_trials u32 | n_channels u32 | n_samples u32
//! | sampling_rate f64 | labels u32 × n_trials | data f64 × (trials·channels·samples)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::signal::EpochDataset;

pub const MAGIC: &[u8; 4] = b"COV1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 4 + 4 * 4 + 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cov1Header {
    pub version: u32,
    pub n_trials: u32,
    pub n_channels: u32,
    pub n_samples: u32,
    pub sampling_rate: f64,
}

impl Cov1Header {
    /// Total file size implied by the header.
    pub fn file_len(&self) -> u64 {
        let trials = self.n_trials as u64;
        HEADER_LEN + 4 * trials + 8 * trials * self.n_channels as u64 * self.n_samples as u64
    }
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn parse_header(bytes: &[u8; HEADER_LEN as usize]) -> Result<Cov1Header> {
    if &bytes[..4] != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"COV1\"",
            String::from_utf8_lossy(&bytes[..4])
        )));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported COV1 version {version}, expected {VERSION}")));
    }
    Ok(Cov1Header {
        version,
        n_trials: u32_at(bytes, 8),
        n_channels: u32_at(bytes, 12),
        n_samples: u32_at(bytes, 16),
        sampling_rate: f64::from_le_bytes(bytes[20..28].try_into().unwrap()),
    })
}

/// Reads and validates the header only.
pub fn read_header(path: &Path) -> Result<Cov1Header> {
    let mut f = File::open(path)?;
    let actual = f.metadata()?.len();
    let mut buf = [0u8; HEADER_LEN as usize];
    if actual < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            actual,
            missing: HEADER_LEN - actual,
        });
    }
    f.read_exact(&mut buf)?;
    parse_header(&buf)
}

pub fn read_cov1(path: &Path) -> Result<EpochDataset> {
    let header = read_header(path)?;
    let actual = std::fs::metadata(path)?.len();
    let expected = header.file_len();
    if actual < expected {
        return Err(Error::Truncated {
            expected,
            actual,
            missing: expected - actual,
        });
    }
    if actual > expected {
        return Err(Error::Format(format!(
            "{} trailing bytes after {expected}-byte payload",
            actual - expected
        )));
    }
    let mut r = BufReader::new(File::open(path)?);
    let mut skip = [0u8; HEADER_LEN as usize];
    r.read_exact(&mut skip)?;

    let n_trials = header.n_trials as usize;
    let mut raw = vec![0u8; 4 * n_trials];
    r.read_exact(&mut raw)?;
    let labels = raw.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();

    let n_values = n_trials * header.n_channels as usize * header.n_samples as usize;
    let mut raw = vec![0u8; 8 * n_values];
    r.read_exact(&mut raw)?;
    let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();

    let ds = EpochDataset {
        n_trials,
        n_channels: header.n_channels as usize,
        n_samples: header.n_samples as usize,
        sampling_rate: header.sampling_rate,
        data,
        labels,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn write_cov1(dataset: &EpochDataset, path: &Path) -> Result<()> {
    dataset.validate()?;
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in u32")))
    };
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&to_u32(dataset.n_trials, "trial count")?.to_le_bytes())?;
    w.write_all(&to_u32(dataset.n_channels, "channel count")?.to_le_bytes())?;
    w.write_all(&to_u32(dataset.n_samples, "sample count")?.to_le_bytes())?;
    w.write_all(&dataset.sampling_rate.to_le_bytes())?;
    for &l in &dataset.labels {
        w.write_all(&l.to_le_bytes())?;
    }
    for &v in &dataset.data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}
