use std::collections::BTreeMap;

use num_complex::Complex64;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One channel vector, `h` in C^nt.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVec(pub Vec<Complex64>);

impl ComplexVec {
    pub fn zeros(n: usize) -> Self {
        ComplexVec(vec![Complex64::new(0.0, 0.0); n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.0
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        ComplexVec(self.0.iter().map(|c| c * factor).collect())
    }
}

/// Where a dataset came from; stored under the `source` metadata key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Genie,
    Synthesized,
    Imported,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Genie => "genie",
            Source::Synthesized => "synthesized",
            Source::Imported => "imported",
        }
    }
}

/// A set of channel vectors for one environment.
///
/// Stored samples equal the physical channel multiplied by `scale`; a
/// `scale` of 1.0 means the samples are in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct WirelessDataset {
    pub nt: usize,
    pub samples: Vec<ComplexVec>,
    pub condition_index: usize,
    pub scale: f64,
    pub meta: BTreeMap<String, String>,
}

impl WirelessDataset {
    pub fn new(nt: usize, samples: Vec<ComplexVec>, condition_index: usize, scale: f64) -> Result<Self> {
        let ds = WirelessDataset {
            nt,
            samples,
            condition_index,
            scale,
            meta: BTreeMap::new(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nt == 0 {
            return Err(Error::invalid("dataset antenna count must be at least 1"));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::invalid(format!("dataset scale {} must be positive", self.scale)));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.len() != self.nt {
                return Err(Error::invalid(format!(
                    "sample {i} has length {}, dataset nt is {}",
                    s.len(),
                    self.nt
                )));
            }
            if !s.is_finite() {
                return Err(Error::invalid(format!("sample {i} has non-finite entries")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn source(&self) -> Option<&str> {
        self.meta.get("source").map(String::as_str)
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<String>) -> Self {
        self.meta.insert(key.to_string(), value.into());
        self
    }

    /// Sample `i` in physical units.
    pub fn physical(&self, i: usize) -> ComplexVec {
        if self.scale == 1.0 {
            self.samples[i].clone()
        } else {
            self.samples[i].scaled(1.0 / self.scale)
        }
    }

    /// Multiplies every stored sample by `factor` and records it in `scale`.
    pub fn rescaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::invalid(format!("rescale factor {factor} must be positive")));
        }
        Ok(WirelessDataset {
            nt: self.nt,
            samples: self.samples.iter().map(|s| s.scaled(factor)).collect(),
            condition_index: self.condition_index,
            scale: self.scale * factor,
            meta: self.meta.clone(),
        })
    }

    /// The first `n` samples (or all of them, if fewer).
    pub fn take(&self, n: usize) -> Self {
        let mut ds = self.clone();
        ds.samples.truncate(n);
        ds
    }

    /// Hex SHA-256 over the header fields, metadata, and sample bits.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.nt as u64).to_le_bytes());
        h.update((self.condition_index as u64).to_le_bytes());
        h.update(self.scale.to_le_bytes());
        for (k, v) in &self.meta {
            h.update(k.as_bytes());
            h.update([0]);
            h.update(v.as_bytes());
            h.update([0]);
        }
        for s in &self.samples {
            for c in &s.0 {
                h.update(c.re.to_le_bytes());
                h.update(c.im.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}
