//! Event counts per detected photon number, CSV I/O and multinomial
//! sampling.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::distributions::ProbVec;
use crate::error::{Error, Result};

/// Raw counts indexed by detected photon number.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountHistogram {
    counts: Vec<u64>,
}

impl CountHistogram {
    /// Fails when the total is zero.
    pub fn new(counts: Vec<u64>) -> Result<Self> {
        if counts.iter().sum::<u64>() == 0 {
            return Err(Error::domain("histogram must contain at least one event"));
        }
        Ok(Self { counts })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Index of the last bin (`len - 1`).
    pub fn n_max(&self) -> usize {
        self.counts.len() - 1
    }

    pub fn get(&self, n: usize) -> u64 {
        self.counts.get(n).copied().unwrap_or(0)
    }

    /// Largest photon number with a non-zero count.
    pub fn max_observed(&self) -> usize {
        self.counts.iter().rposition(|&c| c > 0).unwrap_or(0)
    }

    /// Drop bins above `n_max`.
    pub fn truncated(&self, n_max: usize) -> Result<Self> {
        Self::new(self.counts.iter().take(n_max + 1).copied().collect())
    }

    /// Trailing empty bins removed.
    pub fn trimmed(&self) -> Self {
        Self {
            counts: self.counts[..=self.max_observed()].to_vec(),
        }
    }

    pub fn empirical(&self) -> ProbVec {
        let t = self.total() as f64;
        ProbVec::from_raw(self.counts.iter().map(|&c| c as f64 / t).collect())
    }

    pub fn mean(&self) -> f64 {
        let t = self.total() as f64;
        self.counts.iter().enumerate().map(|(n, &c)| n as f64 * c as f64).sum::<f64>() / t
    }

    /// Bin-wise sum; histograms of different length are zero-padded.
    pub fn merge(&mut self, other: &CountHistogram) {
        if other.counts.len() > self.counts.len() {
            self.counts.resize(other.counts.len(), 0);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// Draws `trials` events from `probs` (renormalized) by sequential
    /// conditional binomials.
    pub fn sample<R: Rng + ?Sized>(probs: &[f64], trials: u64, rng: &mut R) -> Result<Self> {
        if trials == 0 {
            return Err(Error::domain("trials must be >= 1"));
        }
        let mut mass: f64 = probs.iter().sum();
        if !(mass > 0.0) || probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::domain("sampling weights must be non-negative with positive sum"));
        }
        let mut left = trials;
        let mut counts = vec![0u64; probs.len()];
        for (i, &p) in probs.iter().enumerate() {
            if left == 0 {
                break;
            }
            if i + 1 == probs.len() {
                counts[i] = left;
                break;
            }
            let q = (p / mass).clamp(0.0, 1.0);
            let c = if q >= 1.0 {
                left
            } else if q <= 0.0 {
                0
            } else {
                Binomial::new(left, q)
                    .map_err(|e| Error::domain(e.to_string()))?
                    .sample(rng)
            };
            counts[i] = c;
            left -= c;
            mass -= p;
            if mass <= 0.0 && left > 0 {
                // rounding left no mass for the remainder
                counts[i] += left;
                left = 0;
            }
        }
        let last = counts.iter().rposition(|&c| c > 0).unwrap_or(0);
        counts.truncate(last + 1);
        Self::new(counts)
    }

    /// CSV with header `n,count`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,count\n");
        for (n, c) in self.counts.iter().enumerate() {
            let _ = writeln!(out, "{n},{c}");
        }
        out
    }

    /// Parses `n,count` rows; photon numbers must be consecutive from 0.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut counts = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if i == 0 && line.starts_with(|c: char| c.is_alphabetic()) {
                continue;
            }
            let mut cols = line.split(',').map(str::trim);
            let (Some(n), Some(c), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(Error::parse(i + 1, "expected two columns `n,count`"));
            };
            let n: usize = n.parse().map_err(|_| Error::parse(i + 1, format!("bad photon number '{n}'")))?;
            let c: u64 = c.parse().map_err(|_| Error::parse(i + 1, format!("bad count '{c}'")))?;
            if n != counts.len() {
                return Err(Error::parse(i + 1, format!("expected n={}, found {n}", counts.len())));
            }
            counts.push(c);
        }
        if counts.is_empty() {
            return Err(Error::parse(1, "no histogram rows"));
        }
        Self::new(counts)
    }
}
