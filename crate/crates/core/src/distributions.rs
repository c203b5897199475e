//! Source photon-number distributions: thermal, negative binomial
//! (multimode thermal) and the Poisson limit.
//!
//! Every generator works in log space and exponentiates at the end, so the
//! combinatorial factor of the negative binomial never overflows even for
//! hundreds of photons spread over a fractional number of modes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default truncation tolerance: the probability mass allowed beyond the last
/// kept photon number, and the slack on every column/vector normalization.
pub const TRUNC_TOL: f64 = 1e-9;

/// Mode counts above this are evaluated with the Poisson branch.
const POISSON_LIMIT_S: f64 = 1e15;

/// Hard cap for adaptive truncation.
const MAX_ADAPTIVE_N: usize = 200_000;

/// Truncated photon-number probability sequence, indexed by photon number.
///
/// Entries lie in `[0, 1]` and sum to at most `1 + TRUNC_TOL`. The missing
/// mass `1 - sum` is the part of the distribution beyond `n_max`; use
/// [`ProbVec::is_normalized`] to check that it is negligible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbVec {
    probs: Vec<f64>,
}

impl ProbVec {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::domain("probability vector must be non-empty"));
        }
        for (n, &p) in probs.iter().enumerate() {
            if !(-TRUNC_TOL..=1.0 + TRUNC_TOL).contains(&p) || p.is_nan() {
                return Err(Error::domain(format!("p({n}) = {p} is not a probability")));
            }
        }
        let total: f64 = probs.iter().sum();
        if total > 1.0 + TRUNC_TOL {
            return Err(Error::domain(format!("probabilities sum to {total} > 1")));
        }
        Ok(Self {
            probs: probs.into_iter().map(|p| p.clamp(0.0, 1.0)).collect(),
        })
    }

    /// `(1, 0, 0, ...)` of length `n_max + 1`.
    pub fn vacuum(n_max: usize) -> Self {
        let mut probs = vec![0.0; n_max + 1];
        probs[0] = 1.0;
        Self { probs }
    }

    pub(crate) fn from_raw(probs: Vec<f64>) -> Self {
        debug_assert!(!probs.is_empty());
        Self { probs }
    }

    pub fn n_max(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }

    /// Probability of `n` photons; zero beyond the truncation.
    pub fn get(&self, n: usize) -> f64 {
        self.probs.get(n).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Mass missing beyond `n_max`.
    pub fn tail_mass(&self) -> f64 {
        (1.0 - self.total()).max(0.0)
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        (self.total() - 1.0).abs() <= tol
    }

    /// Rescaled so the kept entries sum to exactly one.
    pub fn normalized(&self) -> Self {
        let t = self.total();
        Self {
            probs: self.probs.iter().map(|p| p / t).collect(),
        }
    }

    /// Keep entries `0..=n_max` (pads with zeros when growing).
    pub fn truncated(&self, n_max: usize) -> Self {
        let mut probs = self.probs.clone();
        probs.resize(n_max + 1, 0.0);
        Self { probs }
    }

    pub fn mean(&self) -> f64 {
        moments(self).0
    }

    /// Total-variation distance, treating entries beyond either truncation
    /// as zero.
    pub fn total_variation(&self, other: &ProbVec) -> f64 {
        let n = self.len().max(other.len());
        0.5 * (0..n).map(|i| (self.get(i) - other.get(i)).abs()).sum::<f64>()
    }
}

/// Mean and variance over the truncated support.
pub fn moments(p: &ProbVec) -> (f64, f64) {
    let (mut m1, mut m2) = (0.0, 0.0);
    for (n, &q) in p.probs.iter().enumerate() {
        let n = n as f64;
        m1 += n * q;
        m2 += n * n * q;
    }
    (m1, m2 - m1 * m1)
}

/// Mean photon number and effective (possibly fractional) number of modes of
/// a multimode thermal source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeModel {
    n_bar: f64,
    s: f64,
}

impl ModeModel {
    /// `s = f64::INFINITY` is accepted and denotes the Poisson limit.
    pub fn new(n_bar: f64, s: f64) -> Result<Self> {
        check_mean(n_bar)?;
        if !(s > 0.0) {
            return Err(Error::domain(format!("mode number s must be > 0, got {s}")));
        }
        Ok(Self { n_bar, s })
    }

    pub fn n_bar(&self) -> f64 {
        self.n_bar
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    /// Mean photon number carried by each mode.
    pub fn per_mode_mean(&self) -> f64 {
        self.n_bar / self.s
    }
}

fn check_mean(n_bar: f64) -> Result<()> {
    if n_bar >= 0.0 && n_bar.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("mean photon number must be finite and >= 0, got {n_bar}")))
    }
}

/// Single-mode thermal distribution `1 / [(1+n̄)(1+1/n̄)^n]`.
pub fn thermal_pmf(n_bar: f64, n_max: usize) -> Result<ProbVec> {
    check_mean(n_bar)?;
    Ok(ProbVec::from_raw(log_pmf_iter(SourceModel::Thermal { n_bar }).take(n_max + 1).collect()))
}

/// Negative binomial `C(s+n-1, s-1) / [(1+n̄/s)^s (1+s/n̄)^n]` for real `s > 0`.
pub fn negative_binomial_pmf(model: ModeModel, n_max: usize) -> Result<ProbVec> {
    ModeModel::new(model.n_bar, model.s)?;
    Ok(ProbVec::from_raw(
        log_pmf_iter(SourceModel::NegativeBinomial(model)).take(n_max + 1).collect(),
    ))
}

pub fn poisson_pmf(n_bar: f64, n_max: usize) -> Result<ProbVec> {
    check_mean(n_bar)?;
    Ok(ProbVec::from_raw(log_pmf_iter(SourceModel::Poisson { n_bar }).take(n_max + 1).collect()))
}

/// Successive pmf values `p(0), p(1), ...`, each obtained from the previous
/// in log space by the family's ratio recurrence.
fn log_pmf_iter(model: SourceModel) -> impl Iterator<Item = f64> {
    let model = model.canonical();
    let n_bar = model.mean();
    // log p(0) and the n-independent part of the log ratio p(n)/p(n-1).
    let (log_p0, log_ratio) = match model {
        _ if n_bar == 0.0 => (0.0, f64::NEG_INFINITY),
        SourceModel::Thermal { .. } => {
            let l = -n_bar.ln_1p();
            (l, n_bar.ln() + l)
        }
        SourceModel::Poisson { .. } => (-n_bar, n_bar.ln()),
        SourceModel::NegativeBinomial(m) => (-m.s * (n_bar / m.s).ln_1p(), n_bar.ln()),
    };
    let mut log_p = log_p0;
    (0usize..).map(move |n| {
        if n > 0 {
            let nf = n as f64;
            log_p += match model {
                _ if n_bar == 0.0 => f64::NEG_INFINITY,
                SourceModel::Thermal { .. } => log_ratio,
                SourceModel::Poisson { .. } => log_ratio - nf.ln(),
                // ln[(s+n-1)/n · n̄/(s+n̄)] with the s-dependent ratio kept
                // near one so large s does not cancel catastrophically.
                SourceModel::NegativeBinomial(m) => {
                    log_ratio - nf.ln() + ((nf - 1.0 - n_bar) / (m.s + n_bar)).ln_1p()
                }
            };
        }
        log_p.exp()
    })
}

/// Source families supported by the fitters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFamily {
    Thermal,
    #[serde(rename = "negbinom")]
    NegativeBinomial,
    Poisson,
}

impl SourceFamily {
    pub const ALL: [SourceFamily; 3] = [
        SourceFamily::Thermal,
        SourceFamily::NegativeBinomial,
        SourceFamily::Poisson,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SourceFamily::Thermal => "thermal",
            SourceFamily::NegativeBinomial => "negbinom",
            SourceFamily::Poisson => "poisson",
        }
    }
}

impl fmt::Display for SourceFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SourceFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "thermal" => Ok(SourceFamily::Thermal),
            "negbinom" | "negative-binomial" | "nb" => Ok(SourceFamily::NegativeBinomial),
            "poisson" => Ok(SourceFamily::Poisson),
            other => Err(Error::domain(format!("unknown source family '{other}'"))),
        }
    }
}

/// A fully specified source distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SourceModel {
    Thermal { n_bar: f64 },
    NegativeBinomial(ModeModel),
    Poisson { n_bar: f64 },
}

impl SourceModel {
    pub fn new(family: SourceFamily, n_bar: f64, s: f64) -> Result<Self> {
        check_mean(n_bar)?;
        Ok(match family {
            SourceFamily::Thermal => SourceModel::Thermal { n_bar },
            SourceFamily::NegativeBinomial => SourceModel::NegativeBinomial(ModeModel::new(n_bar, s)?),
            SourceFamily::Poisson => SourceModel::Poisson { n_bar },
        })
    }

    pub fn family(&self) -> SourceFamily {
        match self {
            SourceModel::Thermal { .. } => SourceFamily::Thermal,
            SourceModel::NegativeBinomial(_) => SourceFamily::NegativeBinomial,
            SourceModel::Poisson { .. } => SourceFamily::Poisson,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            SourceModel::Thermal { n_bar } | SourceModel::Poisson { n_bar } => n_bar,
            SourceModel::NegativeBinomial(m) => m.n_bar,
        }
    }

    /// Untruncated variance `n̄ + n̄²/s` (s = 1 thermal, s → ∞ Poisson).
    pub fn variance(&self) -> f64 {
        match *self {
            SourceModel::Thermal { n_bar } => n_bar + n_bar * n_bar,
            SourceModel::Poisson { n_bar } => n_bar,
            SourceModel::NegativeBinomial(m) => m.n_bar + m.n_bar * m.n_bar / m.s,
        }
    }

    /// Huge mode counts collapse onto the Poisson branch.
    fn canonical(self) -> Self {
        match self {
            SourceModel::NegativeBinomial(m) if m.s > POISSON_LIMIT_S => {
                SourceModel::Poisson { n_bar: m.n_bar }
            }
            other => other,
        }
    }

    pub fn pmf(&self, n_max: usize) -> ProbVec {
        ProbVec::from_raw(log_pmf_iter(*self).take(n_max + 1).collect())
    }

    /// Smallest `n_max` whose tail mass beyond it is below `tol`.
    pub fn adaptive_n_max(&self, tol: f64) -> Result<usize> {
        let mut cum = 0.0;
        for (n, p) in log_pmf_iter(*self).enumerate().take(MAX_ADAPTIVE_N) {
            cum += p;
            if 1.0 - cum < tol {
                return Ok(n);
            }
        }
        Err(Error::domain(format!(
            "distribution with mean {} needs more than {MAX_ADAPTIVE_N} photon numbers",
            self.mean()
        )))
    }

    /// Pmf truncated so the tail mass is below [`TRUNC_TOL`].
    pub fn pmf_adaptive(&self) -> Result<ProbVec> {
        Ok(self.pmf(self.adaptive_n_max(TRUNC_TOL)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (i, (x, y)) in a.iter().zip(b).enumerate() {
            assert!((x - y).abs() <= tol, "entry {i}: {x} vs {y}");
        }
    }

    // Direct translation of the closed forms, used as an independent check on
    // the recurrences.
    fn thermal_direct(n_bar: f64, n: usize) -> f64 {
        1.0 / ((1.0 + n_bar) * (1.0 + 1.0 / n_bar).powi(n as i32))
    }

    // Ordered partitions n_1 + ... + n_s = n, each mode thermal with n̄/s.
    fn partition_sum(n_bar: f64, s: usize, n: usize) -> f64 {
        fn rec(left: usize, modes: usize, per_mode: f64) -> f64 {
            if modes == 1 {
                return thermal_direct(per_mode, left);
            }
            (0..=left)
                .map(|k| thermal_direct(per_mode, k) * rec(left - k, modes - 1, per_mode))
                .sum()
        }
        rec(n, s, n_bar / s as f64)
    }

    #[test]
    fn thermal_vacuum_and_unit_mean() {
        assert_eq!(thermal_pmf(0.0, 5).unwrap().as_slice(), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        close(thermal_pmf(1.0, 3).unwrap().as_slice(), &[0.5, 0.25, 0.125, 0.0625], 1e-15);
    }

    #[test]
    fn thermal_matches_closed_form() {
        let p = thermal_pmf(8.9, 40).unwrap();
        for n in 0..=40 {
            let d = thermal_direct(8.9, n);
            assert!((p.get(n) - d).abs() <= 1e-13 * d.max(1e-300), "n={n}");
        }
    }

    #[test]
    fn thermal_mean_recovery() {
        let m = SourceModel::Thermal { n_bar: 8.9 };
        let p = m.pmf_adaptive().unwrap();
        assert!(p.tail_mass() < TRUNC_TOL);
        let (mean, var) = moments(&p);
        assert!((mean - 8.9).abs() < 1e-6, "{mean}");
        assert!((var - (8.9 + 8.9 * 8.9)).abs() < 1e-4);
    }

    #[test]
    fn negative_mean_rejected() {
        assert!(thermal_pmf(-1.0, 3).is_err());
        assert!(poisson_pmf(-0.1, 3).is_err());
        assert!(ModeModel::new(1.0, 0.0).is_err());
        assert!(ModeModel::new(1.0, -2.0).is_err());
    }

    #[test]
    fn negbinom_reduces_to_thermal() {
        let nb = negative_binomial_pmf(ModeModel::new(1.0, 1.0).unwrap(), 3).unwrap();
        close(nb.as_slice(), thermal_pmf(1.0, 3).unwrap().as_slice(), 1e-15);
        for &n_bar in &[0.3, 2.0, 8.9, 40.0] {
            let nb = negative_binomial_pmf(ModeModel::new(n_bar, 1.0).unwrap(), 80).unwrap();
            close(nb.as_slice(), thermal_pmf(n_bar, 80).unwrap().as_slice(), 1e-12);
        }
    }

    #[test]
    fn negbinom_two_modes_hand_values() {
        let p = negative_binomial_pmf(ModeModel::new(2.0, 2.0).unwrap(), 1).unwrap();
        close(p.as_slice(), &[0.25, 0.25], 1e-15);
        // Same two numbers from the partition sum over (n1, n2).
        assert!((partition_sum(2.0, 2, 0) - 0.25).abs() < 1e-15);
        assert!((partition_sum(2.0, 2, 1) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn negbinom_matches_partition_oracle() {
        for s in 1..=3usize {
            for &n_bar in &[0.5, 2.0, 7.0] {
                let p = negative_binomial_pmf(ModeModel::new(n_bar, s as f64).unwrap(), 6).unwrap();
                for n in 0..=6 {
                    let oracle = partition_sum(n_bar, s, n);
                    assert!((p.get(n) - oracle).abs() < 1e-10, "s={s} n̄={n_bar} n={n}");
                }
            }
        }
    }

    #[test]
    fn negbinom_poisson_limit() {
        let pois = poisson_pmf(2.0, 30).unwrap();
        let nb4 = negative_binomial_pmf(ModeModel::new(2.0, 1e4).unwrap(), 20).unwrap();
        assert!(nb4.total_variation(&poisson_pmf(2.0, 20).unwrap()) < 1e-3);
        let nb6 = negative_binomial_pmf(ModeModel::new(2.0, 1e6).unwrap(), 30).unwrap();
        assert!(nb6.total_variation(&pois) < 1e-5);
        let inf = negative_binomial_pmf(ModeModel::new(2.0, f64::INFINITY).unwrap(), 30).unwrap();
        close(inf.as_slice(), pois.as_slice(), 0.0);
    }

    #[test]
    fn poisson_values() {
        assert_eq!(poisson_pmf(0.0, 4).unwrap().as_slice(), &[1.0, 0.0, 0.0, 0.0, 0.0]);
        let e = (-1.0f64).exp();
        close(poisson_pmf(1.0, 2).unwrap().as_slice(), &[e, e, e / 2.0], 1e-15);
    }

    #[test]
    fn vacuum_moments() {
        assert_eq!(moments(&ProbVec::vacuum(4)), (0.0, 0.0));
    }

    #[test]
    fn truncated_moments() {
        let (m, v) = moments(&thermal_pmf(1.0, 60).unwrap());
        assert!((m - 1.0).abs() < 1e-9);
        assert!((v - 2.0).abs() < 1e-6);
        let (_, v) = moments(&poisson_pmf(3.0, 60).unwrap());
        assert!((v - 3.0).abs() < 1e-6);
    }

    #[test]
    fn large_photon_numbers_stay_finite() {
        let p = negative_binomial_pmf(ModeModel::new(190.0, 5.5).unwrap(), 2000).unwrap();
        assert!(p.as_slice().iter().all(|x| x.is_finite()));
        assert!((p.total() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn probvec_rejects_bad_entries() {
        assert!(ProbVec::new(vec![]).is_err());
        assert!(ProbVec::new(vec![0.5, 1.2]).is_err());
        assert!(ProbVec::new(vec![0.7, 0.7]).is_err());
        assert!(ProbVec::new(vec![0.5, f64::NAN]).is_err());
        assert!(ProbVec::new(vec![0.5, 0.25]).is_ok());
    }

    #[test]
    fn family_parsing() {
        assert_eq!("negbinom".parse::<SourceFamily>().unwrap(), SourceFamily::NegativeBinomial);
        assert_eq!("Thermal".parse::<SourceFamily>().unwrap(), SourceFamily::Thermal);
        assert!("gaussian".parse::<SourceFamily>().is_err());
    }

    proptest! {
        #[test]
        fn adaptive_truncation_normalizes(n_bar in 0.0f64..60.0, s in 0.2f64..50.0, fam in 0usize..3) {
            let m = SourceModel::new(SourceFamily::ALL[fam], n_bar, s).unwrap();
            let p = m.pmf_adaptive().unwrap();
            prop_assert!((p.total() - 1.0).abs() <= TRUNC_TOL);
            prop_assert!(p.as_slice().iter().all(|&x| (0.0..=1.0).contains(&x)));
        }

        #[test]
        fn variance_decreases_with_modes(n_bar in 0.5f64..20.0, s in 0.3f64..30.0) {
            let a = SourceModel::NegativeBinomial(ModeModel::new(n_bar, s).unwrap());
            let b = SourceModel::NegativeBinomial(ModeModel::new(n_bar, s * 1.5).unwrap());
            let (_, va) = moments(&a.pmf_adaptive().unwrap());
            let (_, vb) = moments(&b.pmf_adaptive().unwrap());
            prop_assert!(vb < va);
            prop_assert!((va - a.variance()).abs() < 1e-4 * a.variance().max(1.0));
        }
    }
}
