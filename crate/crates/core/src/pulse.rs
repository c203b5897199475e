//! Pulse-height histograms: from the detector's integrated output signal to
//! photon-number counts by fitting a comb of Gaussians.
//!
//! Peak `k` (k fired elements) sits at `offset + k · spacing`; the number of
//! events with `k` detected photons is the area of that Gaussian.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histogram::CountHistogram;
use crate::optim::{LeastSquares, LevenbergMarquardt};
use crate::special::{norm_cdf, norm_pdf};

/// A window must hold this share of all events to count as a peak.
const MIN_PEAK_SHARE: f64 = 1e-4;
/// Weight of the soft penalty keeping widths non-decreasing with `k`.
const MONOTONE_WEIGHT: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseHistogram {
    edges: Vec<f64>,
    counts: Vec<u64>,
}

impl PulseHistogram {
    pub fn new(edges: Vec<f64>, counts: Vec<u64>) -> Result<Self> {
        if counts.is_empty() || edges.len() != counts.len() + 1 {
            return Err(Error::Dimension {
                expected: counts.len() + 1,
                found: edges.len(),
            });
        }
        if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("bin edges must be finite and strictly increasing"));
        }
        Ok(Self { edges, counts })
    }

    /// `count` events per bin of width `width` starting at `start`.
    pub fn uniform(start: f64, width: f64, counts: Vec<u64>) -> Result<Self> {
        let edges = (0..=counts.len()).map(|i| start + width * i as f64).collect();
        Self::new(edges, counts)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Bins with the expected counts of `model`, rounded to integers.
    pub fn from_model(model: &PeakModel, edges: Vec<f64>) -> Result<Self> {
        let expected = model.expected_counts(&edges);
        Self::new(edges, expected.iter().map(|e| e.round().max(0.0) as u64).collect())
    }

    /// `trials` events drawn from `model`, restricted to the bin range.
    pub fn sample<R: Rng + ?Sized>(model: &PeakModel, edges: Vec<f64>, trials: u64, rng: &mut R) -> Result<Self> {
        let expected = model.expected_counts(&edges);
        let drawn = CountHistogram::sample(&expected, trials, rng)?;
        let mut counts = drawn.counts().to_vec();
        counts.resize(expected.len(), 0);
        Self::new(edges, counts)
    }

    /// `bin_left,count` rows. The upper edge of the last bin is not stored;
    /// bins are uniform.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_left,count\n");
        for (e, c) in self.edges.iter().zip(&self.counts) {
            let _ = writeln!(out, "{e},{c}");
        }
        out
    }

    /// Parses `bin_left,count` rows of uniform width (at least two rows).
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lefts = Vec::new();
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
            let (Some(x), Some(c), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(Error::parse(i + 1, "expected two columns `bin_left,count`"));
            };
            let x: f64 = x.parse().map_err(|_| Error::parse(i + 1, format!("bad bin edge '{x}'")))?;
            let c: u64 = c.parse().map_err(|_| Error::parse(i + 1, format!("bad count '{c}'")))?;
            lefts.push((i + 1, x));
            counts.push(c);
        }
        if lefts.len() < 2 {
            return Err(Error::parse(1, "need at least two bins to infer the bin width"));
        }
        let width = lefts[1].1 - lefts[0].1;
        if !(width > 0.0) {
            return Err(Error::parse(lefts[1].0, "bin edges must increase"));
        }
        for w in lefts.windows(2) {
            let d = w[1].1 - w[0].1;
            if (d - width).abs() > 1e-6 * width {
                return Err(Error::parse(w[1].0, format!("non-uniform bin width {d} (expected {width})")));
            }
        }
        let mut edges: Vec<f64> = lefts.iter().map(|l| l.1).collect();
        edges.push(edges[edges.len() - 1] + width);
        Self::new(edges, counts)
    }
}

/// Equally spaced Gaussians with individual widths and areas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakModel {
    /// Center of the zero-photon peak.
    pub offset: f64,
    /// Gain per fired element.
    pub spacing: f64,
    pub widths: Vec<f64>,
    /// Event counts per peak (not necessarily integers).
    pub areas: Vec<f64>,
}

impl PeakModel {
    pub fn new(offset: f64, spacing: f64, widths: Vec<f64>, areas: Vec<f64>) -> Result<Self> {
        let m = Self {
            offset,
            spacing,
            widths,
            areas,
        };
        m.validate()?;
        Ok(m)
    }

    /// Widths `σ(k) = √(σ₀² + k σ₁²)`: electronic noise plus gain spread
    /// accumulated over fired elements.
    pub fn with_width_law(offset: f64, spacing: f64, sigma0: f64, sigma1: f64, areas: Vec<f64>) -> Result<Self> {
        let widths = (0..areas.len())
            .map(|k| (sigma0 * sigma0 + k as f64 * sigma1 * sigma1).sqrt())
            .collect();
        Self::new(offset, spacing, widths, areas)
    }

    pub fn validate(&self) -> Result<()> {
        if self.areas.is_empty() || self.widths.len() != self.areas.len() {
            return Err(Error::Dimension {
                expected: self.areas.len().max(1),
                found: self.widths.len(),
            });
        }
        if !self.offset.is_finite() || !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(Error::domain("offset must be finite and spacing positive"));
        }
        if self.widths.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::domain("peak widths must be positive"));
        }
        if self.areas.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return Err(Error::domain("peak areas must be non-negative"));
        }
        Ok(())
    }

    pub fn n_peaks(&self) -> usize {
        self.areas.len()
    }

    pub fn center(&self, k: usize) -> f64 {
        self.offset + k as f64 * self.spacing
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    /// Expected events per bin.
    pub fn expected_counts(&self, edges: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; edges.len().saturating_sub(1)];
        for k in 0..self.n_peaks() {
            let (mu, sd, a) = (self.center(k), self.widths[k], self.areas[k]);
            for (i, w) in edges.windows(2).enumerate() {
                out[i] += a * gauss_mass((w[0] - mu) / sd, (w[1] - mu) / sd);
            }
        }
        out
    }
}

/// Standard normal mass on `[a, b]`, computed on the side that avoids
/// cancellation.
fn gauss_mass(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        norm_cdf(-a) - norm_cdf(-b)
    } else {
        norm_cdf(b) - norm_cdf(a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WidthLaw {
    /// One free width per peak, softly held non-decreasing in `k`.
    #[default]
    PerPeak,
    /// `σ(k) = √(σ₀² + k σ₁²)`.
    Parametric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakFit {
    pub model: PeakModel,
    /// Weighted residual sum of squares (bins only).
    pub chi2: f64,
    pub bins: usize,
    pub converged: bool,
    pub flags: Vec<String>,
}

/// Fits equally spaced Gaussians with free per-peak widths.
pub fn fit_peaks(h: &PulseHistogram, max_peaks: usize) -> Result<PeakFit> {
    fit_peaks_with(h, max_peaks, WidthLaw::PerPeak)
}

pub fn fit_peaks_with(h: &PulseHistogram, max_peaks: usize, law: WidthLaw) -> Result<PeakFit> {
    if max_peaks == 0 {
        return Err(Error::domain("max_peaks must be >= 1"));
    }
    let total = h.total();
    if total == 0 {
        return Err(Error::domain("pulse histogram is empty"));
    }
    let init = match estimate_spacing(h) {
        Some(spacing) => initial_comb(h, spacing, max_peaks),
        None => None,
    };
    let init = match init {
        Some(m) => m,
        None => {
            // No comb structure: accept the data only as a lone peak.
            let single = single_peak(h);
            let fit = refine(h, single, law);
            let per_bin = fit.chi2 / fit.bins.max(1) as f64;
            let (lo, hi) = (h.edges[0], h.edges[h.edges.len() - 1]);
            let m = &fit.model;
            let contained = m.offset - 3.0 * m.widths[0] > lo && m.offset + 3.0 * m.widths[0] < hi;
            if per_bin > 3.0 || !contained {
                return Err(Error::NoPeriodicity(format!(
                    "no peak spacing found and the counts are not one isolated Gaussian \
                     (chi2/bin = {per_bin:.1}); check that the bin range covers the photon peaks"
                )));
            }
            return Ok(fit);
        }
    };
    Ok(refine(h, init, law))
}

/// Peak spacing from the first maximum of the count autocorrelation after
/// its first minimum, refined by a parabola through the three lags around it.
fn estimate_spacing(h: &PulseHistogram) -> Option<f64> {
    let c: Vec<f64> = h.counts.iter().map(|&v| v as f64).collect();
    let n = c.len();
    let width = (h.edges[n] - h.edges[0]) / n as f64;
    let ac: Vec<f64> = (0..=n / 2)
        .map(|k| c[..n - k].iter().zip(&c[k..]).map(|(a, b)| a * b).sum())
        .collect();
    let k1 = (1..ac.len() - 1).find(|&k| ac[k] <= ac[k - 1] && ac[k] < ac[k + 1])?;
    let k2 = (k1 + 1..ac.len() - 1).find(|&k| ac[k] >= ac[k - 1] && ac[k] > ac[k + 1])?;
    if ac[k2] <= ac[k1] * 1.01 {
        return None;
    }
    let (y0, y1, y2) = (ac[k2 - 1], ac[k2], ac[k2 + 1]);
    let denom = y0 - 2.0 * y1 + y2;
    let shift = if denom < 0.0 { 0.5 * (y0 - y2) / denom } else { 0.0 };
    Some((k2 as f64 + shift.clamp(-0.5, 0.5)) * width)
}

/// Comb phase from the count-weighted circular mean, then windows of one
/// spacing around each candidate center.
fn initial_comb(h: &PulseHistogram, spacing: f64, max_peaks: usize) -> Option<PeakModel> {
    let x = h.centers();
    let c: Vec<f64> = h.counts.iter().map(|&v| v as f64).collect();
    let total: f64 = c.iter().sum();
    let tau = std::f64::consts::TAU;
    let (mut sn, mut cs) = (0.0, 0.0);
    for (&xi, &ci) in x.iter().zip(&c) {
        sn += ci * (tau * xi / spacing).sin();
        cs += ci * (tau * xi / spacing).cos();
    }
    let phase = spacing * sn.atan2(cs) / tau;
    let lo = h.edges[0];
    let hi = h.edges[h.edges.len() - 1];
    let mut mu = phase + ((lo - phase) / spacing).floor() * spacing;
    let window = |m: f64| -> (f64, f64, f64) {
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for (&xi, &ci) in x.iter().zip(&c) {
            if xi >= m - 0.5 * spacing && xi < m + 0.5 * spacing {
                s0 += ci;
                s1 += ci * xi;
                s2 += ci * xi * xi;
            }
        }
        (s0, s1, s2)
    };
    let threshold = (MIN_PEAK_SHARE * total).max(1.0);
    // a window holding only the tail of a neighbour has its mean near an edge
    let is_peak = |m: f64| {
        let (s0, s1, _) = window(m);
        s0 >= threshold && (s1 / s0 - m).abs() < 0.25 * spacing
    };
    while mu < hi && !is_peak(mu) {
        mu += spacing;
    }
    if mu >= hi {
        return None;
    }
    let (s0, s1, _) = window(mu);
    let offset = s1 / s0;
    let mut areas = Vec::new();
    let mut widths = Vec::new();
    let bin = (hi - lo) / c.len() as f64;
    for k in 0..max_peaks {
        let m = offset + k as f64 * spacing;
        if m - 0.5 * spacing >= hi {
            break;
        }
        if !is_peak(m) {
            break;
        }
        let (s0, s1, s2) = window(m);
        let mean = s1 / s0;
        let var = (s2 / s0 - mean * mean).max(0.0);
        areas.push(s0);
        widths.push(var.sqrt().clamp(0.5 * bin, 0.5 * spacing).max(0.02 * spacing));
    }
    if areas.len() < 2 {
        return None;
    }
    // keep the starting widths non-decreasing
    for k in 1..widths.len() {
        widths[k] = widths[k].max(widths[k - 1]);
    }
    PeakModel::new(offset, spacing, widths, areas).ok()
}

fn single_peak(h: &PulseHistogram) -> PeakModel {
    let x = h.centers();
    let total = h.total() as f64;
    let mean = x.iter().zip(&h.counts).map(|(x, &c)| x * c as f64).sum::<f64>() / total;
    let var = x.iter().zip(&h.counts).map(|(x, &c)| (x - mean).powi(2) * c as f64).sum::<f64>() / total;
    let bin = (h.edges[h.edges.len() - 1] - h.edges[0]) / h.counts.len() as f64;
    let span = h.edges[h.edges.len() - 1] - h.edges[0];
    PeakModel {
        offset: mean,
        spacing: span,
        widths: vec![var.sqrt().max(0.5 * bin)],
        areas: vec![total],
    }
}

struct CombFit<'a> {
    edges: &'a [f64],
    y: Vec<f64>,
    inv_sd: Vec<f64>,
    n_peaks: usize,
    law: WidthLaw,
    /// Spacing is held fixed for a single peak.
    fixed_spacing: Option<f64>,
}

impl CombFit<'_> {
    // x = [offset, spacing, areas.., width params..]
    fn unpack(&self, x: &[f64]) -> (f64, f64, Vec<f64>, Vec<f64>) {
        let k = self.n_peaks;
        let spacing = self.fixed_spacing.unwrap_or(x[1]);
        let areas = x[2..2 + k].to_vec();
        let widths = match self.law {
            WidthLaw::PerPeak => x[2 + k..2 + 2 * k].to_vec(),
            WidthLaw::Parametric => {
                let (s0, s1) = (x[2 + k], x[3 + k]);
                (0..k).map(|j| (s0 * s0 + j as f64 * s1 * s1).sqrt().max(1e-300)).collect()
            }
        };
        (x[0], spacing, areas, widths)
    }

    fn pack(&self, m: &PeakModel) -> Vec<f64> {
        let mut x = vec![m.offset, m.spacing];
        x.extend(&m.areas);
        match self.law {
            WidthLaw::PerPeak => x.extend(&m.widths),
            WidthLaw::Parametric => {
                let s0 = m.widths[0];
                let last = m.widths.len() - 1;
                let s1 = if last > 0 {
                    ((m.widths[last].powi(2) - s0 * s0) / last as f64).max(0.0).sqrt()
                } else {
                    0.0
                };
                x.push(s0);
                x.push(s1.max(1e-3 * s0));
            }
        }
        x
    }

    fn penalty_rows(&self) -> usize {
        match self.law {
            WidthLaw::PerPeak => self.n_peaks - 1,
            WidthLaw::Parametric => 0,
        }
    }
}

impl LeastSquares for CombFit<'_> {
    fn residuals(&self, x: &[f64]) -> Vec<f64> {
        let (offset, spacing, areas, widths) = self.unpack(x);
        let m = PeakModel {
            offset,
            spacing,
            widths: widths.clone(),
            areas,
        };
        let mut r: Vec<f64> = m
            .expected_counts(self.edges)
            .iter()
            .zip(&self.y)
            .zip(&self.inv_sd)
            .map(|((e, y), w)| (e - y) * w)
            .collect();
        if self.law == WidthLaw::PerPeak {
            for k in 1..self.n_peaks {
                r.push(MONOTONE_WEIGHT * (widths[k - 1] - widths[k]).max(0.0) / spacing);
            }
        }
        r
    }

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let (offset, spacing, areas, widths) = self.unpack(x);
        let k_n = self.n_peaks;
        let bins = self.y.len();
        let mut j = DMatrix::zeros(bins + self.penalty_rows(), x.len());
        for k in 0..k_n {
            let mu = offset + k as f64 * spacing;
            let sd = widths[k];
            let (dsd0, dsd1) = match self.law {
                WidthLaw::Parametric => (x[2 + k_n] / sd, k as f64 * x[3 + k_n] / sd),
                WidthLaw::PerPeak => (0.0, 0.0),
            };
            for i in 0..bins {
                let (za, zb) = ((self.edges[i] - mu) / sd, (self.edges[i + 1] - mu) / sd);
                if za > 40.0 || zb < -40.0 {
                    continue;
                }
                let w = self.inv_sd[i];
                let (pa, pb) = (norm_pdf(za), norm_pdf(zb));
                let d_mu = -areas[k] * (pb - pa) / sd * w;
                let d_sd = -areas[k] * (zb * pb - za * pa) / sd * w;
                j[(i, 0)] += d_mu;
                if self.fixed_spacing.is_none() {
                    j[(i, 1)] += k as f64 * d_mu;
                }
                j[(i, 2 + k)] = gauss_mass(za, zb) * w;
                match self.law {
                    WidthLaw::PerPeak => j[(i, 2 + k_n + k)] = d_sd,
                    WidthLaw::Parametric => {
                        j[(i, 2 + k_n)] += d_sd * dsd0;
                        j[(i, 3 + k_n)] += d_sd * dsd1;
                    }
                }
            }
        }
        if self.law == WidthLaw::PerPeak {
            for k in 1..k_n {
                if widths[k - 1] > widths[k] {
                    let row = bins + k - 1;
                    let c = MONOTONE_WEIGHT / spacing;
                    j[(row, 2 + k_n + k - 1)] = c;
                    j[(row, 2 + k_n + k)] = -c;
                    if self.fixed_spacing.is_none() {
                        j[(row, 1)] = -MONOTONE_WEIGHT * (widths[k - 1] - widths[k]) / (spacing * spacing);
                    }
                }
            }
        }
        j
    }
}

fn refine(h: &PulseHistogram, init: PeakModel, law: WidthLaw) -> PeakFit {
    let law = if init.n_peaks() == 1 { WidthLaw::PerPeak } else { law };
    let problem = CombFit {
        edges: &h.edges,
        y: h.counts.iter().map(|&c| c as f64).collect(),
        inv_sd: h.counts.iter().map(|&c| 1.0 / (c as f64).max(1.0).sqrt()).collect(),
        n_peaks: init.n_peaks(),
        law,
        fixed_spacing: (init.n_peaks() == 1).then_some(init.spacing),
    };
    let x0 = problem.pack(&init);
    let bin = (h.edges[h.edges.len() - 1] - h.edges[0]) / h.counts.len() as f64;
    let mut lower = vec![f64::NEG_INFINITY, 0.05 * init.spacing];
    lower.extend(std::iter::repeat_n(0.0, init.n_peaks()));
    lower.extend(std::iter::repeat_n(1e-3 * bin, x0.len() - lower.len()));
    let lm = LevenbergMarquardt {
        max_iterations: 500,
        lower: Some(lower),
        ..Default::default()
    };
    let fit = lm.fit(&problem, &x0);
    let (offset, spacing, mut areas, widths) = problem.unpack(&fit.x);
    let bins = h.counts.len();
    let chi2: f64 = problem.residuals(&fit.x)[..bins].iter().map(|r| r * r).sum();

    // Areas are quoted as event counts: rescale to the histogram total.
    let fitted: f64 = areas.iter().sum();
    let total = h.total() as f64;
    if fitted > 0.0 {
        areas.iter_mut().for_each(|a| *a *= total / fitted);
    }
    let mut flags = Vec::new();
    if !fit.converged {
        flags.push("not_converged".to_string());
    }
    let lo = h.edges[0];
    let hi = h.edges[bins];
    if offset < lo || offset + (areas.len() - 1) as f64 * spacing > hi {
        flags.push("peak_outside_range".to_string());
    }
    if widths.windows(2).any(|w| w[1] < w[0] * (1.0 - 1e-3)) {
        flags.push("widths_not_monotonic".to_string());
    }
    PeakFit {
        model: PeakModel {
            offset,
            spacing,
            widths,
            areas,
        },
        chi2,
        bins,
        converged: fit.converged,
        flags,
    }
}

/// Photon-number counts from peak areas. Rounding uses largest-remainder
/// apportionment so the counts sum to the rounded total area; trailing
/// empty peaks are dropped.
pub fn extract_counts(model: &PeakModel) -> Result<CountHistogram> {
    model.validate()?;
    let target = model.total_area().round() as u64;
    let mut counts: Vec<u64> = model.areas.iter().map(|a| a.floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = model.areas[a] - model.areas[a].floor();
        let rb = model.areas[b] - model.areas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(target.saturating_sub(assigned) as usize) {
        counts[i] += 1;
    }
    let h = CountHistogram::new(counts)?;
    Ok(h.trimmed())
}

/// Classification error of peak `n` with decision boundaries at the
/// midpoints between neighbouring centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolutionError {
    /// Share of peak `n` below its window.
    pub lower_leak: f64,
    /// Share of peak `n` above its window.
    pub upper_leak: f64,
    /// Events of other peaks inside the window, relative to the area of `n`.
    pub inflow: f64,
    /// `lower_leak + upper_leak + inflow`: the gross relative error of the
    /// count assigned to `n`.
    pub total: f64,
}

pub fn resolution_error(model: &PeakModel, n: usize) -> Result<ResolutionError> {
    model.validate()?;
    let k = model.n_peaks();
    if n >= k {
        return Err(Error::domain(format!("peak {n} out of range (model has {k} peaks)")));
    }
    let lo = if n == 0 { f64::NEG_INFINITY } else { model.center(n) - 0.5 * model.spacing };
    let hi = if n + 1 == k { f64::INFINITY } else { model.center(n) + 0.5 * model.spacing };
    let inside = |j: usize| {
        let (mu, sd) = (model.center(j), model.widths[j]);
        gauss_mass((lo - mu) / sd, (hi - mu) / sd)
    };
    let (mu, sd) = (model.center(n), model.widths[n]);
    let lower_leak = if n == 0 { 0.0 } else { norm_cdf((lo - mu) / sd) };
    let upper_leak = if n + 1 == k { 0.0 } else { norm_cdf((mu - hi) / sd) };
    let an = model.areas[n];
    let incoming: f64 = (0..k).filter(|&j| j != n).map(|j| model.areas[j] * inside(j)).sum();
    let inflow = if an > 0.0 { incoming / an } else if incoming > 0.0 { f64::INFINITY } else { 0.0 };
    Ok(ResolutionError {
        lower_leak,
        upper_leak,
        inflow,
        total: lower_leak + upper_leak + inflow,
    })
}

/// Scale `k` of the width law `σ(n) = k √(n + c)` for which equal-area
/// peaks at `spacing` have `resolution_error(n_ref) = target`. Uses
/// `n_peaks` peaks so that `n_ref` can be interior.
pub fn calibrate_width_scale(spacing: f64, c: f64, n_peaks: usize, n_ref: usize, target: f64) -> Result<f64> {
    if n_ref >= n_peaks || !(c >= 0.0) || !(target > 0.0 && target < 1.0) || !(spacing > 0.0) {
        return Err(Error::domain("invalid width calibration request"));
    }
    let error_at = |k: f64| -> Result<f64> {
        let widths = (0..n_peaks).map(|n| k * (n as f64 + c).sqrt().max(1e-12)).collect();
        let m = PeakModel::new(0.0, spacing, widths, vec![1.0; n_peaks])?;
        Ok(resolution_error(&m, n_ref)?.total)
    };
    // the error grows monotonically with the width scale
    let (mut lo, mut hi) = (1e-6 * spacing, spacing);
    if error_at(hi)? < target {
        return Err(Error::domain("target error not reachable"));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if error_at(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 * spacing {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
        (0..=bins).map(|i| lo + (hi - lo) * i as f64 / bins as f64).collect()
    }

    #[test]
    fn csv_round_trip() {
        let h = PulseHistogram::uniform(-0.5, 0.25, vec![3, 0, 7]).unwrap();
        let text = h.to_csv();
        assert_eq!(text, "bin_left,count\n-0.5,3\n-0.25,0\n0,7\n");
        assert_eq!(PulseHistogram::from_csv(&text).unwrap(), h);
        assert!(PulseHistogram::from_csv("bin_left,count\n0,1\n").is_err());
        assert!(PulseHistogram::from_csv("bin_left,count\n0,1\n1,1\n3,1\n").is_err());
        assert!(PulseHistogram::new(vec![0.0, 0.0], vec![1]).is_err());
    }

    #[test]
    fn five_peak_round_trip() {
        let truth = [0.4, 0.3, 0.2, 0.08, 0.02];
        let total = 1e6;
        let m = PeakModel::new(1.0, 6.0, vec![1.0; 5], truth.iter().map(|a| a * total).collect()).unwrap();
        let h = PulseHistogram::from_model(&m, edges(-4.0, 30.0, 340)).unwrap();
        let fit = fit_peaks(&h, 10).unwrap();
        assert_eq!(fit.model.n_peaks(), 5);
        for (a, t) in fit.model.areas.iter().zip(truth) {
            assert!((a / total - t).abs() < 0.01, "{a} vs {t}");
        }
        assert!((fit.model.spacing - 6.0).abs() < 0.06);
    }

    #[test]
    fn fit_idempotent_on_noise_free_bins() {
        let m = PeakModel::with_width_law(0.0, 10.0, 1.5, 0.8, vec![5e5, 3e5, 1.5e5, 5e4]).unwrap();
        let h = PulseHistogram::from_model(&m, edges(-8.0, 42.0, 250)).unwrap();
        for law in [WidthLaw::PerPeak, WidthLaw::Parametric] {
            let fit = fit_peaks_with(&h, 8, law).unwrap();
            assert!(fit.converged, "{law:?} {fit:?}");
            assert!((fit.model.spacing / 10.0 - 1.0).abs() < 0.01);
            assert!(fit.model.offset.abs() < 0.1);
            for k in 0..4 {
                assert!((fit.model.areas[k] / m.areas[k] - 1.0).abs() < 0.01, "{law:?} area {k}");
                assert!((fit.model.widths[k] / m.widths[k] - 1.0).abs() < 0.01, "{law:?} width {k}");
            }
        }
    }

    #[test]
    fn dark_only_histogram_is_one_peak() {
        let m = PeakModel::new(2.0, 5.0, vec![0.7], vec![50_000.0]).unwrap();
        let h = PulseHistogram::sample(&m, edges(-2.0, 6.0, 80), 50_000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let fit = fit_peaks(&h, 10).unwrap();
        assert_eq!(fit.model.n_peaks(), 1);
        assert!((fit.model.areas[0] - 50_000.0).abs() < 1e-6);
        assert!((fit.model.offset - 2.0).abs() < 0.02);
    }

    #[test]
    fn flat_histogram_has_no_periodicity() {
        let h = PulseHistogram::uniform(0.0, 1.0, vec![100; 60]).unwrap();
        assert!(matches!(fit_peaks(&h, 10), Err(Error::NoPeriodicity(_))));
    }

    #[test]
    fn extract_counts_rounding() {
        let m = PeakModel::new(0.0, 1.0, vec![0.1; 3], vec![100.0, 50.0, 25.0]).unwrap();
        assert_eq!(extract_counts(&m).unwrap().counts(), &[100, 50, 25]);
        let m = PeakModel::new(0.0, 1.0, vec![0.1; 4], vec![10.4, 5.3, 0.3, 0.0]).unwrap();
        let h = extract_counts(&m).unwrap();
        assert_eq!(h.total(), 16);
        assert_eq!(h.counts(), &[11, 5]);
    }

    #[test]
    fn resolution_error_limits() {
        let m = PeakModel::new(0.0, 1000.0, vec![1.0; 3], vec![1.0; 3]).unwrap();
        assert!(resolution_error(&m, 1).unwrap().total < 1e-12);
        let m = PeakModel::new(0.0, 2.0, vec![1.0; 3], vec![1.0; 3]).unwrap();
        let e = resolution_error(&m, 1).unwrap();
        let phi = 0.158655253931457;
        assert!((e.lower_leak - phi).abs() < 1e-12);
        assert!((e.upper_leak - phi).abs() < 1e-12);
        assert!(resolution_error(&m, 3).is_err());
    }

    #[test]
    fn resolution_error_grows_with_width() {
        let m = PeakModel::with_width_law(0.0, 1.0, 0.08, 0.05, vec![1.0; 25]).unwrap();
        let errs: Vec<f64> = (0..24).map(|n| resolution_error(&m, n).unwrap().total).collect();
        assert!(errs[1..].windows(2).all(|w| w[1] >= w[0]), "{errs:?}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn largest_remainder_preserves_total(areas in prop::collection::vec(0.0f64..1000.0, 1..30)) {
                prop_assume!(areas.iter().sum::<f64>() >= 1.0);
                let m = PeakModel::new(0.0, 1.0, vec![0.2; areas.len()], areas.clone()).unwrap();
                let h = extract_counts(&m).unwrap();
                prop_assert_eq!(h.total(), areas.iter().sum::<f64>().round() as u64);
                for (c, a) in h.counts().iter().zip(&areas) {
                    prop_assert!((*c as f64 - a).abs() < 1.0);
                }
            }
        }
    }
}
