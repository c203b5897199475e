use serde::{Deserialize, Serialize};

use super::source::{fit_source, FitOptions};
use super::FitResult;
use crate::distributions::SourceFamily;
use crate::error::Result;
use crate::histogram::CountHistogram;
use crate::response::DetectorParams;

/// Mode numbers above this are treated as Poissonian.
pub const POISSONIAN_MODES: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeLabel {
    /// Interval on `s` contains 1.
    SingleMode,
    /// Interval on `s` lies above 1 and `s <= 10`.
    Multimode,
    /// `s > 10`, or the interval on `s` has no upper end.
    Poissonian,
}

impl ModeLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModeLabel::SingleMode => "single_mode",
            ModeLabel::Multimode => "multimode",
            ModeLabel::Poissonian => "poissonian",
        }
    }
}

impl std::fmt::Display for ModeLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyFit {
    pub family: SourceFamily,
    pub fit: FitResult,
    pub aic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub fits: Vec<FamilyFit>,
    /// Lowest AIC.
    pub best: SourceFamily,
    /// Negative-binomial mode number and its standard error.
    pub s: f64,
    pub s_stderr: f64,
    /// `s ± 2σ`; the upper end is infinite when `s` is unbounded above.
    pub s_interval: (f64, f64),
    pub label: ModeLabel,
    /// True when the whole interval lies above `s = 1`.
    pub excludes_single_mode: bool,
}

impl SelectionReport {
    pub fn fit(&self, family: SourceFamily) -> &FitResult {
        &self.fits.iter().find(|f| f.family == family).expect("all families are fitted").fit
    }
}

/// Fits all three source families to `h` and classifies the mode number.
pub fn model_selection(h: &CountHistogram, params: &DetectorParams, opts: &FitOptions) -> Result<SelectionReport> {
    let fits = SourceFamily::ALL
        .iter()
        .map(|&family| {
            let fit = fit_source(h, params, family, opts)?;
            let aic = 2.0 * fit.params.len() as f64 - 2.0 * fit.log_likelihood;
            Ok(FamilyFit { family, fit, aic })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = fits
        .iter()
        .min_by(|a, b| a.aic.total_cmp(&b.aic))
        .map(|f| f.family)
        .expect("three fits");

    let nb = &fits.iter().find(|f| f.family == SourceFamily::NegativeBinomial).expect("negbinom fitted").fit;
    let s = nb.value("s");
    let unbounded = nb.has_flag("s_unbounded_above");
    let s_stderr = if unbounded { f64::INFINITY } else { nb.stderr("s") };
    let s_interval = (s - 2.0 * s_stderr, s + 2.0 * s_stderr);
    let excludes_single_mode = s_interval.0 > 1.0;
    let label = if s > POISSONIAN_MODES || !s_interval.1.is_finite() {
        ModeLabel::Poissonian
    } else if excludes_single_mode {
        ModeLabel::Multimode
    } else {
        ModeLabel::SingleMode
    };
    Ok(SelectionReport {
        fits,
        best,
        s,
        s_stderr,
        s_interval,
        label,
        excludes_single_mode,
    })
}
