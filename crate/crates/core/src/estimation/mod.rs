//! Parameter estimation from measured count histograms.
//!
//! Detector parameters are calibrated separately (dark calibration, heralded
//! efficiency) and then held fixed while the source parameters are fitted,
//! which mirrors how the measurements are taken. All histogram fits maximize
//! the multinomial likelihood; Pearson's chi-square is reported as the
//! goodness of fit. Standard errors come from the inverse observed
//! information (numerical Hessian), optionally cross-checked by bootstrap.

mod dark;
mod likelihood;
mod selection;
mod source;
mod stimulation;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dark::fit_dark_calibration;
pub use selection::{model_selection, FamilyFit, ModeLabel, SelectionReport, POISSONIAN_MODES};
pub use source::{detected_pmf, fit_source, source_curve, suggest_source_n_max, Bootstrap, FitOptions, Normalization};
pub use stimulation::{fit_stimulation, stimulation_curve, StimulationModel, StimulationPoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitParam {
    pub name: String,
    pub value: f64,
    /// Inverse-information standard error; infinite when unidentifiable.
    pub stderr: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bootstrap_stderr: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gof {
    /// Pearson chi-square (weighted residual sum of squares for curve fits).
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: Vec<FitParam>,
    /// Over the free parameters, in `params` order.
    pub covariance: Vec<Vec<f64>>,
    pub gof: Option<Gof>,
    /// Maximized log-likelihood up to the multinomial constant, or
    /// `-chi2/2` for least-squares fits.
    pub log_likelihood: f64,
    pub converged: bool,
    pub flags: Vec<String>,
}

impl FitResult {
    pub fn param(&self, name: &str) -> Option<&FitParam> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Value of a named parameter; panics if absent.
    pub fn value(&self, name: &str) -> f64 {
        self.param(name).unwrap_or_else(|| panic!("no parameter '{name}'")).value
    }

    pub fn stderr(&self, name: &str) -> f64 {
        self.param(name).unwrap_or_else(|| panic!("no parameter '{name}'")).stderr
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags.iter().any(|f| f == flag)
    }

    /// Correlation between two free parameters.
    pub fn correlation(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.params.iter().position(|p| p.name == a)?;
        let j = self.params.iter().position(|p| p.name == b)?;
        let c = &self.covariance;
        if i >= c.len() || j >= c.len() {
            return None;
        }
        Some(c[i][j] / (c[i][i] * c[j][j]).sqrt())
    }

    /// `key=value` lines, one per fact.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "converged={}", self.converged);
        for p in &self.params {
            let _ = writeln!(out, "{}={}", p.name, p.value);
            let _ = writeln!(out, "{}.stderr={}", p.name, p.stderr);
            if let Some(b) = p.bootstrap_stderr {
                let _ = writeln!(out, "{}.bootstrap_stderr={}", p.name, b);
            }
        }
        let _ = writeln!(out, "log_likelihood={}", self.log_likelihood);
        if let Some(g) = &self.gof {
            let _ = writeln!(out, "gof.chi2={}", g.statistic);
            let _ = writeln!(out, "gof.dof={}", g.dof);
            let _ = writeln!(out, "gof.p_value={}", g.p_value);
        }
        for (i, row) in self.covariance.iter().enumerate() {
            for (j, v) in row.iter().enumerate().skip(i) {
                let _ = writeln!(out, "cov.{}.{}={}", self.params[i].name, self.params[j].name, v);
            }
        }
        let _ = writeln!(out, "flags={}", self.flags.join(","));
        out
    }
}

/// A proportion with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

/// Heralded efficiency: coincidences over singles in the low-flux limit,
/// with standard error `sqrt(p(1-p)/singles)`.
pub fn heralded_efficiency(coincidences: u64, singles: u64) -> Result<Estimate> {
    if singles == 0 {
        return Err(Error::domain("heralded efficiency needs at least one single count"));
    }
    if coincidences > singles {
        return Err(Error::domain(format!(
            "coincidences ({coincidences}) exceed singles ({singles})"
        )));
    }
    let p = coincidences as f64 / singles as f64;
    Ok(Estimate {
        value: p,
        stderr: (p * (1.0 - p) / singles as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heralded_examples() {
        assert_eq!(heralded_efficiency(0, 1000).unwrap().value, 0.0);
        assert!((heralded_efficiency(13, 1000).unwrap().value - 0.013).abs() < 1e-15);
        let e = heralded_efficiency(500, 1000).unwrap();
        assert_eq!(e.value, 0.5);
        assert!((e.stderr - 0.0158).abs() < 1e-4);
        assert!(heralded_efficiency(1, 0).is_err());
        assert!(heralded_efficiency(5, 4).is_err());
    }

    #[test]
    fn key_value_layout() {
        let r = FitResult {
            params: vec![FitParam {
                name: "n_bar".into(),
                value: 2.0,
                stderr: 0.1,
                bootstrap_stderr: None,
            }],
            covariance: vec![vec![0.01]],
            gof: Some(Gof {
                statistic: 3.0,
                dof: 4,
                p_value: 0.55,
            }),
            log_likelihood: -10.0,
            converged: true,
            flags: vec![],
        };
        let kv = r.to_key_value();
        assert!(kv.contains("n_bar=2\n"));
        assert!(kv.contains("n_bar.stderr=0.1\n"));
        assert!(kv.contains("gof.dof=4\n"));
        assert!(kv.contains("cov.n_bar.n_bar=0.01\n"));
        assert_eq!(r.correlation("n_bar", "n_bar"), Some(1.0));
    }
}
