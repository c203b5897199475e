use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::{FitParam, FitResult, Gof};
use crate::error::{Error, Result};
use crate::optim::{spd_inverse, LeastSquares, LevenbergMarquardt, NelderMead};

/// Correlation above which `s` and `alpha` are reported as weakly identified.
const WEAK_CORRELATION: f64 = 0.99;

/// Stimulated emission curve `n̄(I) = s · sinh²(α √I)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StimulationModel {
    pub s: f64,
    pub alpha: f64,
}

impl StimulationModel {
    pub fn new(s: f64, alpha: f64) -> Result<Self> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::domain(format!("s must be positive, got {s}")));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::domain(format!("alpha must be positive, got {alpha}")));
        }
        Ok(Self { s, alpha })
    }

    /// Stimulation parameter `τ = α √I`.
    pub fn tau(&self, intensity: f64) -> f64 {
        self.alpha * intensity.sqrt()
    }

    pub fn mean(&self, intensity: f64) -> f64 {
        self.s * self.tau(intensity).sinh().powi(2)
    }
}

/// One measured point of the stimulation curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StimulationPoint {
    pub intensity: f64,
    pub n_bar: f64,
    /// One-sigma error on `n_bar`.
    pub err: f64,
}

pub fn stimulation_curve(model: &StimulationModel, intensities: &[f64]) -> Vec<f64> {
    intensities.iter().map(|&i| model.mean(i)).collect()
}

struct Curve<'a> {
    points: &'a [StimulationPoint],
}

impl Curve<'_> {
    /// Best `s` for fixed `alpha` (linear in `s`) and the resulting chi-square.
    fn profile(&self, alpha: f64) -> (f64, f64) {
        let (mut fy, mut ff) = (0.0, 0.0);
        for p in self.points {
            let f = (alpha * p.intensity.sqrt()).sinh().powi(2);
            let w = 1.0 / (p.err * p.err);
            fy += w * f * p.n_bar;
            ff += w * f * f;
        }
        if !(ff > 0.0 && ff.is_finite()) {
            return (f64::NAN, f64::INFINITY);
        }
        let s = (fy / ff).max(1e-12);
        let chi2 = self.residuals(&[s, alpha]).iter().map(|r| r * r).sum();
        (s, chi2)
    }
}

impl LeastSquares for Curve<'_> {
    fn residuals(&self, x: &[f64]) -> Vec<f64> {
        self.points
            .iter()
            .map(|p| (x[0] * (x[1] * p.intensity.sqrt()).sinh().powi(2) - p.n_bar) / p.err)
            .collect()
    }

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.points.len(), 2);
        for (i, p) in self.points.iter().enumerate() {
            let root = p.intensity.sqrt();
            let tau = x[1] * root;
            j[(i, 0)] = tau.sinh().powi(2) / p.err;
            j[(i, 1)] = x[0] * (2.0 * tau).sinh() * root / p.err;
        }
        j
    }
}

fn validate(points: &[StimulationPoint]) -> Result<()> {
    if points.len() < 3 {
        return Err(Error::domain(format!(
            "stimulation fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    for p in points {
        if !(p.intensity >= 0.0 && p.intensity.is_finite()) {
            return Err(Error::domain(format!("intensity must be non-negative, got {}", p.intensity)));
        }
        if !(p.err > 0.0 && p.err.is_finite()) {
            return Err(Error::domain(format!("point errors must be positive, got {}", p.err)));
        }
        if !p.n_bar.is_finite() {
            return Err(Error::domain("mean photon numbers must be finite"));
        }
    }
    let first = points[0].intensity;
    if points.iter().all(|p| p.intensity == first) {
        return Err(Error::domain("all intensities are equal; s and alpha are not separable"));
    }
    if points.iter().all(|p| p.intensity == 0.0) {
        return Err(Error::domain("all intensities are zero"));
    }
    Ok(())
}

/// Weighted least-squares fit of `s` and `alpha` to measured mean photon
/// numbers versus pump intensity.
///
/// Besides `s` and `alpha` the result carries the derived `s_alpha2 = s α²`,
/// the slope of the curve at low intensity, which stays well determined even
/// when the data only cover the linear regime and `s`, `alpha` are not
/// separately identifiable (flagged `weakly_identified`).
pub fn fit_stimulation(points: &[StimulationPoint]) -> Result<FitResult> {
    validate(points)?;
    let curve = Curve { points };
    let i_max = points.iter().map(|p| p.intensity).fold(0.0, f64::max);

    // Profile chi-square over ln α on a grid of τ_max = α √I_max, then refine.
    let ln_alpha = |ln_tau: f64| ln_tau - 0.5 * i_max.ln();
    let (lo, hi) = (1e-3f64.ln(), 12f64.ln());
    let profile = |v: &[f64]| curve.profile(ln_alpha(v[0].clamp(lo, hi)).exp()).1;
    let grid = (0..=80).map(|k| lo + (hi - lo) * k as f64 / 80.0);
    let best = grid.min_by(|a, b| profile(&[*a]).total_cmp(&profile(&[*b]))).expect("grid");
    let nm = NelderMead {
        initial_step: 0.05,
        ..Default::default()
    };
    let refined = nm.minimize(profile, &[best]).x[0].clamp(lo, hi);
    let alpha0 = ln_alpha(refined).exp();
    let s0 = curve.profile(alpha0).0;

    let lm = LevenbergMarquardt {
        lower: Some(vec![1e-12, 1e-12]),
        ..Default::default()
    };
    let fit = lm.fit(&curve, &[s0, alpha0]);
    let (s, alpha) = (fit.x[0], fit.x[1]);

    let cov = spd_inverse(&fit.jtj);
    let covariance: Vec<Vec<f64>> = match &cov {
        Some(c) => (0..2).map(|i| (0..2).map(|j| c[(i, j)]).collect()).collect(),
        None => vec![vec![f64::INFINITY; 2]; 2],
    };
    let (vs, va, csa) = (covariance[0][0], covariance[1][1], covariance[0][1]);
    // delta method for g = s α²: ∇g = (α², 2 s α)
    let (gs, ga) = (alpha * alpha, 2.0 * s * alpha);
    let product_var = gs * gs * vs + ga * ga * va + 2.0 * gs * ga * csa;

    let mut flags = Vec::new();
    let corr = csa / (vs * va).sqrt();
    if cov.is_none() || !corr.is_finite() || corr.abs() > WEAK_CORRELATION {
        flags.push("weakly_identified".to_string());
    }
    if !fit.converged {
        flags.push("not_converged".to_string());
    }
    let dof = points.len() - 2;
    let gof = (dof >= 1).then(|| Gof {
        statistic: fit.chi2,
        dof,
        p_value: ChiSquared::new(dof as f64).map(|d| d.sf(fit.chi2)).unwrap_or(f64::NAN),
    });
    let param = |name: &str, value: f64, var: f64| FitParam {
        name: name.into(),
        value,
        stderr: if var.is_finite() { var.max(0.0).sqrt() } else { f64::INFINITY },
        bootstrap_stderr: None,
    };
    Ok(FitResult {
        params: vec![
            param("s", s, vs),
            param("alpha", alpha, va),
            param("s_alpha2", s * alpha * alpha, product_var),
        ],
        covariance,
        gof,
        log_likelihood: -0.5 * fit.chi2,
        converged: fit.converged,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn intensities() -> Vec<f64> {
        (1..=10).map(|k| 50.0 * k as f64).collect()
    }

    fn exact(model: &StimulationModel, rel: f64) -> Vec<StimulationPoint> {
        intensities()
            .into_iter()
            .map(|i| {
                let m = model.mean(i);
                StimulationPoint { intensity: i, n_bar: m, err: rel * m }
            })
            .collect()
    }

    #[test]
    fn zero_intensity_gives_zero_mean() {
        for (s, a) in [(1.0, 0.1), (23.0, 0.06), (1e3, 3.0)] {
            assert_eq!(StimulationModel::new(s, a).unwrap().mean(0.0), 0.0);
        }
    }

    #[test]
    fn curve_increases() {
        let m = StimulationModel::new(6.3, 0.08).unwrap();
        let c = stimulation_curve(&m, &intensities());
        assert!(c.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn noiseless_round_trip() {
        let truth = StimulationModel::new(6.3, 0.08).unwrap();
        let r = fit_stimulation(&exact(&truth, 0.05)).unwrap();
        assert!(r.converged);
        assert!((r.value("s") / 6.3 - 1.0).abs() < 1e-6, "{}", r.value("s"));
        assert!((r.value("alpha") / 0.08 - 1.0).abs() < 1e-6, "{}", r.value("alpha"));
        assert!(r.gof.unwrap().statistic < 1e-12);
    }

    #[test]
    fn noisy_single_mode_within_half() {
        let truth = StimulationModel::new(1.1, 0.08).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let mut inside = 0;
        for _ in 0..50 {
            let pts: Vec<_> = exact(&truth, 0.05)
                .into_iter()
                .map(|p| StimulationPoint {
                    n_bar: p.n_bar * (1.0 + noise.sample(&mut rng)),
                    ..p
                })
                .collect();
            let r = fit_stimulation(&pts).unwrap();
            if (r.value("s") - 1.1).abs() <= 0.5 {
                inside += 1;
            }
        }
        assert!(inside >= 45, "{inside}/50");
    }

    #[test]
    fn linear_regime_recovers_product() {
        let truth = StimulationModel::new(4.0, 1e-3).unwrap();
        let r = fit_stimulation(&exact(&truth, 0.01)).unwrap();
        let g = r.param("s_alpha2").unwrap();
        assert!((g.value / 4e-6 - 1.0).abs() < 1e-3, "{g:?}");
        assert!(r.has_flag("weakly_identified"));
        assert!(r.correlation("s", "alpha").is_none_or(|c| c.abs() > 0.99));
    }

    #[test]
    fn invalid_designs() {
        let p = |i: f64| StimulationPoint { intensity: i, n_bar: 1.0, err: 0.1 };
        assert!(fit_stimulation(&[p(1.0), p(2.0)]).is_err());
        assert!(fit_stimulation(&[p(3.0), p(3.0), p(3.0)]).is_err());
        assert!(fit_stimulation(&[p(-1.0), p(2.0), p(3.0)]).is_err());
        let mut bad = [p(1.0), p(2.0), p(3.0)];
        bad[1].err = 0.0;
        assert!(fit_stimulation(&bad).is_err());
    }
}
