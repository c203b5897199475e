use super::likelihood::{log_likelihood, minimize, params_from, pearson, relative_nll, Transform};
use super::{FitParam, FitResult};
use crate::distributions::poisson_pmf;
use crate::error::{Error, Result};
use crate::histogram::CountHistogram;
use crate::response::{apply_raw, crosstalk_matrix_shaped};

const LAMBDA: Transform = Transform::Log { lo: 1e-9, hi: 10.0 };
const EPSILON: Transform = Transform::Logit { lo: 1e-6, hi: 0.95 };

/// Dark-count model: crosstalk acting on Poisson dark seeds, rows `0..=n_max`.
pub(crate) fn dark_model(lambda_dk: f64, epsilon: f64, n_max: usize) -> Result<Vec<f64>> {
    let ct = crosstalk_matrix_shaped(epsilon, n_max, n_max)?;
    apply_raw(&ct, poisson_pmf(lambda_dk, n_max)?.as_slice())
}

/// Calibrates `lambda_dk` and `epsilon` from a no-light histogram by
/// maximizing the multinomial likelihood of `M_ct(ε) · M_dk(λ) · e₀`.
///
/// `n_max` is the largest detected count modelled; the histogram may not be
/// longer than `n_max + 1`.
pub fn fit_dark_calibration(h: &CountHistogram, n_max: usize) -> Result<FitResult> {
    if h.n_max() > n_max {
        return Err(Error::Dimension {
            expected: n_max + 1,
            found: h.counts().len(),
        });
    }
    let total = h.total() as f64;
    let mut counts = h.counts().to_vec();
    counts.resize(n_max + 1, 0);

    if h.max_observed() == 0 {
        // No dark events at all: λ sits on its boundary and nothing
        // constrains ε. The likelihood exp(-Nλ) falls by 1/e over λ = 1/N.
        return Ok(FitResult {
            params: vec![
                FitParam {
                    name: "lambda_dk".into(),
                    value: 0.0,
                    stderr: 1.0 / total,
                    bootstrap_stderr: None,
                },
                FitParam {
                    name: "epsilon".into(),
                    value: 0.0,
                    stderr: f64::INFINITY,
                    bootstrap_stderr: None,
                },
            ],
            covariance: vec![vec![1.0 / (total * total), 0.0], vec![0.0, f64::INFINITY]],
            gof: None,
            log_likelihood: 0.0,
            converged: false,
            flags: vec!["lambda_dk_at_boundary".into(), "epsilon_unidentifiable".into()],
        });
    }

    let p0 = counts[0] as f64 / total;
    let lambda0 = if p0 > 0.0 { (-p0.ln()).max(1e-8) } else { 1.0 };
    let mut starts = Vec::new();
    for scale in [0.5, 1.0, 2.0] {
        for eps in [0.02, 0.1, 0.25, 0.5] {
            starts.push(vec![lambda0 * scale, eps]);
        }
    }
    let objective = |x: &[f64]| match dark_model(x[0], x[1], n_max) {
        Ok(q) => relative_nll(&counts, &q),
        Err(_) => f64::INFINITY,
    };
    let out = minimize(&[LAMBDA, EPSILON], &starts, counts.iter().sum(), objective);
    let (params, covariance) = params_from(&["lambda_dk", "epsilon"], &out);

    let q = dark_model(out.x[0], out.x[1], n_max)?;
    let overflow = 1.0 - q.iter().sum::<f64>();
    let mut flags = Vec::new();
    if out.at_lower[0] {
        flags.push("lambda_dk_at_boundary".to_string());
    }
    if out.at_lower[1] || out.at_upper[1] || !params[1].stderr.is_finite() {
        flags.push("epsilon_unidentifiable".to_string());
    }
    if !out.converged {
        flags.push("not_converged".to_string());
    }
    Ok(FitResult {
        gof: pearson(&counts, &q, overflow, 2),
        log_likelihood: log_likelihood(&counts, &q),
        converged: out.converged,
        params,
        covariance,
        flags,
    })
}
