use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::likelihood::{log_likelihood, minimize, params_from, pearson, relative_nll, Transform};
use super::FitResult;
use crate::distributions::{ProbVec, SourceFamily, SourceModel, TRUNC_TOL};
use crate::error::{Error, Result};
use crate::histogram::CountHistogram;
use crate::response::{apply_raw, compose_shaped, DetectorParams, ResponseMatrix};

const N_BAR: Transform = Transform::Log { lo: 1e-6, hi: 1e5 };
const MODES: Transform = Transform::Log { lo: 1e-2, hi: 1e4 };

/// Largest source truncation [`suggest_source_n_max`] will propose.
const MAX_SOURCE_N: usize = 50_000;

/// How the model's measured-space distribution is normalized in the
/// likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Probabilities over the whole detected-count support; mass above the
    /// histogram range is an (unobserved) overflow category.
    #[default]
    FullSupport,
    /// Conditional on the detected count lying in the histogram range; use
    /// for data that was truncated after acquisition.
    MeasuredRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bootstrap {
    pub replicas: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Source photon-number truncation; `None` picks one from the data.
    pub n_max: Option<usize>,
    pub normalization: Normalization,
    pub bootstrap: Option<Bootstrap>,
}

/// Moment inversion of `E[n] = (η n̄ + λ) / (1 - ε)`.
fn mean_guess(h: &CountHistogram, params: &DetectorParams) -> f64 {
    let n = ((1.0 - params.epsilon) * h.mean() - params.lambda_dk) / params.eta;
    n.clamp(1e-4, 1e4)
}

/// Source truncation large enough for a thermal source (the heaviest tail
/// among the families) at four times the moment estimate of `n̄`.
pub fn suggest_source_n_max(h: &CountHistogram, params: &DetectorParams) -> Result<usize> {
    params.validate()?;
    if params.eta == 0.0 {
        return Err(Error::domain("cannot fit a source through a detector with eta = 0"));
    }
    let n_hi = (4.0 * mean_guess(h, params)).max(5.0);
    let n = SourceModel::Thermal { n_bar: n_hi }.adaptive_n_max(TRUNC_TOL)?;
    Ok(n.clamp(h.n_max(), MAX_SOURCE_N))
}

struct SourceProblem<'a> {
    composite: ResponseMatrix,
    counts: &'a [u64],
    family: SourceFamily,
    normalization: Normalization,
}

impl SourceProblem<'_> {
    fn model(&self, x: &[f64]) -> Result<SourceModel> {
        SourceModel::new(self.family, x[0], x.get(1).copied().unwrap_or(1.0))
    }

    /// Model probabilities for detected counts `0..=R` and the overflow mass.
    fn measured(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let src = self.model(x)?.pmf(self.composite.n_in());
        let mut q = apply_raw(&self.composite, src.as_slice())?;
        match self.normalization {
            Normalization::FullSupport => {
                let overflow = (1.0 - q.iter().sum::<f64>()).max(0.0);
                Ok((q, overflow))
            }
            Normalization::MeasuredRange => {
                let t: f64 = q.iter().sum();
                q.iter_mut().for_each(|v| *v /= t);
                Ok((q, 0.0))
            }
        }
    }

    fn objective(&self, x: &[f64]) -> f64 {
        match self.measured(x) {
            Ok((q, _)) => relative_nll(self.counts, &q),
            Err(_) => f64::INFINITY,
        }
    }

    fn transforms(&self) -> Vec<Transform> {
        match self.family {
            SourceFamily::NegativeBinomial => vec![N_BAR, MODES],
            _ => vec![N_BAR],
        }
    }

    fn names(&self) -> Vec<&'static str> {
        match self.family {
            SourceFamily::NegativeBinomial => vec!["n_bar", "s"],
            _ => vec!["n_bar"],
        }
    }

    /// Coarse grid around the moment estimate, best few kept as simplex
    /// starts.
    fn starts(&self, n0: f64) -> Vec<Vec<f64>> {
        let mut grid = Vec::new();
        for k in [0.5, 0.8, 1.0, 1.25, 2.0] {
            match self.family {
                SourceFamily::NegativeBinomial => {
                    for s in [0.5, 1.0, 2.0, 5.0, 20.0, 200.0] {
                        grid.push(vec![n0 * k, s]);
                    }
                }
                _ => grid.push(vec![n0 * k]),
            }
        }
        let mut scored: Vec<(f64, Vec<f64>)> = grid.into_iter().map(|x| (self.objective(&x), x)).collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0));
        scored.into_iter().take(3).map(|(_, x)| x).collect()
    }
}

/// Maximum-likelihood fit of the source parameters through a fixed,
/// separately calibrated detector: `p_m = M_ct M_dk M_loss p_source`.
///
/// Free parameters are `n_bar` (all families) and `s` (negative binomial
/// only; thermal fixes `s = 1`, Poisson is the infinite-mode limit).
pub fn fit_source(
    h: &CountHistogram,
    params: &DetectorParams,
    family: SourceFamily,
    opts: &FitOptions,
) -> Result<FitResult> {
    let n_src = match opts.n_max {
        Some(n) => n,
        None => suggest_source_n_max(h, params)?,
    };
    params.validate()?;
    if params.eta == 0.0 {
        return Err(Error::domain("cannot fit a source through a detector with eta = 0"));
    }
    let problem = SourceProblem {
        composite: compose_shaped(params, n_src, h.n_max())?,
        counts: h.counts(),
        family,
        normalization: opts.normalization,
    };
    let mut result = fit_problem(&problem, &problem.starts(mean_guess(h, params)))?;

    if let Some(b) = opts.bootstrap {
        let start = result.params.iter().map(|p| p.value).collect::<Vec<_>>();
        let sds = bootstrap(&problem, h, &start, b)?;
        for (p, sd) in result.params.iter_mut().zip(sds) {
            p.bootstrap_stderr = Some(sd);
        }
    }
    Ok(result)
}

fn fit_problem(problem: &SourceProblem<'_>, starts: &[Vec<f64>]) -> Result<FitResult> {
    let transforms = problem.transforms();
    let names = problem.names();
    let out = minimize(&transforms, starts, problem.counts.iter().sum(), |x| problem.objective(x));
    let (params, covariance) = params_from(&names, &out);
    let (q, overflow) = problem.measured(&out.x)?;

    let mut flags = Vec::new();
    if out.at_lower[0] {
        flags.push("n_bar_at_boundary".to_string());
    }
    if names.len() > 1 {
        if out.at_upper[1] || !params[1].stderr.is_finite() {
            flags.push("s_unbounded_above".to_string());
        }
        if out.at_lower[1] {
            flags.push("s_at_lower_bound".to_string());
        }
    }
    if problem.model(&out.x)?.pmf(problem.composite.n_in()).tail_mass() > 1e-6 {
        flags.push("source_truncated".to_string());
    }
    if !out.converged {
        flags.push("not_converged".to_string());
    }
    Ok(FitResult {
        gof: pearson(problem.counts, &q, overflow, names.len()),
        log_likelihood: log_likelihood(problem.counts, &q),
        converged: out.converged,
        params,
        covariance,
        flags,
    })
}

/// Standard deviation of refits on multinomial resamples of the data.
fn bootstrap(problem: &SourceProblem<'_>, h: &CountHistogram, start: &[f64], b: Bootstrap) -> Result<Vec<f64>> {
    if b.replicas < 2 {
        return Err(Error::domain("bootstrap needs at least two replicas"));
    }
    let empirical = h.empirical();
    let fits: Vec<Vec<f64>> = (0..b.replicas)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let mut rng = ChaCha8Rng::seed_from_u64(b.seed);
            rng.set_stream(i as u64);
            let mut sample = CountHistogram::sample(empirical.as_slice(), h.total(), &mut rng)?.counts().to_vec();
            sample.resize(h.counts().len(), 0);
            let replica = SourceProblem {
                composite: problem.composite.clone(),
                counts: &sample,
                family: problem.family,
                normalization: problem.normalization,
            };
            let out = minimize(&replica.transforms(), &[start.to_vec()], h.total(), |x| replica.objective(x));
            Ok(out.x)
        })
        .collect::<Result<_>>()?;
    let k = start.len();
    let r = fits.len() as f64;
    Ok((0..k)
        .map(|j| {
            let mean = fits.iter().map(|f| f[j]).sum::<f64>() / r;
            (fits.iter().map(|f| (f[j] - mean).powi(2)).sum::<f64>() / (r - 1.0)).sqrt()
        })
        .collect())
}

/// Model distribution of detected counts `0..=n_out` for a source seen
/// through `params`; the overlay curve of a fit.
pub fn source_curve(params: &DetectorParams, model: &SourceModel, n_out: usize) -> Result<Vec<f64>> {
    let src = model.pmf_adaptive()?;
    let m = compose_shaped(params, src.n_max(), n_out)?;
    apply_raw(&m, src.as_slice())
}

/// Detected-count distribution of a source seen through `params`, with
/// enough rows that the detected mass beyond them is below [`TRUNC_TOL`].
pub fn detected_pmf(params: &DetectorParams, model: &SourceModel) -> Result<ProbVec> {
    let src = model.pmf_adaptive()?;
    let mut n_out = 16;
    loop {
        let m = compose_shaped(params, src.n_max(), n_out)?;
        let q = apply_raw(&m, src.as_slice())?;
        let missing = 1.0 - q.iter().sum::<f64>();
        if missing < src.tail_mass() + TRUNC_TOL || n_out >= 1 << 16 {
            let keep = q.iter().rposition(|&v| v > 0.0).unwrap_or(0);
            return Ok(ProbVec::from_raw(q[..=keep].to_vec()));
        }
        n_out *= 2;
    }
}
