//! Shared machinery for the multinomial maximum-likelihood fits.

use nalgebra::DMatrix;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::{FitParam, Gof};
use crate::optim::{hessian, multi_start, spd_inverse, NelderMead};

/// Minimum expected count per Pearson bin after pooling.
const MIN_EXPECTED: f64 = 5.0;

/// Map from an unconstrained internal coordinate to a bounded natural
/// parameter.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Transform {
    /// `x = exp(u)`, `x ∈ [lo, hi]`, `lo > 0`.
    Log { lo: f64, hi: f64 },
    /// `x = 1 / (1 + exp(-u))`, `x ∈ [lo, hi] ⊂ (0, 1)`.
    Logit { lo: f64, hi: f64 },
}

impl Transform {
    fn natural(&self, u: f64) -> f64 {
        match self {
            Transform::Log { .. } => u.exp(),
            Transform::Logit { .. } => 1.0 / (1.0 + (-u).exp()),
        }
    }

    fn internal(&self, x: f64) -> f64 {
        match self {
            Transform::Log { .. } => x.ln(),
            Transform::Logit { .. } => (x / (1.0 - x)).ln(),
        }
    }

    fn bounds(&self) -> (f64, f64) {
        match *self {
            Transform::Log { lo, hi } | Transform::Logit { lo, hi } => (self.internal(lo), self.internal(hi)),
        }
    }

    fn dx_du(&self, u: f64) -> f64 {
        match self {
            Transform::Log { .. } => u.exp(),
            Transform::Logit { .. } => {
                let x = self.natural(u);
                x * (1.0 - x)
            }
        }
    }

    fn clamp_natural(&self, x: f64) -> f64 {
        match *self {
            Transform::Log { lo, hi } | Transform::Logit { lo, hi } => x.clamp(lo, hi),
        }
    }
}

pub(crate) struct MlOutcome {
    pub x: Vec<f64>,
    /// Natural-parameter covariance; `None` if the information matrix is not
    /// positive definite.
    pub covariance: Option<DMatrix<f64>>,
    pub converged: bool,
    pub at_lower: Vec<bool>,
    pub at_upper: Vec<bool>,
}

/// Minimizes `objective` (in natural parameters) from several natural-space
/// starting points. Internally works in transformed coordinates; leaving the
/// box is penalized so the simplex walks back in. `events` is the number of
/// counts behind the objective, which sets its rounding-noise floor.
pub(crate) fn minimize<F>(transforms: &[Transform], starts: &[Vec<f64>], events: u64, objective: F) -> MlOutcome
where
    F: Fn(&[f64]) -> f64,
{
    let bounds: Vec<(f64, f64)> = transforms.iter().map(Transform::bounds).collect();
    let to_natural = |u: &[f64]| -> (Vec<f64>, f64) {
        let mut pen = 0.0;
        let x = u
            .iter()
            .zip(transforms)
            .zip(&bounds)
            .map(|((&ui, t), &(lo, hi))| {
                let c = ui.clamp(lo, hi);
                pen += (ui - c).powi(2);
                t.natural(c)
            })
            .collect();
        (x, pen)
    };
    let f = |u: &[f64]| {
        let (x, pen) = to_natural(u);
        objective(&x) + pen * (1.0 + objective(&x).abs())
    };
    let starts_u: Vec<Vec<f64>> = starts
        .iter()
        .map(|s| s.iter().zip(transforms).map(|(&x, t)| t.internal(t.clamp_natural(x))).collect())
        .collect();
    let nm = NelderMead {
        f_tol: 1e-10,
        f_abs: 1e-13 * events as f64,
        x_tol: 1e-7,
        ..Default::default()
    };
    let best = multi_start(&nm, f, &starts_u);
    let u: Vec<f64> = best.x.iter().zip(&bounds).map(|(&ui, &(lo, hi))| ui.clamp(lo, hi)).collect();
    let (x, _) = to_natural(&u);
    let at_lower: Vec<bool> = u.iter().zip(&bounds).map(|(&ui, &(lo, _))| ui - lo < 0.05).collect();
    let at_upper: Vec<bool> = u.iter().zip(&bounds).map(|(&ui, &(_, hi))| hi - ui < 0.05).collect();

    let steps = vec![1e-4; u.len()];
    let obj_u = |v: &[f64]| {
        let xs: Vec<f64> = v.iter().zip(transforms).map(|(&vi, t)| t.natural(vi)).collect();
        objective(&xs)
    };
    let h = hessian(obj_u, &u, &steps);
    let covariance = spd_inverse(&h).map(|cu| {
        let d: Vec<f64> = u.iter().zip(transforms).map(|(&ui, t)| t.dx_du(ui)).collect();
        DMatrix::from_fn(u.len(), u.len(), |i, j| d[i] * cu[(i, j)] * d[j])
    });
    MlOutcome {
        converged: best.converged && covariance.is_some(),
        x,
        covariance,
        at_lower,
        at_upper,
    }
}

/// `Σ c_n ln(c_n / (N q_n))`: the negative log-likelihood relative to the
/// saturated model (half the G statistic). Same minimizer as the plain
/// negative log-likelihood but of order one instead of order `N`.
pub(crate) fn relative_nll(counts: &[u64], q: &[f64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let nf = total as f64;
    let mut acc = 0.0;
    for (&c, &p) in counts.iter().zip(q) {
        if c == 0 {
            continue;
        }
        if !(p > 0.0) {
            return f64::INFINITY;
        }
        let c = c as f64;
        acc += c * (c / (nf * p)).ln();
    }
    acc
}

/// Log-likelihood up to the multinomial constant.
pub(crate) fn log_likelihood(counts: &[u64], q: &[f64]) -> f64 {
    counts
        .iter()
        .zip(q)
        .filter(|(&c, _)| c > 0)
        .map(|(&c, &p)| c as f64 * p.ln())
        .sum()
}

/// Pearson chi-square. `q[n]` are model probabilities for bins `0..len`;
/// `overflow` is the model mass above the last bin (merged into it). Bins are
/// pooled from the top until each expected count reaches five.
pub(crate) fn pearson(counts: &[u64], q: &[f64], overflow: f64, n_free: usize) -> Option<Gof> {
    let total = counts.iter().sum::<u64>() as f64;
    let len = counts.len().min(q.len());
    let mut pooled: Vec<(f64, f64)> = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, total * overflow.max(0.0));
    for n in (0..len).rev() {
        o_acc += counts[n] as f64;
        e_acc += total * q[n];
        if e_acc >= MIN_EXPECTED {
            pooled.push((o_acc, e_acc));
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if o_acc > 0.0 || e_acc > 0.0 {
        match pooled.last_mut() {
            Some(last) => {
                last.0 += o_acc;
                last.1 += e_acc;
            }
            None => pooled.push((o_acc, e_acc)),
        }
    }
    let dof = pooled.len().checked_sub(1 + n_free).filter(|&d| d >= 1)?;
    let statistic: f64 = pooled
        .iter()
        .filter(|(_, e)| *e > 0.0)
        .map(|(o, e)| (o - e).powi(2) / e)
        .sum();
    let p_value = ChiSquared::new(dof as f64).ok()?.sf(statistic);
    Some(Gof {
        statistic,
        dof,
        p_value,
    })
}

/// Packs an outcome into named parameters and a covariance table.
pub(crate) fn params_from(names: &[&str], out: &MlOutcome) -> (Vec<FitParam>, Vec<Vec<f64>>) {
    let k = names.len();
    let cov = match &out.covariance {
        Some(c) => (0..k).map(|i| (0..k).map(|j| c[(i, j)]).collect()).collect(),
        None => vec![vec![f64::INFINITY; k]; k],
    };
    let params = names
        .iter()
        .enumerate()
        .map(|(i, n)| FitParam {
            name: n.to_string(),
            value: out.x[i],
            stderr: cov[i][i].max(0.0).sqrt(),
            bootstrap_stderr: None,
        })
        .collect();
    (params, cov)
}
