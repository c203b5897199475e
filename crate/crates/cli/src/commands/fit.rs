use std::fmt::Write as _;

use serde_json::json;
use sipmstat::estimation::{
    fit_source, model_selection, source_curve, Bootstrap, FitOptions, FitResult, Normalization,
};
use sipmstat::{CountHistogram, DetectorParams, SourceFamily, SourceModel};

use super::{curve_csv, detector, params_kv, pmf_csv};
use crate::error::CliError;
use crate::output::{json as to_json, read_input, Outcome, Outputs};
use crate::{FitArgs, FitFamilyArg, NormalizationArg};

/// Source model carried by a fitted result.
pub fn fitted_model(family: SourceFamily, fit: &FitResult) -> Result<SourceModel, CliError> {
    let s = fit.param("s").map_or(1.0, |p| p.value);
    Ok(SourceModel::new(family, fit.value("n_bar"), s)?)
}

fn prefixed(prefix: &str, kv: &str) -> String {
    kv.lines().map(|l| format!("{prefix}.{l}\n")).collect()
}

/// Fits `h`, returning the fitted source and laying out `fit.txt`, `fit.json`, `source_pmf.csv` and
/// `curve.csv` under `dir`.
pub fn fit_histogram(
    h: &CountHistogram,
    params: &DetectorParams,
    family: Option<SourceFamily>,
    opts: &FitOptions,
    dir: &std::path::Path,
) -> Result<(Outcome, SourceModel), CliError> {
    let mut kv = params_kv(params);
    let (chosen, fit, summary_json, converged) = match family {
        Some(f) => {
            let fit = fit_source(h, params, f, opts)?;
            let _ = writeln!(kv, "family={f}");
            kv.push_str(&fit.to_key_value());
            let j = json!({ "detector": params, "family": f, "fit": fit });
            let c = fit.converged;
            (f, fit, j, c)
        }
        None => {
            let r = model_selection(h, params, opts)?;
            let _ = writeln!(kv, "selection.best={}", r.best);
            let _ = writeln!(kv, "selection.label={}", r.label);
            let _ = writeln!(kv, "selection.s={}", r.s);
            let _ = writeln!(kv, "selection.s_stderr={}", r.s_stderr);
            let _ = writeln!(kv, "selection.s_interval_low={}", r.s_interval.0);
            let _ = writeln!(kv, "selection.s_interval_high={}", r.s_interval.1);
            let _ = writeln!(kv, "selection.excludes_single_mode={}", r.excludes_single_mode);
            for f in &r.fits {
                let _ = writeln!(kv, "{}.aic={}", f.family, f.aic);
                kv.push_str(&prefixed(f.family.as_str(), &f.fit.to_key_value()));
            }
            let converged = r.fits.iter().all(|f| f.fit.converged);
            let (family, best) = (r.best, r.fit(r.best).clone());
            let j = json!({ "detector": params, "selection": r });
            (family, best, j, converged)
        }
    };
    let model = fitted_model(chosen, &fit)?;
    let pmf = model.pmf_adaptive()?;
    let curve = source_curve(params, &model, h.n_max())?;
    let mut outputs = Outputs::default();
    outputs.add(dir.join("fit.txt"), kv.clone());
    outputs.add(dir.join("fit.json"), to_json(&summary_json));
    outputs.add(dir.join("source_pmf.csv"), pmf_csv(pmf.as_slice()));
    outputs.add(dir.join("curve.csv"), curve_csv(h.counts(), &curve));
    let outcome = Outcome {
        outputs,
        summary: kv,
        converged,
    };
    Ok((outcome, model))
}

pub fn options(a: &FitArgs) -> Result<FitOptions, CliError> {
    let bootstrap = match a.bootstrap {
        Some(r) if r < 2 => return Err(CliError::validation("--bootstrap needs at least 2 replicas")),
        Some(replicas) => Some(Bootstrap { replicas, seed: a.seed }),
        None => None,
    };
    Ok(FitOptions {
        n_max: a.n_max,
        normalization: match a.normalization {
            NormalizationArg::Full => Normalization::FullSupport,
            NormalizationArg::Measured => Normalization::MeasuredRange,
        },
        bootstrap,
    })
}

pub fn run(a: &FitArgs) -> Result<Outcome, CliError> {
    let params = detector(&a.detector)?;
    let opts = options(a)?;
    let h = CountHistogram::from_csv(&read_input(&a.input)?)?;
    let family = match a.family {
        FitFamilyArg::Thermal => Some(SourceFamily::Thermal),
        FitFamilyArg::Negbinom => Some(SourceFamily::NegativeBinomial),
        FitFamilyArg::Poisson => Some(SourceFamily::Poisson),
        FitFamilyArg::All => None,
    };
    Ok(fit_histogram(&h, &params, family, &opts, &a.out)?.0)
}
