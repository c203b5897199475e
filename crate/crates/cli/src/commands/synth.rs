use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sipmstat::estimation::{detected_pmf, source_curve};
use sipmstat::{CountHistogram, DetectorParams, SourceFamily, SourceModel};

use super::{detector, params_kv};
use crate::error::CliError;
use crate::output::{Outcome, Outputs};
use crate::SynthArgs;

/// Multinomial draw of `trials` detected counts. With `n_max`, events above
/// it are dropped (a range-limited acquisition); otherwise the full support
/// is kept and trailing empty bins are trimmed.
pub fn synthesize(
    params: &DetectorParams,
    model: &SourceModel,
    trials: u64,
    seed: u64,
    n_max: Option<usize>,
) -> Result<CountHistogram, CliError> {
    if trials == 0 {
        return Err(CliError::validation("--trials must be >= 1"));
    }
    let q = match n_max {
        Some(n) => source_curve(params, model, n)?,
        None => detected_pmf(params, model)?.into_vec(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = CountHistogram::sample(&q, trials, &mut rng)?;
    Ok(match n_max {
        Some(_) => h,
        None => h.trimmed(),
    })
}

pub fn model_from(family: SourceFamily, n_bar: f64, s: Option<f64>) -> Result<SourceModel, CliError> {
    let s = match (family, s) {
        (SourceFamily::NegativeBinomial, None) => {
            return Err(CliError::validation("--s is required for --family negbinom"))
        }
        (SourceFamily::NegativeBinomial, Some(s)) => s,
        (_, Some(_)) => return Err(CliError::validation("--s only applies to --family negbinom")),
        (_, None) => 1.0,
    };
    Ok(SourceModel::new(family, n_bar, s)?)
}

pub fn run(a: &SynthArgs) -> Result<Outcome, CliError> {
    let params = detector(&a.detector)?;
    let model = model_from(a.family.into(), a.n_bar, a.s)?;
    let h = synthesize(&params, &model, a.trials, a.seed, a.n_max)?;
    let mut outputs = Outputs::default();
    outputs.add(&a.out, h.to_csv());
    let summary = format!(
        "{}family={}\nn_bar={}\ntrials={}\nseed={}\nmean={}\nn_max={}\n",
        params_kv(&params),
        model.family(),
        model.mean(),
        h.total(),
        a.seed,
        h.mean(),
        h.n_max()
    );
    Ok(Outcome {
        outputs,
        summary,
        converged: true,
    })
}
