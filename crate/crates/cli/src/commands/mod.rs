pub mod calibrate;
pub mod figures;
pub mod fit;
pub mod invert;
pub mod mc;
pub mod pulses;
pub mod stim;
pub mod synth;

use std::fmt::Write as _;

use sipmstat::{DetectorParams, SourceFamily};

use crate::error::CliError;
use crate::output::read_input;
use crate::{DetectorArgs, FamilyArg};

impl From<FamilyArg> for SourceFamily {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Thermal => SourceFamily::Thermal,
            FamilyArg::Negbinom => SourceFamily::NegativeBinomial,
            FamilyArg::Poisson => SourceFamily::Poisson,
        }
    }
}

/// Merges the `--params` file (if any) with explicit flags. A missing or
/// unreadable params file is a validation error: the run cannot be set up.
pub fn detector(args: &DetectorArgs) -> Result<DetectorParams, CliError> {
    let (mut eta, mut lambda_dk, mut epsilon) = (None, None, None);
    if let Some(path) = &args.params {
        let text = read_input(path).map_err(|e| CliError::validation(format!("params file: {e}")))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::validation(format!(
                    "{}:{}: expected key=value",
                    path.display(),
                    i + 1
                )));
            };
            let slot = match key.trim() {
                "eta" => &mut eta,
                "lambda_dk" => &mut lambda_dk,
                "epsilon" => &mut epsilon,
                _ => continue,
            };
            let v: f64 = value.trim().parse().map_err(|_| {
                CliError::validation(format!("{}:{}: bad number '{}'", path.display(), i + 1, value.trim()))
            })?;
            *slot = Some(v);
        }
    }
    let eta = args.eta.or(eta).ok_or_else(|| missing("eta"))?;
    let lambda_dk = args.lambda_dk.or(lambda_dk).ok_or_else(|| missing("lambda-dk"))?;
    let epsilon = args.epsilon.or(epsilon).ok_or_else(|| missing("epsilon"))?;
    Ok(DetectorParams::new(eta, lambda_dk, epsilon)?)
}

fn missing(name: &str) -> CliError {
    CliError::validation(format!("detector parameter {name} not given (use --{name} or --params)"))
}

pub fn params_kv(p: &DetectorParams) -> String {
    format!("eta={}\nlambda_dk={}\nepsilon={}\n", p.eta, p.lambda_dk, p.epsilon)
}

/// `n,p` rows.
pub fn pmf_csv(values: &[f64]) -> String {
    let mut out = String::from("n,p\n");
    for (n, p) in values.iter().enumerate() {
        let _ = writeln!(out, "{n},{p}");
    }
    out
}

/// `n,observed,expected` rows for overlay plots.
pub fn curve_csv(observed: &[u64], expected: &[f64]) -> String {
    let total: u64 = observed.iter().sum();
    let mut out = String::from("n,observed,expected\n");
    for (n, e) in expected.iter().enumerate() {
        let o = observed.get(n).copied().unwrap_or(0) as f64 / total as f64;
        let _ = writeln!(out, "{n},{o},{e}");
    }
    out
}
