use std::fmt::Write as _;

use serde_json::json;
use sipmstat::estimation::{fit_dark_calibration, heralded_efficiency};
use sipmstat::CountHistogram;

use crate::error::CliError;
use crate::output::{json as to_json, read_input, Outcome, Outputs};
use crate::CalibrateArgs;

pub fn run(a: &CalibrateArgs) -> Result<Outcome, CliError> {
    let h = CountHistogram::from_csv(&read_input(&a.input)?)?;
    let herald = match (a.coincidences, a.singles) {
        (Some(c), Some(s)) => Some(heralded_efficiency(c, s)?),
        _ => None,
    };
    let fit = fit_dark_calibration(&h, a.n_max.unwrap_or(h.n_max()))?;

    let mut kv = String::new();
    if let Some(e) = herald {
        let _ = writeln!(kv, "eta={}\neta.stderr={}", e.value, e.stderr);
    }
    kv.push_str(&fit.to_key_value());
    let mut outputs = Outputs::default();
    outputs.add(a.out.join("calibration.txt"), kv.clone());
    outputs.add(a.out.join("calibration.json"), to_json(&json!({ "dark": fit, "heralded_efficiency": herald })));
    Ok(Outcome {
        outputs,
        summary: kv,
        converged: fit.converged,
    })
}
