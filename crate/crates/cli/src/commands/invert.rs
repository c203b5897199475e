use std::fmt::Write as _;

use serde_json::json;
use sipmstat::response::{compose_shaped, invert_reconstruct};
use sipmstat::CountHistogram;

use super::{detector, pmf_csv};
use crate::error::CliError;
use crate::output::{json as to_json, read_input, Outcome, Outputs};
use crate::InvertArgs;

pub fn run(a: &InvertArgs) -> Result<Outcome, CliError> {
    let params = detector(&a.detector)?;
    let h = CountHistogram::from_csv(&read_input(&a.input)?)?;
    let n = a.n_max.unwrap_or(h.n_max());
    let mut p = h.empirical().into_vec();
    p.resize(n + 1, 0.0);
    if h.counts().iter().skip(n + 1).any(|&c| c > 0) {
        return Err(CliError::validation(format!("histogram has counts above --n-max {n}")));
    }
    let m = compose_shaped(&params, n, n)?;
    let r = invert_reconstruct(&m, &p)?;
    let mut kv = format!("n_max={n}\ncondition={}\nhas_negative={}\n", r.condition, r.has_negative());
    let _ = writeln!(kv, "total={}", r.values.iter().sum::<f64>());
    let mut outputs = Outputs::default();
    outputs.add(a.out.join("reconstruction.csv"), pmf_csv(&r.values));
    outputs.add(a.out.join("reconstruction.json"), to_json(&json!({ "detector": params, "reconstruction": r })));
    Ok(Outcome {
        outputs,
        summary: kv,
        converged: true,
    })
}
