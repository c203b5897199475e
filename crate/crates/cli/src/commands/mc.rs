use std::fmt::Write as _;

use serde_json::json;
use sipmstat::lattice::{compare_with_analytic, simulate_cascade, simulate_detection, Comparison};
use sipmstat::response::epsilon_from_nearest_neighbor;
use sipmstat::LatticeConfig;

use crate::error::CliError;
use crate::output::{json as to_json, Outcome, Outputs};
use crate::McArgs;

pub fn parse_grid(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::validation(format!("--grid expects ROWSxCOLS, got '{s}'"));
    let (r, c) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let rows: usize = r.trim().parse().map_err(|_| bad())?;
    let cols: usize = c.trim().parse().map_err(|_| bad())?;
    if rows == 0 || cols == 0 {
        return Err(bad());
    }
    Ok((rows, cols))
}

/// `n,mc,analytic,difference` rows.
pub fn comparison_csv(c: &Comparison) -> String {
    let mut out = String::from("n,mc,analytic,difference\n");
    for (n, (m, a)) in c.mc.iter().zip(&c.analytic).enumerate() {
        let _ = writeln!(out, "{n},{m},{a},{}", m - a);
    }
    out
}

pub fn run(a: &McArgs) -> Result<Outcome, CliError> {
    let (rows, cols) = parse_grid(&a.grid)?;
    let cfg = LatticeConfig {
        rows,
        cols,
        epsilon_nn: a.epsilon_nn,
        rng_seed: a.seed,
        trials: a.trials,
        periodic: a.periodic,
    };
    let result = match a.photons {
        Some(photons) => simulate_detection(&cfg, photons, a.eta, a.lambda_dk)?,
        None => simulate_cascade(&cfg, a.fired)?,
    };
    let mut kv = format!(
        "grid={rows}x{cols}\nperiodic={}\nepsilon_nn={}\ntrials={}\nseed={}\nmean={}\n",
        a.periodic,
        a.epsilon_nn,
        result.trials,
        result.seed,
        result.counts.mean()
    );
    let mut outputs = Outputs::default();
    outputs.add(a.out.join("mc.csv"), result.counts.to_csv());
    let comparison = if a.compare {
        let eps = epsilon_from_nearest_neighbor(a.epsilon_nn);
        let c = compare_with_analytic(&result, a.fired, eps)?;
        let _ = writeln!(kv, "epsilon={eps}\ntotal_variation={}\nnoise_scale={}", c.total_variation, c.noise_scale);
        outputs.add(a.out.join("comparison.csv"), comparison_csv(&c));
        Some(c)
    } else {
        None
    };
    outputs.add(a.out.join("mc.json"), to_json(&json!({ "config": cfg, "result": result, "comparison": comparison })));
    Ok(Outcome {
        outputs,
        summary: kv,
        converged: true,
    })
}
