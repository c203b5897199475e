use std::fmt::Write as _;

use serde_json::json;
use sipmstat::estimation::{fit_stimulation, StimulationModel, StimulationPoint};

use crate::error::CliError;
use crate::output::{json as to_json, read_input, Outcome, Outputs};
use crate::StimArgs;

/// Parses `intensity,n_bar,err` rows.
pub fn parse_points(text: &str) -> Result<Vec<StimulationPoint>, CliError> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (i == 0 && line.starts_with(|c: char| c.is_alphabetic())) {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let [intensity, n_bar, err] = cols[..] else {
            return Err(CliError::validation(format!("line {}: expected `intensity,n_bar,err`", i + 1)));
        };
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| CliError::validation(format!("line {}: bad number '{s}'", i + 1)))
        };
        points.push(StimulationPoint {
            intensity: num(intensity)?,
            n_bar: num(n_bar)?,
            err: num(err)?,
        });
    }
    Ok(points)
}

pub fn points_csv(points: &[StimulationPoint]) -> String {
    let mut out = String::from("intensity,n_bar,err\n");
    for p in points {
        let _ = writeln!(out, "{},{},{}", p.intensity, p.n_bar, p.err);
    }
    out
}

/// `samples` points of the curve from zero to the largest intensity.
pub fn curve_csv(model: &StimulationModel, i_max: f64, samples: usize) -> String {
    let mut out = String::from("intensity,n_bar\n");
    let steps = samples.max(2) - 1;
    for k in 0..=steps {
        let i = i_max * k as f64 / steps as f64;
        let _ = writeln!(out, "{i},{}", model.mean(i));
    }
    out
}

pub fn run(a: &StimArgs) -> Result<Outcome, CliError> {
    let points = parse_points(&read_input(&a.input)?)?;
    let fit = fit_stimulation(&points)?;
    let model = StimulationModel::new(fit.value("s"), fit.value("alpha"))?;
    let i_max = points.iter().map(|p| p.intensity).fold(0.0, f64::max);
    let kv = fit.to_key_value();
    let mut outputs = Outputs::default();
    outputs.add(a.out.join("fit.txt"), kv.clone());
    outputs.add(a.out.join("fit.json"), to_json(&json!({ "fit": fit, "points": points })));
    outputs.add(a.out.join("curve.csv"), curve_csv(&model, i_max, a.samples));
    Ok(Outcome {
        outputs,
        summary: kv,
        converged: fit.converged,
    })
}
