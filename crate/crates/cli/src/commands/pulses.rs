use std::fmt::Write as _;

use serde_json::json;
use sipmstat::pulse::{extract_counts, fit_peaks_with, resolution_error, PeakFit, PulseHistogram, WidthLaw};

use crate::error::CliError;
use crate::output::{json as to_json, read_input, Outcome, Outputs};
use crate::{PulsesArgs, WidthLawArg};

/// `k,center,width,area,resolution_error` rows.
pub fn peaks_csv(fit: &PeakFit) -> Result<String, CliError> {
    let m = &fit.model;
    let mut out = String::from("k,center,width,area,resolution_error\n");
    for k in 0..m.n_peaks() {
        let e = resolution_error(m, k)?;
        let _ = writeln!(out, "{k},{},{},{},{}", m.center(k), m.widths[k], m.areas[k], e.total);
    }
    Ok(out)
}

pub fn analyse(h: &PulseHistogram, max_peaks: usize, law: WidthLaw, dir: &std::path::Path) -> Result<Outcome, CliError> {
    let fit = fit_peaks_with(h, max_peaks, law)?;
    let counts = extract_counts(&fit.model)?;
    let mut kv = format!(
        "n_peaks={}\noffset={}\nspacing={}\nchi2={}\nbins={}\nconverged={}\nflags={}\n",
        fit.model.n_peaks(),
        fit.model.offset,
        fit.model.spacing,
        fit.chi2,
        fit.bins,
        fit.converged,
        fit.flags.join(",")
    );
    for k in 0..fit.model.n_peaks() {
        let _ = writeln!(kv, "resolution_error.{k}={}", resolution_error(&fit.model, k)?.total);
    }
    let mut outputs = Outputs::default();
    outputs.add(dir.join("counts.csv"), counts.to_csv());
    outputs.add(dir.join("peaks.csv"), peaks_csv(&fit)?);
    outputs.add(dir.join("peaks.json"), to_json(&json!({ "fit": fit })));
    Ok(Outcome {
        outputs,
        summary: kv,
        converged: fit.converged,
    })
}

pub fn run(a: &PulsesArgs) -> Result<Outcome, CliError> {
    let h = PulseHistogram::from_csv(&read_input(&a.input)?)?;
    let law = match a.width_law {
        WidthLawArg::PerPeak => WidthLaw::PerPeak,
        WidthLawArg::Parametric => WidthLaw::Parametric,
    };
    analyse(&h, a.max_peaks, law, &a.out)
}
