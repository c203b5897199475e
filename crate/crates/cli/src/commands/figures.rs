//! Synthetic datasets for the standard plots. Detector parameters are the
//! calibrated sets used throughout the tests; source means are illustrative.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sipmstat::estimation::{fit_stimulation, source_curve, FitOptions, StimulationModel, StimulationPoint};
use sipmstat::lattice::{compare_with_analytic, simulate_cascade};
use sipmstat::pulse::{calibrate_width_scale, resolution_error, PeakModel, PulseHistogram, WidthLaw};
use sipmstat::response::epsilon_from_nearest_neighbor;
use sipmstat::{DetectorParams, LatticeConfig, ModeModel, SourceFamily, SourceModel};

use super::fit::fit_histogram;
use super::mc::comparison_csv;
use super::pulses::analyse;
use super::stim::{curve_csv as stim_curve_csv, points_csv};
use super::synth::synthesize;
use crate::error::CliError;
use crate::output::{Outcome, Outputs};
use crate::FiguresArgs;

fn merge(into: &mut Outputs, summary: &mut String, prefix: &str, part: Outcome) -> bool {
    let Outcome {
        outputs,
        summary: s,
        converged,
    } = part;
    into.extend(outputs);
    for line in s.lines() {
        let _ = writeln!(summary, "{prefix}.{line}");
    }
    converged
}

/// Pulse-height spectrum: 21 peaks, geometric areas, widths calibrated to a
/// 1% resolution error at 12 photons.
fn pulses(a: &FiguresArgs, dir: &Path, out: &mut Outputs, kv: &mut String) -> Result<bool, CliError> {
    let (spacing, c, n_peaks) = (10.0, 1.0, 21);
    let scale = calibrate_width_scale(spacing, c, 25, 12, 0.01)?;
    let widths: Vec<f64> = (0..n_peaks).map(|n| scale * (n as f64 + c).sqrt()).collect();
    let areas: Vec<f64> = (0..n_peaks).map(|n| 0.9f64.powi(n as i32)).collect();
    let model = PeakModel::new(0.0, spacing, widths, areas)?;
    let edges: Vec<f64> = (0..=1200).map(|i| -15.0 + 0.2 * i as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let h = PulseHistogram::sample(&model, edges, a.trials, &mut rng)?;
    out.add(dir.join("pulses.csv"), h.to_csv());
    let mut table = String::from("n,resolution_error\n");
    for n in 0..n_peaks {
        let _ = writeln!(table, "{n},{}", resolution_error(&model, n)?.total);
    }
    out.add(dir.join("resolution_truth.csv"), table);
    let part = analyse(&h, 30, WidthLaw::PerPeak, dir)?;
    Ok(merge(out, kv, "pulse_spectrum", part))
}

/// Three thermal datasets through the three calibrated detectors, plus
/// lattice-versus-analytic crosstalk tables.
fn thermal(a: &FiguresArgs, dir: &Path, out: &mut Outputs, kv: &mut String) -> Result<bool, CliError> {
    let sets = [(6e-3, 2.4e-3, 0.280), (4.9e-3, 1.0e-3, 0.140), (4.2e-3, 2.5e-4, 0.040)];
    let model = SourceModel::Thermal { n_bar: 8.8 };
    let mut ok = true;
    for (k, &(eta, lambda, eps)) in sets.iter().enumerate() {
        let p = DetectorParams::new(eta, lambda, eps)?;
        let h = synthesize(&p, &model, a.trials, a.seed + 1 + k as u64, None)?;
        let sub = dir.join(format!("set{}", k + 1));
        out.add(sub.join("histogram.csv"), h.to_csv());
        let (part, _) = fit_histogram(&h, &p, Some(SourceFamily::Thermal), &FitOptions::default(), &sub)?;
        ok &= merge(out, kv, &format!("thermal.set{}", k + 1), part);
    }
    for (k, eps_nn) in [0.010, 0.038, 0.078].into_iter().enumerate() {
        let cfg = LatticeConfig {
            epsilon_nn: eps_nn,
            rng_seed: a.seed + 10 + k as u64,
            trials: a.mc_trials,
            ..Default::default()
        };
        let r = simulate_cascade(&cfg, 1)?;
        let c = compare_with_analytic(&r, 1, epsilon_from_nearest_neighbor(eps_nn))?;
        out.add(dir.join(format!("mc_{eps_nn}.csv")), comparison_csv(&c));
        let _ = writeln!(kv, "thermal.mc_{eps_nn}.total_variation={}", c.total_variation);
    }
    Ok(ok)
}

/// Sources from one mode to Poissonian, each with model selection and the
/// close-up curves at s = 1, 1.4, 5.5 and the Poisson limit.
fn modes(a: &FiguresArgs, dir: &Path, out: &mut Outputs, kv: &mut String) -> Result<bool, CliError> {
    let sets: [(&str, f64, f64, f64, f64, Option<f64>); 4] = [
        ("single", 0.013, 1.95e-3, 0.26, 110.0, Some(1.0)),
        ("s1.4", 0.019, 2.1e-3, 0.23, 80.0, Some(1.4)),
        ("s5.5", 0.013, 1.69e-3, 0.27, 110.0, Some(5.5)),
        ("poisson", 0.020, 3e-3, 0.22, 80.0, None),
    ];
    let mut ok = true;
    for (k, &(name, eta, lambda, eps, n_bar, s)) in sets.iter().enumerate() {
        let p = DetectorParams::new(eta, lambda, eps)?;
        let model = match s {
            Some(s) => SourceModel::NegativeBinomial(ModeModel::new(n_bar, s)?),
            None => SourceModel::Poisson { n_bar },
        };
        let h = synthesize(&p, &model, a.trials, a.seed + 20 + k as u64, None)?;
        let sub = dir.join(name);
        out.add(sub.join("histogram.csv"), h.to_csv());
        let (part, fitted) = fit_histogram(&h, &p, None, &FitOptions::default(), &sub)?;
        ok &= merge(out, kv, &format!("modes.{name}"), part);
        let fitted_mean = fitted.mean();
        let n_out = h.n_max();
        let mut columns = Vec::new();
        for s in [1.0, 1.4, 5.5] {
            let m = SourceModel::NegativeBinomial(ModeModel::new(fitted_mean, s)?);
            columns.push(source_curve(&p, &m, n_out)?);
        }
        columns.push(source_curve(&p, &SourceModel::Poisson { n_bar: fitted_mean }, n_out)?);
        let total = h.total() as f64;
        let mut csv = String::from("n,observed,s1,s1.4,s5.5,poisson\n");
        for n in 0..=n_out {
            let _ = write!(csv, "{n},{}", h.get(n) as f64 / total);
            for c in &columns {
                let _ = write!(csv, ",{}", c[n]);
            }
            csv.push('\n');
        }
        out.add(sub.join("closeup.csv"), csv);
    }
    Ok(ok)
}

/// Stimulation curves with 5% multiplicative noise.
fn stimulation(a: &FiguresArgs, dir: &Path, out: &mut Outputs, kv: &mut String) -> Result<bool, CliError> {
    let sets = [(1.1, 0.08), (1.4, 0.10), (6.3, 0.08), (23.0, 0.06)];
    let noise = Normal::new(0.0, 0.05).expect("valid normal");
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed + 30);
    let mut ok = true;
    for &(s, alpha) in &sets {
        let truth = StimulationModel::new(s, alpha)?;
        let points: Vec<StimulationPoint> = (1..=20)
            .map(|k| {
                let i = 25.0 * k as f64;
                let m = truth.mean(i);
                StimulationPoint {
                    intensity: i,
                    n_bar: m * (1.0 + noise.sample(&mut rng)),
                    err: 0.05 * m,
                }
            })
            .collect();
        let fit = fit_stimulation(&points)?;
        let fitted = StimulationModel::new(fit.value("s"), fit.value("alpha"))?;
        let sub = dir.join(format!("s{s}_alpha{alpha}"));
        out.add(sub.join("points.csv"), points_csv(&points));
        out.add(sub.join("curve.csv"), stim_curve_csv(&fitted, 500.0, 200));
        out.add(sub.join("fit.txt"), fit.to_key_value());
        for line in fit.to_key_value().lines() {
            let _ = writeln!(kv, "stimulation.s{s}_alpha{alpha}.{line}");
        }
        ok &= fit.converged;
    }
    Ok(ok)
}

pub fn run(a: &FiguresArgs) -> Result<Outcome, CliError> {
    if a.trials == 0 || a.mc_trials == 0 {
        return Err(CliError::validation("--trials and --mc-trials must be >= 1"));
    }
    let mut outputs = Outputs::default();
    let mut kv = format!("seed={}\ntrials={}\nmc_trials={}\n", a.seed, a.trials, a.mc_trials);
    let mut ok = pulses(a, &a.out.join("pulse_spectrum"), &mut outputs, &mut kv)?;
    ok &= thermal(a, &a.out.join("thermal"), &mut outputs, &mut kv)?;
    ok &= modes(a, &a.out.join("modes"), &mut outputs, &mut kv)?;
    ok &= stimulation(a, &a.out.join("stimulation"), &mut outputs, &mut kv)?;
    outputs.add(a.out.join("summary.txt"), kv.clone());
    Ok(Outcome {
        outputs,
        summary: kv,
        converged: ok,
    })
}
