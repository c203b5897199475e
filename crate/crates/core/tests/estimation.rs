use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sipmstat::estimation::{fit_source, source_curve, FitOptions, FitResult};
use sipmstat::{CountHistogram, DetectorParams, SourceFamily, SourceModel};

fn detector() -> DetectorParams {
    DetectorParams::new(0.3, 0.01, 0.1).unwrap()
}

fn thermal_fit(n_bar: f64, trials: u64, seed: u64) -> FitResult {
    let p = detector();
    let q = source_curve(&p, &SourceModel::Thermal { n_bar }, 60).unwrap();
    let h = CountHistogram::sample(&q, trials, &mut ChaCha8Rng::seed_from_u64(seed))
        .unwrap()
        .trimmed();
    fit_source(&h, &p, SourceFamily::Thermal, &FitOptions::default()).unwrap()
}

/// Kolmogorov–Smirnov distance of a sample from Uniform(0, 1).
fn ks_uniform(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| f64::max(x - i as f64 / n, (i + 1) as f64 / n - x))
        .fold(0.0, f64::max)
}

#[test]
fn correct_model_gives_uniform_p_values_and_honest_errors() {
    let fits: Vec<FitResult> = (0..200u64).into_par_iter().map(|seed| thermal_fit(5.0, 20_000, seed)).collect();
    assert!(fits.iter().all(|f| f.converged));

    let p_values: Vec<f64> = fits.iter().map(|f| f.gof.as_ref().unwrap().p_value).collect();
    let d = ks_uniform(p_values);
    // asymptotic critical value at level 0.01
    assert!(d < 1.628 / 200f64.sqrt(), "KS distance {d}");

    let values: Vec<f64> = fits.iter().map(|f| f.value("n_bar")).collect();
    let mean = values.iter().sum::<f64>() / 200.0;
    let spread = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 199.0).sqrt();
    let reported = fits.iter().map(|f| f.stderr("n_bar")).sum::<f64>() / 200.0;
    assert!((spread / reported - 1.0).abs() < 0.15, "spread {spread} vs reported {reported}");
    assert!((mean - 5.0).abs() < 3.0 * spread / 200f64.sqrt());
}

#[test]
fn errors_shrink_as_inverse_root_of_trials() {
    let scaled: Vec<f64> = [10_000u64, 100_000, 1_000_000, 10_000_000]
        .iter()
        .map(|&n| {
            let f = thermal_fit(5.0, n, 7);
            assert!((f.value("n_bar") - 5.0).abs() < 4.0 * f.stderr("n_bar"));
            f.stderr("n_bar") * (n as f64).sqrt()
        })
        .collect();
    for s in &scaled {
        assert!((s / scaled[3] - 1.0).abs() < 0.1, "{scaled:?}");
    }
}

#[test]
fn wrong_family_is_rejected_by_goodness_of_fit() {
    let p = detector();
    let q = source_curve(&p, &SourceModel::Thermal { n_bar: 5.0 }, 60).unwrap();
    let h = CountHistogram::sample(&q, 100_000, &mut ChaCha8Rng::seed_from_u64(3))
        .unwrap()
        .trimmed();
    let right = fit_source(&h, &p, SourceFamily::Thermal, &FitOptions::default()).unwrap();
    let wrong = fit_source(&h, &p, SourceFamily::Poisson, &FitOptions::default()).unwrap();
    assert!(right.gof.unwrap().p_value > 1e-3);
    assert!(wrong.gof.unwrap().p_value < 1e-10);
    assert!(wrong.log_likelihood < right.log_likelihood - 100.0);
}
