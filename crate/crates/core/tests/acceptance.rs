//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line
//! (visible with `--nocapture`) and then asserts.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sipmstat::distributions::{negative_binomial_pmf, poisson_pmf, thermal_pmf};
use sipmstat::estimation::{
    fit_source, fit_stimulation, model_selection, source_curve, FitOptions, Normalization, StimulationModel,
    StimulationPoint,
};
use sipmstat::lattice::{compare_with_analytic, simulate_cascade};
use sipmstat::pulse::{calibrate_width_scale, fit_peaks, resolution_error, PeakModel, PulseHistogram};
use sipmstat::response::{
    apply, compose, crosstalk_matrix, dark_matrix, epsilon_from_nearest_neighbor, loss_matrix, ResponseMatrix,
};
use sipmstat::{CountHistogram, DetectorParams, LatticeConfig, ModeModel, SourceFamily, SourceModel};

fn report(name: &str, pass: bool, detail: String) {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

fn within(start: Instant, budget: Duration) -> (bool, String) {
    let t = start.elapsed();
    (t <= budget, format!("{:.1}s of {}s", t.as_secs_f64(), budget.as_secs()))
}

fn lattice_agreement(eps_nn: f64) {
    let start = Instant::now();
    let cfg = LatticeConfig {
        epsilon_nn: eps_nn,
        rng_seed: 2024,
        trials: 1_000_000,
        ..Default::default()
    };
    let mc = simulate_cascade(&cfg, 1).unwrap();
    let c = compare_with_analytic(&mc, 1, epsilon_from_nearest_neighbor(eps_nn)).unwrap();
    let (fast, time) = within(start, Duration::from_secs(60));
    report(
        &format!("lattice matches branching model at eps_nn={eps_nn}"),
        c.total_variation <= 0.02 && fast,
        format!("TV {:.4} (limit 0.02, noise {:.4}), {time}", c.total_variation, c.noise_scale),
    );
}

#[test]
fn lattice_agreement_weak() {
    lattice_agreement(0.010);
}

#[test]
fn lattice_agreement_medium() {
    lattice_agreement(0.038);
}

#[test]
fn lattice_agreement_strong() {
    lattice_agreement(0.078);
}

#[test]
fn nearest_neighbour_conversion() {
    let eps = epsilon_from_nearest_neighbor(0.078);
    let exact = 1.0 - 0.922f64.powi(4);
    report(
        "nearest-neighbour conversion",
        (eps - 0.2772).abs() <= 0.0002 && (eps - 0.280).abs() <= 0.005 && (eps - exact).abs() < 1e-15,
        format!("eps {eps:.6}"),
    );
}

#[test]
fn independent_detectors_agree_on_the_mean() {
    let start = Instant::now();
    let sets = [(6e-3, 2.4e-3, 0.280), (4.9e-3, 1.0e-3, 0.140), (4.2e-3, 2.5e-4, 0.040)];
    let source = SourceModel::Thermal { n_bar: 8.8 };
    let fits: Vec<(f64, f64)> = sets
        .iter()
        .enumerate()
        .map(|(k, &(eta, lambda, eps))| {
            let p = DetectorParams::new(eta, lambda, eps).unwrap();
            let q = source_curve(&p, &source, 40).unwrap();
            let h = CountHistogram::sample(&q, 10_000_000, &mut ChaCha8Rng::seed_from_u64(300 + k as u64))
                .unwrap()
                .trimmed();
            let f = fit_source(&h, &p, SourceFamily::Thermal, &FitOptions::default()).unwrap();
            assert!(f.converged);
            (f.value("n_bar"), f.stderr("n_bar"))
        })
        .collect();
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        for j in i + 1..3 {
            let z = (fits[i].0 - fits[j].0).abs() / (fits[i].1.powi(2) + fits[j].1.powi(2)).sqrt();
            worst = worst.max(z);
        }
    }
    let (fast, time) = within(start, Duration::from_secs(300));
    let shown: Vec<String> = fits.iter().map(|(v, e)| format!("{v:.3}±{e:.3}")).collect();
    report(
        "three detectors give consistent means",
        worst <= 2.0 && fast,
        format!("{} worst pair {worst:.2} sigma, {time}", shown.join(" ")),
    );
}

#[test]
fn crosstalk_hand_expansion() {
    let mut worst: f64 = 0.0;
    for eps in [0.0, 0.01, 0.14, 0.28, 0.6] {
        let m = crosstalk_matrix(eps, 3).unwrap();
        let q = 1.0 - eps;
        let checks = [
            (1, 1, q),
            (2, 1, eps * q),
            (3, 1, eps * eps * q),
            (2, 2, q * q),
            (3, 2, 2.0 * eps * q * q),
        ];
        for (n, k, want) in checks {
            worst = worst.max((m.get(n, k) - want).abs());
        }
    }
    report("crosstalk hand expansion", worst <= 1e-12, format!("max deviation {worst:.1e}"));
}

fn worst_column_error(m: &ResponseMatrix) -> f64 {
    m.column_sums().iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max)
}

#[test]
fn all_matrices_are_column_stochastic() {
    let n_max = 40;
    let mut worst: f64 = 0.0;
    for eta in [0.0, 0.013, 0.5, 1.0] {
        worst = worst.max(worst_column_error(&loss_matrix(eta, n_max).unwrap()));
    }
    for lambda in [0.0, 2.4e-3, 0.1] {
        worst = worst.max(worst_column_error(&dark_matrix(lambda, n_max).unwrap()));
    }
    for eps in [0.0, 0.04, 0.14, 0.28] {
        worst = worst.max(worst_column_error(&crosstalk_matrix(eps, n_max).unwrap()));
    }
    for eta in [0.0, 0.013, 0.5, 1.0] {
        for lambda in [0.0, 2.4e-3, 0.1] {
            for eps in [0.0, 0.04, 0.14, 0.28] {
                let p = DetectorParams::new(eta, lambda, eps).unwrap();
                worst = worst.max(worst_column_error(&compose(&p, n_max).unwrap()));
            }
        }
    }
    report("column stochasticity", worst <= 1e-9, format!("max column error {worst:.1e}"));
}

#[test]
fn thinning_and_amplification() {
    let n_max = 600;
    let mut worst: f64 = 0.0;
    for n_bar in [0.5, 3.0, 12.0] {
        for eta in [0.013, 0.3, 0.9] {
            let loss = loss_matrix(eta, n_max).unwrap();
            let pairs = [
                (poisson_pmf(n_bar, n_max).unwrap(), poisson_pmf(eta * n_bar, n_max).unwrap()),
                (thermal_pmf(n_bar, n_max).unwrap(), thermal_pmf(eta * n_bar, n_max).unwrap()),
            ];
            for (input, want) in pairs {
                let got = apply(&loss, &input).unwrap();
                for n in 0..=n_max {
                    worst = worst.max((got.get(n) - want.get(n)).abs());
                }
            }
        }
    }
    let mut worst_mean: f64 = 0.0;
    for eps in [0.01, 0.1, 0.2, 0.3] {
        let input = poisson_pmf(4.0, 40).unwrap();
        let m = crosstalk_matrix(eps, 40).unwrap();
        let out = apply(&m, &input).unwrap();
        worst_mean = worst_mean.max((out.mean() - input.mean() / (1.0 - eps)).abs());
    }
    report(
        "thinning and crosstalk amplification",
        worst <= 1e-9 && worst_mean <= 1e-6,
        format!("thinning {worst:.1e}, mean {worst_mean:.1e}"),
    );
}

/// Number distribution of `s` independent thermal modes, by summing over
/// every way of splitting `n` photons between them.
fn modes_by_partition(n_bar: f64, s: usize, n_max: usize) -> Vec<f64> {
    let per_mode = thermal_pmf(n_bar / s as f64, n_max).unwrap().into_vec();
    fn split(left: usize, modes: usize, per_mode: &[f64]) -> f64 {
        if modes == 1 {
            return per_mode[left];
        }
        (0..=left).map(|k| per_mode[k] * split(left - k, modes - 1, per_mode)).sum()
    }
    (0..=n_max).map(|n| split(n, s, &per_mode)).collect()
}

#[test]
fn negative_binomial_structure() {
    let n_max = 6;
    let mut single: f64 = 0.0;
    for n_bar in [0.1, 1.0, 8.8, 110.0] {
        let a = negative_binomial_pmf(ModeModel::new(n_bar, 1.0).unwrap(), 60).unwrap();
        let b = thermal_pmf(n_bar, 60).unwrap();
        for n in 0..=60 {
            single = single.max((a.get(n) - b.get(n)).abs());
        }
    }
    let wide = SourceModel::NegativeBinomial(ModeModel::new(2.0, 1e4).unwrap()).pmf_adaptive().unwrap();
    let tv = wide.total_variation(&SourceModel::Poisson { n_bar: 2.0 }.pmf_adaptive().unwrap());
    let mut partition: f64 = 0.0;
    for s in 1..=3 {
        for n_bar in [0.3, 2.0, 7.5] {
            let nb = negative_binomial_pmf(ModeModel::new(n_bar, s as f64).unwrap(), n_max).unwrap();
            for (n, want) in modes_by_partition(n_bar, s, n_max).into_iter().enumerate() {
                partition = partition.max((nb.get(n) - want).abs());
            }
        }
    }
    report(
        "negative binomial structure",
        single <= 1e-12 && tv <= 1e-3 && partition <= 1e-10,
        format!("s=1 {single:.1e}, Poisson TV {tv:.1e}, partition {partition:.1e}"),
    );
}

/// Data with the close-up parameters of the five-mode source: the full
/// histogram must exclude a single mode at two sigma while the first five
/// bins alone must not.
#[test]
fn few_photon_bins_cannot_count_modes() {
    let start = Instant::now();
    let p = DetectorParams::new(0.013, 1.69e-3, 0.27).unwrap();
    let source = SourceModel::NegativeBinomial(ModeModel::new(MODE_TEST_N_BAR, 5.5).unwrap());
    let q = source_curve(&p, &source, 80).unwrap();
    let h = CountHistogram::sample(&q, MODE_TEST_TRIALS, &mut ChaCha8Rng::seed_from_u64(MODE_TEST_SEED))
        .unwrap()
        .trimmed();
    let full = model_selection(&h, &p, &FitOptions::default()).unwrap();
    let opts = FitOptions {
        normalization: Normalization::MeasuredRange,
        ..Default::default()
    };
    let low = model_selection(&h.truncated(4).unwrap(), &p, &opts).unwrap();
    let (fast, time) = within(start, Duration::from_secs(300));
    report(
        "few-photon bins cannot count modes",
        full.excludes_single_mode && !low.excludes_single_mode && low.s_interval.0 <= 1.0 && fast,
        format!(
            "max count {}, full s {:.2}±{:.2}, n<=4 s {:.2}±{:.2} interval [{:.2}, {:.2}], {time}",
            h.max_observed(),
            full.s,
            full.s_stderr,
            low.s,
            low.s_stderr,
            low.s_interval.0,
            low.s_interval.1
        ),
    );
}

const MODE_TEST_N_BAR: f64 = 150.0;
const MODE_TEST_TRIALS: u64 = 1_000;
const MODE_TEST_SEED: u64 = 0;

fn stimulation_points(truth: &StimulationModel, noise: Option<(&Normal<f64>, &mut ChaCha8Rng)>) -> Vec<StimulationPoint> {
    let mut noise = noise;
    (1..=20)
        .map(|k| {
            let i = 25.0 * k as f64;
            let m = truth.mean(i);
            let factor = match noise.as_mut() {
                Some((d, rng)) => 1.0 + d.sample(*rng),
                None => 1.0,
            };
            StimulationPoint {
                intensity: i,
                n_bar: m * factor,
                err: 0.05 * m,
            }
        })
        .collect()
}

#[test]
fn stimulation_fits() {
    let start = Instant::now();
    // (s, alpha, half-width of the quoted band on s)
    let sets = [(1.1, 0.08, 0.7), (1.4, 0.10, 0.5), (6.3, 0.08, 0.9), (23.0, 0.06, 8.0)];
    let mut exact: f64 = 0.0;
    let mut shares = Vec::new();
    let noise = Normal::new(0.0, 0.05).unwrap();
    for (k, &(s, alpha, band)) in sets.iter().enumerate() {
        let truth = StimulationModel::new(s, alpha).unwrap();
        let f = fit_stimulation(&stimulation_points(&truth, None)).unwrap();
        exact = exact.max((f.value("s") - s).abs()).max((f.value("alpha") - alpha).abs());

        let mut rng = ChaCha8Rng::seed_from_u64(900 + k as u64);
        let inside = (0..100)
            .filter(|_| {
                let f = fit_stimulation(&stimulation_points(&truth, Some((&noise, &mut rng)))).unwrap();
                (f.value("s") - s).abs() <= band
            })
            .count();
        shares.push(inside);
    }
    let (fast, time) = within(start, Duration::from_secs(120));
    report(
        "stimulation fits",
        exact <= 1e-6 && shares.iter().all(|&n| n >= 90) && fast,
        format!("noiseless {exact:.1e}, in band {shares:?} of 100, {time}"),
    );
}

#[test]
fn pulse_pipeline() {
    let start = Instant::now();
    let (spacing, c) = (10.0, 1.0);
    let scale = calibrate_width_scale(spacing, c, 25, 12, 0.01).unwrap();
    let width = |n: usize| scale * (n as f64 + c).sqrt();

    let law = PeakModel::new(0.0, spacing, (0..25).map(width).collect(), vec![1.0; 25]).unwrap();
    let below: f64 = (0..12).map(|n| resolution_error(&law, n).unwrap().total).fold(0.0, f64::max);
    let at_20 = resolution_error(&law, 20).unwrap().total;

    let truth = PeakModel::new(
        0.0,
        spacing,
        (0..21).map(width).collect(),
        (0..21).map(|n| 0.9f64.powi(n)).collect(),
    )
    .unwrap();
    let edges: Vec<f64> = (0..=1200).map(|i| -15.0 + 0.2 * i as f64).collect();
    let h = PulseHistogram::sample(&truth, edges, 1_000_000, &mut ChaCha8Rng::seed_from_u64(21)).unwrap();
    let fit = fit_peaks(&h, 30).unwrap();
    let scale_areas = h.total() as f64 / truth.total_area();
    let worst = if fit.model.n_peaks() == 21 {
        (0..21)
            .map(|n| (fit.model.areas[n] / (truth.areas[n] * scale_areas) - 1.0).abs())
            .fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    let (fast, time) = within(start, Duration::from_secs(60));
    report(
        "pulse pipeline",
        worst <= 0.05 && below < 0.01 && (0.05..=0.20).contains(&at_20) && fast,
        format!(
            "{} peaks, worst area {worst:.4}, resolution max n<12 {below:.4}, n=20 {at_20:.4}, {time}",
            fit.model.n_peaks()
        ),
    );
}

#[test]
fn small_lattice_breaks_the_branching_model() {
    let start = Instant::now();
    let cfg = LatticeConfig {
        rows: 2,
        cols: 2,
        epsilon_nn: 0.5,
        rng_seed: 5,
        trials: 1_000_000,
        periodic: false,
    };
    let mc = simulate_cascade(&cfg, 1).unwrap();
    let c = compare_with_analytic(&mc, 1, epsilon_from_nearest_neighbor(0.5)).unwrap();
    let (fast, time) = within(start, Duration::from_secs(30));
    report(
        "small lattice breaks the branching model",
        c.total_variation > 5.0 * c.noise_scale && fast,
        format!("TV {:.4} against 5 x noise {:.4}, {time}", c.total_variation, 5.0 * c.noise_scale),
    );
}
