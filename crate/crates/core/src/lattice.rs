//! Monte Carlo of crosstalk cascades on a finite square lattice of detector
//! elements.
//!
//! The simulation is geometry-aware and shares no code with the analytic
//! crosstalk recursion in [`crate::response`], which makes it usable as an
//! independent check of that model ([`compare_with_analytic`]). Every newly
//! fired element tries each of its nearest neighbours once with probability
//! `epsilon_nn`; tries on elements that already fired are wasted. Edge
//! elements have fewer than four neighbours unless the lattice is
//! `periodic`. A trial ends when a stage fires nothing.
//!
//! Trials are grouped in fixed-size blocks, and each block draws from its own
//! ChaCha8 stream selected by block index, so results are identical for any
//! number of worker threads.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histogram::CountHistogram;
use crate::response::crosstalk_matrix;

const BLOCK: u64 = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeConfig {
    pub rows: usize,
    pub cols: usize,
    /// Probability of triggering one particular neighbour.
    pub epsilon_nn: f64,
    pub rng_seed: u64,
    pub trials: u64,
    /// Wrap neighbours around the lattice edges (torus). Off by default: a
    /// real detector has edges, and edge elements have fewer neighbours.
    #[serde(default)]
    pub periodic: bool,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        Self {
            rows: 10,
            cols: 10,
            epsilon_nn: 0.0,
            rng_seed: 0,
            trials: 100_000,
            periodic: false,
        }
    }
}

impl LatticeConfig {
    pub fn elements(&self) -> usize {
        self.rows * self.cols
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::domain("lattice needs at least one element"));
        }
        if !(0.0..1.0).contains(&self.epsilon_nn) {
            return Err(Error::domain(format!(
                "epsilon_nn must be in [0, 1), got {}",
                self.epsilon_nn
            )));
        }
        if self.trials == 0 {
            return Err(Error::domain("trials must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    /// Distribution of the total number of fired elements.
    pub counts: CountHistogram,
    pub trials: u64,
    pub seed: u64,
}

/// Reusable per-worker lattice state. `stamp[i] == generation` marks element
/// `i` as fired in the current trial, so nothing is cleared between trials.
struct Lattice {
    rows: usize,
    cols: usize,
    epsilon_nn: f64,
    periodic: bool,
    stamp: Vec<u32>,
    generation: u32,
    frontier: Vec<usize>,
    next: Vec<usize>,
}

impl Lattice {
    fn new(cfg: &LatticeConfig) -> Self {
        Self {
            rows: cfg.rows,
            cols: cfg.cols,
            epsilon_nn: cfg.epsilon_nn,
            periodic: cfg.periodic,
            stamp: vec![0; cfg.elements()],
            generation: 0,
            frontier: Vec::new(),
            next: Vec::new(),
        }
    }

    fn begin(&mut self) {
        self.generation += 1;
        self.frontier.clear();
    }

    /// Fires `i` as part of the initial stage; repeated hits merge.
    fn seed(&mut self, i: usize) {
        if self.stamp[i] != self.generation {
            self.stamp[i] = self.generation;
            self.frontier.push(i);
        }
    }

    fn cascade<R: Rng>(&mut self, rng: &mut R) -> usize {
        let mut fired = self.frontier.len();
        if self.epsilon_nn == 0.0 {
            return fired;
        }
        let (rows, cols, g) = (self.rows, self.cols, self.generation);
        while !self.frontier.is_empty() {
            self.next.clear();
            for &i in &self.frontier {
                let (r, c) = (i / cols, i % cols);
                let neighbours = if self.periodic {
                    [
                        (rows > 1).then(|| ((r + rows - 1) % rows) * cols + c),
                        (rows > 2).then(|| ((r + 1) % rows) * cols + c),
                        (cols > 1).then(|| r * cols + (c + cols - 1) % cols),
                        (cols > 2).then(|| r * cols + (c + 1) % cols),
                    ]
                } else {
                    [
                        (r > 0).then(|| i - cols),
                        (r + 1 < rows).then(|| i + cols),
                        (c > 0).then(|| i - 1),
                        (c + 1 < cols).then(|| i + 1),
                    ]
                };
                for j in neighbours.into_iter().flatten() {
                    if rng.random::<f64>() < self.epsilon_nn && self.stamp[j] != g {
                        self.stamp[j] = g;
                        self.next.push(j);
                    }
                }
            }
            fired += self.next.len();
            std::mem::swap(&mut self.frontier, &mut self.next);
        }
        fired
    }
}

fn run_blocks<F>(cfg: &LatticeConfig, trial: F) -> Result<McResult>
where
    F: Fn(&mut Lattice, &mut ChaCha8Rng) -> usize + Sync,
{
    cfg.validate()?;
    let blocks = cfg.trials.div_ceil(BLOCK);
    let hist = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
            rng.set_stream(b);
            let mut lattice = Lattice::new(cfg);
            let n = BLOCK.min(cfg.trials - b * BLOCK);
            let mut counts = vec![0u64; cfg.elements() + 1];
            for _ in 0..n {
                lattice.begin();
                counts[trial(&mut lattice, &mut rng)] += 1;
            }
            counts
        })
        .reduce(
            || vec![0u64; cfg.elements() + 1],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    let last = hist.iter().rposition(|&c| c > 0).unwrap_or(0);
    Ok(McResult {
        counts: CountHistogram::new(hist[..=last].to_vec())?,
        trials: cfg.trials,
        seed: cfg.rng_seed,
    })
}

/// Cascades started from `initial_fired` distinct, uniformly placed
/// elements.
pub fn simulate_cascade(cfg: &LatticeConfig, initial_fired: usize) -> Result<McResult> {
    cfg.validate()?;
    let n = cfg.elements();
    if initial_fired > n {
        return Err(Error::domain(format!(
            "cannot fire {initial_fired} seeds on {n} elements"
        )));
    }
    run_blocks(cfg, |lat, rng| {
        if initial_fired == 1 {
            let i = rng.random_range(0..n);
            lat.seed(i);
        } else {
            for i in index::sample(rng, n, initial_fired) {
                lat.seed(i);
            }
        }
        lat.cascade(rng)
    })
}

/// Full detection of `photons` incident photons: binomial thinning by `eta`,
/// uniform placement with replacement (coincident photons merge), Poisson
/// dark seeds, then the crosstalk cascade.
pub fn simulate_detection(cfg: &LatticeConfig, photons: u64, eta: f64, lambda_dk: f64) -> Result<McResult> {
    cfg.validate()?;
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::domain(format!("eta must be in [0, 1], got {eta}")));
    }
    if !(lambda_dk >= 0.0 && lambda_dk.is_finite()) {
        return Err(Error::domain(format!("lambda_dk must be finite and >= 0, got {lambda_dk}")));
    }
    let n = cfg.elements();
    let thin = Binomial::new(photons, eta).map_err(|e| Error::domain(e.to_string()))?;
    let dark = if lambda_dk > 0.0 {
        Some(Poisson::new(lambda_dk).map_err(|e| Error::domain(e.to_string()))?)
    } else {
        None
    };
    run_blocks(cfg, |lat, rng| {
        let detected = thin.sample(rng);
        for _ in 0..detected {
            let i = rng.random_range(0..n);
            lat.seed(i);
        }
        if let Some(d) = &dark {
            let k: f64 = d.sample(rng);
            for _ in 0..k as u64 {
                let i = rng.random_range(0..n);
                lat.seed(i);
            }
        }
        lat.cascade(rng)
    })
}

/// Monte Carlo distribution next to the analytic crosstalk column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub epsilon: f64,
    pub initial_fired: usize,
    /// Empirical probabilities, same length as `analytic`.
    pub mc: Vec<f64>,
    pub analytic: Vec<f64>,
    /// Total variation distance, counting analytic mass beyond the table.
    pub total_variation: f64,
    /// `½ Σ √(p(1-p)/N)`: the size of total variation produced by sampling
    /// noise alone when the analytic model is exact.
    pub noise_scale: f64,
}

/// Compares a cascade histogram started from `initial_fired` seeds with
/// column `initial_fired` of the analytic crosstalk matrix at `epsilon`.
pub fn compare_with_analytic(mc: &McResult, initial_fired: usize, epsilon: f64) -> Result<Comparison> {
    let column = crosstalk_matrix(epsilon, initial_fired)?.column(initial_fired);
    let len = column.len().max(mc.counts.counts().len());
    let mut analytic = column;
    analytic.resize(len, 0.0);
    let mut empirical = mc.counts.empirical().into_vec();
    empirical.resize(len, 0.0);
    let beyond = (1.0 - analytic.iter().sum::<f64>()).max(0.0);
    let total_variation = 0.5 * (empirical.iter().zip(&analytic).map(|(a, b)| (a - b).abs()).sum::<f64>() + beyond);
    let n = mc.trials as f64;
    let noise_scale = 0.5 * analytic.iter().map(|p| (p * (1.0 - p) / n).sqrt()).sum::<f64>();
    Ok(Comparison {
        epsilon,
        initial_fired,
        mc: empirical,
        analytic,
        total_variation,
        noise_scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(eps: f64, trials: u64) -> LatticeConfig {
        LatticeConfig {
            epsilon_nn: eps,
            rng_seed: 11,
            trials,
            ..Default::default()
        }
    }

    #[test]
    fn no_crosstalk_keeps_seed_count() {
        for k in [0, 1, 7] {
            let r = simulate_cascade(&cfg(0.0, 5000), k).unwrap();
            assert_eq!(r.counts.get(k), 5000);
            assert_eq!(r.counts.total(), 5000);
        }
    }

    #[test]
    fn full_lattice_saturates() {
        let r = simulate_cascade(&cfg(0.6, 2000), 100).unwrap();
        assert_eq!(r.counts.get(100), 2000);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(simulate_cascade(&cfg(0.1, 10), 101).is_err());
        assert!(simulate_cascade(&cfg(1.0, 10), 1).is_err());
        assert!(simulate_cascade(&cfg(0.1, 0), 1).is_err());
        assert!(simulate_detection(&cfg(0.1, 10), 3, 1.5, 0.0).is_err());
        assert!(simulate_detection(&cfg(0.1, 10), 3, 0.5, -1.0).is_err());
    }

    #[test]
    fn comparison_against_itself_is_tight() {
        let r = simulate_cascade(&cfg(0.0, 1000), 1).unwrap();
        let c = compare_with_analytic(&r, 1, 0.0).unwrap();
        assert!(c.total_variation < 1e-12);
        let r = simulate_cascade(&cfg(0.02, 200_000), 1).unwrap();
        let c = compare_with_analytic(&r, 1, crate::response::epsilon_from_nearest_neighbor(0.02)).unwrap();
        assert_eq!(c.mc.len(), c.analytic.len());
        assert!(c.total_variation < 0.01, "{}", c.total_variation);
        assert!(c.noise_scale > 0.0 && c.noise_scale < 0.005);
    }

    #[test]
    fn blind_detector_sees_nothing() {
        let r = simulate_detection(&cfg(0.3, 3000), 20, 0.0, 0.0).unwrap();
        assert_eq!(r.counts.counts(), &[3000]);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let c = cfg(0.078, 100_000);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let many = rayon::ThreadPoolBuilder::new().num_threads(6).build().unwrap();
        let a = one.install(|| simulate_detection(&c, 12, 0.7, 0.05).unwrap());
        let b = many.install(|| simulate_detection(&c, 12, 0.7, 0.05).unwrap());
        assert_eq!(a, b);
        let mut d = c;
        d.rng_seed = 12;
        assert_ne!(simulate_cascade(&c, 1).unwrap(), simulate_cascade(&d, 1).unwrap());
    }

    #[test]
    fn saturation_caps_mean() {
        let r = simulate_detection(&cfg(0.0, 2000), 200, 1.0, 0.0).unwrap();
        assert!(r.counts.mean() < 100.0);
        assert!(r.counts.max_observed() <= 100);
    }
}
