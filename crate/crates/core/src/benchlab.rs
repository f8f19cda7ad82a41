//! Synthetic objectives, sub-Gaussian noise, the maximum-likelihood
//! baseline, and seed sweeps.

use std::collections::BTreeMap;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{run, Objective, Observation, Policy, RunConfig, RunFailure, RunTrace};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    #[default]
    Gaussian,
    SymmetricBernoulli,
    Uniform,
}

impl NoiseFamily {
    pub fn name(self) -> &'static str {
        match self {
            NoiseFamily::Gaussian => "gaussian",
            NoiseFamily::SymmetricBernoulli => "symmetric_bernoulli",
            NoiseFamily::Uniform => "uniform",
        }
    }
}

/// A σ-sub-Gaussian noise source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    pub scale: f64,
}

impl NoiseSpec {
    pub fn new(family: NoiseFamily, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::invalid(format!("noise scale must be > 0, got {scale}")));
        }
        Ok(NoiseSpec { family, scale })
    }

    pub fn gaussian(scale: f64) -> Self {
        NoiseSpec {
            family: NoiseFamily::Gaussian,
            scale,
        }
    }

    /// One draw: `N(0, σ²)`, `±σ` with probability ½, or uniform on
    /// `[−σ√3, σ√3]`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.family {
            NoiseFamily::Gaussian => Normal::new(0.0, self.scale)
                .expect("positive scale")
                .sample(rng),
            NoiseFamily::SymmetricBernoulli => {
                if rng.random::<bool>() {
                    self.scale
                } else {
                    -self.scale
                }
            }
            NoiseFamily::Uniform => {
                let h = self.scale * 3f64.sqrt();
                rng.random_range(-h..=h)
            }
        }
    }
}

/// Two squared-exponential bumps on `[0, 1]`: a wide one of height 2 at 0.1
/// and a narrow one of height 4 at 0.9.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrapObjective {
    pub noise: NoiseSpec,
}

impl TrapObjective {
    pub const CENTERS: (f64, f64) = (0.1, 0.9);
    pub const AMPLITUDES: (f64, f64) = (2.0, 4.0);
    pub const LENGTHSCALES: (f64, f64) = (0.1, 0.01);
    pub const NOISE_STD: f64 = 0.01;
    /// Best-value threshold separating runs that found the narrow peak
    /// from runs stuck on the wide one.
    pub const SUCCESS_THRESHOLD: f64 = 3.5;

    pub fn new(noise: NoiseSpec) -> Self {
        TrapObjective { noise }
    }

    pub fn value(x: f64) -> f64 {
        let bump = |c: f64, l: f64| {
            let z = (x - c) / l;
            (-0.5 * z * z).exp()
        };
        Self::AMPLITUDES.0 * bump(Self::CENTERS.0, Self::LENGTHSCALES.0)
            + Self::AMPLITUDES.1 * bump(Self::CENTERS.1, Self::LENGTHSCALES.1)
    }

    pub fn eval<R: Rng + ?Sized>(&self, x: f64, noisy: bool, rng: &mut R) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::invalid(format!("trap objective is defined on [0, 1], got {x}")));
        }
        let f = Self::value(x);
        Ok(if noisy { f + self.noise.sample(rng) } else { f })
    }

    /// Maximum of the noise-free function.
    pub fn max_value() -> f64 {
        let (mut a, mut b) = (0.89f64, 0.91f64);
        for _ in 0..200 {
            let m1 = a + (b - a) / 3.0;
            let m2 = b - (b - a) / 3.0;
            if Self::value(m1) < Self::value(m2) {
                a = m1;
            } else {
                b = m2;
            }
        }
        Self::value(0.5 * (a + b)).max(Self::value(Self::CENTERS.1))
    }
}

impl Default for TrapObjective {
    fn default() -> Self {
        TrapObjective::new(NoiseSpec::gaussian(Self::NOISE_STD))
    }
}

impl Objective for TrapObjective {
    fn dim(&self) -> usize {
        1
    }

    fn evaluate(&self, x: &[f64], rng: &mut dyn RngCore) -> Result<Observation> {
        let y = self.eval(x[0], true, rng)?;
        Ok(Observation {
            y,
            f_noiseless: Some(Self::value(x[0])),
        })
    }

    fn noiseless(&self, x: &[f64]) -> Option<f64> {
        Some(Self::value(x[0]))
    }

    fn optimum(&self) -> Option<f64> {
        Some(Self::max_value())
    }
}

/// A single smooth bump of height 4 at 0.6 with length scale 0.2 on
/// `[0, 1]`; the control case where plain maximum likelihood does fine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WidePeakObjective {
    pub noise: NoiseSpec,
}

impl WidePeakObjective {
    pub const CENTER: f64 = 0.6;
    pub const AMPLITUDE: f64 = 4.0;
    pub const LENGTHSCALE: f64 = 0.2;

    pub fn value(x: f64) -> f64 {
        let z = (x - Self::CENTER) / Self::LENGTHSCALE;
        Self::AMPLITUDE * (-0.5 * z * z).exp()
    }
}

impl Objective for WidePeakObjective {
    fn dim(&self) -> usize {
        1
    }

    fn evaluate(&self, x: &[f64], rng: &mut dyn RngCore) -> Result<Observation> {
        if !(0.0..=1.0).contains(&x[0]) {
            return Err(Error::invalid(format!("objective is defined on [0, 1], got {}", x[0])));
        }
        let f = Self::value(x[0]);
        Ok(Observation {
            y: f + self.noise.sample(rng),
            f_noiseless: Some(f),
        })
    }

    fn noiseless(&self, x: &[f64]) -> Option<f64> {
        Some(Self::value(x[0]))
    }

    fn optimum(&self) -> Option<f64> {
        Some(Self::AMPLITUDE)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Trap,
    WidePeak,
}

impl ObjectiveKind {
    pub fn build(self, noise: NoiseSpec) -> Box<dyn Objective> {
        match self {
            ObjectiveKind::Trap => Box::new(TrapObjective::new(noise)),
            ObjectiveKind::WidePeak => Box::new(WidePeakObjective { noise }),
        }
    }

    pub fn success_threshold(self) -> f64 {
        TrapObjective::SUCCESS_THRESHOLD
    }
}

/// Expected improvement with unconstrained-in-practice maximum-likelihood
/// length scales, no shrinkage, and ν fixed to 1.
pub fn run_baseline_unconstrained(objective: &dyn Objective, cfg: &RunConfig) -> Result<RunTrace, RunFailure> {
    let cfg = RunConfig {
        policy: Policy::BaselineMl,
        ..cfg.clone()
    };
    run(objective, &cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub best_f: Option<f64>,
    pub success: bool,
    pub cumulative_regret: Option<f64>,
    pub shrink_events: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub policy: Policy,
    pub n_seeds: usize,
    pub success_rate: f64,
    pub threshold: f64,
    #[serde(rename = "median_RT")]
    pub median_rt: Option<f64>,
    /// Quantiles of `R_T / T` keyed by probability level.
    #[serde(rename = "quantiles_RT_over_T")]
    pub quantiles_rt_over_t: BTreeMap<String, f64>,
    pub failed_seeds: Vec<u64>,
    pub shrink_events: Vec<usize>,
    pub seeds: Vec<SeedOutcome>,
}

pub const SUMMARY_QUANTILES: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];

/// Linear-interpolation quantile of an unsorted sample.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

/// Runs `cfg` once per seed (in parallel) with `policy` and aggregates.
/// Traces come back in seed order; failed runs keep their partial trace.
pub fn sweep(
    policy: Policy,
    objective: &dyn Objective,
    seeds: &[u64],
    cfg: &RunConfig,
    threshold: f64,
) -> Result<(SweepSummary, Vec<Result<RunTrace, RunFailure>>)> {
    if seeds.is_empty() {
        return Err(Error::invalid("sweep needs at least one seed"));
    }
    let runs: Vec<Result<RunTrace, RunFailure>> = seeds
        .par_iter()
        .map(|&seed| {
            let c = RunConfig {
                seed,
                policy,
                ..cfg.clone()
            };
            run(objective, &c)
        })
        .collect();
    Ok((summarize(policy, seeds, &runs, threshold), runs))
}

pub fn summarize(
    policy: Policy,
    seeds: &[u64],
    runs: &[Result<RunTrace, RunFailure>],
    threshold: f64,
) -> SweepSummary {
    let outcomes: Vec<SeedOutcome> = seeds
        .iter()
        .zip(runs)
        .map(|(&seed, r)| match r {
            Ok(tr) => {
                let best_f = tr.best_f();
                SeedOutcome {
                    seed,
                    best_f,
                    success: best_f.is_some_and(|b| b >= threshold),
                    cumulative_regret: tr.final_cumulative_regret(),
                    shrink_events: tr.shrink_events(),
                    error: None,
                }
            }
            Err(f) => SeedOutcome {
                seed,
                best_f: f.partial.best_f(),
                success: false,
                cumulative_regret: None,
                shrink_events: f.partial.shrink_events(),
                error: Some(f.error.to_string()),
            },
        })
        .collect();
    let regrets: Vec<f64> = outcomes.iter().filter_map(|o| o.cumulative_regret).collect();
    let avg: Vec<f64> = runs
        .iter()
        .filter_map(|r| r.as_ref().ok())
        .filter_map(|tr| tr.average_regret_at(tr.records.len()))
        .collect();
    let quantiles_rt_over_t = SUMMARY_QUANTILES
        .iter()
        .filter_map(|&q| quantile(&avg, q).map(|v| (format!("{q}"), v)))
        .collect();
    SweepSummary {
        policy,
        n_seeds: seeds.len(),
        success_rate: outcomes.iter().filter(|o| o.success).count() as f64 / seeds.len() as f64,
        threshold,
        median_rt: quantile(&regrets, 0.5),
        quantiles_rt_over_t,
        failed_seeds: outcomes.iter().filter(|o| o.error.is_some()).map(|o| o.seed).collect(),
        shrink_events: outcomes.iter().map(|o| o.shrink_events).collect(),
        seeds: outcomes,
    }
}
