//! The oracle suite behind `hyperbo verify`.
//!
//! Every check compares library output against an independent computation
//! (dense Gauss-Jordan inverses, LU determinants, Monte Carlo) or evaluates
//! an invariant on randomized instances, and reports the worst error seen
//! against its tolerance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::acquisition::{ei_from_moments, tau};
use crate::benchlab::{NoiseFamily, NoiseSpec, TrapObjective};
use crate::domain::Domain;
use crate::engine::{run, CheckMode, RunConfig, CHECK_TOLERANCE};
use crate::error::Result;
use crate::gp::{Dataset, Posterior};
use crate::hypercontrol::{shrink_upper_bounds, HyperBounds};
use crate::infogain::{info_gain_logdet, info_gain_sequential};
use crate::kernel::{KernelFamily, KernelSpec, LengthScales};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    /// Worst error (or violation) observed; the check passes when it does
    /// not exceed `tolerance`.
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, measured: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        CheckResult {
            name: name.to_string(),
            measured,
            tolerance,
            // NaN must fail
            passed: measured <= tolerance,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Runs every check. `seed` fixes all random instances.
pub fn run_all(seed: u64) -> Result<VerifyReport> {
    let checks = vec![
        gp_oracle_equivalence(seed)?,
        ei_mc_agreement(seed)?,
        lemma_5_3_identity(seed)?,
        lemma_6_monotonicity(seed)?,
        variance_length_scale_monotonicity(seed)?,
        lemma_8_norm_scaling(seed)?,
        tau_identity(),
        tau_monotone(),
        tau_upper_bound(),
        ei_sandwich(seed),
        shrink_examples()?,
        subgaussian_tails(seed)?,
        trap_runtime_checks(seed)?,
    ]
    .into_iter()
    .flatten()
    .collect();
    Ok(VerifyReport { checks })
}

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn dense_inverse(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        let p = m[col][col];
        m[col].iter_mut().for_each(|v| *v /= p);
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    let pivot_row = m[col].clone();
                    for (v, pv) in m[r].iter_mut().zip(&pivot_row) {
                        *v -= f * pv;
                    }
                }
            }
        }
    }
    Some(m.into_iter().map(|r| r[n..].to_vec()).collect())
}

/// `log |det a|` by LU elimination with partial pivoting.
pub fn lu_log_abs_det(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let mut m = a.to_vec();
    let mut acc = 0.0;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .expect("non-empty range");
        m.swap(col, piv);
        let p = m[col][col];
        if p == 0.0 {
            return f64::NEG_INFINITY;
        }
        acc += p.abs().ln();
        for r in col + 1..n {
            let f = m[r][col] / p;
            let pivot_row = m[col].clone();
            for (v, pv) in m[r].iter_mut().zip(&pivot_row).skip(col) {
                *v -= f * pv;
            }
        }
    }
    acc
}

fn mat_vec(a: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    a.iter().map(|r| r.iter().zip(v).map(|(x, y)| x * y).sum()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_family<R: Rng>(rng: &mut R) -> KernelFamily {
    if rng.random_bool(0.5) {
        KernelFamily::SquaredExponential
    } else {
        KernelFamily::Matern52
    }
}

fn random_points<R: Rng>(rng: &mut R, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect()
}

fn random_theta<R: Rng>(rng: &mut R, d: usize, lo: f64, hi: f64) -> LengthScales {
    LengthScales::new((0..d).map(|_| rng.random_range(lo..hi)).collect()).expect("positive")
}

fn gram(spec: &KernelSpec, pts: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    pts.iter()
        .map(|a| pts.iter().map(|b| spec.eval(a, b)).collect())
        .collect()
}

/// Posterior mean, variance and covariance against a dense-inverse oracle.
pub fn gp_oracle_equivalence(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x01);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let d = rng.random_range(1..=3);
        let t = rng.random_range(1..=15);
        let spec = KernelSpec::new(random_family(&mut rng), random_theta(&mut rng, d, 0.1, 1.0));
        let sigma = rng.random_range(0.01..0.3);
        let xs = random_points(&mut rng, t, d);
        let ys: Vec<f64> = (0..t).map(|_| rng.random_range(-2.0..2.0)).collect();
        let post = Posterior::fit(spec.clone(), Dataset::new(xs.clone(), ys.clone(), sigma)?)?;
        let mut a = gram(&spec, &xs)?;
        for (i, row) in a.iter_mut().enumerate() {
            row[i] += sigma * sigma;
        }
        let inv = dense_inverse(&a).expect("K + σ²I is invertible");
        let alpha = mat_vec(&inv, &ys);
        let probes = random_points(&mut rng, 4, d);
        for (i, x) in probes.iter().enumerate() {
            let kx: Vec<f64> = xs.iter().map(|p| spec.eval(p, x)).collect::<Result<_>>()?;
            let mean = dot(&kx, &alpha);
            let var = 1.0 - dot(&kx, &mat_vec(&inv, &kx));
            let (m, v) = post.mean_var(x)?;
            worst = worst.max((m - mean).abs()).max((v - var.max(0.0)).abs());
            let y = &probes[(i + 1) % probes.len()];
            let ky: Vec<f64> = xs.iter().map(|p| spec.eval(p, y)).collect::<Result<_>>()?;
            let cov = spec.eval(x, y)? - dot(&kx, &mat_vec(&inv, &ky));
            worst = worst.max((post.cov(x, y)? - cov).abs());
        }
    }
    Ok(vec![CheckResult::new(
        "gp_oracle_equivalence",
        worst,
        1e-8,
        "100 instances, t <= 15, d <= 3, both kernels",
    )])
}

/// Closed-form rescaled EI against a Monte-Carlo mean of `max(0, f − μ⁺)`.
pub fn ei_mc_agreement(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x02);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let mean = rng.random_range(-1.0..1.0);
        let sd = rng.random_range(0.05..0.5);
        let incumbent = rng.random_range(-1.0..1.0);
        let nu = rng.random_range(0.5..1.0);
        let closed = ei_from_moments(mean, sd, incumbent, nu);
        let n = 1_000_000;
        let total: f64 = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (mean + nu * sd * z - incumbent).max(0.0)
            })
            .sum();
        worst = worst.max((total / n as f64 - closed).abs());
    }
    Ok(vec![CheckResult::new(
        "ei_mc_agreement",
        worst,
        3e-3,
        "50 configurations, 10^6 samples each",
    )])
}

/// Sum of per-point variance terms against an LU log-determinant.
pub fn lemma_5_3_identity(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x03);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let d = rng.random_range(1..=3);
        let t = rng.random_range(1..=20);
        let spec = KernelSpec::new(random_family(&mut rng), random_theta(&mut rng, d, 0.05, 1.0));
        let sigma = rng.random_range(0.05..1.0);
        let xs = random_points(&mut rng, t, d);
        let rep = info_gain_sequential(&spec, &xs, sigma)?;
        let mut a = gram(&spec, &xs)?;
        for (i, row) in a.iter_mut().enumerate() {
            row.iter_mut().for_each(|v| *v /= sigma * sigma);
            row[i] += 1.0;
        }
        worst = worst.max((rep.total - 0.5 * lu_log_abs_det(&a)).abs());
    }
    Ok(vec![CheckResult::new(
        "lemma_5_3_identity",
        worst,
        1e-8,
        "sequential variance sum vs log-det, 100 instances",
    )])
}

/// Shorter length scales never lose information on a fixed point set.
pub fn lemma_6_monotonicity(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x04);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..100 {
        let d = rng.random_range(1..=3);
        let t = rng.random_range(1..=20);
        let family = random_family(&mut rng);
        let theta = random_theta(&mut rng, d, 0.05, 1.0);
        let shrink: Vec<f64> = theta.values().iter().map(|v| v * rng.random_range(0.2..1.0)).collect();
        let theta_small = LengthScales::new(shrink)?;
        let sigma = rng.random_range(0.05..1.0);
        let xs = random_points(&mut rng, t, d);
        let big = info_gain_logdet(&KernelSpec::new(family, theta), &xs, sigma)?;
        let small = info_gain_logdet(&KernelSpec::new(family, theta_small), &xs, sigma)?;
        worst = worst.max(big - small);
    }
    Ok(vec![CheckResult::new(
        "lemma_6_monotonicity",
        worst.max(0.0),
        1e-8,
        "max of I(theta) - I(theta') over 100 point sets",
    )])
}

/// Posterior variance does not grow when length scales grow.
pub fn variance_length_scale_monotonicity(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x05);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..100 {
        let d = rng.random_range(1..=3);
        let t = rng.random_range(1..=15);
        let theta = random_theta(&mut rng, d, 0.05, 1.0);
        let small = LengthScales::new(theta.values().iter().map(|v| v * rng.random_range(0.2..1.0)).collect())?;
        let sigma = rng.random_range(0.05..1.0);
        let xs = random_points(&mut rng, t, d);
        let data = Dataset::new(xs, vec![0.0; t], sigma)?;
        let fam = KernelFamily::SquaredExponential;
        let p_big = Posterior::fit(KernelSpec::new(fam, theta), data.clone())?;
        let p_small = Posterior::fit(KernelSpec::new(fam, small), data)?;
        for x in random_points(&mut rng, 8, d) {
            worst = worst.max(p_big.var(&x)? - p_small.var(&x)?);
        }
    }
    Ok(vec![CheckResult::new(
        "variance_length_scale_monotonicity",
        worst.max(0.0),
        1e-8,
        "squared exponential, 100 instances x 8 probes",
    )])
}

/// Finite-sample norm scaling between nested length scales.
pub fn lemma_8_norm_scaling(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x06);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..100 {
        let d = rng.random_range(1..=2);
        let n = rng.random_range(2..=8);
        let family = random_family(&mut rng);
        let theta = random_theta(&mut rng, d, 0.05, 0.3);
        let small = LengthScales::new(theta.values().iter().map(|v| v * rng.random_range(0.3..1.0)).collect())?;
        let c2: f64 = theta.values().iter().zip(small.values()).map(|(a, b)| a / b).product();
        let xs = random_points(&mut rng, n, d);
        let alpha: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k_big = gram(&KernelSpec::new(family, theta), &xs)?;
        // f = K^θ α has squared H_θ norm αᵀK^θα
        let f = mat_vec(&k_big, &alpha);
        let norm_big = dot(&alpha, &f);
        let mut k_small = gram(&KernelSpec::new(family, small), &xs)?;
        for (i, row) in k_small.iter_mut().enumerate() {
            row[i] += 1e-12;
        }
        let Some(inv) = dense_inverse(&k_small) else { continue };
        let norm_small = dot(&f, &mat_vec(&inv, &f));
        worst = worst.max((norm_small - c2 * norm_big) / (c2 * norm_big).max(1e-300));
    }
    Ok(vec![CheckResult::new(
        "lemma_8_norm_scaling",
        worst.max(0.0),
        1e-6,
        "relative excess of f'K'^-1 f over C2 * f'K^-1 f, 100 instances",
    )])
}

fn tau_grid() -> Vec<f64> {
    (0..=20_000).map(|i| -10.0 + i as f64 * 1e-3).collect()
}

pub fn tau_identity() -> Vec<CheckResult> {
    let worst = tau_grid()
        .iter()
        .map(|&z| (tau(z) - tau(-z) - z).abs())
        .fold(0.0, f64::max);
    vec![CheckResult::new("tau_identity", worst, 1e-12, "tau(z) - tau(-z) = z on [-10, 10]")]
}

pub fn tau_monotone() -> Vec<CheckResult> {
    let vals: Vec<f64> = tau_grid().iter().map(|&z| tau(z)).collect();
    let worst = vals.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max);
    vec![CheckResult::new("tau_monotone", worst, 0.0, "largest decrease on [-10, 10]")]
}

pub fn tau_upper_bound() -> Vec<CheckResult> {
    let worst = tau_grid()
        .iter()
        .filter(|&&z| z > 0.0)
        .map(|&z| tau(z) - (1.0 + z))
        .fold(f64::NEG_INFINITY, f64::max);
    vec![CheckResult::new("tau_upper_bound", worst.max(0.0), 0.0, "tau(z) <= 1 + z for z in (0, 10]")]
}

/// EI sandwich bounds for synthetic `(q, u, φ̂)` with `|u − q| ≤ φ̂`.
pub fn ei_sandwich(seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x07);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let sd = rng.random_range(0.01..2.0);
        let nu = rng.random_range(0.05..5.0);
        let phi = rng.random_range(0.0..4.0);
        let q = rng.random_range(-5.0..5.0);
        let u = q + rng.random_range(-phi..=phi);
        let ei = nu * sd * tau(u / nu);
        let improvement = (q * sd).max(0.0);
        let lower = (improvement - phi * sd).max(tau(-phi / nu) / tau(phi / nu) * improvement);
        let upper = improvement + (phi + nu) * sd;
        let scale = 1.0 + upper.abs();
        worst = worst.max((lower - ei) / scale).max((ei - upper) / scale);
    }
    vec![CheckResult::new("ei_sandwich", worst.max(0.0), 1e-12, "1000 random triples")]
}

pub fn shrink_examples() -> Result<Vec<CheckResult>> {
    let ls = |v: &[f64]| LengthScales::new(v.to_vec());
    let a = shrink_upper_bounds(&HyperBounds::new(ls(&[0.01, 0.01])?, ls(&[1.0, 0.5])?)?, 0.5);
    let b = shrink_upper_bounds(&HyperBounds::new(ls(&[0.05])?, ls(&[0.06])?)?, 0.5);
    let err = (a.upper().values()[0] - 0.5).abs()
        + (a.upper().values()[1] - 0.5).abs()
        + (b.upper().values()[0] - 0.05).abs();
    Ok(vec![CheckResult::new(
        "shrink_examples",
        err,
        0.0,
        "(1.0, 0.5) -> (0.5, 0.5); (0.06) clamped to 0.05",
    )])
}

/// Empirical `P(|ε| ≥ a)` against `2exp(−a²/2σ²)` plus three standard errors.
pub fn subgaussian_tails(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x08);
    let n = 1_000_000usize;
    let sigma = 1.0;
    let mut out = Vec::new();
    for family in [NoiseFamily::Gaussian, NoiseFamily::SymmetricBernoulli, NoiseFamily::Uniform] {
        let spec = NoiseSpec::new(family, sigma)?;
        let draws: Vec<f64> = (0..n).map(|_| spec.sample(&mut rng).abs()).collect();
        let mut worst = f64::NEG_INFINITY;
        for k in [1.0, 2.0, 3.0] {
            let a = k * sigma;
            let p = draws.iter().filter(|&&e| e >= a).count() as f64 / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            worst = worst.max(p - 2.0 * (-a * a / (2.0 * sigma * sigma)).exp() - 3.0 * se);
        }
        out.push(CheckResult::new(
            &format!("subgaussian_tail_{}", family.name()),
            worst.max(0.0),
            0.0,
            "a in {sigma, 2 sigma, 3 sigma}, 10^6 draws",
        ));
    }
    Ok(out)
}

/// Incumbent-gap and variance-sum checks on a few trap runs.
pub fn trap_runtime_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let objective = TrapObjective::new(NoiseSpec::gaussian(TrapObjective::NOISE_STD));
    let mut gap = f64::NEG_INFINITY;
    let mut var_sum = f64::NEG_INFINITY;
    let runs = 3;
    for s in 0..runs {
        let mut cfg = RunConfig::new(Domain::unit(1), 30, TrapObjective::NOISE_STD);
        cfg.seed = seed.wrapping_add(s);
        cfg.check_mode = CheckMode::Record;
        let trace = run(&objective, &cfg).map_err(|f| f.error)?;
        for r in &trace.records {
            if let Some(sl) = r.lemma10_slack {
                gap = gap.max(-sl);
            }
        }
        if let Some(d) = &trace.diagnostics {
            let c = &d.variance_sum;
            var_sum = var_sum.max((c.variance_sum - c.bound) / c.bound.max(1.0));
        }
    }
    Ok(vec![
        CheckResult::new(
            "lemma_10_incumbent_gap",
            gap.max(0.0),
            CHECK_TOLERANCE,
            format!("{runs} trap runs, T = 30, largest negative slack"),
        ),
        CheckResult::new(
            "lemma_7_variance_sum",
            var_sum.max(0.0),
            CHECK_TOLERANCE,
            format!("{runs} trap runs, T = 30, relative excess over the bound"),
        ),
    ])
}
