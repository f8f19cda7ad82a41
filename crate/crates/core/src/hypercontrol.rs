//! Length-scale bounds, over-confidence detection, and the constrained
//! choice of θ and ν between rounds.

use serde::{Deserialize, Serialize};

use crate::domain::scrambled_halton;
use crate::error::{Error, Result};
use crate::gp::{data_fit_term, log_marginal_likelihood, Dataset};
use crate::kernel::{KernelFamily, KernelSpec, LengthScales};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperBounds {
    lower: LengthScales,
    upper: LengthScales,
}

impl HyperBounds {
    pub fn new(lower: LengthScales, upper: LengthScales) -> Result<Self> {
        if lower.dim() != upper.dim() {
            return Err(Error::invalid("length-scale bounds have different dimensions"));
        }
        if !lower.le(&upper) {
            return Err(Error::invalid(
                "length-scale bounds must satisfy theta_lower <= theta_upper componentwise",
            ));
        }
        Ok(HyperBounds { lower, upper })
    }

    pub fn lower(&self) -> &LengthScales {
        &self.lower
    }

    pub fn upper(&self) -> &LengthScales {
        &self.upper
    }

    pub fn dim(&self) -> usize {
        self.lower.dim()
    }

    pub fn contains(&self, theta: &LengthScales) -> bool {
        self.lower.le(theta) && theta.le(&self.upper)
    }

    pub fn clamp(&self, theta: &LengthScales) -> LengthScales {
        let v = theta
            .values()
            .iter()
            .zip(self.lower.values().iter().zip(self.upper.values()))
            .map(|(t, (l, u))| t.clamp(*l, *u))
            .collect();
        LengthScales::new(v).expect("clamped into positive bounds")
    }

    /// Componentwise geometric midpoint.
    pub fn geometric_midpoint(&self) -> LengthScales {
        let v = self
            .lower
            .values()
            .iter()
            .zip(self.upper.values())
            .map(|(l, u)| (l * u).sqrt())
            .collect();
        self.clamp(&LengthScales::new(v).expect("positive bounds"))
    }

    /// `Π θ^U_i / θ^L_i`.
    pub fn c2(&self) -> f64 {
        self.upper
            .values()
            .iter()
            .zip(self.lower.values())
            .map(|(u, l)| u / l)
            .product()
    }

    pub fn is_collapsed(&self) -> bool {
        self.lower == self.upper
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    /// Over-confidence threshold, in units of the noise variance.
    pub t_sigma: f64,
    /// Upper-bound reduction factor.
    pub p: f64,
    pub c1: f64,
    pub c2: f64,
    /// Consecutive over-confident rounds that trigger a shrink.
    pub e_threshold: u32,
    pub delta: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            t_sigma: 1.0,
            p: 0.5,
            c1: 0.001,
            c2: 1.0,
            e_threshold: 5,
            delta: 0.1,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_sigma.is_finite() && self.t_sigma > 0.0) {
            return Err(Error::invalid(format!("t_sigma must be > 0, got {}", self.t_sigma)));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::invalid(format!("p must lie in (0, 1), got {}", self.p)));
        }
        if !(self.c1 > 0.0 && self.c2 > self.c1 && self.c2.is_finite()) {
            return Err(Error::invalid(format!(
                "constants must satisfy c2 > c1 > 0, got c1 = {}, c2 = {}",
                self.c1, self.c2
            )));
        }
        if self.e_threshold == 0 {
            return Err(Error::invalid("e_threshold must be a positive integer"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        Ok(())
    }
}

/// Mutable controller state owned by one optimization loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperState {
    pub bounds: HyperBounds,
    pub theta: LengthScales,
    pub nu: f64,
    pub e_counter: u32,
    pub shrink_events: u32,
}

impl HyperState {
    pub fn new(bounds: HyperBounds, theta: LengthScales, nu: f64) -> Result<Self> {
        if !bounds.contains(&theta) {
            return Err(Error::invalid(
                "initial length scales must lie inside [theta_lower, theta_upper]",
            ));
        }
        if !(nu.is_finite() && nu > 0.0) {
            return Err(Error::invalid(format!("nu must be > 0, got {nu}")));
        }
        Ok(HyperState {
            bounds,
            theta,
            nu,
            e_counter: 0,
            shrink_events: 0,
        })
    }

    /// Counts the round as over-confident when the selected point's
    /// pre-query variance is below `t_σ σ²`; resets the count otherwise.
    pub fn update_confidence_counter(&mut self, var_at_selected: f64, sigma: f64, cfg: &ControllerConfig) {
        if var_at_selected < cfg.t_sigma * sigma * sigma {
            self.e_counter += 1;
        } else {
            self.e_counter = 0;
        }
    }

    /// Shrinks θ^U once the counter reaches the threshold, resets the
    /// counter, and pulls θ back inside the new bounds. Returns whether a
    /// shrink happened.
    pub fn apply_shrink_if_due(&mut self, cfg: &ControllerConfig) -> bool {
        if self.e_counter < cfg.e_threshold {
            return false;
        }
        self.bounds = shrink_upper_bounds(&self.bounds, cfg.p);
        self.theta = self.bounds.clamp(&self.theta);
        self.e_counter = 0;
        self.shrink_events += 1;
        true
    }
}

/// `θ^U_i ← max(min(p·max_j θ^U_j, θ^U_i), θ^L_i)`.
pub fn shrink_upper_bounds(bounds: &HyperBounds, p: f64) -> HyperBounds {
    let top = bounds
        .upper
        .values()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let upper: Vec<f64> = bounds
        .upper
        .values()
        .iter()
        .zip(bounds.lower.values())
        .map(|(u, l)| (p * top).min(*u).max(*l))
        .collect();
    HyperBounds {
        lower: bounds.lower.clone(),
        upper: LengthScales::new(upper).expect("shrunk bounds stay positive"),
    }
}

/// Budget of the derivative-free likelihood search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlSearchConfig {
    pub seeds_per_dim: usize,
    pub max_seeds: usize,
    pub golden_iterations: usize,
}

impl Default for MlSearchConfig {
    fn default() -> Self {
        MlSearchConfig {
            seeds_per_dim: 16,
            max_seeds: 64,
            golden_iterations: 20,
        }
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Maximizes the log marginal likelihood over `θ ∈ [θ^L, θ^U]`.
///
/// Search runs in log-length-scale space: seeds on a low-discrepancy
/// pattern (an even grid in one dimension), each polished by per-coordinate
/// golden-section search inside a bracket one seed-spacing wide. The
/// corners `θ^L` and `θ^U` are always probed. Probes whose factorization
/// fails are skipped.
pub fn estimate_theta_constrained(
    data: &Dataset,
    bounds: &HyperBounds,
    family: KernelFamily,
    search: &MlSearchConfig,
) -> Result<LengthScales> {
    if bounds.is_collapsed() {
        return Ok(bounds.lower.clone());
    }
    if data.is_empty() {
        return Ok(bounds.geometric_midpoint());
    }
    let d = bounds.dim();
    let lo: Vec<f64> = bounds.lower.values().iter().map(|v| v.ln()).collect();
    let hi: Vec<f64> = bounds.upper.values().iter().map(|v| v.ln()).collect();
    let objective = |z: &[f64]| -> f64 {
        let theta = LengthScales::new(z.iter().map(|v| v.exp()).collect());
        let Ok(theta) = theta else {
            return f64::NEG_INFINITY;
        };
        let spec = KernelSpec::new(family, bounds.clamp(&theta));
        log_marginal_likelihood(&spec, data).unwrap_or(f64::NEG_INFINITY)
    };

    let n_seeds = (search.seeds_per_dim * d).min(search.max_seeds).max(1);
    let unit_seeds: Vec<Vec<f64>> = if d == 1 {
        (0..n_seeds)
            .map(|i| vec![(i as f64 + 0.5) / n_seeds as f64])
            .collect()
    } else {
        scrambled_halton(d, n_seeds, 0)
    };
    let per_axis = (n_seeds as f64).powf(1.0 / d as f64);
    let half_width: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| (h - l) / per_axis).collect();

    let mut best_z = lo.clone();
    let mut best_f = objective(&lo);
    let f_hi = objective(&hi);
    if f_hi > best_f {
        best_z = hi.clone();
        best_f = f_hi;
    }

    for u in &unit_seeds {
        let mut z: Vec<f64> = (0..d).map(|j| lo[j] + u[j] * (hi[j] - lo[j])).collect();
        let mut fz = objective(&z);
        for j in 0..d {
            if hi[j] <= lo[j] {
                continue;
            }
            let a0 = (z[j] - half_width[j]).max(lo[j]);
            let b0 = (z[j] + half_width[j]).min(hi[j]);
            let (zj, fj) = golden_section(a0, b0, search.golden_iterations, |v| {
                let mut probe = z.clone();
                probe[j] = v;
                objective(&probe)
            });
            if fj > fz {
                z[j] = zj;
                fz = fj;
            }
        }
        if fz > best_f {
            best_f = fz;
            best_z = z;
        }
    }
    if !best_f.is_finite() {
        return Err(Error::numerical(
            "log marginal likelihood failed at every probed length scale",
        ));
    }
    let theta = LengthScales::new(best_z.iter().map(|v| v.exp()).collect())?;
    Ok(bounds.clamp(&theta))
}

/// Golden-section maximization of `f` on `[a, b]`; returns the best probed
/// point and its value.
fn golden_section(mut a: f64, mut b: f64, iters: usize, mut f: impl FnMut(f64) -> f64) -> (f64, f64) {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut best = if fc >= fd { (c, fc) } else { (d, fd) };
    for _ in 0..iters {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
            if fc > best.1 {
                best = (c, fc);
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
            if fd > best.1 {
                best = (d, fd);
            }
        }
    }
    best
}

/// Maximum-likelihood amplitude `sqrt(yᵀ(K+σ²I)⁻¹y / t)` of the data under
/// the unit-variance kernel.
pub fn amplitude_estimate(spec: &KernelSpec, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("amplitude estimate needs data"));
    }
    Ok((data_fit_term(spec, data)? / data.len() as f64).sqrt())
}

/// Picks ν in `[c1·ξ, c2·ξ]`: the likelihood amplitude estimate clamped into
/// the interval, or the previous ν clamped when there is no data yet.
pub fn choose_nu(
    xi: f64,
    previous_nu: f64,
    data: &Dataset,
    spec: &KernelSpec,
    cfg: &ControllerConfig,
) -> Result<f64> {
    if !(cfg.c1 > 0.0 && cfg.c2 > cfg.c1) {
        return Err(Error::invalid(format!(
            "constants must satisfy c2 > c1 > 0, got c1 = {}, c2 = {}",
            cfg.c1, cfg.c2
        )));
    }
    if !(xi.is_finite() && xi > 0.0) {
        return Err(Error::invalid(format!("xi must be finite and > 0, got {xi}")));
    }
    let estimate = if data.is_empty() {
        previous_nu
    } else {
        amplitude_estimate(spec, data)?
    };
    Ok(clamp_nu(estimate, xi, cfg))
}

/// Clamps a raw ν estimate into `[c1·ξ, c2·ξ]`.
pub fn clamp_nu(estimate: f64, xi: f64, cfg: &ControllerConfig) -> f64 {
    let (lo, hi) = (cfg.c1 * xi, cfg.c2 * xi);
    if estimate.is_nan() {
        return hi;
    }
    estimate.clamp(lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ls(v: &[f64]) -> LengthScales {
        LengthScales::new(v.to_vec()).unwrap()
    }

    fn state(e: u32) -> HyperState {
        let b = HyperBounds::new(ls(&[0.01]), ls(&[1.0])).unwrap();
        let mut s = HyperState::new(b, ls(&[0.1]), 1.0).unwrap();
        s.e_counter = e;
        s
    }

    #[test]
    fn counter_examples() {
        let cfg = ControllerConfig::default();
        let mut s = state(2);
        s.update_confidence_counter(0.5, 1.0, &cfg);
        assert_eq!(s.e_counter, 3);
        let mut s = state(4);
        s.update_confidence_counter(2.0, 1.0, &cfg);
        assert_eq!(s.e_counter, 0);
        let mut s = state(3);
        s.update_confidence_counter(1.0, 1.0, &cfg);
        assert_eq!(s.e_counter, 0);
    }

    #[test]
    fn shrink_examples() {
        let b = HyperBounds::new(ls(&[0.01, 0.01]), ls(&[1.0, 0.5])).unwrap();
        let s = shrink_upper_bounds(&b, 0.5);
        assert_eq!(s.upper().values(), &[0.5, 0.5]);
        assert_eq!(s.lower(), b.lower());

        let b = HyperBounds::new(ls(&[0.05]), ls(&[0.06])).unwrap();
        assert_eq!(shrink_upper_bounds(&b, 0.5).upper().values(), &[0.05]);

        let b = HyperBounds::new(ls(&[0.2, 0.3]), ls(&[0.2, 0.3])).unwrap();
        assert_eq!(shrink_upper_bounds(&b, 0.5), b);
    }

    #[test]
    fn shrink_happens_on_fifth_low_round() {
        let cfg = ControllerConfig::default();
        let mut s = state(0);
        s.theta = ls(&[1.0]);
        for round in 1..=5 {
            s.update_confidence_counter(1e-6, 1.0, &cfg);
            let shrunk = s.apply_shrink_if_due(&cfg);
            assert_eq!(shrunk, round == 5, "round {round}");
        }
        assert_eq!(s.e_counter, 0);
        assert_eq!(s.shrink_events, 1);
        assert_eq!(s.bounds.upper().values(), &[0.5]);
        assert_eq!(s.theta.values(), &[0.5]);
    }

    #[test]
    fn config_validation_mentions_constraint() {
        let cfg = ControllerConfig {
            c1: 2.0,
            c2: 1.0,
            ..Default::default()
        };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("c2 > c1 > 0"), "{msg}");
        assert!(ControllerConfig::default().validate().is_ok());
        assert!(ControllerConfig { p: 1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn collapsed_bounds_and_empty_data() {
        let data = Dataset::new(vec![vec![0.1], vec![0.4]], vec![0.3, -0.2], 0.1).unwrap();
        let b = HyperBounds::new(ls(&[0.2]), ls(&[0.2])).unwrap();
        let t = estimate_theta_constrained(&data, &b, KernelFamily::SquaredExponential, &Default::default()).unwrap();
        assert_eq!(t, ls(&[0.2]));
        let b = HyperBounds::new(ls(&[0.01]), ls(&[1.0])).unwrap();
        let t = estimate_theta_constrained(
            &Dataset::empty(0.1).unwrap(),
            &b,
            KernelFamily::Matern52,
            &Default::default(),
        )
        .unwrap();
        assert!((t.values()[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn nu_clamping() {
        let cfg = ControllerConfig::default();
        let xi = 3.49346;
        assert_eq!(clamp_nu(1e-9, xi, &cfg), cfg.c1 * xi);
        assert_eq!(clamp_nu(1e9, xi, &cfg), cfg.c2 * xi);
        assert_eq!(clamp_nu(0.5, xi, &cfg), 0.5);
        let bad = ControllerConfig { c1: 2.0, c2: 1.0, ..cfg };
        let spec = KernelSpec::new(KernelFamily::SquaredExponential, ls(&[0.2]));
        assert!(choose_nu(xi, 1.0, &Dataset::empty(0.1).unwrap(), &spec, &bad).is_err());
        assert_eq!(choose_nu(xi, 0.7, &Dataset::empty(0.1).unwrap(), &spec, &cfg).unwrap(), 0.7);
    }

    #[test]
    fn golden_section_finds_interior_max() {
        let (x, f) = golden_section(-1.0, 3.0, 40, |v| -(v - 1.3) * (v - 1.3));
        assert!((x - 1.3).abs() < 1e-6);
        assert!(f <= 0.0);
    }
}
