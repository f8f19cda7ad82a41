//! Information gain of GP observations, measured in nats.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{KernelFamily, KernelSpec};
use crate::linalg::{dot, Cholesky};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoGainReport {
    /// `½ log(1 + σ⁻² σ²_{t−1}(x_t))` for each point in selection order.
    pub per_point_terms: Vec<f64>,
    /// Sum of the per-point terms.
    pub total: f64,
    /// `½ log det(I + σ⁻² K)` computed directly.
    pub logdet_total: f64,
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("sigma must be finite and > 0, got {sigma}")))
    }
}

/// `½ log det(I + σ⁻² K(X, X))`.
pub fn info_gain_logdet(spec: &KernelSpec, points: &[Vec<f64>], sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    if points.is_empty() {
        return Err(Error::invalid("information gain needs at least one point"));
    }
    let mut m = spec.matrix(points)?;
    m.scale(1.0 / (sigma * sigma));
    m.add_diagonal(1.0);
    let chol = Cholesky::factor(&m)?;
    Ok((0.5 * chol.log_det()).max(0.0))
}

/// Grows the factor of `K + σ²I` one point at a time and returns the
/// posterior variance each point had before it was added.
struct IncrementalFactor<'a> {
    spec: &'a KernelSpec,
    noise_var: f64,
    points: Vec<&'a [f64]>,
    // rows of the lower-triangular factor
    rows: Vec<Vec<f64>>,
}

impl<'a> IncrementalFactor<'a> {
    fn new(spec: &'a KernelSpec, sigma: f64) -> Self {
        IncrementalFactor {
            spec,
            noise_var: sigma * sigma,
            points: Vec::new(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, x: &'a [f64]) -> f64 {
        let mut v: Vec<f64> = self
            .points
            .iter()
            .map(|p| self.spec.eval_unchecked(p, x))
            .collect();
        for i in 0..v.len() {
            let s = v[i] - dot(&self.rows[i][..i], &v[..i]);
            v[i] = s / self.rows[i][i];
        }
        let var = (1.0 - dot(&v, &v)).max(0.0);
        v.push((var + self.noise_var).sqrt());
        self.rows.push(v);
        self.points.push(x);
        var
    }
}

/// Sequential decomposition of the information gain into per-point terms,
/// alongside the direct log-determinant.
pub fn info_gain_sequential(
    spec: &KernelSpec,
    points: &[Vec<f64>],
    sigma: f64,
) -> Result<InfoGainReport> {
    let logdet_total = info_gain_logdet(spec, points, sigma)?;
    let variances = sequential_variances(spec, points, sigma)?;
    let noise_var = sigma * sigma;
    let per_point_terms: Vec<f64> = variances
        .iter()
        .map(|v| 0.5 * (v / noise_var).ln_1p())
        .collect();
    let total = per_point_terms.iter().sum();
    Ok(InfoGainReport {
        per_point_terms,
        total,
        logdet_total,
    })
}

/// `σ²_{t−1}(x_t)` for each point given all earlier points.
pub fn sequential_variances(spec: &KernelSpec, points: &[Vec<f64>], sigma: f64) -> Result<Vec<f64>> {
    check_sigma(sigma)?;
    if let Some(p) = points.iter().find(|p| p.len() != spec.dim()) {
        return Err(Error::invalid(format!("point {p:?} has the wrong dimension")));
    }
    let mut f = IncrementalFactor::new(spec, sigma);
    Ok(points.iter().map(|x| f.push(x)).collect())
}

/// Greedy lower bound on the maximum information gain over `T`-subsets of
/// `candidates`: repeatedly takes the candidate of largest posterior
/// variance (lowest index on ties). Returns the chosen indices and the
/// information gain they achieve.
pub fn greedy_max_info_gain(
    spec: &KernelSpec,
    candidates: &[Vec<f64>],
    count: usize,
    sigma: f64,
) -> Result<(Vec<usize>, f64)> {
    check_sigma(sigma)?;
    if count > candidates.len() {
        return Err(Error::invalid(format!(
            "cannot select {count} points from {} candidates",
            candidates.len()
        )));
    }
    if let Some(p) = candidates.iter().find(|p| p.len() != spec.dim()) {
        return Err(Error::invalid(format!("candidate {p:?} has the wrong dimension")));
    }
    let noise_var = sigma * sigma;
    // proj[c] holds L⁻¹ k(selected, c); var[c] = 1 − |proj[c]|²
    let mut proj: Vec<Vec<f64>> = vec![Vec::with_capacity(count); candidates.len()];
    let mut var = vec![1.0f64; candidates.len()];
    let mut taken = vec![false; candidates.len()];
    let mut chosen = Vec::with_capacity(count);
    let mut value = 0.0;
    for _ in 0..count {
        let mut best: Option<usize> = None;
        for c in 0..candidates.len() {
            if !taken[c] && best.is_none_or(|b| var[c] > var[b]) {
                best = Some(c);
            }
        }
        let b = best.expect("count <= candidates.len()");
        let vb = var[b].max(0.0);
        value += 0.5 * (vb / noise_var).ln_1p();
        let diag = (vb + noise_var).sqrt();
        let pb = proj[b].clone();
        for c in 0..candidates.len() {
            let k = spec.eval_unchecked(&candidates[c], &candidates[b]);
            let e = (k - dot(&proj[c], &pb)) / diag;
            proj[c].push(e);
            var[c] -= e * e;
        }
        taken[b] = true;
        chosen.push(b);
    }
    Ok((chosen, value))
}

/// The ν-interval scale
/// `I + √(log(2t²π²/(3δ)))·√I + log(t²π²/(3δ))`.
pub fn xi_statistic(info_gain: f64, t: usize, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    if t == 0 {
        return Err(Error::invalid("round index must be >= 1"));
    }
    if !(info_gain.is_finite() && info_gain >= 0.0) {
        return Err(Error::invalid(format!(
            "information gain must be finite and >= 0, got {info_gain}"
        )));
    }
    let t2 = (t as f64).powi(2) * PI * PI;
    Ok(info_gain + (2.0 * t2 / (3.0 * delta)).ln().sqrt() * info_gain.sqrt() + (t2 / (3.0 * delta)).ln())
}

/// Unit-constant growth rate of the maximum information gain at horizon
/// `t`: `(log t)^{d+1}` for SE, `t^{d(d+1)/(2ν+d(d+1))} log t` with ν = 5/2
/// for Matérn.
pub fn gamma_rate(family: KernelFamily, dim: usize, t: f64) -> f64 {
    let d = dim as f64;
    match family {
        KernelFamily::SquaredExponential => t.ln().powf(d + 1.0),
        KernelFamily::Matern52 => {
            let e = d * (d + 1.0) / (5.0 + d * (d + 1.0));
            t.powf(e) * t.ln()
        }
    }
}

/// [`gamma_rate`] evaluated at `t = 2..=horizon`.
pub fn gamma_rate_curve(family: KernelFamily, dim: usize, horizon: usize) -> Vec<(usize, f64)> {
    (2..=horizon)
        .map(|t| (t, gamma_rate(family, dim, t as f64)))
        .collect()
}
