//! Expected-improvement criteria and their maximization over a candidate set.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::domain::CandidateSet;
use crate::error::{Error, Result};
use crate::gp::Posterior;

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// `τ(z) = zΦ(z) + φ(z)`, the standardized expected improvement.
pub fn tau(z: f64) -> f64 {
    if z > 0.0 {
        // τ(z) = z + τ(−z) avoids cancellation in zΦ(z) for large z.
        return z + tau(-z);
    }
    (z * normal_cdf(z) + normal_pdf(z)).max(0.0)
}

/// Rescaled EI from posterior moments: `νσ·τ((μ − μ⁺)/(νσ))`.
///
/// With zero posterior deviation the improvement is deterministic and the
/// value is `max(0, μ − μ⁺)`.
pub fn ei_from_moments(mean: f64, sd: f64, incumbent: f64, nu: f64) -> f64 {
    let u = mean - incumbent;
    if sd <= 0.0 {
        return u.max(0.0);
    }
    let scale = nu * sd;
    scale * tau(u / scale)
}

/// Rescaled EI against the best posterior mean `mu_plus`.
pub fn ei_rescaled(p: &Posterior, x: &[f64], mu_plus: f64, nu: f64) -> Result<f64> {
    check_nu(nu)?;
    let (m, v) = p.mean_var(x)?;
    Ok(ei_from_moments(m, v.sqrt(), mu_plus, nu))
}

/// Classic EI against the best observed value; zero when the posterior
/// deviation vanishes.
pub fn ei_deterministic(p: &Posterior, x: &[f64], f_best: f64) -> Result<f64> {
    let (m, v) = p.mean_var(x)?;
    let sd = v.sqrt();
    if sd <= 0.0 {
        return Ok(0.0);
    }
    Ok(sd * tau((m - f_best) / sd))
}

fn check_nu(nu: f64) -> Result<()> {
    if nu.is_finite() && nu > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("nu must be finite and > 0, got {nu}")))
    }
}

/// Index and value of the largest posterior mean over `candidates`; ties go
/// to the lowest index.
pub fn best_posterior_mean(p: &Posterior, candidates: &[Vec<f64>]) -> Result<(usize, f64)> {
    if candidates.is_empty() {
        return Err(Error::invalid("candidate set is empty"));
    }
    let means = candidates
        .par_iter()
        .map(|x| p.mean(x))
        .collect::<Result<Vec<_>>>()?;
    Ok(argmax_first(&means))
}

fn argmax_first(values: &[f64]) -> (usize, f64) {
    let mut best = (0, values[0]);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IncumbentMode {
    /// Improvement over the largest observed output.
    BestObservedF,
    /// Improvement over the largest posterior mean on the candidate set.
    BestPosteriorMean,
}

pub struct AcquisitionQuery<'a> {
    pub posterior: &'a Posterior,
    pub nu: f64,
    pub incumbent_mode: IncumbentMode,
    pub candidates: &'a CandidateSet,
}

/// The maximizer of the acquisition together with the quantities the
/// controller and the runtime checks need.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub point: Vec<f64>,
    pub value: f64,
    /// Index into the candidate set, `None` when local refinement moved the
    /// point off the set.
    pub candidate_index: Option<usize>,
    pub incumbent: f64,
    pub mean: f64,
    pub var: f64,
}

pub fn maximize_acquisition(q: &AcquisitionQuery<'_>) -> Result<Selection> {
    check_nu(q.nu)?;
    let pts = q.candidates.points();
    if pts.is_empty() {
        return Err(Error::invalid("candidate set is empty"));
    }
    let moments = pts
        .par_iter()
        .map(|x| q.posterior.mean_var(x))
        .collect::<Result<Vec<_>>>()?;

    let (incumbent, score): (f64, Box<dyn Fn(f64, f64) -> f64 + Sync>) = match q.incumbent_mode {
        IncumbentMode::BestPosteriorMean => {
            let mu_plus = moments.iter().map(|m| m.0).fold(f64::NEG_INFINITY, f64::max);
            let nu = q.nu;
            (
                mu_plus,
                Box::new(move |m, v| ei_from_moments(m, v.sqrt(), mu_plus, nu)),
            )
        }
        IncumbentMode::BestObservedF => {
            let ys = q.posterior.data().outputs();
            let f_best = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let f_best = if f_best.is_finite() { f_best } else { 0.0 };
            (
                f_best,
                Box::new(move |m, v| {
                    let sd = v.sqrt();
                    if sd <= 0.0 {
                        0.0
                    } else {
                        sd * tau((m - f_best) / sd)
                    }
                }),
            )
        }
    };

    let values: Vec<f64> = moments.iter().map(|&(m, v)| score(m, v)).collect();
    let (idx, value) = argmax_first(&values);
    let mut best = Selection {
        point: pts[idx].clone(),
        value,
        candidate_index: Some(idx),
        incumbent,
        mean: moments[idx].0,
        var: moments[idx].1,
    };

    if q.candidates.refine_top() > 0 {
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
        for &start in order.iter().take(q.candidates.refine_top()) {
            let refined = refine(q, &pts[start], values[start], incumbent, &*score)?;
            if let Some(sel) = refined {
                if sel.value > best.value {
                    best = sel;
                }
            }
        }
    }
    Ok(best)
}

const REFINE_SWEEPS: usize = 2;
const TERNARY_STEPS: usize = 24;

/// Coordinate-wise ternary search around `start`. A move is accepted only
/// if it raises the acquisition and keeps the posterior mean at or below
/// the incumbent, so the incumbent stays the maximum mean over every point
/// the search considered.
fn refine(
    q: &AcquisitionQuery<'_>,
    start: &[f64],
    start_value: f64,
    incumbent: f64,
    score: &(dyn Fn(f64, f64) -> f64 + Sync),
) -> Result<Option<Selection>> {
    let domain = q.candidates.domain();
    let spacing = q.candidates.spacing();
    let mut x = start.to_vec();
    let mut fx = start_value;
    let mut moved = false;
    let eval = |x: &[f64]| -> Result<(f64, f64, f64)> {
        let (m, v) = q.posterior.mean_var(x)?;
        Ok((score(m, v), m, v))
    };
    for _ in 0..REFINE_SWEEPS {
        for j in 0..x.len() {
            let mut lo = (x[j] - spacing[j]).max(domain.lower()[j]);
            let mut hi = (x[j] + spacing[j]).min(domain.upper()[j]);
            let mut probe = x.clone();
            for _ in 0..TERNARY_STEPS {
                let a = lo + (hi - lo) / 3.0;
                let b = hi - (hi - lo) / 3.0;
                probe[j] = a;
                let fa = eval(&probe)?.0;
                probe[j] = b;
                let fb = eval(&probe)?.0;
                if fa < fb {
                    lo = a;
                } else {
                    hi = b;
                }
            }
            probe[j] = 0.5 * (lo + hi);
            let (fp, m, _) = eval(&probe)?;
            if fp > fx && m <= incumbent {
                x = probe;
                fx = fp;
                moved = true;
            }
        }
    }
    if !moved {
        return Ok(None);
    }
    let (value, mean, var) = eval(&x)?;
    Ok(Some(Selection {
        point: x,
        value,
        candidate_index: None,
        incumbent,
        mean,
        var,
    }))
}
