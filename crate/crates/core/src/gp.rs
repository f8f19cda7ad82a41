//! Exact zero-mean Gaussian-process regression.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::linalg::{dot, Cholesky};

/// Algebraic variances in `[-NEGATIVE_VARIANCE_SLACK, 0)` are clamped to zero;
/// anything more negative signals a broken factorization.
pub const NEGATIVE_VARIANCE_SLACK: f64 = 1e-8;

/// Observed inputs, noisy outputs, and the noise scale σ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    inputs: Vec<Vec<f64>>,
    outputs: Vec<f64>,
    noise_std: f64,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, outputs: Vec<f64>, noise_std: f64) -> Result<Self> {
        if !(noise_std.is_finite() && noise_std > 0.0) {
            return Err(Error::invalid(format!(
                "noise std must be finite and > 0, got {noise_std}"
            )));
        }
        if inputs.len() != outputs.len() {
            return Err(Error::invalid(format!(
                "{} inputs but {} outputs",
                inputs.len(),
                outputs.len()
            )));
        }
        if let Some(first) = inputs.first() {
            let d = first.len();
            if d == 0 || inputs.iter().any(|x| x.len() != d) {
                return Err(Error::invalid("inputs must share one non-zero dimension"));
            }
        }
        Ok(Dataset {
            inputs,
            outputs,
            noise_std,
        })
    }

    pub fn empty(noise_std: f64) -> Result<Self> {
        Self::new(Vec::new(), Vec::new(), noise_std)
    }

    pub fn push(&mut self, x: Vec<f64>, y: f64) -> Result<()> {
        if let Some(first) = self.inputs.first() {
            if first.len() != x.len() {
                return Err(Error::invalid("new input has the wrong dimension"));
            }
        }
        self.inputs.push(x);
        self.outputs.push(y);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_std * self.noise_std
    }

    /// The first `n` observations.
    pub fn prefix(&self, n: usize) -> Dataset {
        Dataset {
            inputs: self.inputs[..n].to_vec(),
            outputs: self.outputs[..n].to_vec(),
            noise_std: self.noise_std,
        }
    }
}

fn factor_noisy_gram(spec: &KernelSpec, data: &Dataset) -> Result<Option<Cholesky>> {
    if data.is_empty() {
        return Ok(None);
    }
    if data.inputs()[0].len() != spec.dim() {
        return Err(Error::invalid(format!(
            "data has {} input dimensions, kernel has {}",
            data.inputs()[0].len(),
            spec.dim()
        )));
    }
    let mut k = spec.matrix_unchecked(data.inputs());
    k.add_diagonal(data.noise_var());
    Cholesky::factor(&k).map(Some)
}

/// A fitted posterior. Immutable; queries take `&self`.
#[derive(Debug, Clone)]
pub struct Posterior {
    spec: KernelSpec,
    data: Dataset,
    chol: Option<Cholesky>,
    /// `(K + σ²I)⁻¹ y`
    weights: Vec<f64>,
}

impl Posterior {
    pub fn fit(spec: KernelSpec, data: Dataset) -> Result<Self> {
        let chol = factor_noisy_gram(&spec, &data)?;
        let weights = match &chol {
            Some(c) => c.solve(data.outputs()),
            None => Vec::new(),
        };
        Ok(Posterior {
            spec,
            data,
            chol,
            weights,
        })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    /// Jitter that was added on top of σ² to factorize the Gram matrix.
    pub fn jitter(&self) -> f64 {
        self.chol.as_ref().map_or(0.0, |c| c.jitter())
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.dim() {
            return Err(Error::invalid(format!(
                "query point has {} coordinates, expected {}",
                x.len(),
                self.spec.dim()
            )));
        }
        Ok(())
    }

    pub fn mean(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        if self.data.is_empty() {
            return Ok(0.0);
        }
        let k = self.spec.cross_unchecked(self.data.inputs(), x);
        Ok(dot(&k, &self.weights))
    }

    pub fn cov(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(y)?;
        if x == y {
            return self.var(x);
        }
        let prior = self.spec.eval_unchecked(x, y);
        let Some(chol) = &self.chol else {
            return Ok(prior);
        };
        let mut vx = self.spec.cross_unchecked(self.data.inputs(), x);
        let mut vy = self.spec.cross_unchecked(self.data.inputs(), y);
        chol.solve_lower_in_place(&mut vx);
        chol.solve_lower_in_place(&mut vy);
        Ok(prior - dot(&vx, &vy))
    }

    pub fn var(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        self.mean_var_unchecked(x).map(|(_, v)| v)
    }

    /// Mean and variance in one pass.
    pub fn mean_var(&self, x: &[f64]) -> Result<(f64, f64)> {
        self.check_point(x)?;
        self.mean_var_unchecked(x)
    }

    pub(crate) fn mean_var_unchecked(&self, x: &[f64]) -> Result<(f64, f64)> {
        let Some(chol) = &self.chol else {
            return Ok((0.0, 1.0));
        };
        let mut v = self.spec.cross_unchecked(self.data.inputs(), x);
        let mean = dot(&v, &self.weights);
        chol.solve_lower_in_place(&mut v);
        let var = 1.0 - dot(&v, &v);
        Ok((mean, clamp_variance(var)?))
    }
}

fn clamp_variance(var: f64) -> Result<f64> {
    if var >= 0.0 {
        Ok(var)
    } else if var >= -NEGATIVE_VARIANCE_SLACK {
        Ok(0.0)
    } else {
        Err(Error::numerical(format!(
            "posterior variance {var:e} is negative beyond the clamp threshold"
        )))
    }
}

/// `−½ yᵀ(K+σ²I)⁻¹y − ½ log det(K+σ²I) − (t/2) log 2π`.
pub fn log_marginal_likelihood(spec: &KernelSpec, data: &Dataset) -> Result<f64> {
    let Some(chol) = factor_noisy_gram(spec, data)? else {
        return Err(Error::invalid("log marginal likelihood needs at least one observation"));
    };
    let mut v = data.outputs().to_vec();
    chol.solve_lower_in_place(&mut v);
    let t = data.len() as f64;
    Ok(-0.5 * dot(&v, &v) - 0.5 * chol.log_det() - 0.5 * t * (2.0 * std::f64::consts::PI).ln())
}

/// `yᵀ(K+σ²I)⁻¹y`, shared by the likelihood-based amplitude estimate.
pub(crate) fn data_fit_term(spec: &KernelSpec, data: &Dataset) -> Result<f64> {
    let Some(chol) = factor_noisy_gram(spec, data)? else {
        return Ok(0.0);
    };
    let mut v = data.outputs().to_vec();
    chol.solve_lower_in_place(&mut v);
    Ok(dot(&v, &v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{KernelFamily, LengthScales};

    fn se(theta: f64) -> KernelSpec {
        KernelSpec::new(
            KernelFamily::SquaredExponential,
            LengthScales::new(vec![theta]).unwrap(),
        )
    }

    #[test]
    fn prior_when_empty() {
        let p = Posterior::fit(se(0.3), Dataset::empty(0.1).unwrap()).unwrap();
        assert_eq!(p.mean(&[0.7]).unwrap(), 0.0);
        assert_eq!(p.var(&[0.7]).unwrap(), 1.0);
        let k = se(0.3).eval(&[0.1], &[0.5]).unwrap();
        assert_eq!(p.cov(&[0.1], &[0.5]).unwrap(), k);
    }

    #[test]
    fn one_point_closed_form() {
        let data = Dataset::new(vec![vec![0.0]], vec![1.0], 1.0).unwrap();
        let p = Posterior::fit(se(1.0), data).unwrap();
        assert!((p.mean(&[0.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!((p.var(&[0.0]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(p.cov(&[0.0], &[0.0]).unwrap(), p.var(&[0.0]).unwrap());
        // away from the data: k/(k+σ²) with k = e^{-1/2}
        let k = (-0.5f64).exp();
        assert!((p.mean(&[1.0]).unwrap() - k / 2.0).abs() < 1e-15);
        assert!((p.var(&[1.0]).unwrap() - (1.0 - k * k / 2.0)).abs() < 1e-15);
    }

    #[test]
    fn large_noise_shrinks_mean_to_zero() {
        let mut last = f64::INFINITY;
        for sigma in [1.0, 10.0, 100.0, 1000.0] {
            let data = Dataset::new(vec![vec![0.0]], vec![1.0], sigma).unwrap();
            let m = Posterior::fit(se(1.0), data).unwrap().mean(&[0.0]).unwrap();
            assert!((m - 1.0 / (1.0 + sigma * sigma)).abs() < 1e-15);
            assert!(m < last);
            last = m;
        }
        assert!(last < 1e-5);
    }

    #[test]
    fn duplicate_observation_reduces_variance() {
        let one = Dataset::new(vec![vec![0.2]], vec![0.3], 0.5).unwrap();
        let two = Dataset::new(vec![vec![0.2], vec![0.2]], vec![0.3, 0.4], 0.5).unwrap();
        let v1 = Posterior::fit(se(0.4), one).unwrap().var(&[0.2]).unwrap();
        let v2 = Posterior::fit(se(0.4), two).unwrap().var(&[0.2]).unwrap();
        assert!(v2 < v1);
    }

    #[test]
    fn lml_scalar_cases() {
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        let d0 = Dataset::new(vec![vec![0.0]], vec![0.0], 1.0).unwrap();
        let v0 = log_marginal_likelihood(&se(1.0), &d0).unwrap();
        assert!((v0 - (-0.5 * 2f64.ln() - 0.5 * ln2pi)).abs() < 1e-12);
        assert!((v0 + 1.265_512_123_484_645_4).abs() < 1e-9);
        let d1 = Dataset::new(vec![vec![0.0]], vec![1.0], 1.0).unwrap();
        let v1 = log_marginal_likelihood(&se(1.0), &d1).unwrap();
        assert!((v1 - (v0 - 0.25)).abs() < 1e-12);
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(vec![vec![0.0]], vec![], 1.0).is_err());
        assert!(Dataset::new(vec![], vec![], 0.0).is_err());
        assert!(Dataset::new(vec![vec![0.0], vec![0.0, 1.0]], vec![1.0, 2.0], 1.0).is_err());
        let p = Posterior::fit(se(1.0), Dataset::empty(1.0).unwrap()).unwrap();
        assert!(p.mean(&[0.0, 1.0]).is_err());
        assert!(log_marginal_likelihood(&se(1.0), &Dataset::empty(1.0).unwrap()).is_err());
    }

    #[test]
    fn clamp_threshold() {
        assert_eq!(clamp_variance(-5e-9).unwrap(), 0.0);
        assert!(clamp_variance(-1e-7).is_err());
        assert_eq!(clamp_variance(0.25).unwrap(), 0.25);
    }
}
