//! Stationary ARD covariance functions with unit signal variance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Per-dimension length scales; every entry is finite and strictly positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LengthScales(Vec<f64>);

impl LengthScales {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("length scales need at least one dimension"));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::invalid(format!(
                "length scales must be finite and > 0, got {v}"
            )));
        }
        Ok(LengthScales(values))
    }

    /// The same length scale repeated over `dim` dimensions.
    pub fn isotropic(value: f64, dim: usize) -> Result<Self> {
        Self::new(vec![value; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Multiplies every length scale by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|v| v * c).collect())
    }

    /// Componentwise `self <= other`.
    pub fn le(&self, other: &LengthScales) -> bool {
        self.dim() == other.dim() && self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }
}

impl TryFrom<Vec<f64>> for LengthScales {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        LengthScales::new(v)
    }
}

impl From<LengthScales> for Vec<f64> {
    fn from(l: LengthScales) -> Self {
        l.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelFamily {
    #[serde(rename = "se", alias = "squared_exponential")]
    SquaredExponential,
    #[serde(rename = "matern52")]
    Matern52,
}

impl KernelFamily {
    /// Kernel profile as a function of the scaled distance `r`.
    #[inline]
    pub fn profile(self, r: f64) -> f64 {
        match self {
            KernelFamily::SquaredExponential => (-0.5 * r * r).exp(),
            KernelFamily::Matern52 => {
                let s = 5f64.sqrt() * r;
                (-s).exp() * (1.0 + s + 5.0 / 3.0 * r * r)
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::SquaredExponential => "se",
            KernelFamily::Matern52 => "matern52",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub lengthscales: LengthScales,
}

/// `sqrt(Σ ((x_i − y_i)/θ_i)²)`.
pub fn scaled_distance(x: &[f64], y: &[f64], theta: &LengthScales) -> Result<f64> {
    check_dims(x, y, theta.dim())?;
    Ok(scaled_distance_unchecked(x, y, theta.values()))
}

#[inline]
pub(crate) fn scaled_distance_unchecked(x: &[f64], y: &[f64], theta: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .zip(theta)
        .map(|((a, b), l)| {
            let z = (a - b) / l;
            z * z
        })
        .sum::<f64>()
        .sqrt()
}

fn check_dims(x: &[f64], y: &[f64], d: usize) -> Result<()> {
    if x.len() != d || y.len() != d {
        return Err(Error::invalid(format!(
            "dimension mismatch: points have {} and {} coordinates, kernel expects {d}",
            x.len(),
            y.len()
        )));
    }
    Ok(())
}

impl KernelSpec {
    pub fn new(family: KernelFamily, lengthscales: LengthScales) -> Self {
        KernelSpec {
            family,
            lengthscales,
        }
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.dim()
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dims(x, y, self.dim())?;
        Ok(self.eval_unchecked(x, y))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        if x == y {
            return 1.0;
        }
        self.family
            .profile(scaled_distance_unchecked(x, y, self.lengthscales.values()))
    }

    /// `K_ij = k(x_i, x_j)`; exactly symmetric with a unit diagonal.
    pub fn matrix(&self, points: &[Vec<f64>]) -> Result<Matrix> {
        for p in points {
            check_dims(p, p, self.dim())?;
        }
        Ok(self.matrix_unchecked(points))
    }

    pub(crate) fn matrix_unchecked(&self, points: &[Vec<f64>]) -> Matrix {
        Matrix::from_symmetric_fn(points.len(), |i, j| {
            if i == j {
                1.0
            } else {
                self.eval_unchecked(&points[i], &points[j])
            }
        })
    }

    /// Kernel vector `k(x_i, x)` against every row of `points`.
    pub(crate) fn cross_unchecked(&self, points: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        points.iter().map(|p| self.eval_unchecked(p, x)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ls(v: &[f64]) -> LengthScales {
        LengthScales::new(v.to_vec()).unwrap()
    }

    #[test]
    fn distance_examples() {
        assert_eq!(scaled_distance(&[0.0], &[1.0], &ls(&[1.0])).unwrap(), 1.0);
        assert_eq!(scaled_distance(&[0.3, 0.7], &[0.3, 0.7], &ls(&[0.2, 5.0])).unwrap(), 0.0);
        let r = scaled_distance(&[0.0, 0.0], &[0.3, 0.4], &ls(&[0.1, 0.1])).unwrap();
        assert!((r - 5.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        assert!(matches!(
            scaled_distance(&[0.0, 1.0], &[1.0], &ls(&[1.0, 1.0])),
            Err(Error::InvalidArgument(_))
        ));
        let k = KernelSpec::new(KernelFamily::Matern52, ls(&[1.0]));
        assert!(k.eval(&[0.0, 0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn invalid_length_scales() {
        assert!(LengthScales::new(vec![]).is_err());
        assert!(LengthScales::new(vec![1.0, 0.0]).is_err());
        assert!(LengthScales::new(vec![f64::NAN]).is_err());
        assert!(serde_json::from_str::<LengthScales>("[1.0, -2.0]").is_err());
    }

    #[test]
    fn kernel_values() {
        let se = KernelSpec::new(KernelFamily::SquaredExponential, ls(&[1.0]));
        assert_eq!(se.eval(&[0.4], &[0.4]).unwrap(), 1.0);
        assert!((se.eval(&[0.0], &[1.0]).unwrap() - 0.606_530_659_712_633_4).abs() < 1e-15);
        let m = KernelSpec::new(KernelFamily::Matern52, ls(&[0.3]));
        assert_eq!(m.eval(&[0.2], &[0.2]).unwrap(), 1.0);
        // r = 1: e^{-√5}(1 + √5 + 5/3)
        let m1 = KernelSpec::new(KernelFamily::Matern52, ls(&[1.0]));
        let expect = (-5f64.sqrt()).exp() * (1.0 + 5f64.sqrt() + 5.0 / 3.0);
        assert!((m1.eval(&[0.0], &[1.0]).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn kernel_matrix_examples() {
        let se = KernelSpec::new(KernelFamily::SquaredExponential, ls(&[1.0]));
        assert_eq!(se.matrix(&[vec![0.5]]).unwrap().get(0, 0), 1.0);
        let k = se.matrix(&[vec![0.0], vec![1.0]]).unwrap();
        let off = (-0.5f64).exp();
        assert_eq!(k.get(0, 0), 1.0);
        assert_eq!(k.get(1, 1), 1.0);
        assert!((k.get(0, 1) - off).abs() < 1e-15);
        assert!(k.is_symmetric());
    }

    #[test]
    fn monotone_decay_on_grid() {
        for fam in [KernelFamily::SquaredExponential, KernelFamily::Matern52] {
            let k = KernelSpec::new(fam, ls(&[0.3]));
            let vals: Vec<f64> = (0..500)
                .map(|i| k.eval(&[0.0], &[i as f64 * 0.01]).unwrap())
                .collect();
            assert!(vals.windows(2).all(|w| w[1] <= w[0]), "{fam:?}");
        }
    }

    proptest! {
        #[test]
        fn symmetric_with_unit_diagonal(
            x in prop::collection::vec(-3.0f64..3.0, 3),
            y in prop::collection::vec(-3.0f64..3.0, 3),
            th in prop::collection::vec(0.05f64..4.0, 3),
            matern in any::<bool>(),
        ) {
            let fam = if matern { KernelFamily::Matern52 } else { KernelFamily::SquaredExponential };
            let k = KernelSpec::new(fam, LengthScales::new(th).unwrap());
            prop_assert_eq!(k.eval(&x, &y).unwrap(), k.eval(&y, &x).unwrap());
            prop_assert_eq!(k.eval(&x, &x).unwrap(), 1.0);
            let v = k.eval(&x, &y).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
        }

        #[test]
        fn length_scale_scaling(
            x in prop::collection::vec(-3.0f64..3.0, 2),
            y in prop::collection::vec(-3.0f64..3.0, 2),
            th in prop::collection::vec(0.05f64..4.0, 2),
            c in 0.1f64..10.0,
            matern in any::<bool>(),
        ) {
            let fam = if matern { KernelFamily::Matern52 } else { KernelFamily::SquaredExponential };
            let theta = LengthScales::new(th).unwrap();
            let scaled = KernelSpec::new(fam, theta.scaled(c).unwrap());
            let base = KernelSpec::new(fam, theta);
            let xs: Vec<f64> = x.iter().map(|v| v / c).collect();
            let ys: Vec<f64> = y.iter().map(|v| v / c).collect();
            let a = scaled.eval(&x, &y).unwrap();
            let b = base.eval(&xs, &ys).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
