//! Box domains and the deterministic candidate sets the acquisition is
//! maximized over.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `[lower_i, upper_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct Domain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Domain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::invalid("domain needs matching, non-empty bounds"));
        }
        for (l, u) in lower.iter().zip(&upper) {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(Error::invalid(format!("invalid domain interval [{l}, {u}]")));
            }
        }
        Ok(Domain { lower, upper })
    }

    pub fn unit(dim: usize) -> Self {
        Domain {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    /// Maps a point of the unit cube into the box.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(t, (l, h))| (l + t * (h - l)).clamp(*l, *h))
            .collect()
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| rng.random_range(*l..=*u))
            .collect()
    }
}

impl TryFrom<Vec<[f64; 2]>> for Domain {
    type Error = Error;
    fn try_from(v: Vec<[f64; 2]>) -> Result<Self> {
        Domain::new(v.iter().map(|b| b[0]).collect(), v.iter().map(|b| b[1]).collect())
    }
}

impl From<Domain> for Vec<[f64; 2]> {
    fn from(d: Domain) -> Self {
        d.lower.iter().zip(&d.upper).map(|(l, u)| [*l, *u]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateSpec {
    /// Grid size in one dimension, or low-discrepancy point count otherwise.
    pub points: usize,
    /// Number of best candidates refined locally (ignored for d = 1).
    pub refine_top: usize,
    /// Seed of the low-discrepancy scramble.
    pub scramble_seed: u64,
}

impl CandidateSpec {
    pub const GRID_POINTS_1D: usize = 2001;
    pub const LOW_DISCREPANCY_POINTS: usize = 4096;

    pub fn default_for_dim(dim: usize) -> Self {
        CandidateSpec {
            points: if dim == 1 {
                Self::GRID_POINTS_1D
            } else {
                Self::LOW_DISCREPANCY_POINTS
            },
            refine_top: 8,
            scramble_seed: 0x5eed_cafe,
        }
    }
}

/// A fixed, ordered list of points inside a domain.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    domain: Domain,
    points: Vec<Vec<f64>>,
    refine_top: usize,
}

impl CandidateSet {
    /// Uniform grid (endpoints included) for d = 1, randomly shifted Halton
    /// points for d ≥ 2.
    pub fn build(domain: &Domain, spec: &CandidateSpec) -> Result<Self> {
        if spec.points == 0 {
            return Err(Error::invalid("candidate set must be non-empty"));
        }
        let points = if domain.dim() == 1 {
            uniform_grid_1d(domain, spec.points)
        } else {
            scrambled_halton(domain.dim(), spec.points, spec.scramble_seed)
                .iter()
                .map(|u| domain.from_unit(u))
                .collect()
        };
        Ok(CandidateSet {
            domain: domain.clone(),
            points,
            refine_top: if domain.dim() == 1 { 0 } else { spec.refine_top },
        })
    }

    /// An explicit list of points, no local refinement.
    pub fn from_points(domain: &Domain, points: Vec<Vec<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("candidate set must be non-empty"));
        }
        if let Some(p) = points.iter().find(|p| !domain.contains(p)) {
            return Err(Error::invalid(format!("candidate {p:?} lies outside the domain")));
        }
        Ok(CandidateSet {
            domain: domain.clone(),
            points,
            refine_top: 0,
        })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn refine_top(&self) -> usize {
        self.refine_top
    }

    /// Typical spacing between neighbouring candidates along each axis.
    pub(crate) fn spacing(&self) -> Vec<f64> {
        let per_axis = (self.points.len() as f64).powf(1.0 / self.domain.dim() as f64);
        self.domain
            .lower()
            .iter()
            .zip(self.domain.upper())
            .map(|(l, u)| (u - l) / per_axis.max(1.0))
            .collect()
    }
}

pub fn uniform_grid_1d(domain: &Domain, n: usize) -> Vec<Vec<f64>> {
    let (l, u) = (domain.lower()[0], domain.upper()[0]);
    if n == 1 {
        return vec![vec![0.5 * (l + u)]];
    }
    (0..n)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            vec![(l + t * (u - l)).min(u)]
        })
        .collect()
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// Halton points in `[0,1)^dim` with a seeded Cranley–Patterson rotation.
/// Dimensions beyond the prime table fall back to seeded uniform draws.
pub fn scrambled_halton(dim: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
    (0..n)
        .map(|i| {
            (0..dim)
                .map(|j| match PRIMES.get(j) {
                    Some(&b) => (radical_inverse(i as u64 + 1, b) + shift[j]).fract(),
                    None => rng.random::<f64>(),
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_covers_endpoints() {
        let d = Domain::unit(1);
        let c = CandidateSet::build(&d, &CandidateSpec::default_for_dim(1)).unwrap();
        assert_eq!(c.len(), 2001);
        assert_eq!(c.points()[0], vec![0.0]);
        assert_eq!(c.points()[2000], vec![1.0]);
        assert_eq!(c.points()[1800], vec![0.9]);
        assert_eq!(c.refine_top(), 0);
    }

    #[test]
    fn halton_points_stay_in_domain() {
        let d = Domain::new(vec![-1.0, 2.0, 0.0], vec![1.0, 3.0, 0.5]).unwrap();
        let c = CandidateSet::build(&d, &CandidateSpec::default_for_dim(3)).unwrap();
        assert_eq!(c.len(), 4096);
        assert!(c.points().iter().all(|p| d.contains(p)));
        let again = CandidateSet::build(&d, &CandidateSpec::default_for_dim(3)).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn halton_is_evenly_spread() {
        let pts = scrambled_halton(2, 1024, 7);
        // every cell of a 4x4 partition gets close to 64 points
        let mut counts = [0usize; 16];
        for p in &pts {
            let i = (p[0] * 4.0) as usize + 4 * (p[1] * 4.0) as usize;
            counts[i] += 1;
        }
        assert!(counts.iter().all(|c| (60..=68).contains(c)), "{counts:?}");
    }

    #[test]
    fn domain_validation_and_serde() {
        assert!(Domain::new(vec![1.0], vec![0.0]).is_err());
        assert!(Domain::new(vec![], vec![]).is_err());
        let d: Domain = serde_json::from_str("[[0.0, 1.0], [2.0, 4.0]]").unwrap();
        assert_eq!(d.dim(), 2);
        assert!(d.contains(&[0.5, 3.0]));
        assert!(!d.contains(&[0.5, 5.0]));
        assert!(serde_json::from_str::<Domain>("[[1.0, 0.0]]").is_err());
        let cs = CandidateSet::from_points(&d, vec![vec![2.0, 2.0]]);
        assert!(cs.is_err());
    }
}
