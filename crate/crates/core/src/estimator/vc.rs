use std::collections::HashSet;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EstimatorError, YatracosSet};
use crate::sources::Family;

/// Brute-force shatter checks enumerate `2^points` patterns; keep it small.
pub const MAX_SHATTER_POINTS: usize = 20;
/// Size of the sampled subfamily of Yatracos sets used by `vc_upper_check`.
const SAMPLED_SETS: usize = 4096;

/// A set of reals given by its membership test.
pub trait Indicator {
    fn contains(&self, x: f64) -> bool;
}

impl Indicator for YatracosSet {
    fn contains(&self, x: f64) -> bool {
        YatracosSet::contains(self, x)
    }
}

/// `[a, inf)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfLine {
    pub a: f64,
}

impl Indicator for HalfLine {
    fn contains(&self, x: f64) -> bool {
        x >= self.a
    }
}

fn pattern<S: Indicator>(set: &S, points: &[f64]) -> u32 {
    points.iter().enumerate().fold(0u32, |acc, (i, &x)| if set.contains(x) { acc | 1 << i } else { acc })
}

/// Number of distinct membership patterns the class cuts out of `points`.
/// An empty class has coefficient 0.
pub fn shatter_coefficient<S: Indicator>(sets: &[S], points: &[f64]) -> Result<u64, EstimatorError> {
    if points.len() > MAX_SHATTER_POINTS {
        return Err(EstimatorError::TooManyPoints { got: points.len(), cap: MAX_SHATTER_POINTS });
    }
    let patterns: HashSet<u32> = sets.iter().map(|s| pattern(s, points)).collect();
    Ok(patterns.len() as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VcOutcome {
    pub passed: bool,
    /// First point set found shattered, if any.
    pub counterexample: Option<Vec<f64>>,
    /// Largest pattern count seen over all trials.
    pub max_patterns: u64,
}

/// Draws `trials` random point sets of size `points_per_trial` and checks
/// that none is shattered by a dense random subfamily of Yatracos sets.
pub fn vc_upper_check(
    family: &Arc<Family>,
    trials: usize,
    points_per_trial: usize,
    seed: u64,
) -> Result<VcOutcome, EstimatorError> {
    if points_per_trial > MAX_SHATTER_POINTS {
        return Err(EstimatorError::TooManyPoints { got: points_per_trial, cap: MAX_SHATTER_POINTS });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let space = family.param_space();
    let mut sets = Vec::with_capacity(SAMPLED_SETS);
    while sets.len() < SAMPLED_SETS {
        let theta = space.random_point(&mut rng);
        let eta = space.random_point(&mut rng);
        if theta != eta {
            sets.push(YatracosSet::new(family, theta, eta)?);
        }
    }
    let support = family.support();
    let full = 1u64 << points_per_trial;
    let mut max_patterns = 0;
    for _ in 0..trials {
        let points: Vec<f64> =
            (0..points_per_trial).map(|_| support.lo + support.width() * rng.random::<f64>()).collect();
        let count = shatter_coefficient(&sets, &points)?;
        max_patterns = max_patterns.max(count);
        if count == full {
            return Ok(VcOutcome { passed: false, counterexample: Some(points), max_patterns });
        }
    }
    Ok(VcOutcome { passed: true, counterexample: None, max_patterns })
}
