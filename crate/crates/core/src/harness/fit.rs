use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{HarnessError, TrialRecord};

pub const BOOTSTRAP_RESAMPLES: usize = 200;
pub const BOOTSTRAP_SEED: u64 = 0xB007_5EED;
pub const MIN_FIT_LENGTHS: usize = 4;
pub const MIN_FIT_TRIALS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    DvError,
    Redundancy,
}

impl Metric {
    pub fn of(&self, r: &TrialRecord) -> f64 {
        match self {
            Metric::DvError => r.dv_mean,
            Metric::Redundancy => r.redundancy,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Metric::DvError => "dv_error",
            Metric::Redundancy => "redundancy",
        }
    }
}

/// Least-squares line through `(ln n, ln median)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Bootstrap 90% interval for the slope.
    pub ci_low: f64,
    pub ci_high: f64,
    /// `(n, median)` pairs the line was fitted to.
    pub medians: Vec<(usize, f64)>,
}

impl RateFit {
    pub fn ci_excludes_zero(&self) -> bool {
        self.ci_high < 0.0 || self.ci_low > 0.0
    }
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Linear-interpolated sample quantile.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Returns `(slope, intercept, r_squared)`.
pub fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r2)
}

type MedianFit = (Vec<(usize, f64)>, (f64, f64, f64));

fn fit_medians(groups: &BTreeMap<usize, Vec<f64>>) -> Result<MedianFit, HarnessError> {
    let medians: Vec<(usize, f64)> = groups.iter().map(|(&n, v)| (n, median(v))).collect();
    if let Some((n, m)) = medians.iter().find(|(_, m)| !(*m > 0.0)) {
        return Err(HarnessError::Analysis(format!("median {m} at n = {n} is not positive; no log-log fit")));
    }
    let x: Vec<f64> = medians.iter().map(|(n, _)| (*n as f64).ln()).collect();
    let y: Vec<f64> = medians.iter().map(|(_, m)| m.ln()).collect();
    Ok((medians, least_squares(&x, &y)))
}

/// Fits `ln median(metric)` against `ln n`, with a seeded bootstrap over
/// trials within each block length.
pub fn fit_rate_exponent(records: &[TrialRecord], metric: Metric) -> Result<RateFit, HarnessError> {
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in records {
        groups.entry(r.n).or_default().push(metric.of(r));
    }
    if groups.len() < MIN_FIT_LENGTHS {
        return Err(HarnessError::Analysis(format!(
            "{} distinct block lengths; a rate fit needs at least {MIN_FIT_LENGTHS}",
            groups.len()
        )));
    }
    if let Some((n, v)) = groups.iter().find(|(_, v)| v.len() < MIN_FIT_TRIALS) {
        return Err(HarnessError::Analysis(format!(
            "{} trials at n = {n}; a rate fit needs at least {MIN_FIT_TRIALS}",
            v.len()
        )));
    }
    let (medians, (slope, intercept, r_squared)) = fit_medians(&groups)?;

    let mut rng = ChaCha8Rng::seed_from_u64(BOOTSTRAP_SEED);
    let mut slopes = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let resampled: BTreeMap<usize, Vec<f64>> = groups
            .iter()
            .map(|(&n, v)| (n, (0..v.len()).map(|_| v[rng.random_range(0..v.len())]).collect()))
            .collect();
        // a resample with a nonpositive median carries no slope information
        if let Ok((_, (s, _, _))) = fit_medians(&resampled) {
            slopes.push(s);
        }
    }
    if slopes.is_empty() {
        return Err(HarnessError::Analysis("every bootstrap resample had a nonpositive median".into()));
    }
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        ci_low: quantile(&slopes, 0.05),
        ci_high: quantile(&slopes, 0.95),
        medians,
    })
}
