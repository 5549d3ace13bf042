//! Parametric i.i.d. source families on a compact interval.

mod component;
mod family;
mod quadrature;

use std::fmt;
use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use component::{Component, Statistic, TruncatedGaussian};
pub use family::{ExpConstants, ExpFamily, Family, MixtureFamily, COMPONENT_MASS_TOL, MAX_LOG_RATIO};
pub use quadrature::QuadratureGrid;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SourceError {
    #[error("invalid support [{lo}, {hi}]")]
    InvalidSupport { lo: f64, hi: f64 },
    #[error("x = {x} lies outside the support [{lo}, {hi}]")]
    OutOfSupport { x: f64, lo: f64, hi: f64 },
    #[error("invalid family: {0}")]
    InvalidFamily(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("relative entropy is infinite: p_eta vanishes where p_theta does not")]
    InfiniteDivergence,
}

/// The source alphabet `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Support {
    pub lo: f64,
    pub hi: f64,
}

impl Support {
    pub fn new(lo: f64, hi: f64) -> Result<Self, SourceError> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(SourceError::InvalidSupport { lo, hi });
        }
        Ok(Support { lo, hi })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }
}

/// A point of the parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(coords: Vec<f64>) -> Self {
        ParamVector(coords)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn euclidean_distance(&self, other: &ParamVector) -> f64 {
        self.iter().zip(other.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl fmt::Display for ParamVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| format!("{v}")).collect();
        write!(f, "{}", parts.join(";"))
    }
}

/// Axis-aligned box `prod [lo_i, hi_i]` of natural parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl ParamBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, SourceError> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(SourceError::InvalidFamily(format!(
                "theta_box bounds have lengths {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        for (i, (a, b)) in lo.iter().zip(&hi).enumerate() {
            if !(a.is_finite() && b.is_finite() && a <= b) {
                return Err(SourceError::InvalidFamily(format!("theta_box axis {i} is [{a}, {b}]")));
            }
        }
        Ok(ParamBox { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim() && theta.iter().zip(self.lo.iter().zip(&self.hi)).all(|(t, (a, b))| *t >= *a && *t <= *b)
    }

    /// All `2^k` vertices, in binary order of the axis choices.
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let k = self.dim();
        (0..1usize << k)
            .map(|mask| (0..k).map(|i| if mask >> i & 1 == 1 { self.hi[i] } else { self.lo[i] }).collect())
            .collect()
    }
}

/// The parameter set `Theta` of a family.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamSpace {
    /// Probability simplex in `R^k`.
    Simplex { k: usize },
    Box(ParamBox),
}

pub const SIMPLEX_SUM_TOL: f64 = 1e-12;

impl ParamSpace {
    pub fn dim(&self) -> usize {
        match self {
            ParamSpace::Simplex { k } => *k,
            ParamSpace::Box(b) => b.dim(),
        }
    }

    pub fn validate(&self, theta: &ParamVector) -> Result<(), SourceError> {
        if theta.len() != self.dim() {
            return Err(SourceError::InvalidParam(format!(
                "expected {} coordinates, got {}",
                self.dim(),
                theta.len()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(SourceError::InvalidParam(format!("non-finite coordinate in {theta}")));
        }
        match self {
            ParamSpace::Simplex { .. } => {
                let sum: f64 = theta.iter().sum();
                if theta.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > SIMPLEX_SUM_TOL {
                    return Err(SourceError::InvalidParam(format!("{theta} is not in the probability simplex")));
                }
            }
            ParamSpace::Box(b) => {
                if !b.contains(theta.as_slice()) {
                    return Err(SourceError::InvalidParam(format!("{theta} lies outside theta_box")));
                }
            }
        }
        Ok(())
    }

    pub fn centroid(&self) -> ParamVector {
        match self {
            ParamSpace::Simplex { k } => ParamVector(vec![1.0 / *k as f64; *k]),
            ParamSpace::Box(b) => ParamVector(b.lo.iter().zip(&b.hi).map(|(a, c)| 0.5 * (a + c)).collect()),
        }
    }

    /// A parameter drawn from a fixed distribution on the space (flat
    /// Dirichlet on the simplex, uniform on the box).
    pub fn random_point<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        match self {
            ParamSpace::Simplex { k } => {
                let e: Vec<f64> = (0..*k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
                let total: f64 = e.iter().sum();
                let mut theta: Vec<f64> = e.iter().map(|v| v / total).collect();
                // push the rounding residue into the largest coordinate
                let residue = 1.0 - theta.iter().sum::<f64>();
                let imax = (0..*k).max_by(|&a, &b| theta[a].total_cmp(&theta[b])).unwrap_or(0);
                theta[imax] += residue;
                ParamVector(theta)
            }
            ParamSpace::Box(b) => {
                ParamVector(b.lo.iter().zip(&b.hi).map(|(a, c)| a + (c - a) * rng.random::<f64>()).collect())
            }
        }
    }
}

/// A member `P_theta` of a family.
#[derive(Debug, Clone)]
pub struct SourceModel {
    family: Arc<Family>,
    theta: ParamVector,
    log_normalizer: f64,
    cdf_table: Arc<OnceLock<Vec<f64>>>,
}

impl SourceModel {
    pub fn new(family: Arc<Family>, theta: ParamVector) -> Result<Self, SourceError> {
        family.validate_param(&theta)?;
        let log_normalizer = match family.as_ref() {
            Family::Mixture(_) => 0.0,
            Family::Exponential(e) => e.log_normalizer(theta.as_slice())?,
        };
        Ok(SourceModel { family, theta, log_normalizer, cdf_table: Arc::new(OnceLock::new()) })
    }

    pub fn family(&self) -> &Arc<Family> {
        &self.family
    }

    pub fn theta(&self) -> &ParamVector {
        &self.theta
    }

    pub fn support(&self) -> Support {
        self.family.support()
    }

    /// Density at `x`, zero outside the support.
    pub fn pdf(&self, x: f64) -> f64 {
        match self.family.as_ref() {
            Family::Mixture(m) => m.pdf(self.theta.as_slice(), x),
            Family::Exponential(e) => e.pdf(self.theta.as_slice(), self.log_normalizer, x),
        }
    }

    pub fn density(&self, x: f64) -> Result<f64, SourceError> {
        let s = self.support();
        if !s.contains(x) {
            return Err(SourceError::OutOfSupport { x, lo: s.lo, hi: s.hi });
        }
        Ok(self.pdf(x))
    }

    pub fn density_on(&self, quad: &QuadratureGrid) -> Vec<f64> {
        quad.tabulate(|x| self.pdf(x))
    }

    /// `n` i.i.d. draws, deterministic in `seed`.
    pub fn sample(&self, seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(&mut rng, n)
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        match self.family.as_ref() {
            Family::Mixture(m) => {
                let theta = self.theta.as_slice();
                let last = theta.iter().rposition(|&t| t > 0.0).unwrap_or(0);
                (0..n)
                    .map(|_| {
                        let pick: f64 = rng.random();
                        let mut acc = 0.0;
                        let mut idx = last;
                        for (i, &t) in theta.iter().enumerate() {
                            acc += t;
                            if pick < acc && t > 0.0 {
                                idx = i;
                                break;
                            }
                        }
                        m.components()[idx].quantile(rng.random())
                    })
                    .collect()
            }
            Family::Exponential(e) => {
                let quad = e.quadrature();
                let cdf = self.cdf_table.get_or_init(|| cumulative(quad, &self.density_on(quad)));
                (0..n).map(|_| invert_table(quad.points(), cdf, rng.random())).collect()
            }
        }
    }
}

/// Normalized cumulative trapezoid integral of tabulated density values.
fn cumulative(quad: &QuadratureGrid, values: &[f64]) -> Vec<f64> {
    let pts = quad.points();
    let mut out = Vec::with_capacity(pts.len());
    let mut acc = 0.0;
    out.push(0.0);
    for j in 1..pts.len() {
        acc += 0.5 * (pts[j] - pts[j - 1]) * (values[j] + values[j - 1]);
        out.push(acc);
    }
    let total = acc;
    for v in &mut out {
        *v /= total;
    }
    out
}

fn invert_table(points: &[f64], cdf: &[f64], u: f64) -> f64 {
    let j = cdf.partition_point(|&c| c <= u);
    if j == 0 {
        return points[0];
    }
    if j >= cdf.len() {
        return points[points.len() - 1];
    }
    let (c0, c1) = (cdf[j - 1], cdf[j]);
    let t = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.0 };
    points[j - 1] + t * (points[j] - points[j - 1])
}

pub fn density(model: &SourceModel, x: f64) -> Result<f64, SourceError> {
    model.density(x)
}

pub fn sample(model: &SourceModel, seed: u64, n: usize) -> Vec<f64> {
    model.sample(seed, n)
}

pub fn exp_normalizer(family: &ExpFamily, theta: &ParamVector) -> Result<f64, SourceError> {
    ParamSpace::Box(family.theta_box().clone()).validate(theta)?;
    family.log_normalizer(theta.as_slice())
}

/// `0.5 * int |p - q|` of two tabulated densities, clamped to `[0, 1]`.
pub fn tabulated_variational_distance(quad: &QuadratureGrid, p: &[f64], q: &[f64]) -> f64 {
    let s: f64 = quad.weights().iter().zip(p.iter().zip(q)).map(|(w, (a, b))| w * (a - b).abs()).sum();
    (0.5 * s).clamp(0.0, 1.0)
}

pub fn variational_distance(
    family: &Arc<Family>,
    theta: &ParamVector,
    eta: &ParamVector,
    quad: &QuadratureGrid,
) -> Result<f64, SourceError> {
    let p = SourceModel::new(family.clone(), theta.clone())?.density_on(quad);
    let q = SourceModel::new(family.clone(), eta.clone())?.density_on(quad);
    Ok(tabulated_variational_distance(quad, &p, &q))
}

/// `D(P_theta || P_eta)` in nats.
pub fn relative_entropy(
    family: &Arc<Family>,
    theta: &ParamVector,
    eta: &ParamVector,
    quad: &QuadratureGrid,
) -> Result<f64, SourceError> {
    let p = SourceModel::new(family.clone(), theta.clone())?.density_on(quad);
    let q = SourceModel::new(family.clone(), eta.clone())?.density_on(quad);
    let mut total = 0.0;
    for ((w, a), b) in quad.weights().iter().zip(&p).zip(&q) {
        if *a > 0.0 {
            if *b <= 0.0 {
                return Err(SourceError::InfiniteDivergence);
            }
            total += w * a * (a / b).ln();
        }
    }
    Ok(total)
}

/// Lipschitz constant of `theta -> P_theta` in `d_V` for a `k`-component mixture.
pub fn mixture_lipschitz(k: usize) -> f64 {
    (k as f64).sqrt() / 2.0
}
