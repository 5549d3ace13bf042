use nalgebra::{DMatrix, DVector};

use super::{Component, ParamBox, ParamSpace, ParamVector, QuadratureGrid, SourceError, Statistic, Support};

/// Components must carry unit mass on the support to this tolerance.
pub const COMPONENT_MASS_TOL: f64 = 1e-6;
/// Families whose grid estimate of `sup |ln p / p_theta|` exceeds this are rejected.
pub const MAX_LOG_RATIO: f64 = 50.0;
const GRAM_RANK_TOL: f64 = 1e-10;

/// Convex combinations `sum_i theta_i p_i` of fixed component densities.
#[derive(Debug, Clone)]
pub struct MixtureFamily {
    components: Vec<Component>,
    support: Support,
}

impl MixtureFamily {
    pub fn new(components: Vec<Component>, support: Support) -> Result<Self, SourceError> {
        if components.len() < 2 {
            return Err(SourceError::InvalidFamily(format!(
                "a mixture needs at least 2 components, got {}",
                components.len()
            )));
        }
        for (i, c) in components.iter().enumerate() {
            let mass = c.cdf(support.hi) - c.cdf(support.lo);
            let (lo, hi) = c.range();
            if lo < support.lo || hi > support.hi || (mass - 1.0).abs() > COMPONENT_MASS_TOL {
                return Err(SourceError::InvalidFamily(format!(
                    "component {i} ({c:?}) does not integrate to 1 over [{}, {}]",
                    support.lo, support.hi
                )));
            }
        }
        let quad = QuadratureGrid::with_default(support);
        let table: Vec<Vec<f64>> = components.iter().map(|c| quad.tabulate(|x| c.pdf(x))).collect();
        let k = components.len();
        let gram = DMatrix::from_fn(k, k, |i, j| {
            quad.integrate(&table[i].iter().zip(&table[j]).map(|(a, b)| a * b).collect::<Vec<_>>())
        });
        if !gram_full_rank(&gram) {
            return Err(SourceError::InvalidFamily(
                "mixture components are linearly dependent".to_string(),
            ));
        }
        Ok(MixtureFamily { components, support })
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn support(&self) -> Support {
        self.support
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn pdf(&self, theta: &[f64], x: f64) -> f64 {
        if !self.support.contains(x) {
            return 0.0;
        }
        theta.iter().zip(&self.components).map(|(t, c)| t * c.pdf(x)).sum()
    }
}

/// Constants of the local Lipschitz bound for an exponential family,
/// estimated on the quadrature grid.
#[derive(Debug, Clone)]
pub struct ExpConstants {
    /// Grid estimate of `sup_theta || ln p / p_theta ||_inf`.
    pub log_ratio_sup: f64,
    /// `0.5 * exp(0.5 * log_ratio_sup)`.
    pub m0: f64,
    /// `sup_f ||f||_inf / ||f||_2` over the span of `{1, h_1, .., h_k}`.
    pub a_k: f64,
    /// Covariance of `h` under the reference density.
    pub covariance: DMatrix<f64>,
}

impl ExpConstants {
    /// `L2(P)` norm of the centered statistic `(theta - eta) . h`; equals the
    /// Euclidean norm when the statistics are orthonormal.
    pub fn stat_norm(&self, theta: &ParamVector, eta: &ParamVector) -> f64 {
        let u = DVector::from_iterator(theta.len(), theta.iter().zip(eta.iter()).map(|(a, b)| a - b));
        (u.transpose() * &self.covariance * &u)[(0, 0)].max(0.0).sqrt()
    }

    /// `m0 * exp(A_k r) * r` with `r = stat_norm(theta, eta)`.
    pub fn dv_bound(&self, theta: &ParamVector, eta: &ParamVector) -> f64 {
        let r = self.stat_norm(theta, eta);
        self.m0 * (self.a_k * r).exp() * r
    }
}

/// Densities `p(x) exp(theta . h(x) - g(theta))` over a compact box of
/// natural parameters.
#[derive(Debug, Clone)]
pub struct ExpFamily {
    reference: Component,
    stats: Vec<Statistic>,
    theta_box: ParamBox,
    support: Support,
    quad: QuadratureGrid,
    ref_table: Vec<f64>,
    stat_table: Vec<Vec<f64>>,
    constants: ExpConstants,
}

impl ExpFamily {
    pub fn new(
        reference: Component,
        stats: Vec<Statistic>,
        theta_box: ParamBox,
        support: Support,
    ) -> Result<Self, SourceError> {
        Self::with_grid(reference, stats, theta_box, QuadratureGrid::with_default(support), support)
    }

    pub fn with_grid(
        reference: Component,
        stats: Vec<Statistic>,
        theta_box: ParamBox,
        quad: QuadratureGrid,
        support: Support,
    ) -> Result<Self, SourceError> {
        if stats.is_empty() {
            return Err(SourceError::InvalidFamily("exponential family needs at least one statistic".into()));
        }
        if theta_box.dim() != stats.len() {
            return Err(SourceError::InvalidFamily(format!(
                "theta_box has {} axes but there are {} statistics",
                theta_box.dim(),
                stats.len()
            )));
        }
        let mass = reference.cdf(support.hi) - reference.cdf(support.lo);
        let (lo, hi) = reference.range();
        if lo < support.lo || hi > support.hi || (mass - 1.0).abs() > COMPONENT_MASS_TOL {
            return Err(SourceError::InvalidFamily(format!(
                "reference density {reference:?} does not integrate to 1 over the support"
            )));
        }
        let ref_table = quad.tabulate(|x| reference.pdf(x));
        let stat_table: Vec<Vec<f64>> = stats.iter().map(|h| quad.tabulate(|x| h.eval(x))).collect();

        let k = stats.len();
        // basis (1, h_1, .., h_k) and its Gram matrix under the reference measure
        let basis = |j: usize, i: usize| if i == 0 { 1.0 } else { stat_table[i - 1][j] };
        let gram: DMatrix<f64> = DMatrix::from_fn(k + 1, k + 1, |a, b| {
            (0..quad.len()).map(|j| quad.weights()[j] * ref_table[j] * basis(j, a) * basis(j, b)).sum()
        });
        if gram.iter().any(|v| !v.is_finite()) {
            return Err(SourceError::InvalidFamily("statistics are not square-integrable".into()));
        }
        if !gram_full_rank(&gram) {
            return Err(SourceError::InvalidFamily(
                "{1, h_1, .., h_k} is linearly dependent under the reference density".into(),
            ));
        }
        let gram_inv = gram
            .clone()
            .try_inverse()
            .ok_or_else(|| SourceError::Numeric("Gram matrix is singular".into()))?;
        let mut a_k: f64 = 0.0;
        for j in 0..quad.len() {
            if ref_table[j] <= 0.0 {
                continue;
            }
            let b = DVector::from_fn(k + 1, |i, _| basis(j, i));
            a_k = a_k.max((b.transpose() * &gram_inv * &b)[(0, 0)].max(0.0).sqrt());
        }
        let means: Vec<f64> = (1..=k).map(|i| gram[(0, i)]).collect();
        let covariance = DMatrix::from_fn(k, k, |a, b| gram[(a + 1, b + 1)] - means[a] * means[b]);

        let mut family = ExpFamily {
            reference,
            stats,
            theta_box,
            support,
            quad,
            ref_table,
            stat_table,
            constants: ExpConstants { log_ratio_sup: 0.0, m0: 0.5, a_k, covariance },
        };

        // |g(theta) - theta . h(x)| is convex in theta, so the box corners
        // carry the supremum over the box.
        let mut log_ratio_sup: f64 = 0.0;
        for corner in family.theta_box.corners() {
            let g = family.log_normalizer(&corner)?;
            for j in 0..family.quad.len() {
                if family.ref_table[j] <= 0.0 {
                    continue;
                }
                let s: f64 = (0..k).map(|i| corner[i] * family.stat_table[i][j]).sum();
                log_ratio_sup = log_ratio_sup.max((g - s).abs());
            }
        }
        if !(log_ratio_sup <= MAX_LOG_RATIO) {
            return Err(SourceError::InvalidFamily(format!(
                "sup |ln p/p_theta| estimated at {log_ratio_sup:.3} exceeds {MAX_LOG_RATIO}"
            )));
        }
        family.constants.log_ratio_sup = log_ratio_sup;
        family.constants.m0 = 0.5 * (0.5 * log_ratio_sup).exp();
        Ok(family)
    }

    pub fn reference(&self) -> &Component {
        &self.reference
    }

    pub fn stats(&self) -> &[Statistic] {
        &self.stats
    }

    pub fn theta_box(&self) -> &ParamBox {
        &self.theta_box
    }

    pub fn support(&self) -> Support {
        self.support
    }

    pub fn quadrature(&self) -> &QuadratureGrid {
        &self.quad
    }

    pub fn constants(&self) -> &ExpConstants {
        &self.constants
    }

    pub fn k(&self) -> usize {
        self.stats.len()
    }

    /// `g(theta) = ln int exp(theta . h) p`, trapezoid rule on the family grid.
    pub fn log_normalizer(&self, theta: &[f64]) -> Result<f64, SourceError> {
        let exponents: Vec<f64> = (0..self.quad.len())
            .map(|j| (0..self.k()).map(|i| theta[i] * self.stat_table[i][j]).sum())
            .collect();
        let peak = exponents
            .iter()
            .zip(&self.ref_table)
            .filter(|(_, &p)| p > 0.0)
            .map(|(&s, _)| s)
            .fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..self.quad.len())
            .map(|j| self.quad.weights()[j] * self.ref_table[j] * (exponents[j] - peak).exp())
            .sum();
        let g = peak + sum.ln();
        if !g.is_finite() {
            return Err(SourceError::Numeric(format!("normalizer is not finite at theta = {theta:?}")));
        }
        Ok(g)
    }

    pub fn pdf(&self, theta: &[f64], log_normalizer: f64, x: f64) -> f64 {
        if !self.support.contains(x) {
            return 0.0;
        }
        let p = self.reference.pdf(x);
        if p == 0.0 {
            return 0.0;
        }
        let s: f64 = theta.iter().zip(&self.stats).map(|(t, h)| t * h.eval(x)).sum();
        p * (s - log_normalizer).exp()
    }
}

/// Full rank check on the scale-normalized Gram matrix.
fn gram_full_rank(gram: &DMatrix<f64>) -> bool {
    let n = gram.nrows();
    let diag: Vec<f64> = (0..n).map(|i| gram[(i, i)]).collect();
    if diag.iter().any(|d| !(*d > 0.0)) {
        return false;
    }
    let normalized = DMatrix::from_fn(n, n, |i, j| gram[(i, j)] / (diag[i] * diag[j]).sqrt());
    let eig = normalized.symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    min > GRAM_RANK_TOL * max
}

/// A parametric family of i.i.d. sources on an interval.
#[derive(Debug, Clone)]
pub enum Family {
    Mixture(MixtureFamily),
    Exponential(ExpFamily),
}

impl Family {
    pub fn support(&self) -> Support {
        match self {
            Family::Mixture(m) => m.support(),
            Family::Exponential(e) => e.support(),
        }
    }

    /// Parameter dimension `k`.
    pub fn dim(&self) -> usize {
        match self {
            Family::Mixture(m) => m.k(),
            Family::Exponential(e) => e.k(),
        }
    }

    pub fn param_space(&self) -> ParamSpace {
        match self {
            Family::Mixture(m) => ParamSpace::Simplex { k: m.k() },
            Family::Exponential(e) => ParamSpace::Box(e.theta_box().clone()),
        }
    }

    pub fn validate_param(&self, theta: &ParamVector) -> Result<(), SourceError> {
        self.param_space().validate(theta)
    }

    /// Center of the parameter space.
    pub fn centroid(&self) -> ParamVector {
        self.param_space().centroid()
    }
}
