use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use super::SourceError;

/// A closed-form density on a bounded interval.
///
/// Every variant carries its own support; `pdf` is zero outside of it.
#[derive(Debug, Clone, PartialEq)]
pub enum Component {
    Uniform { a: f64, b: f64 },
    TruncatedGaussian(TruncatedGaussian),
    Triangular { a: f64, mode: f64, b: f64 },
}

/// Gaussian restricted to `[lo, hi]` and renormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedGaussian {
    mean: f64,
    std: f64,
    lo: f64,
    hi: f64,
    cdf_lo: f64,
    mass: f64,
}

fn standard_normal() -> Normal {
    Normal::standard()
}

impl Component {
    pub fn uniform(a: f64, b: f64) -> Result<Self, SourceError> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(SourceError::InvalidFamily(format!("uniform({a}, {b}) needs a < b")));
        }
        Ok(Component::Uniform { a, b })
    }

    pub fn truncated_gaussian(mean: f64, std: f64, lo: f64, hi: f64) -> Result<Self, SourceError> {
        if !(mean.is_finite() && std.is_finite() && std > 0.0) {
            return Err(SourceError::InvalidFamily(format!(
                "truncated_gaussian({mean}, {std}) needs a finite mean and positive std"
            )));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(SourceError::InvalidFamily(format!(
                "truncated_gaussian truncation [{lo}, {hi}] is empty"
            )));
        }
        let normal = standard_normal();
        let cdf_lo = normal.cdf((lo - mean) / std);
        let mass = normal.cdf((hi - mean) / std) - cdf_lo;
        if !(mass > 1e-12) {
            return Err(SourceError::InvalidFamily(format!(
                "truncated_gaussian({mean}, {std}) has no mass on [{lo}, {hi}]"
            )));
        }
        Ok(Component::TruncatedGaussian(TruncatedGaussian { mean, std, lo, hi, cdf_lo, mass }))
    }

    pub fn triangular(a: f64, mode: f64, b: f64) -> Result<Self, SourceError> {
        if !(a.is_finite() && b.is_finite() && a < b && a <= mode && mode <= b) {
            return Err(SourceError::InvalidFamily(format!(
                "triangular({a}, {mode}, {b}) needs a <= mode <= b and a < b"
            )));
        }
        Ok(Component::Triangular { a, mode, b })
    }

    /// Interval outside of which the density vanishes.
    pub fn range(&self) -> (f64, f64) {
        match self {
            Component::Uniform { a, b } => (*a, *b),
            Component::TruncatedGaussian(g) => (g.lo, g.hi),
            Component::Triangular { a, b, .. } => (*a, *b),
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            Component::Uniform { a, b } => {
                if x >= *a && x <= *b {
                    1.0 / (b - a)
                } else {
                    0.0
                }
            }
            Component::TruncatedGaussian(g) => {
                if x < g.lo || x > g.hi {
                    0.0
                } else {
                    standard_normal().pdf((x - g.mean) / g.std) / (g.std * g.mass)
                }
            }
            Component::Triangular { a, mode, b } => {
                let (a, c, b) = (*a, *mode, *b);
                if x < a || x > b {
                    0.0
                } else if x < c {
                    2.0 * (x - a) / ((b - a) * (c - a))
                } else if x > c {
                    2.0 * (b - x) / ((b - a) * (b - c))
                } else {
                    2.0 / (b - a)
                }
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.range();
        if x <= lo {
            return 0.0;
        }
        if x >= hi {
            return 1.0;
        }
        match self {
            Component::Uniform { a, b } => (x - a) / (b - a),
            Component::TruncatedGaussian(g) => {
                ((standard_normal().cdf((x - g.mean) / g.std) - g.cdf_lo) / g.mass).clamp(0.0, 1.0)
            }
            Component::Triangular { a, mode, b } => {
                let (a, c, b) = (*a, *mode, *b);
                if x <= c {
                    (x - a) * (x - a) / ((b - a) * (c - a))
                } else {
                    1.0 - (b - x) * (b - x) / ((b - a) * (b - c))
                }
            }
        }
    }

    /// Inverse CDF for `u` in `[0, 1]`.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match self {
            Component::Uniform { a, b } => a + u * (b - a),
            Component::TruncatedGaussian(g) => {
                let p = (g.cdf_lo + u * g.mass).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
                (g.mean + g.std * standard_normal().inverse_cdf(p)).clamp(g.lo, g.hi)
            }
            Component::Triangular { a, mode, b } => {
                let (a, c, b) = (*a, *mode, *b);
                let split = (c - a) / (b - a);
                if u < split {
                    a + (u * (b - a) * (c - a)).sqrt()
                } else {
                    b - ((1.0 - u) * (b - a) * (b - c)).sqrt()
                }
            }
        }
    }
}

/// Bounded sufficient statistic `h_i` of an exponential family.
#[derive(Debug, Clone, PartialEq)]
pub enum Statistic {
    /// `x^degree`
    Power { degree: i32 },
    /// `cos(freq * x)`
    Cos { freq: f64 },
    /// `sin(freq * x)`
    Sin { freq: f64 },
}

impl Statistic {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Statistic::Power { degree } => x.powi(*degree),
            Statistic::Cos { freq } => (freq * x).cos(),
            Statistic::Sin { freq } => (freq * x).sin(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_inverts_cdf() {
        let comps = [
            Component::uniform(0.5, 1.5).unwrap(),
            Component::truncated_gaussian(0.7, 0.3, 0.0, 1.5).unwrap(),
            Component::triangular(0.0, 0.25, 1.0).unwrap(),
            Component::triangular(0.0, 0.0, 1.0).unwrap(),
        ];
        for c in &comps {
            for i in 1..20 {
                let u = i as f64 / 20.0;
                let x = c.quantile(u);
                assert!((c.cdf(x) - u).abs() < 1e-9, "{c:?} u={u}");
            }
        }
    }

    #[test]
    fn rejects_degenerate_parameters() {
        assert!(Component::uniform(1.0, 1.0).is_err());
        assert!(Component::truncated_gaussian(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(Component::triangular(0.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn triangular_peak_height() {
        let c = Component::triangular(0.0, 0.5, 1.0).unwrap();
        assert_eq!(c.pdf(0.5), 2.0);
        assert_eq!(c.pdf(1.5), 0.0);
    }
}
