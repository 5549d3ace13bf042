use super::{SourceError, Support};

/// Equispaced trapezoid rule on a support interval.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureGrid {
    pub const DEFAULT_POINTS: usize = 1 << 14;
    pub const MIN_POINTS: usize = 1 << 10;

    pub fn new(support: Support, count: usize) -> Result<Self, SourceError> {
        if count < Self::MIN_POINTS {
            return Err(SourceError::InvalidFamily(format!(
                "quadrature grid needs at least {} points, got {count}",
                Self::MIN_POINTS
            )));
        }
        let h = support.width() / (count - 1) as f64;
        let mut points: Vec<f64> = (0..count).map(|j| support.lo + j as f64 * h).collect();
        points[count - 1] = support.hi;
        let mut weights = vec![h; count];
        weights[0] = h / 2.0;
        weights[count - 1] = h / 2.0;
        Ok(QuadratureGrid { points, weights })
    }

    pub fn with_default(support: Support) -> Self {
        Self::new(support, Self::DEFAULT_POINTS).expect("default grid size is valid")
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        self.points[1] - self.points[0]
    }

    /// Trapezoid sum of values tabulated on the grid points.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.points.len());
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    pub fn integrate_fn(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(&x, w)| w * f(x)).sum()
    }

    /// Tabulate `f` on the grid points.
    pub fn tabulate(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.points.iter().map(|&x| f(x)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covers_support_end_to_end() {
        let q = QuadratureGrid::new(Support::new(-1.0, 2.0).unwrap(), 1024).unwrap();
        assert_eq!(q.points()[0], -1.0);
        assert_eq!(*q.points().last().unwrap(), 2.0);
        assert!((q.weights().iter().sum::<f64>() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_coarse_grid() {
        assert!(QuadratureGrid::new(Support::new(0.0, 1.0).unwrap(), 512).is_err());
    }

    #[test]
    fn trapezoid_exact_on_linear() {
        let q = QuadratureGrid::with_default(Support::new(0.0, 1.0).unwrap());
        assert!((q.integrate_fn(|x| 3.0 * x + 1.0) - 2.5).abs() < 1e-12);
    }
}
