//! Minimum-distance estimation over a finite Yatracos class.

mod vc;

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::sources::{
    tabulated_variational_distance, Family, ParamSpace, ParamVector, QuadratureGrid, SourceError, SourceModel,
};

pub use vc::{shatter_coefficient, vc_upper_check, HalfLine, Indicator, VcOutcome, MAX_SHATTER_POINTS};

/// Relative tolerance under which two density values count as tied.
pub const TIE_TOL: f64 = 1e-9;
/// Upper limit on the number of estimation candidates; finer meshes are coarsened.
pub const MAX_CANDIDATES: usize = 1024;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EstimatorError {
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error("candidate grid is empty")]
    EmptyGrid,
    #[error("invalid candidate grid: {0}")]
    InvalidGrid(String),
    #[error("sample is empty")]
    EmptySample,
    #[error("sample value {0} lies outside the support")]
    SampleOutOfSupport(f64),
    #[error("shatter check is capped at {cap} points, got {got}")]
    TooManyPoints { got: usize, cap: usize },
}

/// `a > b` with a relative tie band, so rounding noise in regions where
/// two densities coincide does not count as a strict inequality.
pub fn strictly_greater(a: f64, b: f64) -> bool {
    a - b > TIE_TOL * a.abs().max(b.abs())
}

/// `A_{theta,eta} = {x : p_theta(x) > p_eta(x)}`.
#[derive(Debug, Clone)]
pub struct YatracosSet {
    theta: SourceModel,
    eta: SourceModel,
}

impl YatracosSet {
    pub fn new(family: &Arc<Family>, theta: ParamVector, eta: ParamVector) -> Result<Self, EstimatorError> {
        if theta == eta {
            return Err(EstimatorError::InvalidGrid("a Yatracos set needs theta != eta".into()));
        }
        Ok(YatracosSet {
            theta: SourceModel::new(family.clone(), theta)?,
            eta: SourceModel::new(family.clone(), eta)?,
        })
    }

    pub fn theta(&self) -> &ParamVector {
        self.theta.theta()
    }

    pub fn eta(&self) -> &ParamVector {
        self.eta.theta()
    }

    /// The same set with the roles of `theta` and `eta` exchanged.
    pub fn swapped(&self) -> Self {
        YatracosSet { theta: self.eta.clone(), eta: self.theta.clone() }
    }

    pub fn contains(&self, x: f64) -> bool {
        strictly_greater(self.theta.pdf(x), self.eta.pdf(x))
    }
}

pub fn set_member(set: &YatracosSet, x: f64) -> bool {
    set.contains(x)
}

/// Observed block `Z^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalSample {
    values: Vec<f64>,
}

impl EmpiricalSample {
    pub fn new(values: Vec<f64>, family: &Family) -> Result<Self, EstimatorError> {
        if values.is_empty() {
            return Err(EstimatorError::EmptySample);
        }
        let support = family.support();
        if let Some(&x) = values.iter().find(|&&x| !support.contains(x)) {
            return Err(EstimatorError::SampleOutOfSupport(x));
        }
        Ok(EmpiricalSample { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn empirical_measure(sample: &EmpiricalSample, set: &YatracosSet) -> f64 {
    let hits = sample.values().iter().filter(|&&x| set.contains(x)).count();
    hits as f64 / sample.len() as f64
}

/// Trapezoid mass of `model` over the quadrature points that fall in `set`.
pub fn model_measure(model: &SourceModel, set: &YatracosSet, quad: &QuadratureGrid) -> f64 {
    let s: f64 = quad
        .points()
        .iter()
        .zip(quad.weights())
        .filter(|(&x, _)| set.contains(x))
        .map(|(&x, w)| w * model.pdf(x))
        .sum();
    s.clamp(0.0, 1.0)
}

/// Estimator settings carried in experiment configs.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    /// Smallest mesh step per axis.
    pub min_step: f64,
    pub pair_cap: usize,
    pub subsample_seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig { min_step: 1.0 / 64.0, pair_cap: 4096, subsample_seed: 0x5eed }
    }
}

/// Finite set of candidate parameters together with the ordered index
/// pairs whose Yatracos sets are searched.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateGrid {
    points: Vec<ParamVector>,
    pairs: Vec<(usize, usize)>,
    pair_cap: usize,
}

impl CandidateGrid {
    pub fn new(points: Vec<ParamVector>, pairs: Vec<(usize, usize)>, pair_cap: usize) -> Result<Self, EstimatorError> {
        if points.is_empty() {
            return Err(EstimatorError::EmptyGrid);
        }
        if pairs.len() > pair_cap {
            return Err(EstimatorError::InvalidGrid(format!("{} pairs exceed the cap {pair_cap}", pairs.len())));
        }
        let mut seen = std::collections::HashSet::new();
        for &(i, j) in &pairs {
            if i == j || i >= points.len() || j >= points.len() {
                return Err(EstimatorError::InvalidGrid(format!("bad pair ({i}, {j})")));
            }
            if !seen.insert((i, j)) {
                return Err(EstimatorError::InvalidGrid(format!("duplicate pair ({i}, {j})")));
            }
        }
        Ok(CandidateGrid { points, pairs, pair_cap })
    }

    /// All points with every ordered pair. Above `cfg.pair_cap`, unordered
    /// pairs are subsampled and kept in both orders.
    pub fn with_all_pairs(points: Vec<ParamVector>, cfg: &EstimatorConfig) -> Result<Self, EstimatorError> {
        let c = points.len();
        if c == 0 {
            return Err(EstimatorError::EmptyGrid);
        }
        let mut unordered: Vec<(usize, usize)> = (0..c).flat_map(|i| (i + 1..c).map(move |j| (i, j))).collect();
        if 2 * unordered.len() > cfg.pair_cap {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.subsample_seed);
            let mut picked = index::sample(&mut rng, unordered.len(), cfg.pair_cap / 2).into_vec();
            picked.sort_unstable();
            unordered = picked.into_iter().map(|i| unordered[i]).collect();
        }
        let pairs = unordered.into_iter().flat_map(|(i, j)| [(i, j), (j, i)]).collect();
        Self::new(points, pairs, cfg.pair_cap)
    }

    /// Mesh over the parameter space with per-axis step
    /// `max(1/ceil(sqrt(n)), cfg.min_step)`.
    pub fn mesh(family: &Family, n: usize, cfg: &EstimatorConfig) -> Result<Self, EstimatorError> {
        Self::with_all_pairs(mesh_points(&family.param_space(), mesh_divisions(n, cfg)), cfg)
    }

    pub fn points(&self) -> &[ParamVector] {
        &self.points
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn pair_cap(&self) -> usize {
        self.pair_cap
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Number of mesh intervals per unit length.
pub fn mesh_divisions(n: usize, cfg: &EstimatorConfig) -> usize {
    let m = crate::param_codec::ceil_sqrt(n);
    let floor = (1.0 / cfg.min_step).floor().max(1.0) as usize;
    m.clamp(1, floor)
}

/// Mesh points with `divisions` intervals per unit, coarsened until at most
/// `MAX_CANDIDATES` points remain. Lexicographic order.
pub fn mesh_points(space: &ParamSpace, divisions: usize) -> Vec<ParamVector> {
    let mut d = divisions.max(1);
    loop {
        let pts = raw_mesh(space, d);
        if pts.len() <= MAX_CANDIDATES || d == 1 {
            return pts;
        }
        d -= 1;
    }
}

fn raw_mesh(space: &ParamSpace, d: usize) -> Vec<ParamVector> {
    match space {
        ParamSpace::Simplex { k } => {
            let mut out = Vec::new();
            let mut current = vec![0usize; *k];
            compositions(d, 0, &mut current, &mut out);
            out.into_iter()
                .map(|c| {
                    let mut v: Vec<f64> = c.iter().map(|&a| a as f64 / d as f64).collect();
                    let residue = 1.0 - v.iter().sum::<f64>();
                    let imax = (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap_or(0);
                    v[imax] += residue;
                    ParamVector::new(v)
                })
                .collect()
        }
        ParamSpace::Box(b) => {
            let axes: Vec<Vec<f64>> = b
                .lo()
                .iter()
                .zip(b.hi())
                .map(|(&lo, &hi)| {
                    let cells = ((hi - lo) * d as f64).ceil() as usize;
                    if cells == 0 {
                        vec![lo]
                    } else {
                        (0..=cells).map(|i| if i == cells { hi } else { lo + (hi - lo) * i as f64 / cells as f64 }).collect()
                    }
                })
                .collect();
            let mut out = vec![Vec::new()];
            for axis in &axes {
                out = out
                    .into_iter()
                    .flat_map(|prefix: Vec<f64>| {
                        axis.iter().map(move |&v| {
                            let mut p = prefix.clone();
                            p.push(v);
                            p
                        })
                    })
                    .collect();
            }
            out.into_iter().map(ParamVector::new).collect()
        }
    }
}

fn compositions(remaining: usize, pos: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    let k = current.len();
    if pos == k - 1 {
        current[pos] = remaining;
        out.push(current.clone());
        return;
    }
    for a in 0..=remaining {
        current[pos] = a;
        compositions(remaining - a, pos + 1, current, out);
    }
}

fn yatracos_sets(family: &Arc<Family>, grid: &CandidateGrid) -> Result<Vec<YatracosSet>, EstimatorError> {
    grid.pairs()
        .iter()
        .map(|&(i, j)| YatracosSet::new(family, grid.points()[i].clone(), grid.points()[j].clone()))
        .collect()
}

/// `max over pairs |P_eta(A) - P_n(A)|`.
pub fn delta_stat(
    family: &Arc<Family>,
    eta: &ParamVector,
    sample: &EmpiricalSample,
    grid: &CandidateGrid,
    quad: &QuadratureGrid,
) -> Result<f64, EstimatorError> {
    let model = SourceModel::new(family.clone(), eta.clone())?;
    let sets = yatracos_sets(family, grid)?;
    Ok(sets
        .iter()
        .map(|a| (model_measure(&model, a, quad) - empirical_measure(sample, a)).abs())
        .fold(0.0, f64::max))
}

/// Result of a minimum-distance search.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub index: usize,
    pub theta: ParamVector,
    /// `Delta` of the selected candidate.
    pub delta: f64,
}

/// Direct evaluation of every candidate's `Delta`; the grid minimizer with
/// the lowest index wins.
pub fn min_distance_estimate(
    family: &Arc<Family>,
    sample: &EmpiricalSample,
    grid: &CandidateGrid,
    quad: &QuadratureGrid,
) -> Result<Estimate, EstimatorError> {
    let sets = yatracos_sets(family, grid)?;
    let emp: Vec<f64> = sets.iter().map(|a| empirical_measure(sample, a)).collect();
    let mut best: Option<Estimate> = None;
    for (c, point) in grid.points().iter().enumerate() {
        let model = SourceModel::new(family.clone(), point.clone())?;
        let delta = sets
            .iter()
            .zip(&emp)
            .map(|(a, e)| (model_measure(&model, a, quad) - e).abs())
            .fold(0.0, f64::max);
        if best.as_ref().is_none_or(|b| delta < b.delta) {
            best = Some(Estimate { index: c, theta: point.clone(), delta });
        }
    }
    best.ok_or(EstimatorError::EmptyGrid)
}

/// Reusable estimator for one candidate grid. Model measures of every
/// searched set are tabulated once; each call only counts sample points.
#[derive(Debug, Clone)]
pub struct MinDistanceEstimator {
    family: Arc<Family>,
    grid: CandidateGrid,
    quad: QuadratureGrid,
    models: Vec<SourceModel>,
    candidate_density: Vec<Vec<f64>>,
    /// Distinct quadrature footprints, as half-open index runs.
    groups: Vec<Vec<(u32, u32)>>,
    pair_group: Vec<usize>,
    /// `measures[c][g]`: mass of candidate `c` on footprint `g`.
    measures: Vec<Vec<f64>>,
}

impl MinDistanceEstimator {
    pub fn new(family: Arc<Family>, grid: CandidateGrid, quad: QuadratureGrid) -> Result<Self, EstimatorError> {
        let models: Vec<SourceModel> = grid
            .points()
            .iter()
            .map(|p| SourceModel::new(family.clone(), p.clone()))
            .collect::<Result<_, _>>()?;
        let candidate_density: Vec<Vec<f64>> = models.iter().map(|m| m.density_on(&quad)).collect();

        let mut lookup: HashMap<Vec<(u32, u32)>, usize> = HashMap::new();
        let mut groups = Vec::new();
        let mut pair_group = Vec::with_capacity(grid.pairs().len());
        for &(i, j) in grid.pairs() {
            let (a, b) = (&candidate_density[i], &candidate_density[j]);
            let mut runs = Vec::new();
            let mut start: Option<usize> = None;
            for q in 0..quad.len() {
                let inside = strictly_greater(a[q], b[q]);
                match (inside, start) {
                    (true, None) => start = Some(q),
                    (false, Some(s)) => {
                        runs.push((s as u32, q as u32));
                        start = None;
                    }
                    _ => {}
                }
            }
            if let Some(s) = start {
                runs.push((s as u32, quad.len() as u32));
            }
            let next = groups.len();
            let g = *lookup.entry(runs.clone()).or_insert_with(|| {
                groups.push(runs);
                next
            });
            pair_group.push(g);
        }

        let mut est = MinDistanceEstimator {
            family,
            grid,
            quad,
            models,
            candidate_density,
            groups,
            pair_group,
            measures: Vec::new(),
        };
        est.measures = est.candidate_density.iter().map(|row| est.footprint_measures(row)).collect();
        Ok(est)
    }

    /// Estimator on the default mesh for block length `n`.
    pub fn for_block_length(family: Arc<Family>, n: usize, cfg: &EstimatorConfig) -> Result<Self, EstimatorError> {
        let grid = CandidateGrid::mesh(&family, n, cfg)?;
        let quad = QuadratureGrid::with_default(family.support());
        Self::new(family, grid, quad)
    }

    pub fn grid(&self) -> &CandidateGrid {
        &self.grid
    }

    pub fn quadrature(&self) -> &QuadratureGrid {
        &self.quad
    }

    pub fn family(&self) -> &Arc<Family> {
        &self.family
    }

    pub fn footprint_count(&self) -> usize {
        self.groups.len()
    }

    fn footprint_measures(&self, row: &[f64]) -> Vec<f64> {
        let mut prefix = Vec::with_capacity(row.len() + 1);
        let mut acc = 0.0;
        prefix.push(0.0);
        for (w, p) in self.quad.weights().iter().zip(row) {
            acc += w * p;
            prefix.push(acc);
        }
        self.groups
            .iter()
            .map(|runs| runs.iter().map(|&(s, e)| prefix[e as usize] - prefix[s as usize]).sum::<f64>().clamp(0.0, 1.0))
            .collect()
    }

    /// Footprint masses of an arbitrary model, for evaluating `Delta` at
    /// parameters off the candidate grid.
    pub fn model_measures(&self, model: &SourceModel) -> Vec<f64> {
        self.footprint_measures(&model.density_on(&self.quad))
    }

    /// Empirical measure of every searched set.
    pub fn empirical(&self, sample: &[f64]) -> Vec<f64> {
        let dens: Vec<Vec<f64>> = self.models.iter().map(|m| sample.iter().map(|&x| m.pdf(x)).collect()).collect();
        let n = sample.len() as f64;
        self.grid
            .pairs()
            .iter()
            .map(|&(i, j)| {
                let hits = dens[i].iter().zip(&dens[j]).filter(|(a, b)| strictly_greater(**a, **b)).count();
                hits as f64 / n
            })
            .collect()
    }

    /// `Delta` for a model given its footprint masses.
    pub fn delta_with(&self, measures: &[f64], empirical: &[f64]) -> f64 {
        self.pair_group
            .iter()
            .zip(empirical)
            .map(|(&g, e)| (measures[g] - e).abs())
            .fold(0.0, f64::max)
    }

    /// `Delta` of every candidate.
    pub fn deltas(&self, empirical: &[f64]) -> Vec<f64> {
        self.measures.iter().map(|m| self.delta_with(m, empirical)).collect()
    }

    pub fn estimate_from(&self, empirical: &[f64]) -> Estimate {
        let deltas = self.deltas(empirical);
        let mut index = 0;
        for (c, &d) in deltas.iter().enumerate() {
            if d < deltas[index] {
                index = c;
            }
        }
        Estimate { index, theta: self.grid.points()[index].clone(), delta: deltas[index] }
    }

    pub fn estimate(&self, sample: &[f64]) -> Estimate {
        self.estimate_from(&self.empirical(sample))
    }

    /// `min_c d_V(P, P_c)` over the candidates.
    pub fn nearest_candidate_distance(&self, model: &SourceModel) -> f64 {
        let row = model.density_on(&self.quad);
        self.candidate_density
            .iter()
            .map(|c| tabulated_variational_distance(&self.quad, &row, c))
            .fold(f64::INFINITY, f64::min)
    }

    /// Density of candidate `c` on the quadrature points.
    pub fn candidate_row(&self, c: usize) -> &[f64] {
        &self.candidate_density[c]
    }

    /// `d_V` between a model and candidate `c`.
    pub fn distance_to_candidate(&self, model: &SourceModel, c: usize) -> f64 {
        tabulated_variational_distance(&self.quad, &model.density_on(&self.quad), &self.candidate_density[c])
    }

    /// Approximation term `s` of the finite-grid bound: the largest
    /// `min_c d_V(P_theta', P_c)` over a parameter mesh with `divisions`
    /// intervals per unit. Only the `2^k + 1` Euclidean-nearest candidates
    /// are compared, so the value can only overstate the true slack.
    pub fn grid_slack(&self, divisions: usize) -> Result<f64, EstimatorError> {
        let space = self.family.param_space();
        let mut slack: f64 = 0.0;
        for theta in mesh_points(&space, divisions) {
            let model = SourceModel::new(self.family.clone(), theta.clone())?;
            let row = model.density_on(&self.quad);
            let mut order: Vec<usize> = (0..self.grid.len()).collect();
            order.sort_by(|&a, &b| {
                theta
                    .euclidean_distance(&self.grid.points()[a])
                    .total_cmp(&theta.euclidean_distance(&self.grid.points()[b]))
            });
            let near = order
                .iter()
                .take((1 << space.dim()) + 1)
                .map(|&c| tabulated_variational_distance(&self.quad, &row, &self.candidate_density[c]))
                .fold(f64::INFINITY, f64::min);
            slack = slack.max(near);
        }
        Ok(slack)
    }
}
