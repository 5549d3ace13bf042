//! Seeded experiment runner: streams from a known source are coded, the
//! identification error and distortion redundancy are recorded per trial,
//! and rate exponents are fitted across block lengths.

mod config;
mod fit;
mod output;

use std::sync::{Arc, OnceLock};
use std::time::Instant;

use rayon::prelude::*;

use crate::estimator::MinDistanceEstimator;
use crate::seed;
use crate::sources::{mixture_lipschitz, tabulated_variational_distance, Family, ParamVector, SourceModel};
use crate::two_stage::{nn_first_stage_encode, CodeBank, TwoStageCode, TwoStageError};
use crate::vq::{
    augment_codebook, expected_distortion, sample_blocks, AugmentedCodebook, CodeShape, Codebook, DistortionSpec, Estimate,
};

pub use config::{
    ComponentSpec, DesignSection, EstimatorSection, ExperimentConfig, FamilySpec, Mode, OutputPaths, StatisticSpec,
    UnboundedSpec, ValidatedConfig,
};
pub use fit::{fit_rate_exponent, least_squares, median, quantile, Metric, RateFit, BOOTSTRAP_RESAMPLES};
pub use output::{emit_outputs, read_csv, write_csv, write_plot_data, write_summary, CSV_COLUMNS};

/// Quadrature tolerance applied to the minimum-distance inequality.
pub const BOUND_TOLERANCE: f64 = 2e-3;
const BANK_LABEL: u64 = 0xC0DE_B00C;
const TRIAL_LABEL: u64 = 0x7121_A100;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HarnessError {
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("analysis error: {0}")]
    Analysis(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Code(#[from] TwoStageError),
}

impl HarnessError {
    pub fn config(field: &str, message: impl std::fmt::Display) -> Self {
        HarnessError::Config { field: field.to_string(), message: message.to_string() }
    }
}

impl From<crate::vq::VqError> for HarnessError {
    fn from(e: crate::vq::VqError) -> Self {
        HarnessError::Code(e.into())
    }
}

impl From<crate::sources::SourceError> for HarnessError {
    fn from(e: crate::sources::SourceError) -> Self {
        HarnessError::Code(e.into())
    }
}

impl From<crate::estimator::EstimatorError> for HarnessError {
    fn from(e: crate::estimator::EstimatorError) -> Self {
        HarnessError::Code(e.into())
    }
}

/// One coded stream. Metrics cover blocks `t >= 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub theta: ParamVector,
    pub n: usize,
    pub seed: u64,
    /// `d_V(P_theta, P_theta_hat)` averaged over blocks.
    pub dv_mean: f64,
    pub dv_max: f64,
    /// `Delta_theta` of the previous block, averaged.
    pub delta_mean: f64,
    /// Smallest `2 Delta_theta + 3/(2n) + slack - d_V(P_theta, P_theta*)`.
    pub bound_margin_min: f64,
    /// Per-letter distortion of the coded blocks. For scalar components with
    /// a block-independent codebook this is the expectation given the
    /// codebook, which removes the sampling noise of the coded block.
    pub distortion_twostage: f64,
    pub distortion_matched: f64,
    pub redundancy: f64,
    pub redundancy_se: f64,
    pub rate_total: f64,
    pub header_bits: u32,
    // not written to the CSV
    pub theta_index: usize,
    pub trial: usize,
    /// Same margin for `d_V(P_theta, P_theta_hat)` with the grid term added.
    pub chain_margin_min: f64,
    /// Blocks coded with a cell whose representative sits on the boundary.
    pub boundary_blocks: usize,
    pub wall_secs: f64,
}

impl TrialRecord {
    pub fn empty(theta: ParamVector, n: usize, seed: u64) -> Self {
        TrialRecord {
            theta,
            n,
            seed,
            dv_mean: 0.0,
            dv_max: 0.0,
            delta_mean: 0.0,
            bound_margin_min: 0.0,
            distortion_twostage: 0.0,
            distortion_matched: 0.0,
            redundancy: 0.0,
            redundancy_se: 0.0,
            rate_total: 0.0,
            header_bits: 0,
            theta_index: 0,
            trial: seed as usize,
            chain_margin_min: f64::NAN,
            boundary_blocks: 0,
            wall_secs: 0.0,
        }
    }
}

/// Shared state for one block length.
struct LengthContext {
    n: usize,
    code: TwoStageCode,
}

/// Shared state for one (theta, n) point.
struct PointContext {
    theta_index: usize,
    model: SourceModel,
    true_row: Vec<f64>,
    true_measures: Vec<f64>,
    /// `3 min_c d_V(P_theta, P_c)`.
    slack: f64,
    matched: Arc<Codebook>,
    matched_aug: Option<AugmentedCodebook>,
    /// Expected per-letter distortion under `theta` of each cell's codebook,
    /// filled on demand; only used when `conditional` holds.
    cell_expected: Vec<OnceLock<f64>>,
    matched_expected: f64,
}

pub fn trial_seed(global: u64, theta_index: usize, n: usize, trial: usize) -> u64 {
    seed::derive_all(global, &[TRIAL_LABEL, theta_index as u64, n as u64, trial as u64])
}

pub fn bank_seed(global: u64) -> u64 {
    seed::derive(global, BANK_LABEL)
}

/// Code for block length `n` as configured; the bank seed depends only on
/// the global seed, so encoder and decoder rebuild identical codebooks.
pub fn build_code(cfg: &ValidatedConfig, n: usize) -> Result<TwoStageCode, HarnessError> {
    let raw = &cfg.raw;
    let shape = CodeShape::new(n, raw.design.component_dim, raw.rate).map_err(|e| HarnessError::config("rate", e))?;
    let bank = CodeBank::new(cfg.family.clone(), shape, cfg.spec, raw.budget(), bank_seed(raw.seed));
    let est = MinDistanceEstimator::for_block_length(cfg.family.clone(), n, &raw.estimator_config())?;
    Ok(TwoStageCode::new(Arc::new(bank), Arc::new(est))?)
}

fn augmented(cb: &Codebook, cfg: &ValidatedConfig) -> Result<Option<AugmentedCodebook>, HarnessError> {
    match &cfg.raw.unbounded {
        None => Ok(None),
        Some(u) => Ok(Some(augment_codebook(cb, u.delta, u.ref_letter, u.threshold)?)),
    }
}

/// Per-letter distortion of `block` under the plain or augmented code.
fn block_distortion(
    cb: &Codebook,
    aug: Option<&AugmentedCodebook>,
    block: &[f64],
    spec: &DistortionSpec,
) -> Result<f64, HarnessError> {
    let n = block.len() as f64;
    let total = match aug {
        None => cb.encode(block, spec)?.1,
        Some(a) => Codebook::block_distortion(block, &a.encode(block, spec)?, spec),
    };
    Ok(total / n)
}

/// Whether block distortions can be replaced by their expectation given the
/// codebook: the codebook must not depend on the block it codes, and the
/// expectation must be a one-dimensional integral.
fn conditional_distortion(cfg: &ValidatedConfig) -> bool {
    cfg.raw.mode != Mode::NnFirstStage && cfg.raw.design.component_dim == 1 && cfg.raw.unbounded.is_none()
}

fn cell_expected(point: &PointContext, code: &TwoStageCode, spec: &DistortionSpec, cell: usize) -> Result<f64, HarnessError> {
    if let Some(v) = point.cell_expected[cell].get() {
        return Ok(*v);
    }
    let cb = code.bank().codebook(cell)?;
    let v = expected_distortion(&cb, &point.model, spec, code.estimator().quadrature())?;
    Ok(*point.cell_expected[cell].get_or_init(|| v))
}

/// Bound on `d_V(P_a, P_b)` from the family's Lipschitz constant.
fn lipschitz_dv(family: &Family, a: &ParamVector, b: &ParamVector) -> f64 {
    match family {
        Family::Mixture(m) => mixture_lipschitz(m.k()) * a.euclidean_distance(b),
        Family::Exponential(e) => e.constants().dv_bound(a, b),
    }
}

fn run_trial(
    cfg: &ValidatedConfig,
    len: &LengthContext,
    point: &PointContext,
    trial: usize,
) -> Result<TrialRecord, HarnessError> {
    let start = Instant::now();
    let raw = &cfg.raw;
    let n = len.n;
    let code = &len.code;
    let bank = code.bank();
    let grid = bank.grid();
    let est = code.estimator();
    let quad = est.quadrature();
    let spec = &cfg.spec;
    let theta = &cfg.thetas[point.theta_index];
    let seed = trial_seed(raw.seed, point.theta_index, n, trial);
    let blocks = sample_blocks(&point.model, seed, raw.blocks, n);
    let traced = code.encode_stream_traced(&blocks)?;

    let mut dvs = Vec::new();
    let mut deltas = Vec::new();
    let mut diffs = Vec::new();
    let mut d_code = Vec::new();
    let mut d_matched = Vec::new();
    let mut margin = f64::INFINITY;
    let mut chain_margin = f64::INFINITY;
    let mut boundary = 0;
    for t in 1..blocks.len() {
        let tr = &traced[t];
        let estimate = tr.estimate.as_ref().expect("blocks after the first carry an estimate");
        let emp = tr.empirical.as_ref().expect("blocks after the first carry measures");
        let delta = est.delta_with(&point.true_measures, emp);
        let dv_star = tabulated_variational_distance(quad, &point.true_row, est.candidate_row(estimate.index));
        let allowed = 2.0 * delta + 1.5 / n as f64 + point.slack;
        margin = margin.min(allowed - dv_star);

        let conditional = conditional_distortion(cfg);
        let (cell, distortion) = match raw.mode {
            Mode::TwoStage if conditional => (Some(tr.cell), cell_expected(point, code, spec, tr.cell)?),
            Mode::MatchedOracle if conditional => (None, point.matched_expected),
            Mode::TwoStage => {
                let d = match &point.matched_aug {
                    None => tr.distortion,
                    Some(_) => {
                        let cb = bank.codebook(tr.cell)?;
                        block_distortion(&cb, augmented(&cb, cfg)?.as_ref(), &blocks[t], spec)?
                    }
                };
                (Some(tr.cell), d)
            }
            Mode::NnFirstStage => {
                let (enc, d) = nn_first_stage_encode(bank, &blocks[t])?;
                let cell = enc.header.value as usize;
                let d = match &point.matched_aug {
                    None => d,
                    Some(_) => {
                        let cb = bank.codebook(cell)?;
                        block_distortion(&cb, augmented(&cb, cfg)?.as_ref(), &blocks[t], spec)?
                    }
                };
                (Some(cell), d)
            }
            Mode::MatchedOracle => (None, block_distortion(&point.matched, point.matched_aug.as_ref(), &blocks[t], spec)?),
        };
        let matched = if conditional {
            point.matched_expected
        } else {
            block_distortion(&point.matched, point.matched_aug.as_ref(), &blocks[t], spec)?
        };

        let dv = match cell {
            Some(c) => {
                let cell = &grid.cells()[c];
                if cell.on_boundary {
                    boundary += 1;
                }
                let rep = SourceModel::new(cfg.family.clone(), cell.representative.clone())?;
                let dv = tabulated_variational_distance(quad, &point.true_row, &rep.density_on(quad));
                if raw.mode == Mode::TwoStage {
                    let grid_term = lipschitz_dv(&cfg.family, &estimate.theta, &cell.representative);
                    chain_margin = chain_margin.min(allowed + grid_term - dv);
                }
                dv
            }
            None => 0.0,
        };
        dvs.push(dv);
        deltas.push(delta);
        d_code.push(distortion);
        d_matched.push(matched);
        diffs.push(distortion - matched);
    }

    let header_bits = if raw.mode == Mode::MatchedOracle { 0 } else { code.header_bits() };
    let body_bits = match &point.matched_aug {
        None => code.rate_bits() as f64,
        Some(a) => a.log2_count().ceil(),
    };
    let red = Estimate::from_values(&diffs);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(TrialRecord {
        theta: theta.clone(),
        n,
        seed,
        dv_mean: mean(&dvs),
        dv_max: dvs.iter().cloned().fold(0.0, f64::max),
        delta_mean: mean(&deltas),
        bound_margin_min: margin,
        distortion_twostage: mean(&d_code),
        distortion_matched: mean(&d_matched),
        redundancy: red.mean,
        redundancy_se: red.se,
        rate_total: (body_bits + header_bits as f64) / n as f64,
        header_bits,
        theta_index: point.theta_index,
        trial,
        chain_margin_min: if raw.mode == Mode::TwoStage { chain_margin } else { f64::NAN },
        boundary_blocks: boundary,
        wall_secs: start.elapsed().as_secs_f64(),
    })
}

/// Runs every `(theta, n, trial)` of the config in parallel. Records come
/// back sorted by `(theta, n, trial)` and do not depend on scheduling.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<TrialRecord>, HarnessError> {
    let cfg = config.validate()?;
    let lengths: Vec<LengthContext> = cfg
        .raw
        .block_lengths
        .par_iter()
        .map(|&n| Ok(LengthContext { n, code: build_code(&cfg, n)? }))
        .collect::<Result<_, HarnessError>>()?;

    let pairs: Vec<(usize, usize)> =
        (0..lengths.len()).flat_map(|l| (0..cfg.thetas.len()).map(move |i| (l, i))).collect();
    let points: Vec<PointContext> = pairs
        .par_iter()
        .map(|&(l, i)| {
            let code = &lengths[l].code;
            let est = code.estimator();
            let model = SourceModel::new(cfg.family.clone(), cfg.thetas[i].clone())?;
            let true_row = model.density_on(est.quadrature());
            let true_measures = est.model_measures(&model);
            let slack = 3.0 * est.nearest_candidate_distance(&model);
            let matched = Arc::new(code.bank().matched_codebook(&cfg.thetas[i])?);
            let matched_aug = augmented(&matched, &cfg)?;
            let matched_expected = if conditional_distortion(&cfg) {
                expected_distortion(&matched, &model, &cfg.spec, est.quadrature())?
            } else {
                f64::NAN
            };
            let cell_expected = (0..code.bank().grid().len()).map(|_| OnceLock::new()).collect();
            Ok(PointContext {
                theta_index: i,
                model,
                true_row,
                true_measures,
                slack,
                matched,
                matched_aug,
                cell_expected,
                matched_expected,
            })
        })
        .collect::<Result<_, HarnessError>>()?;

    let jobs: Vec<(usize, usize)> =
        (0..points.len()).flat_map(|p| (0..cfg.raw.trials).map(move |t| (p, t))).collect();
    let mut records: Vec<TrialRecord> = jobs
        .par_iter()
        .map(|&(p, t)| run_trial(&cfg, &lengths[pairs[p].0], &points[p], t))
        .collect::<Result<_, _>>()?;
    records.sort_by_key(|a| (a.theta_index, a.n, a.trial));
    Ok(records)
}

/// Outcome of one in-run property check.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Records grouped by `(theta, n)` in first-appearance order.
pub fn group_points(records: &[TrialRecord]) -> Vec<(ParamVector, usize, Vec<&TrialRecord>)> {
    let mut out: Vec<(ParamVector, usize, Vec<&TrialRecord>)> = Vec::new();
    for r in records {
        match out.iter_mut().find(|(t, n, _)| *t == r.theta && *n == r.n) {
            Some(g) => g.2.push(r),
            None => out.push((r.theta.clone(), r.n, vec![r])),
        }
    }
    out
}

/// Standard error of the mean redundancy over a group of trials, pooling
/// the within-trial standard errors.
pub fn pooled_se(group: &[&TrialRecord]) -> f64 {
    let t = group.len() as f64;
    group.iter().map(|r| r.redundancy_se * r.redundancy_se).sum::<f64>().sqrt() / t
}

/// True when `values` never increase, apart from at most `allowed` steps.
pub fn nonincreasing_with_inversions(values: &[f64], allowed: usize) -> bool {
    values.windows(2).filter(|w| w[1] > w[0]).count() <= allowed
}

/// In-run properties. Statistical checks need at least 20 trials per point.
pub fn check_invariants(records: &[TrialRecord], k: usize) -> Vec<InvariantCheck> {
    let groups = group_points(records);
    let mut checks = Vec::new();

    let worst = groups
        .iter()
        .map(|(t, n, g)| {
            let mean = g.iter().map(|r| r.redundancy).sum::<f64>() / g.len() as f64;
            (mean + 3.0 * pooled_se(g), t, n, mean)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0));
    checks.push(match worst {
        Some((v, t, n, mean)) => InvariantCheck {
            name: "redundancy_nonnegative",
            passed: v >= 0.0,
            detail: format!("worst point theta={t} n={n}: mean {mean:.3e}, mean + 3 se = {v:.3e}"),
        },
        None => InvariantCheck { name: "redundancy_nonnegative", passed: true, detail: "no records".into() },
    });

    let mut thetas: Vec<&ParamVector> = Vec::new();
    for (t, _, _) in &groups {
        if !thetas.contains(&t) {
            thetas.push(t);
        }
    }
    let mut mono_ok = true;
    let mut mono_detail = Vec::new();
    for theta in thetas {
        let mut ladder: Vec<(usize, f64, usize)> = groups
            .iter()
            .filter(|(t, _, _)| t == theta)
            .map(|(_, n, g)| (*n, median(&g.iter().map(|r| r.dv_mean).collect::<Vec<_>>()), g.len()))
            .collect();
        ladder.sort_by_key(|x| x.0);
        if ladder.len() < 2 || ladder.iter().any(|x| x.2 < 20) {
            mono_detail.push(format!("theta={theta}: skipped (needs 2+ lengths with 20+ trials)"));
            continue;
        }
        let meds: Vec<f64> = ladder.iter().map(|x| x.1).collect();
        let ok = nonincreasing_with_inversions(&meds, 1);
        mono_ok &= ok;
        mono_detail.push(format!("theta={theta}: medians {meds:.4?}"));
    }
    checks.push(InvariantCheck { name: "identification_monotone", passed: mono_ok, detail: mono_detail.join("; ") });

    let bad = records.iter().filter(|r| r.bound_margin_min < -BOUND_TOLERANCE).count();
    let worst_margin = records.iter().map(|r| r.bound_margin_min).fold(f64::INFINITY, f64::min);
    checks.push(InvariantCheck {
        name: "min_distance_bound",
        passed: bad == 0,
        detail: format!("{bad} of {} trials violate; smallest margin {worst_margin:.3e}", records.len()),
    });
    let chain: Vec<f64> = records.iter().map(|r| r.chain_margin_min).filter(|m| !m.is_nan()).collect();
    let chain_bad = chain.iter().filter(|&&m| m < -BOUND_TOLERANCE).count();
    checks.push(InvariantCheck {
        name: "identification_chain_bound",
        passed: chain_bad == 0,
        detail: format!("{chain_bad} of {} trials violate", chain.len()),
    });

    let limit = (k + 2) as f64;
    let worst_overhead = records
        .iter()
        .filter(|r| r.n > 1)
        .map(|r| r.header_bits as f64 / (r.n as f64).log2())
        .fold(0.0, f64::max);
    checks.push(InvariantCheck {
        name: "overhead_law",
        passed: worst_overhead <= limit,
        detail: format!("max header_bits / log2 n = {worst_overhead:.3} (limit {limit})"),
    });
    checks
}
