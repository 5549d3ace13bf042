use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CodeShape, Codebook, DistortionSpec, Provenance, VqError};
use crate::sources::{SourceModel, Support};

/// Offset given to a codeword cloned into an empty cell.
const SPLIT_OFFSET: f64 = 1e-3;
/// Upper limit on training vectors per design.
pub const MAX_TRAINING_VECTORS: usize = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignBudget {
    /// Training n-blocks per component codeword. Each block supplies n/L
    /// component vectors, capped at `MAX_TRAINING_VECTORS` in total.
    pub training_per_word: usize,
    pub max_iters: u32,
    /// Stop once the relative distortion improvement falls below this.
    pub tolerance: f64,
}

impl Default for DesignBudget {
    fn default() -> Self {
        DesignBudget { training_per_word: 200, max_iters: 50, tolerance: 1e-6 }
    }
}

/// Output of a Lloyd run on a fixed training set.
#[derive(Debug, Clone, PartialEq)]
pub struct LloydRun {
    /// Row-major words, `dim` entries each.
    pub words: Vec<f64>,
    /// Per-letter training distortion after each partition step.
    pub history: Vec<f64>,
    pub iterations: u32,
}

/// Generalized Lloyd iteration on `training` (row-major, `dim` per vector):
/// nearest-neighbor partition, then per-cell mean (p = 2) or coordinate-wise
/// median (p = 1). Words are kept inside `support`.
pub fn lloyd_on_training(
    training: &[f64],
    dim: usize,
    words: usize,
    spec: &DistortionSpec,
    support: Support,
    budget: &DesignBudget,
    seed: u64,
) -> Result<LloydRun, VqError> {
    let p = spec.p();
    if p != 1.0 && p != 2.0 {
        return Err(VqError::Design(format!("centroid step is defined for p = 1 or 2, got {p}")));
    }
    if dim == 0 || training.is_empty() || !training.len().is_multiple_of(dim) {
        return Err(VqError::Design("training set is empty or ragged".into()));
    }
    let count = training.len() / dim;
    if count < words {
        return Err(VqError::Design(format!("{count} training vectors for {words} words")));
    }
    if training.chunks(dim).all(|c| c == &training[..dim]) {
        let mut w = Vec::with_capacity(words * dim);
        for _ in 0..words {
            w.extend_from_slice(&training[..dim]);
        }
        return Ok(LloydRun { words: w, history: vec![0.0], iterations: 0 });
    }

    if dim == 1 {
        let mut sorted = training.to_vec();
        sorted.sort_by(f64::total_cmp);
        return Ok(lloyd_scalar(&sorted, words, p, support, budget));
    }

    let mut cw = initial_words(training, dim, words, seed);
    let mut history = Vec::new();
    let mut assign = vec![0usize; count];
    let mut iterations = 0;
    for _ in 0..budget.max_iters {
        iterations += 1;
        let mut cell_cost = vec![0.0; words];
        let mut cell_size = vec![0usize; words];
        let mut total = 0.0;
        for (t, x) in training.chunks(dim).enumerate() {
            let (j, d) = nearest(&cw, dim, x, spec);
            assign[t] = j;
            cell_cost[j] += d;
            cell_size[j] += 1;
            total += d;
        }
        let distortion = total / (count * dim) as f64;
        let prev = history.last().copied();
        history.push(distortion);
        if let Some(prev) = prev {
            if distortion == 0.0 || (prev - distortion) <= budget.tolerance * prev {
                break;
            }
        }

        // centroid step
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); words];
        for (t, &j) in assign.iter().enumerate() {
            members[j].push(t);
        }
        for j in 0..words {
            if members[j].is_empty() {
                continue;
            }
            for d in 0..dim {
                let mut vals: Vec<f64> = members[j].iter().map(|&t| training[t * dim + d]).collect();
                let c = if p == 2.0 {
                    vals.iter().sum::<f64>() / vals.len() as f64
                } else {
                    median(&mut vals)
                };
                cw[j * dim + d] = support.clamp(c);
            }
        }
        refill_empty(&mut cw, dim, &mut cell_cost, &mut cell_size, support);
    }
    Ok(LloydRun { words: cw, history, iterations })
}

/// Refill empty cells by cloning the costliest word with a small offset.
fn refill_empty(cw: &mut [f64], dim: usize, cell_cost: &mut [f64], cell_size: &mut [usize], support: Support) {
    let words = cell_size.len();
    for j in 0..words {
        if cell_size[j] > 0 {
            continue;
        }
        let h = (0..words)
            .filter(|&i| cell_size[i] > 0)
            .max_by(|&a, &b| cell_cost[a].total_cmp(&cell_cost[b]).then(b.cmp(&a)))
            .unwrap_or(0);
        for d in 0..dim {
            let c = cw[h * dim + d];
            let up = c + SPLIT_OFFSET;
            cw[j * dim + d] = if up <= support.hi { up } else { support.clamp(c - SPLIT_OFFSET) };
        }
        cell_cost[h] /= 2.0;
        cell_size[j] = 1;
    }
}

/// Scalar Lloyd on sorted data: cells are index ranges, so each iteration
/// costs `O(K log N)` with prefix sums for p = 2.
fn lloyd_scalar(sorted: &[f64], words: usize, p: f64, support: Support, budget: &DesignBudget) -> LloydRun {
    let count = sorted.len();
    let mut s1 = Vec::with_capacity(count + 1);
    let mut s2 = Vec::with_capacity(count + 1);
    s1.push(0.0);
    s2.push(0.0);
    for &x in sorted {
        s1.push(s1.last().unwrap() + x);
        s2.push(s2.last().unwrap() + x * x);
    }
    // sum of |x - c|^p over sorted[a..b]
    let range_cost = |a: usize, b: usize, c: f64| -> f64 {
        if a >= b {
            return 0.0;
        }
        if p == 2.0 {
            let n = (b - a) as f64;
            ((s2[b] - s2[a]) - 2.0 * c * (s1[b] - s1[a]) + c * c * n).max(0.0)
        } else {
            let m = a + sorted[a..b].partition_point(|&x| x < c);
            (c * (m - a) as f64 - (s1[m] - s1[a])) + ((s1[b] - s1[m]) - c * (b - m) as f64)
        }
    };

    let mut cw: Vec<f64> = (0..words)
        .map(|j| sorted[(((j as f64 + 0.5) / words as f64 * count as f64) as usize).min(count - 1)])
        .collect();
    let mut history = Vec::new();
    let mut iterations = 0;
    for _ in 0..budget.max_iters {
        iterations += 1;
        // nearest word with lowest-index ties; words are kept sorted so the
        // cells are consecutive ranges split at midpoints
        let order = sorted_order(&cw);
        let mut bounds = vec![0usize; words + 1];
        bounds[words] = count;
        let mut prev_end = 0;
        for (r, &j) in order.iter().enumerate() {
            let end = if r + 1 == words {
                count
            } else {
                let next = order[r + 1];
                let (a, b) = (cw[j], cw[next]);
                let mid = 0.5 * (a + b);
                // a tie at the midpoint goes to the lower index
                let tie_left = j < next;
                
                prev_end
                    + sorted[prev_end..].partition_point(|&x| if tie_left { x <= mid } else { x < mid })
            };
            bounds[r] = prev_end;
            prev_end = end.max(prev_end);
            bounds[r + 1] = prev_end;
        }
        let mut cell_cost = vec![0.0; words];
        let mut cell_size = vec![0usize; words];
        let mut total = 0.0;
        for (r, &j) in order.iter().enumerate() {
            let (a, b) = (bounds[r], bounds[r + 1]);
            cell_size[j] = b - a;
            cell_cost[j] = range_cost(a, b, cw[j]);
            total += cell_cost[j];
        }
        let distortion = total / count as f64;
        let prev = history.last().copied();
        history.push(distortion);
        if let Some(prev) = prev {
            if distortion == 0.0 || (prev - distortion) <= budget.tolerance * prev {
                break;
            }
        }
        for (r, &j) in order.iter().enumerate() {
            let (a, b) = (bounds[r], bounds[r + 1]);
            if a == b {
                continue;
            }
            let c = if p == 2.0 {
                (s1[b] - s1[a]) / (b - a) as f64
            } else {
                let n = b - a;
                if n % 2 == 1 {
                    sorted[a + n / 2]
                } else {
                    0.5 * (sorted[a + n / 2 - 1] + sorted[a + n / 2])
                }
            };
            cw[j] = support.clamp(c);
        }
        refill_empty(&mut cw, 1, &mut cell_cost, &mut cell_size, support);
    }
    cw.sort_by(f64::total_cmp);
    LloydRun { words: cw, history, iterations }
}

/// Word indices ordered by value, lowest index first among equal values.
fn sorted_order(cw: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..cw.len()).collect();
    order.sort_by(|&a, &b| cw[a].total_cmp(&cw[b]).then(a.cmp(&b)));
    order
}

fn nearest(words: &[f64], dim: usize, x: &[f64], spec: &DistortionSpec) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, w) in words.chunks(dim).enumerate() {
        let d: f64 = x.iter().zip(w).map(|(a, b)| spec.rho(*a, *b)).sum();
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn median(vals: &mut [f64]) -> f64 {
    vals.sort_by(f64::total_cmp);
    let n = vals.len();
    if n % 2 == 1 {
        vals[n / 2]
    } else {
        0.5 * (vals[n / 2 - 1] + vals[n / 2])
    }
}

/// Seeded distinct training vectors.
fn initial_words(training: &[f64], dim: usize, words: usize, seed: u64) -> Vec<f64> {
    let count = training.len() / dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = index::sample(&mut rng, count, words).into_vec();
    picks.sort_unstable();
    picks.iter().flat_map(|&t| training[t * dim..(t + 1) * dim].iter().copied()).collect()
}

/// Lloyd design against a source model; returns the codebook and the
/// distortion history.
pub fn lloyd_design_traced(
    model: &SourceModel,
    shape: CodeShape,
    spec: &DistortionSpec,
    seed: u64,
    budget: &DesignBudget,
) -> Result<(Codebook, Vec<f64>), VqError> {
    let words = shape.words();
    let per_block = shape.components();
    let size = (budget.training_per_word.max(10) * words)
        .saturating_mul(per_block)
        .min(MAX_TRAINING_VECTORS)
        .max(words);
    let training = model.sample(seed, size * shape.dim);
    let run = lloyd_on_training(&training, shape.dim, words, spec, model.support(), budget, seed)?;
    let provenance = Provenance { seed, training_size: size as u64, iterations: run.iterations };
    let cb = Codebook::new(shape.block_len, shape.dim, run.words, shape.bits_per_word(), spec.p(), provenance)?;
    Ok((cb, run.history))
}

pub fn lloyd_design(
    model: &SourceModel,
    shape: CodeShape,
    spec: &DistortionSpec,
    seed: u64,
    budget: &DesignBudget,
) -> Result<Codebook, VqError> {
    lloyd_design_traced(model, shape, spec, seed, budget).map(|(cb, _)| cb)
}
