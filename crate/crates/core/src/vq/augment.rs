use std::sync::Arc;

use statrs::function::factorial::ln_binomial;

use super::{CodeIndex, Codebook, DistortionSpec, VqError};
use crate::sources::{Family, ParamSpace, ParamVector, QuadratureGrid, SourceModel};

/// Explicit enumeration is limited to this block length.
pub const MAX_MATERIALIZED_LEN: usize = 24;
/// ... and to this many codewords.
pub const MAX_MATERIALIZED_WORDS: u128 = 1 << 22;

/// A base code extended with every codeword obtained by replacing at most
/// `floor(delta n)` letters by the reference letter, plus the all-reference block.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedCodebook {
    base: Codebook,
    delta: f64,
    ref_letter: f64,
    threshold: f64,
}

pub fn augment_codebook(base: &Codebook, delta: f64, ref_letter: f64, threshold: f64) -> Result<AugmentedCodebook, VqError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(VqError::Spec(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(threshold > 0.0 && ref_letter.is_finite()) {
        return Err(VqError::Spec(format!("threshold {threshold} and reference letter {ref_letter} are invalid")));
    }
    Ok(AugmentedCodebook { base: base.clone(), delta, ref_letter, threshold })
}

fn binomial(n: u32, k: u32) -> Option<u128> {
    let mut c: u128 = 1;
    for i in 0..k {
        c = c.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(c)
}

impl AugmentedCodebook {
    pub fn base(&self) -> &Codebook {
        &self.base
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn ref_letter(&self) -> f64 {
        self.ref_letter
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// `floor(delta n)`.
    pub fn max_substitutions(&self) -> usize {
        (self.delta * self.base.block_len() as f64).floor() as usize
    }

    /// `|base| * sum_{i <= floor(delta n)} C(n, i) + 1`, or `None` on overflow.
    pub fn count(&self) -> Option<u128> {
        let n = self.base.block_len() as u32;
        let mut ball: u128 = 0;
        for i in 0..=self.max_substitutions() as u32 {
            ball = ball.checked_add(binomial(n, i)?)?;
        }
        self.base.block_codeword_count()?.checked_mul(ball)?.checked_add(1)
    }

    /// Index width needed for the augmented code.
    pub fn rate_bits(&self) -> Option<u32> {
        self.count().map(|c| if c <= 1 { 0 } else { 128 - (c - 1).leading_zeros() })
    }

    /// `log2` of the codeword count, also when the count overflows `u128`.
    pub fn log2_count(&self) -> f64 {
        if let Some(c) = self.count() {
            return (c as f64).log2();
        }
        let n = self.base.block_len() as u64;
        let terms: Vec<f64> = (0..=self.max_substitutions() as u64).map(|i| ln_binomial(n, i)).collect();
        let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ln_ball = top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln();
        let ln_base = self.base.components() as f64 * (self.base.word_count() as f64).ln();
        // the extra all-reference word is below f64 resolution here
        (ln_base + ln_ball) / std::f64::consts::LN_2
    }

    /// Every codeword, base words first, substitutions in lexicographic
    /// position order, `a*^n` last.
    pub fn materialize(&self) -> Result<Vec<Vec<f64>>, VqError> {
        let n = self.base.block_len();
        let count = self.count();
        if n > MAX_MATERIALIZED_LEN || count.is_none_or(|c| c > MAX_MATERIALIZED_WORDS) {
            return Err(VqError::Capacity(format!(
                "augmented codebook with n = {n} and {count:?} words is only available procedurally"
            )));
        }
        let comps = self.base.components();
        let k = self.base.word_count();
        let base_total = k.pow(comps as u32);
        let mut out = Vec::with_capacity(count.unwrap_or(0) as usize);
        for b in 0..base_total {
            let mut idx = vec![0u32; comps];
            let mut rest = b;
            for slot in idx.iter_mut().rev() {
                *slot = (rest % k) as u32;
                rest /= k;
            }
            let word = self.base.reproduce(&CodeIndex(idx))?;
            for i in 0..=self.max_substitutions() {
                let mut positions: Vec<usize> = (0..i).collect();
                loop {
                    let mut w = word.clone();
                    for &p in &positions {
                        w[p] = self.ref_letter;
                    }
                    out.push(w);
                    if !next_combination(&mut positions, n) {
                        break;
                    }
                }
            }
        }
        out.push(vec![self.ref_letter; n]);
        Ok(out)
    }

    /// Membership without enumeration.
    pub fn contains(&self, block: &[f64]) -> bool {
        let n = self.base.block_len();
        if block.len() != n {
            return false;
        }
        if block.iter().all(|&x| x == self.ref_letter) {
            return true;
        }
        let dim = self.base.dim();
        let mut subs = 0;
        for chunk in block.chunks(dim) {
            let best = (0..self.base.word_count())
                .filter_map(|j| {
                    let w = self.base.word(j);
                    let mut s = 0;
                    for (x, c) in chunk.iter().zip(w) {
                        if x == c {
                            continue;
                        }
                        if *x == self.ref_letter {
                            s += 1;
                        } else {
                            return None;
                        }
                    }
                    Some(s)
                })
                .min();
            match best {
                Some(s) => subs += s,
                None => return false,
            }
        }
        subs <= self.max_substitutions()
    }

    /// Base encoding under the truncated distortion, then the substitution rule.
    pub fn encode(&self, block: &[f64], spec: &DistortionSpec) -> Result<Vec<f64>, VqError> {
        let (idx, _) = truncated_encode(&self.base, block, spec, self.threshold)?;
        let base_rep = self.base.reproduce(&idx)?;
        robust_reencode(block, &base_rep, self.delta, self.ref_letter, self.threshold, spec)
    }
}

fn next_combination(pos: &mut [usize], n: usize) -> bool {
    let k = pos.len();
    for i in (0..k).rev() {
        if pos[i] < n - k + i {
            pos[i] += 1;
            for j in i + 1..k {
                pos[j] = pos[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Nearest-neighbor encoding under `min(rho, threshold)`; returns the
/// index and the truncated block distortion.
pub fn truncated_encode(
    cb: &Codebook,
    block: &[f64],
    spec: &DistortionSpec,
    threshold: f64,
) -> Result<(CodeIndex, f64), VqError> {
    cb.check_block(block)?;
    let mut idx = Vec::with_capacity(cb.components());
    let mut total = 0.0;
    for chunk in block.chunks(cb.dim()) {
        let (i, d) = cb.nearest_by(chunk, |a, b| spec.rho(a, b).min(threshold));
        idx.push(i);
        total += d;
    }
    Ok((CodeIndex(idx), total))
}

/// Replace the letters whose distortion exceeds `threshold` by `ref_letter`
/// when there are at most `floor(delta n)` of them; otherwise emit `ref_letter^n`.
pub fn robust_reencode(
    x_block: &[f64],
    base_reproduction: &[f64],
    delta: f64,
    ref_letter: f64,
    threshold: f64,
    spec: &DistortionSpec,
) -> Result<Vec<f64>, VqError> {
    if x_block.len() != base_reproduction.len() {
        return Err(VqError::Shape(format!(
            "block of length {} against a reproduction of length {}",
            x_block.len(),
            base_reproduction.len()
        )));
    }
    let n = x_block.len();
    let allowed = (delta * n as f64).floor() as usize;
    let violators = x_block.iter().zip(base_reproduction).filter(|(x, y)| spec.rho(**x, **y) > threshold).count();
    if violators > allowed {
        return Ok(vec![ref_letter; n]);
    }
    Ok(x_block
        .iter()
        .zip(base_reproduction)
        .map(|(x, y)| if spec.rho(*x, *y) > threshold { ref_letter } else { *y })
        .collect())
}

/// `G = sup_theta E_theta rho(X, a*)^2` by quadrature. Mixtures attain the
/// sup at a component; exponential families are scanned on a parameter mesh.
pub fn reference_moment(family: &Arc<Family>, ref_letter: f64, spec: &DistortionSpec) -> Result<f64, VqError> {
    let quad = QuadratureGrid::with_default(family.support());
    let second = |model: &SourceModel| {
        quad.integrate_fn(|x| {
            let r = spec.rho(x, ref_letter);
            model.pdf(x) * r * r
        })
    };
    let params: Vec<ParamVector> = match family.param_space() {
        ParamSpace::Simplex { k } => (0..k)
            .map(|i| ParamVector::new((0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect()))
            .collect(),
        space @ ParamSpace::Box(_) => crate::estimator::mesh_points(&space, 8),
    };
    let mut g: f64 = 0.0;
    for theta in params {
        let model = SourceModel::new(family.clone(), theta).map_err(|e| VqError::Spec(e.to_string()))?;
        g = g.max(second(&model));
    }
    Ok(g)
}
