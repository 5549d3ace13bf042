//! Fixed-rate block quantizers with nearest-neighbor encoders.
//!
//! An n-block codebook is the n/L-fold product of an L-dimensional
//! component codebook with `2^ceil(L R)` words, so encoding is exact
//! nearest-neighbor search over all n-blocks while storage stays small.

mod augment;
mod file;
mod lloyd;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::sources::{variational_distance, QuadratureGrid, SourceModel, Support};

pub use augment::{augment_codebook, reference_moment, robust_reencode, truncated_encode, AugmentedCodebook};
pub use file::{read_codebook, write_codebook, CODEBOOK_MAGIC, CODEBOOK_VERSION};
pub use lloyd::{lloyd_design, lloyd_design_traced, lloyd_on_training, DesignBudget, LloydRun, MAX_TRAINING_VECTORS};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VqError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid distortion spec: {0}")]
    Spec(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("design failed: {0}")]
    Design(String),
    #[error("malformed codebook file: {0}")]
    Format(String),
    #[error("i/o: {0}")]
    Io(String),
}

/// `rho(x, y) = |x - y|^p` on a compact alphabet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortionSpec {
    p: f64,
    d_max: f64,
}

impl DistortionSpec {
    /// Reproductions live in the support, so `d_max` is its width.
    pub fn new(p: f64, support: Support) -> Result<Self, VqError> {
        if !(p.is_finite() && p > 0.0) {
            return Err(VqError::Spec(format!("p must be positive, got {p}")));
        }
        Ok(DistortionSpec { p, d_max: support.width() })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    pub fn rho_max(&self) -> f64 {
        self.d_max.powf(self.p)
    }

    #[inline]
    pub fn rho(&self, x: f64, y: f64) -> f64 {
        let d = (x - y).abs();
        if self.p == 2.0 {
            d * d
        } else if self.p == 1.0 {
            d
        } else {
            d.powf(self.p)
        }
    }
}

/// Block length, component dimension and rate of a product code.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodeShape {
    pub block_len: usize,
    pub dim: usize,
    pub rate: f64,
}

impl CodeShape {
    pub fn new(block_len: usize, dim: usize, rate: f64) -> Result<Self, VqError> {
        if block_len == 0 || dim == 0 || !block_len.is_multiple_of(dim) {
            return Err(VqError::Shape(format!("component dimension {dim} must divide block length {block_len}")));
        }
        if !(rate.is_finite() && rate >= 0.0) {
            return Err(VqError::Shape(format!("rate must be nonnegative, got {rate}")));
        }
        let shape = CodeShape { block_len, dim, rate };
        if shape.bits_per_word() > 24 {
            return Err(VqError::Capacity(format!("{} bits per component word is too many", shape.bits_per_word())));
        }
        Ok(shape)
    }

    /// `ceil(L R)`, guarded against rounding in `L * R`.
    pub fn bits_per_word(&self) -> u32 {
        ((self.dim as f64 * self.rate) - 1e-9).ceil().max(0.0) as u32
    }

    pub fn words(&self) -> usize {
        1 << self.bits_per_word()
    }

    pub fn components(&self) -> usize {
        self.block_len / self.dim
    }

    pub fn rate_bits(&self) -> u64 {
        self.components() as u64 * self.bits_per_word() as u64
    }
}

/// How a codebook was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Provenance {
    pub seed: u64,
    pub training_size: u64,
    pub iterations: u32,
}

/// Codeword choice for every component of a block.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CodeIndex(pub Vec<u32>);

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    block_len: usize,
    dim: usize,
    words: Vec<f64>,
    bits_per_word: u32,
    p_exponent: f64,
    provenance: Provenance,
}

impl Codebook {
    /// `words` is row-major with `dim` entries per component codeword.
    pub fn new(
        block_len: usize,
        dim: usize,
        words: Vec<f64>,
        bits_per_word: u32,
        p_exponent: f64,
        provenance: Provenance,
    ) -> Result<Self, VqError> {
        if dim == 0 || block_len == 0 || !block_len.is_multiple_of(dim) {
            return Err(VqError::Shape(format!("component dimension {dim} must divide block length {block_len}")));
        }
        if words.is_empty() || !words.len().is_multiple_of(dim) {
            return Err(VqError::Shape(format!("{} values do not form {dim}-dimensional words", words.len())));
        }
        let count = words.len() / dim;
        if bits_per_word >= 32 || count > 1usize << bits_per_word {
            return Err(VqError::Shape(format!("{count} words do not fit in {bits_per_word} bits")));
        }
        if words.iter().any(|w| !w.is_finite()) {
            return Err(VqError::Shape("non-finite codeword entry".into()));
        }
        Ok(Codebook { block_len, dim, words, bits_per_word, p_exponent, provenance })
    }

    /// Scalar codebook with the smallest index width that fits the words.
    pub fn scalar(block_len: usize, words: Vec<f64>, p_exponent: f64) -> Result<Self, VqError> {
        let bits = crate::param_codec::index_bits(words.len());
        Self::new(block_len, 1, words, bits, p_exponent, Provenance::default())
    }

    /// Same component words, used on blocks of a different length.
    pub fn with_block_len(&self, block_len: usize) -> Result<Self, VqError> {
        Self::new(block_len, self.dim, self.words.clone(), self.bits_per_word, self.p_exponent, self.provenance)
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn word_count(&self) -> usize {
        self.words.len() / self.dim
    }

    pub fn word(&self, i: usize) -> &[f64] {
        &self.words[i * self.dim..(i + 1) * self.dim]
    }

    pub fn words(&self) -> &[f64] {
        &self.words
    }

    pub fn bits_per_word(&self) -> u32 {
        self.bits_per_word
    }

    pub fn components(&self) -> usize {
        self.block_len / self.dim
    }

    /// Width of a block body in bits.
    pub fn rate_bits(&self) -> u64 {
        self.components() as u64 * self.bits_per_word as u64
    }

    pub fn p_exponent(&self) -> f64 {
        self.p_exponent
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Number of n-block codewords, if it fits in `u128`.
    pub fn block_codeword_count(&self) -> Option<u128> {
        (self.word_count() as u128).checked_pow(self.components() as u32)
    }

    /// Nearest component word under the additive distortion `dist`; lowest index on ties.
    pub fn nearest_by(&self, x: &[f64], dist: impl Fn(f64, f64) -> f64) -> (u32, f64) {
        let mut best = (0u32, f64::INFINITY);
        for i in 0..self.word_count() {
            let d: f64 = x.iter().zip(self.word(i)).map(|(a, b)| dist(*a, *b)).sum();
            if d < best.1 {
                best = (i as u32, d);
            }
        }
        best
    }

    pub fn nearest(&self, x: &[f64], spec: &DistortionSpec) -> (u32, f64) {
        self.nearest_by(x, |a, b| spec.rho(a, b))
    }

    pub fn check_block(&self, block: &[f64]) -> Result<(), VqError> {
        if block.len() != self.block_len {
            return Err(VqError::Shape(format!("block of length {} for a code of length {}", block.len(), self.block_len)));
        }
        Ok(())
    }

    /// Nearest-neighbor encoding; returns the index and the block distortion.
    pub fn encode(&self, block: &[f64], spec: &DistortionSpec) -> Result<(CodeIndex, f64), VqError> {
        self.check_block(block)?;
        let mut idx = Vec::with_capacity(self.components());
        let mut total = 0.0;
        for chunk in block.chunks(self.dim) {
            let (i, d) = self.nearest(chunk, spec);
            idx.push(i);
            total += d;
        }
        Ok((CodeIndex(idx), total))
    }

    pub fn reproduce(&self, index: &CodeIndex) -> Result<Vec<f64>, VqError> {
        if index.0.len() != self.components() {
            return Err(VqError::Shape(format!("index has {} components, code has {}", index.0.len(), self.components())));
        }
        let mut out = Vec::with_capacity(self.block_len);
        for &i in &index.0 {
            if i as usize >= self.word_count() {
                return Err(VqError::Shape(format!("word index {i} out of range")));
            }
            out.extend_from_slice(self.word(i as usize));
        }
        Ok(out)
    }

    /// Sum of per-letter distortions between a block and a reproduction.
    pub fn block_distortion(block: &[f64], reproduction: &[f64], spec: &DistortionSpec) -> f64 {
        block.iter().zip(reproduction).map(|(a, b)| spec.rho(*a, *b)).sum()
    }
}

pub fn nn_encode(cb: &Codebook, x_block: &[f64], spec: &DistortionSpec) -> Result<CodeIndex, VqError> {
    cb.encode(x_block, spec).map(|(i, _)| i)
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        if values.len() < 2 {
            return Estimate { mean, se: 0.0 };
        }
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        Estimate { mean, se: (var / n).sqrt() }
    }
}

/// Per-letter distortion of each block under nearest-neighbor encoding.
pub fn per_block_distortion(cb: &Codebook, blocks: &[Vec<f64>], spec: &DistortionSpec) -> Result<Vec<f64>, VqError> {
    let n = cb.block_len() as f64;
    blocks.iter().map(|b| cb.encode(b, spec).map(|(_, d)| d / n)).collect()
}

pub fn distortion_on_sample(cb: &Codebook, blocks: &[Vec<f64>], spec: &DistortionSpec) -> Result<f64, VqError> {
    if blocks.is_empty() {
        return Err(VqError::Shape("no blocks".into()));
    }
    Ok(Estimate::from_values(&per_block_distortion(cb, blocks, spec)?).mean)
}

/// `E min_j rho(X, c_j)` by quadrature; scalar codebooks only.
pub fn expected_distortion(
    cb: &Codebook,
    model: &SourceModel,
    spec: &DistortionSpec,
    quad: &QuadratureGrid,
) -> Result<f64, VqError> {
    if cb.dim() != 1 {
        return Err(VqError::Shape("quadrature distortion needs a scalar component codebook".into()));
    }
    Ok(quad.integrate_fn(|x| model.pdf(x) * cb.nearest(&[x], spec).1))
}

/// Draw `count` blocks of length `n` from one seeded stream.
pub fn sample_blocks(model: &SourceModel, seed: u64, count: usize, n: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| model.sample_with(&mut rng, n)).collect()
}

/// Both sides of the mismatch inequality
/// `|D_P^{1/p} - D_Q^{1/p}| <= 2^{1/p} d_max d_V(P, Q)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MismatchGap {
    pub lhs: f64,
    pub rhs: f64,
    /// Standard error of `lhs`.
    pub mc_sigma: f64,
    pub d_p: Estimate,
    pub d_q: Estimate,
}

impl MismatchGap {
    pub fn holds(&self, sigmas: f64) -> bool {
        self.lhs <= self.rhs + sigmas * self.mc_sigma
    }
}

pub fn mismatch_gap(
    cb: &Codebook,
    model_p: &SourceModel,
    model_q: &SourceModel,
    spec: &DistortionSpec,
    mc_budget: usize,
    seed: u64,
) -> Result<MismatchGap, VqError> {
    let n = cb.block_len();
    let dp = Estimate::from_values(&per_block_distortion(cb, &sample_blocks(model_p, seed, mc_budget, n), spec)?);
    let dq = Estimate::from_values(&per_block_distortion(
        cb,
        &sample_blocks(model_q, crate::seed::derive(seed, 1), mc_budget, n),
        spec,
    )?);
    let inv = 1.0 / spec.p();
    // delta method, capped by the Holder bound |a^{1/p} - b^{1/p}| <= |a - b|^{1/p}
    let root_se = |e: &Estimate| {
        let delta = if e.mean > 0.0 { inv * e.mean.powf(inv - 1.0) * e.se } else { f64::INFINITY };
        delta.min(e.se.powf(inv))
    };
    let lhs = (dp.mean.powf(inv) - dq.mean.powf(inv)).abs();
    let mc_sigma = root_se(&dp).hypot(root_se(&dq));
    let quad = QuadratureGrid::with_default(model_p.support());
    let family = Arc::clone(model_p.family());
    let dv = variational_distance(&family, model_p.theta(), model_q.theta(), &quad).map_err(|e| VqError::Spec(e.to_string()))?;
    let rhs = 2f64.powf(inv) * spec.d_max() * dv;
    Ok(MismatchGap { lhs, rhs, mc_sigma, d_p: dp, d_q: dq })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sources::{Component, Family, MixtureFamily, ParamVector};

    fn unit() -> Support {
        Support::new(0.0, 1.0).unwrap()
    }

    fn uniform_model() -> SourceModel {
        let c = vec![Component::uniform(0.0, 1.0).unwrap(), Component::triangular(0.0, 0.5, 1.0).unwrap()];
        let fam = Arc::new(Family::Mixture(MixtureFamily::new(c, unit()).unwrap()));
        SourceModel::new(fam, ParamVector::new(vec![1.0, 0.0])).unwrap()
    }

    #[test]
    fn shape_arithmetic() {
        let s = CodeShape::new(64, 1, 1.0).unwrap();
        assert_eq!((s.bits_per_word(), s.words(), s.rate_bits()), (1, 2, 64));
        let s = CodeShape::new(64, 4, 0.5).unwrap();
        assert_eq!((s.bits_per_word(), s.words(), s.rate_bits()), (2, 4, 32));
        let s = CodeShape::new(8, 2, 0.7).unwrap();
        assert_eq!(s.bits_per_word(), 2);
        assert!(CodeShape::new(10, 4, 1.0).is_err());
        assert_eq!(CodeShape::new(4, 1, 0.0).unwrap().words(), 1);
    }

    #[test]
    fn scalar_nn_example() {
        let spec = DistortionSpec::new(2.0, unit()).unwrap();
        let cb = Codebook::scalar(1, vec![0.25, 0.75], 2.0).unwrap();
        assert_eq!(nn_encode(&cb, &[0.3], &spec).unwrap(), CodeIndex(vec![0]));
        // tie at the midpoint goes to the lower index
        assert_eq!(nn_encode(&cb, &[0.5], &spec).unwrap(), CodeIndex(vec![0]));
        assert!(nn_encode(&cb, &[0.3, 0.4], &spec).is_err());
    }

    #[test]
    fn encoding_a_codeword_costs_nothing() {
        let spec = DistortionSpec::new(1.0, unit()).unwrap();
        let cb = Codebook::new(4, 2, vec![0.1, 0.2, 0.8, 0.9, 0.4, 0.6], 2, 1.0, Provenance::default()).unwrap();
        let block = [0.8, 0.9, 0.4, 0.6];
        let (idx, d) = cb.encode(&block, &spec).unwrap();
        assert_eq!(idx, CodeIndex(vec![1, 2]));
        assert_eq!(d, 0.0);
        assert_eq!(cb.reproduce(&idx).unwrap(), block.to_vec());
        assert_eq!(distortion_on_sample(&cb, &[block.to_vec()], &spec).unwrap(), 0.0);
    }

    #[test]
    fn quadrature_distortion_of_two_level_quantizer() {
        let spec = DistortionSpec::new(2.0, unit()).unwrap();
        let cb = Codebook::scalar(1, vec![0.25, 0.75], 2.0).unwrap();
        let model = uniform_model();
        let quad = QuadratureGrid::with_default(unit());
        let d = expected_distortion(&cb, &model, &spec, &quad).unwrap();
        assert!((d - 1.0 / 48.0).abs() < 1e-6);
        let blocks = sample_blocks(&model, 4, 20_000, 1);
        let mc = Estimate::from_values(&per_block_distortion(&cb, &blocks, &spec).unwrap());
        assert!((mc.mean - 1.0 / 48.0).abs() < 3.0 * mc.se);
    }

    #[test]
    fn mismatch_with_itself_is_zero() {
        let spec = DistortionSpec::new(2.0, unit()).unwrap();
        let cb = Codebook::scalar(4, vec![0.1, 0.5, 0.9], 2.0).unwrap();
        let m = uniform_model();
        let g = mismatch_gap(&cb, &m, &m, &spec, 2000, 3).unwrap();
        assert_eq!(g.rhs, 0.0);
        assert!(g.holds(3.0), "{g:?}");
    }
}
