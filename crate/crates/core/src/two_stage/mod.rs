//! Block two-stage codes: the header identifies the source from the previous
//! block, the body indexes a codeword in the codebook designed for that cell.

mod wire;

use std::sync::{Arc, OnceLock};

use crate::estimator::{Estimate, EstimatorError, MinDistanceEstimator};
use crate::param_codec::{CodecError, HeaderBits, ParamGrid};
use crate::seed;
use crate::sources::{Family, ParamVector, SourceError, SourceModel};
use crate::vq::{CodeIndex, CodeShape, Codebook, DesignBudget, DistortionSpec, VqError};

pub use wire::{read_stream, write_stream, StreamLayout, STREAM_MAGIC, STREAM_VERSION};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TwoStageError {
    #[error(transparent)]
    Vq(#[from] VqError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error("malformed stream: {0}")]
    Format(String),
    #[error("invalid code: {0}")]
    Config(String),
}

/// Per-cell codebooks over a parameter grid, designed on first use.
#[derive(Debug)]
pub struct CodeBank {
    family: Arc<Family>,
    grid: ParamGrid,
    shape: CodeShape,
    spec: DistortionSpec,
    budget: DesignBudget,
    global_seed: u64,
    books: Vec<OnceLock<Arc<Codebook>>>,
}

impl CodeBank {
    pub fn new(
        family: Arc<Family>,
        shape: CodeShape,
        spec: DistortionSpec,
        budget: DesignBudget,
        global_seed: u64,
    ) -> Self {
        let grid = ParamGrid::new(family.param_space(), shape.block_len);
        Self::with_grid(family, grid, shape, spec, budget, global_seed)
    }

    pub fn with_grid(
        family: Arc<Family>,
        grid: ParamGrid,
        shape: CodeShape,
        spec: DistortionSpec,
        budget: DesignBudget,
        global_seed: u64,
    ) -> Self {
        let books = (0..grid.len()).map(|_| OnceLock::new()).collect();
        CodeBank { family, grid, shape, spec, budget, global_seed, books }
    }

    pub fn family(&self) -> &Arc<Family> {
        &self.family
    }

    pub fn grid(&self) -> &ParamGrid {
        &self.grid
    }

    pub fn shape(&self) -> CodeShape {
        self.shape
    }

    pub fn spec(&self) -> &DistortionSpec {
        &self.spec
    }

    pub fn budget(&self) -> &DesignBudget {
        &self.budget
    }

    pub fn design_seed(&self, cell: usize) -> u64 {
        seed::derive(self.global_seed, cell as u64)
    }

    /// Codebook of `cell`, designing it for the cell representative if needed.
    /// Concurrent callers may both design, but the results are identical and
    /// only one is kept.
    pub fn codebook(&self, cell: usize) -> Result<Arc<Codebook>, TwoStageError> {
        let slot = self
            .books
            .get(cell)
            .ok_or_else(|| TwoStageError::Format(format!("cell {cell} outside a grid of {}", self.grid.len())))?;
        if let Some(cb) = slot.get() {
            return Ok(Arc::clone(cb));
        }
        let theta = self.grid.cells()[cell].representative.clone();
        let cb = self.design_for(&theta, self.design_seed(cell))?;
        Ok(Arc::clone(slot.get_or_init(|| Arc::new(cb))))
    }

    /// Codebook designed for an arbitrary parameter with the seed of the cell
    /// containing it, so its training data matches that cell's codebook.
    pub fn matched_codebook(&self, theta: &ParamVector) -> Result<Codebook, TwoStageError> {
        let cell = self.grid.cell_of(theta)?;
        self.design_for(theta, self.design_seed(cell))
    }

    fn design_for(&self, theta: &ParamVector, seed: u64) -> Result<Codebook, TwoStageError> {
        let model = SourceModel::new(self.family.clone(), theta.clone())?;
        Ok(crate::vq::lloyd_design(&model, self.shape, &self.spec, seed, &self.budget)?)
    }

    pub fn designed_count(&self) -> usize {
        self.books.iter().filter(|b| b.get().is_some()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedBlock {
    pub header: HeaderBits,
    pub body: CodeIndex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedBlock {
    pub reproduction: Vec<f64>,
    pub theta_hat: ParamVector,
}

/// Encoder-side record of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTrace {
    pub encoded: EncodedBlock,
    pub cell: usize,
    /// Estimate computed from the previous block (absent for the first block).
    pub estimate: Option<Estimate>,
    /// Empirical measures of the previous block on the estimator's sets.
    pub empirical: Option<Vec<f64>>,
    pub reproduction: Vec<f64>,
    /// Per-letter distortion.
    pub distortion: f64,
}

#[derive(Debug, Clone)]
pub struct TwoStageCode {
    bank: Arc<CodeBank>,
    estimator: Arc<MinDistanceEstimator>,
    init_cell: usize,
}

impl TwoStageCode {
    pub fn new(bank: Arc<CodeBank>, estimator: Arc<MinDistanceEstimator>) -> Result<Self, TwoStageError> {
        let shape = bank.shape();
        if shape.rate_bits() > u16::MAX as u64 || bank.grid().header_bits() > u16::MAX as u32 {
            return Err(TwoStageError::Config(format!(
                "{} body bits or {} header bits do not fit the stream header",
                shape.rate_bits(),
                bank.grid().header_bits()
            )));
        }
        if shape.block_len > u32::MAX as usize {
            return Err(TwoStageError::Config(format!("block length {} too large", shape.block_len)));
        }
        if bank.family().dim() != estimator.family().dim() {
            return Err(TwoStageError::Config("estimator and codebooks use different families".into()));
        }
        let init_cell = bank.grid().cell_of(&bank.family().centroid())?;
        Ok(TwoStageCode { bank, estimator, init_cell })
    }

    pub fn bank(&self) -> &Arc<CodeBank> {
        &self.bank
    }

    pub fn estimator(&self) -> &Arc<MinDistanceEstimator> {
        &self.estimator
    }

    pub fn block_len(&self) -> usize {
        self.bank.shape().block_len
    }

    pub fn header_bits(&self) -> u32 {
        self.bank.grid().header_bits()
    }

    pub fn rate_bits(&self) -> u64 {
        self.bank.shape().rate_bits()
    }

    /// Cell used for the first block: the one containing the centroid.
    pub fn init_cell(&self) -> usize {
        self.init_cell
    }

    pub fn rate_per_letter(&self) -> f64 {
        (self.rate_bits() + self.header_bits() as u64) as f64 / self.block_len() as f64
    }

    pub fn layout(&self) -> StreamLayout {
        let shape = self.bank.shape();
        StreamLayout {
            block_len: shape.block_len as u32,
            rate_bits: shape.rate_bits() as u16,
            header_bits: self.header_bits() as u16,
            bits_per_word: shape.bits_per_word(),
            components: shape.components(),
            cells: self.bank.grid().len(),
            words: shape.words(),
        }
    }

    fn check_block(&self, block: &[f64]) -> Result<(), TwoStageError> {
        if block.len() != self.block_len() {
            return Err(TwoStageError::Vq(VqError::Shape(format!(
                "block of length {} for a code of length {}",
                block.len(),
                self.block_len()
            ))));
        }
        Ok(())
    }

    pub fn encode_stream(&self, blocks: &[Vec<f64>]) -> Result<Vec<EncodedBlock>, TwoStageError> {
        Ok(self.encode_stream_traced(blocks)?.into_iter().map(|t| t.encoded).collect())
    }

    pub fn encode_stream_traced(&self, blocks: &[Vec<f64>]) -> Result<Vec<BlockTrace>, TwoStageError> {
        let grid = self.bank.grid();
        let spec = *self.bank.spec();
        let n = self.block_len() as f64;
        let mut out = Vec::with_capacity(blocks.len());
        for (t, block) in blocks.iter().enumerate() {
            self.check_block(block)?;
            let (cell, estimate, empirical) = if t == 0 {
                (self.init_cell, None, None)
            } else {
                let emp = self.estimator.empirical(&blocks[t - 1]);
                let est = self.estimator.estimate_from(&emp);
                (grid.cell_of(&est.theta)?, Some(est), Some(emp))
            };
            let cb = self.bank.codebook(cell)?;
            let (body, total) = cb.encode(block, &spec)?;
            let reproduction = cb.reproduce(&body)?;
            let header = HeaderBits { value: cell as u64, width: grid.header_bits() };
            out.push(BlockTrace {
                encoded: EncodedBlock { header, body },
                cell,
                estimate,
                empirical,
                reproduction,
                distortion: total / n,
            });
        }
        Ok(out)
    }

    /// Fails on the first malformed block without returning anything.
    pub fn decode_stream(&self, encoded: &[EncodedBlock]) -> Result<Vec<DecodedBlock>, TwoStageError> {
        let layout = self.layout();
        let mut out = Vec::with_capacity(encoded.len());
        for (t, block) in encoded.iter().enumerate() {
            layout.check(block).map_err(|e| TwoStageError::Format(format!("block {t}: {e}")))?;
            let cell = block.header.value as usize;
            let theta_hat = self.bank.grid().decode(block.header)?.clone();
            let reproduction = self.bank.codebook(cell)?.reproduce(&block.body)?;
            out.push(DecodedBlock { reproduction, theta_hat });
        }
        Ok(out)
    }

    pub fn write(&self, encoded: &[EncodedBlock]) -> Result<Vec<u8>, TwoStageError> {
        write_stream(&self.layout(), encoded)
    }

    pub fn read(&self, bytes: &[u8]) -> Result<Vec<EncodedBlock>, TwoStageError> {
        read_stream(&self.layout(), bytes)
    }
}

/// Zero-memory baseline: the header names the cell whose codebook gives the
/// smallest distortion on the block itself (lowest index on ties). Designs
/// every codebook in the bank. Returns the block and its per-letter distortion.
pub fn nn_first_stage_encode(bank: &CodeBank, x_block: &[f64]) -> Result<(EncodedBlock, f64), TwoStageError> {
    let mut best: Option<(usize, CodeIndex, f64)> = None;
    for cell in 0..bank.grid().len() {
        let (idx, d) = bank.codebook(cell)?.encode(x_block, bank.spec())?;
        if best.as_ref().is_none_or(|b| d < b.2) {
            best = Some((cell, idx, d));
        }
    }
    let (cell, body, d) = best.ok_or_else(|| TwoStageError::Config("empty code bank".into()))?;
    let header = HeaderBits { value: cell as u64, width: bank.grid().header_bits() };
    Ok((EncodedBlock { header, body }, d / x_block.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::EstimatorConfig;
    use crate::sources::{Component, MixtureFamily, Support};

    fn family() -> Arc<Family> {
        let c = vec![Component::uniform(0.0, 1.0).unwrap(), Component::uniform(0.5, 1.5).unwrap()];
        Arc::new(Family::Mixture(MixtureFamily::new(c, Support::new(0.0, 1.5).unwrap()).unwrap()))
    }

    fn code(n: usize, rate: f64, dim: usize) -> TwoStageCode {
        let fam = family();
        let spec = DistortionSpec::new(2.0, fam.support()).unwrap();
        let shape = CodeShape::new(n, dim, rate).unwrap();
        let bank = Arc::new(CodeBank::new(fam.clone(), shape, spec, DesignBudget::default(), 11));
        let est = Arc::new(MinDistanceEstimator::for_block_length(fam, n, &EstimatorConfig::default()).unwrap());
        TwoStageCode::new(bank, est).unwrap()
    }

    fn stream(theta: &[f64], seed: u64, blocks: usize, n: usize) -> Vec<Vec<f64>> {
        let model = SourceModel::new(family(), ParamVector::new(theta.to_vec())).unwrap();
        crate::vq::sample_blocks(&model, seed, blocks, n)
    }

    #[test]
    fn rate_identity() {
        let c = code(64, 1.0, 1);
        assert_eq!(c.rate_bits(), 64);
        let expected = (64 + c.header_bits() as u64) as f64 / 64.0;
        assert_eq!(c.rate_per_letter(), expected);
        assert!(c.header_bits() as f64 <= c.bank().grid().header_bound());
    }

    #[test]
    fn single_block_uses_the_init_cell() {
        let c = code(16, 1.0, 1);
        let s = stream(&[0.5, 0.5], 1, 1, 16);
        let tr = c.encode_stream_traced(&s).unwrap();
        assert_eq!(tr.len(), 1);
        assert_eq!(tr[0].cell, c.init_cell());
        let dec = c.decode_stream(&[tr[0].encoded.clone()]).unwrap();
        let init_rep = &c.bank().grid().cells()[c.init_cell()].representative;
        assert_eq!(&dec[0].theta_hat, init_rep);
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let c = code(64, 2.0, 2);
        let s = stream(&[0.7, 0.3], 3, 6, 64);
        let tr = c.encode_stream_traced(&s).unwrap();
        let enc: Vec<EncodedBlock> = tr.iter().map(|t| t.encoded.clone()).collect();
        let bytes = c.write(&enc).unwrap();
        let back = c.read(&bytes).unwrap();
        assert_eq!(back, enc);
        let dec = c.decode_stream(&back).unwrap();
        for (d, t) in dec.iter().zip(&tr) {
            assert_eq!(d.reproduction, t.reproduction);
            assert_eq!(d.theta_hat, c.bank().grid().cells()[t.cell].representative);
        }
    }

    #[test]
    fn header_ignores_order_within_previous_block() {
        let c = code(64, 1.0, 1);
        let mut s = stream(&[0.3, 0.7], 5, 2, 64);
        let a = c.encode_stream(&s).unwrap();
        s[0].reverse();
        s[0].swap(3, 40);
        let b = c.encode_stream(&s).unwrap();
        assert_eq!(a[1].header, b[1].header);
    }

    #[test]
    fn shifted_stream_gives_shifted_output() {
        let c = code(32, 1.0, 1);
        let s = stream(&[0.6, 0.4], 8, 6, 32);
        let a = c.encode_stream(&s).unwrap();
        let b = c.encode_stream(&s[1..]).unwrap();
        assert_eq!(&a[2..], &b[1..]);
    }

    #[test]
    fn headers_concentrate_on_the_true_cell() {
        // estimation error is about one cell width, so the true cell is the
        // most frequent header rather than a majority of them
        let n = 4096;
        let c = code(n, 1.0, 1);
        let grid = c.bank().grid();
        let cell = grid.cell_of(&ParamVector::new(vec![0.6875, 0.3125])).unwrap();
        let theta = grid.cells()[cell].representative.clone();
        let mut counts = vec![0usize; grid.len()];
        for run in 0..20 {
            let s = stream(theta.as_slice(), 100 + run, 3, n);
            for t in &c.encode_stream_traced(&s).unwrap()[1..] {
                counts[t.cell] += 1;
            }
        }
        let mode = (0..counts.len()).fold(0, |b, j| if counts[j] > counts[b] { j } else { b });
        assert_eq!(mode, cell, "{:?}", counts.iter().enumerate().filter(|(_, &c)| c > 0).collect::<Vec<_>>());
    }

    #[test]
    fn nn_first_stage_never_worse() {
        let c = code(16, 1.0, 1);
        let s = stream(&[0.2, 0.8], 21, 5, 16);
        let tr = c.encode_stream_traced(&s).unwrap();
        for (block, t) in s.iter().zip(&tr) {
            let (enc, d) = nn_first_stage_encode(c.bank(), block).unwrap();
            assert!(d <= t.distortion + 1e-15);
            // exhaustive oracle
            let spec = *c.bank().spec();
            let scan: Vec<f64> = (0..c.bank().grid().len())
                .map(|j| c.bank().codebook(j).unwrap().encode(block, &spec).unwrap().1)
                .collect();
            let best = (0..scan.len()).fold(0, |b, j| if scan[j] < scan[b] { j } else { b });
            assert_eq!(enc.header.value as usize, best);
        }
    }

    #[test]
    fn one_cell_bank_is_plain_nn() {
        let fam = family();
        let spec = DistortionSpec::new(2.0, fam.support()).unwrap();
        let shape = CodeShape::new(1, 1, 2.0).unwrap();
        let bank = CodeBank::new(fam, shape, spec, DesignBudget::default(), 3);
        assert_eq!(bank.grid().len(), 1);
        assert_eq!(bank.grid().header_bits(), 0);
        let (enc, _) = nn_first_stage_encode(&bank, &[0.9]).unwrap();
        let cb = bank.codebook(0).unwrap();
        assert_eq!(enc.body, crate::vq::nn_encode(&cb, &[0.9], &spec).unwrap());
    }

    #[test]
    fn bank_designs_lazily_and_deterministically() {
        let c = code(64, 1.0, 1);
        assert_eq!(c.bank().designed_count(), 0);
        let a = c.bank().codebook(2).unwrap();
        assert_eq!(c.bank().designed_count(), 1);
        let fresh = code(64, 1.0, 1);
        assert_eq!(*fresh.bank().codebook(2).unwrap(), *a);
        assert!(c.bank().codebook(c.bank().grid().len()).is_err());
    }

    #[test]
    fn decode_rejects_bad_indices() {
        let c = code(16, 1.0, 1);
        let s = stream(&[0.5, 0.5], 2, 2, 16);
        let mut enc = c.encode_stream(&s).unwrap();
        enc[1].header.value = c.bank().grid().len() as u64;
        assert!(matches!(c.decode_stream(&enc), Err(TwoStageError::Format(_))));
        let mut enc = c.encode_stream(&s).unwrap();
        enc[0].body.0[3] = 2;
        assert!(matches!(c.decode_stream(&enc), Err(TwoStageError::Format(_))));
        let mut enc = c.encode_stream(&s).unwrap();
        enc[0].header.width += 1;
        assert!(matches!(c.decode_stream(&enc), Err(TwoStageError::Format(_))));
    }
}
