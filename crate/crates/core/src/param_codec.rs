//! Hypercube quantizer for the parameter space and its fixed-width headers.

use std::collections::HashMap;

use crate::sources::{Family, ParamSpace, ParamVector};

/// Slack used when float rounding puts a parameter just outside every kept cell.
const CONTAINMENT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CodecError {
    #[error("parameter outside the grid: {0}")]
    Domain(String),
    #[error("malformed header: {0}")]
    Format(String),
}

/// `ceil(sqrt(n))` in exact integer arithmetic.
pub fn ceil_sqrt(n: usize) -> usize {
    let r = n.isqrt();
    if r * r < n {
        r + 1
    } else {
        r
    }
}

/// Bits needed to index `count` items with fixed-width codes.
pub fn index_bits(count: usize) -> u32 {
    if count <= 1 {
        0
    } else {
        (count - 1).ilog2() + 1
    }
}

/// One kept cell `prod [origin + a_i/m, origin + (a_i+1)/m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub coords: Vec<u32>,
    pub lower: Vec<f64>,
    pub representative: ParamVector,
    /// The representative had to be moved onto the boundary of the parameter set.
    pub on_boundary: bool,
}

/// A header value together with its fixed width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HeaderBits {
    pub value: u64,
    pub width: u32,
}

#[derive(Debug, Clone)]
pub struct ParamGrid {
    space: ParamSpace,
    origin: Vec<f64>,
    side: usize,
    per_unit: usize,
    axis_cells: Vec<u32>,
    cells: Vec<Cell>,
    lookup: HashMap<Vec<u32>, usize>,
    header_bits: u32,
}

pub fn build_grid(family: &Family, n: usize) -> ParamGrid {
    ParamGrid::new(family.param_space(), n)
}

impl ParamGrid {
    pub fn new(space: ParamSpace, n: usize) -> Self {
        let m = ceil_sqrt(n.max(1));
        let k = space.dim();
        let (origin, side, axis_cells) = match &space {
            ParamSpace::Simplex { .. } => (vec![0.0; k], 1, vec![m as u32; k]),
            ParamSpace::Box(b) => {
                let widths: Vec<f64> = b.lo().iter().zip(b.hi()).map(|(l, h)| h - l).collect();
                let side = widths.iter().fold(1.0f64, |a, &w| a.max(w)).ceil() as usize;
                let cells = widths.iter().map(|w| ((w * m as f64).ceil() as u32).max(1)).collect();
                (b.lo().to_vec(), side, cells)
            }
        };

        let mut coords_list = Vec::new();
        let mut current = vec![0u32; k];
        match &space {
            ParamSpace::Simplex { k } => simplex_cells(m as u32, *k as u32, 0, 0, &mut current, &mut coords_list),
            ParamSpace::Box(_) => box_cells(&axis_cells, 0, &mut current, &mut coords_list),
        }

        let mf = m as f64;
        let cells: Vec<Cell> = coords_list
            .into_iter()
            .enumerate()
            .map(|(index, coords)| {
                let lower: Vec<f64> = coords.iter().zip(&origin).map(|(&a, o)| o + a as f64 / mf).collect();
                let (representative, on_boundary) = match &space {
                    ParamSpace::Simplex { k } => {
                        // orthogonal projection of the center onto {sum = 1};
                        // the shift keeps every coordinate inside the cell
                        let sum: u32 = coords.iter().sum();
                        let shift = (m as u32 - sum) as f64 / *k as f64;
                        let mut v: Vec<f64> = coords.iter().map(|&a| (a as f64 + shift) / mf).collect();
                        let residue = 1.0 - v.iter().sum::<f64>();
                        let imax = (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap_or(0);
                        v[imax] += residue;
                        let boundary = v.iter().any(|&x| x <= 0.0);
                        (ParamVector::new(v), boundary)
                    }
                    ParamSpace::Box(b) => {
                        let mut moved = false;
                        let v = lower
                            .iter()
                            .enumerate()
                            .map(|(i, &lo)| {
                                let c = lo + 0.5 / mf;
                                let clamped = c.clamp(b.lo()[i], b.hi()[i]);
                                moved |= clamped != c;
                                clamped
                            })
                            .collect();
                        (ParamVector::new(v), moved)
                    }
                };
                Cell { index, coords, lower, representative, on_boundary }
            })
            .collect();
        let lookup = cells.iter().map(|c| (c.coords.clone(), c.index)).collect();
        let header_bits = index_bits(cells.len());
        ParamGrid { space, origin, side, per_unit: m, axis_cells, cells, lookup, header_bits }
    }

    pub fn space(&self) -> &ParamSpace {
        &self.space
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn header_bits(&self) -> u32 {
        self.header_bits
    }

    /// Cells per unit length, `ceil(sqrt(n))`.
    pub fn per_unit(&self) -> usize {
        self.per_unit
    }

    /// Side `J` of the bounding hypercube.
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    /// `sqrt(k) / ceil(sqrt(n))`: largest distance from a parameter to its representative.
    pub fn max_error(&self) -> f64 {
        (self.dim() as f64).sqrt() / self.per_unit as f64
    }

    /// `k (log2 ceil(sqrt n) + log2 J) + 1`.
    pub fn header_bound(&self) -> f64 {
        self.dim() as f64 * ((self.per_unit as f64).log2() + (self.side as f64).log2()) + 1.0
    }

    pub fn representative(&self, index: usize) -> Option<&ParamVector> {
        self.cells.get(index).map(|c| &c.representative)
    }

    /// Index of the cell owning `theta`; boundaries go to the
    /// lexicographically smallest cell.
    pub fn cell_of(&self, theta: &ParamVector) -> Result<usize, CodecError> {
        self.space.validate(theta).map_err(|e| CodecError::Domain(e.to_string()))?;
        let m = self.per_unit as f64;
        let coords: Vec<u32> = theta
            .iter()
            .zip(&self.origin)
            .zip(&self.axis_cells)
            .map(|((t, o), &cap)| {
                let a = ((t - o) * m).ceil() - 1.0;
                (a.max(0.0) as u32).min(cap - 1)
            })
            .collect();
        if let Some(&i) = self.lookup.get(&coords) {
            return Ok(i);
        }
        self.neighbor_containing(theta, &coords)
            .ok_or_else(|| CodecError::Domain(format!("{theta} is not covered by any cell")))
    }

    fn neighbor_containing(&self, theta: &ParamVector, coords: &[u32]) -> Option<usize> {
        let k = coords.len();
        let m = self.per_unit as f64;
        let mut best: Option<usize> = None;
        for code in 0..3usize.pow(k as u32) {
            let mut c = Vec::with_capacity(k);
            let mut rest = code;
            for &a in coords {
                let step = (rest % 3) as i64 - 1;
                rest /= 3;
                let v = a as i64 + step;
                if v < 0 {
                    break;
                }
                c.push(v as u32);
            }
            if c.len() != k {
                continue;
            }
            if let Some(&i) = self.lookup.get(&c) {
                let inside = theta.iter().zip(&self.cells[i].lower).all(|(t, lo)| {
                    *t >= lo - CONTAINMENT_EPS && *t <= lo + 1.0 / m + CONTAINMENT_EPS
                });
                if inside && best.is_none_or(|b| i < b) {
                    best = Some(i);
                }
            }
        }
        best
    }

    pub fn encode(&self, theta: &ParamVector) -> Result<HeaderBits, CodecError> {
        Ok(HeaderBits { value: self.cell_of(theta)? as u64, width: self.header_bits })
    }

    pub fn decode(&self, bits: HeaderBits) -> Result<&ParamVector, CodecError> {
        if bits.width != self.header_bits {
            return Err(CodecError::Format(format!(
                "header is {} bits wide, grid uses {}",
                bits.width, self.header_bits
            )));
        }
        self.representative(bits.value as usize)
            .filter(|_| bits.value < self.cells.len() as u64)
            .ok_or_else(|| CodecError::Format(format!("header {} exceeds cell count {}", bits.value, self.cells.len())))
    }
}

fn simplex_cells(m: u32, k: u32, pos: usize, sum: u32, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if pos as u32 == k {
        if sum + k >= m && sum < m {
            out.push(current.clone());
        }
        return;
    }
    let remaining_axes = k - pos as u32 - 1;
    for a in 0..m {
        // lower bound reachable only if the remaining axes can still lift the sum
        if sum + a >= m {
            break;
        }
        if sum + a + remaining_axes * (m - 1) + k < m {
            continue;
        }
        current[pos] = a;
        simplex_cells(m, k, pos + 1, sum + a, current, out);
    }
}

fn box_cells(axis_cells: &[u32], pos: usize, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if pos == axis_cells.len() {
        out.push(current.clone());
        return;
    }
    for a in 0..axis_cells[pos] {
        current[pos] = a;
        box_cells(axis_cells, pos + 1, current, out);
    }
}

pub fn encode_param(grid: &ParamGrid, theta: &ParamVector) -> Result<HeaderBits, CodecError> {
    grid.encode(theta)
}

pub fn decode_param(grid: &ParamGrid, bits: HeaderBits) -> Result<ParamVector, CodecError> {
    grid.decode(bits).cloned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sources::ParamBox;

    fn unit_interval(n: usize) -> ParamGrid {
        ParamGrid::new(ParamSpace::Box(ParamBox::new(vec![0.0], vec![1.0]).unwrap()), n)
    }

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec())
    }

    #[test]
    fn integer_helpers() {
        assert_eq!(ceil_sqrt(4), 2);
        assert_eq!(ceil_sqrt(5), 3);
        assert_eq!(ceil_sqrt(4096), 64);
        assert_eq!(index_bits(1), 0);
        assert_eq!(index_bits(2), 1);
        assert_eq!(index_bits(3), 2);
        assert_eq!(index_bits(1024), 10);
        assert_eq!(index_bits(1025), 11);
    }

    #[test]
    fn unit_interval_two_cells() {
        let g = unit_interval(4);
        assert_eq!(g.len(), 2);
        assert_eq!(g.header_bits(), 1);
        assert_eq!(g.representative(0), Some(&pv(&[0.25])));
        assert_eq!(g.representative(1), Some(&pv(&[0.75])));
        assert_eq!(g.cell_of(&pv(&[0.7])).unwrap(), 1);
        assert_eq!(g.cell_of(&pv(&[0.5])).unwrap(), 0);
        assert_eq!(g.cell_of(&pv(&[0.0])).unwrap(), 0);
        assert_eq!(g.cell_of(&pv(&[1.0])).unwrap(), 1);
        assert!(g.cell_of(&pv(&[1.2])).is_err());
        assert_eq!(decode_param(&g, HeaderBits { value: 0, width: 1 }).unwrap(), pv(&[0.25]));
        assert!(decode_param(&g, HeaderBits { value: 2, width: 1 }).is_err());
        assert!(decode_param(&g, HeaderBits { value: 0, width: 2 }).is_err());
    }

    #[test]
    fn simplex_cells_by_enumeration() {
        // brute force over the unit square: keep cells that own part of the simplex
        for n in [4, 9, 16, 30, 64] {
            let g = ParamGrid::new(ParamSpace::Simplex { k: 2 }, n);
            let m = g.per_unit() as u32;
            let mut want = Vec::new();
            for a in 0..m {
                for b in 0..m {
                    if a + b + 2 >= m && a + b < m {
                        want.push(vec![a, b]);
                    }
                }
            }
            let got: Vec<Vec<u32>> = g.cells().iter().map(|c| c.coords.clone()).collect();
            assert_eq!(got, want);
            assert!(g.len() <= (m * m) as usize);
        }
        assert!(ParamGrid::new(ParamSpace::Simplex { k: 2 }, 4).len() <= 4);
    }

    #[test]
    fn representatives_are_inside_cells() {
        for space in [ParamSpace::Simplex { k: 3 }, ParamSpace::Box(ParamBox::new(vec![-1.0, 0.0], vec![0.7, 2.5]).unwrap())] {
            let g = ParamGrid::new(space.clone(), 50);
            let side = 1.0 / g.per_unit() as f64;
            for c in g.cells() {
                space.validate(&c.representative).unwrap();
                for (r, lo) in c.representative.iter().zip(&c.lower) {
                    assert!(*r >= lo - 1e-12 && *r <= lo + side + 1e-12);
                }
                assert_eq!(g.cell_of(&c.representative).unwrap(), c.index);
            }
        }
    }

    #[test]
    fn box_edge_cells_are_flagged() {
        let g = ParamGrid::new(ParamSpace::Box(ParamBox::new(vec![0.0], vec![0.9]).unwrap()), 4);
        assert_eq!(g.len(), 2);
        assert!(g.cells().iter().all(|c| !c.on_boundary));
        assert_eq!(g.representative(1), Some(&pv(&[0.75])));
        let g = ParamGrid::new(ParamSpace::Box(ParamBox::new(vec![0.0], vec![0.6]).unwrap()), 4);
        assert_eq!(g.representative(1), Some(&pv(&[0.6])));
        assert!(g.cells()[1].on_boundary);
    }

    #[test]
    fn single_cell_has_empty_header() {
        let g = unit_interval(1);
        assert_eq!(g.len(), 1);
        assert_eq!(g.header_bits(), 0);
        assert_eq!(g.encode(&pv(&[0.3])).unwrap(), HeaderBits { value: 0, width: 0 });
    }

    #[test]
    fn header_bound_holds() {
        for e in 2..13 {
            let n = 1usize << e;
            for space in [
                ParamSpace::Simplex { k: 2 },
                ParamSpace::Simplex { k: 3 },
                ParamSpace::Box(ParamBox::new(vec![-1.5, 0.0], vec![1.5, 1.0]).unwrap()),
            ] {
                let g = ParamGrid::new(space, n);
                assert_eq!(g.header_bits(), index_bits(g.len()));
                assert!(g.header_bits() as f64 <= g.header_bound() + 1e-12);
            }
        }
    }
}
