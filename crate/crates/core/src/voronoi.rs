//! Single-layer Voronoi codes `A_r = L ∩ rV`.

use crate::error::{Error, Result};
use crate::lattice::{Lattice, LatticePoint};

#[derive(Clone, Debug, PartialEq)]
pub struct VoronoiCode {
    lattice: Lattice,
    ratio: u32,
}

/// Output of [`VoronoiCode::encode`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VoronoiEncoding {
    pub digits: Vec<u32>,
    pub overload: bool,
}

impl VoronoiCode {
    pub fn new(lattice: Lattice, ratio: u32) -> Result<Self> {
        if ratio < 2 {
            return Err(Error::InvalidParameter(format!(
                "nesting ratio must be >= 2, got {ratio}"
            )));
        }
        Ok(VoronoiCode { lattice, ratio })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn ratio(&self) -> u32 {
        self.ratio
    }

    /// Bits per dimension, `log2 r`.
    pub fn rate(&self) -> f64 {
        (self.ratio as f64).log2()
    }

    pub fn encode(&self, x: &[f64]) -> Result<VoronoiEncoding> {
        let nearest = self.lattice.nn_quantize(x)?;
        let digits = reduce_digits(&nearest.coords, self.ratio);
        let overload = self.decode(&digits)?.coords != nearest.coords;
        Ok(VoronoiEncoding { digits, overload })
    }

    /// `G b - r Q_L(G b / r)`.
    pub fn decode(&self, digits: &[u32]) -> Result<LatticePoint> {
        check_digits(digits, self.ratio, self.lattice.dim())?;
        Ok(self
            .lattice
            .lattice_point(coset_leader(&self.lattice, digits, self.ratio)))
    }
}

/// `coords mod r`, componentwise into `{0..r-1}`.
pub(crate) fn reduce_digits(coords: &[i64], r: u32) -> Vec<u32> {
    coords.iter().map(|&c| c.rem_euclid(r as i64) as u32).collect()
}

pub(crate) fn check_digits(digits: &[u32], modulus: u32, dim: usize) -> Result<()> {
    if digits.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: digits.len(),
        });
    }
    match digits.iter().find(|&&b| b >= modulus) {
        Some(&digit) => Err(Error::DigitOutOfRange { digit, modulus }),
        None => Ok(()),
    }
}

/// Coefficients of the representative of the coset `G b + rL` inside `rV`.
pub(crate) fn coset_leader(lattice: &Lattice, digits: &[u32], r: u32) -> Vec<i64> {
    let b: Vec<i64> = digits.iter().map(|&v| v as i64).collect();
    let scaled: Vec<f64> = lattice.point_of(&b).iter().map(|v| v / r as f64).collect();
    let coarse = lattice.nearest_coords(&scaled);
    b.iter().zip(&coarse).map(|(bi, ci)| bi - r as i64 * ci).collect()
}
