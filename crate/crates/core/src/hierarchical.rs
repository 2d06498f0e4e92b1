//! Hierarchical nested-lattice quantization.
//!
//! A vector is quantized to the base lattice `L` once, and the resulting
//! point is described by `M` digit vectors `b_0..b_{M-1}` in `[q]^d`, each
//! identifying a point of the Voronoi code `A_q`. Layer `m` carries the
//! residue of `Q^m(x) / q^m` modulo `qL`, where
//!
//! ```text
//! Q^0(x) = Q_L(x),   Q^m(x) = Q_{q^m L}(Q^{m-1}(x)).
//! ```
//!
//! Decoding sums `q^m * x_m` with `x_m = G b_m - q Q_L(G b_m / q)`, which
//! telescopes to `Q_L(x) - Q^M(x)`. The reconstruction is exact precisely when
//! `Q^M(x) = 0`, which is what the encoder's overload flag reports.
//!
//! Digits are stored finest layer first (`b_0` first).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Lattice, LatticePoint};
use crate::voronoi::{check_digits, coset_leader, reduce_digits};

/// Largest codebook [`HierarchicalCodec::enumerate_codebook`] and
/// [`HierarchicalCodec::verify_sandwich`] will walk.
pub const ENUMERATION_LIMIT: u128 = 1 << 24;

#[derive(Clone, Debug, PartialEq)]
pub struct HierarchicalCodec {
    lattice: Lattice,
    q: u32,
    depth: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct HierarchicalEncoding {
    q: u32,
    dim: usize,
    /// `depth * dim` digits, layer-major.
    digits: Vec<u32>,
    pub overload: bool,
}

impl HierarchicalEncoding {
    /// Builds an encoding from layer-major digits, validating the range.
    pub fn from_digits(q: u32, dim: usize, digits: Vec<u32>) -> Result<Self> {
        if dim == 0 || digits.is_empty() || !digits.len().is_multiple_of(dim) {
            return Err(Error::Format(format!(
                "{} digits do not split into layers of dimension {dim}",
                digits.len()
            )));
        }
        for layer in digits.chunks(dim) {
            check_digits(layer, q, dim)?;
        }
        Ok(HierarchicalEncoding {
            q,
            dim,
            digits,
            overload: false,
        })
    }

    pub fn zero(q: u32, dim: usize, depth: usize) -> Self {
        HierarchicalEncoding {
            q,
            dim,
            digits: vec![0; dim * depth],
            overload: false,
        }
    }

    pub fn q(&self) -> u32 {
        self.q
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn depth(&self) -> usize {
        self.digits.len() / self.dim
    }

    /// Digit vector `b_m`.
    pub fn layer(&self, m: usize) -> &[u32] {
        &self.digits[m * self.dim..(m + 1) * self.dim]
    }

    pub fn layers(&self) -> impl Iterator<Item = &[u32]> {
        self.digits.chunks(self.dim)
    }

    pub fn digits(&self) -> &[u32] {
        &self.digits
    }

    pub fn is_zero(&self) -> bool {
        self.digits.iter().all(|&b| b == 0)
    }
}

/// Inner/outer scaled Voronoi code containment check for the codebook.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub r_qm: f64,
    pub inner_scale: f64,
    pub outer_scale: f64,
    pub codebook_size: u64,
    /// Every codeword lies in a different coset of `q^M L`.
    pub distinct: bool,
    pub outer_violations: u64,
    /// Lattice points found inside the inner scaled cell.
    pub inner_points: u64,
    pub inner_violations: u64,
    pub inner_ok: bool,
    pub outer_ok: bool,
}

/// `r_{q,M} = q^-M * sum_{m=1}^{M-1} q^m = (1 - q^{1-M}) / (q - 1)`.
pub fn sandwich_ratio(q: u32, depth: usize) -> f64 {
    let q = q as f64;
    (1.0 - q.powi(1 - depth as i32)) / (q - 1.0)
}

/// Row-major base-`q` index of a digit vector, first coordinate most significant.
pub fn digits_to_index(digits: &[u32], q: u32) -> usize {
    digits.iter().fold(0usize, |acc, &b| acc * q as usize + b as usize)
}

/// Inverse of [`digits_to_index`].
pub fn index_to_digits(mut index: usize, q: u32, dim: usize) -> Vec<u32> {
    let mut out = vec![0u32; dim];
    for slot in out.iter_mut().rev() {
        *slot = (index % q as usize) as u32;
        index /= q as usize;
    }
    out
}

impl HierarchicalCodec {
    pub fn new(lattice: Lattice, q: u32, depth: usize) -> Result<Self> {
        if q < 2 {
            return Err(Error::InvalidParameter(format!("nesting ratio must be >= 2, got {q}")));
        }
        if depth == 0 {
            return Err(Error::InvalidParameter("hierarchy depth must be >= 1".into()));
        }
        // q^M must leave headroom in i64 coefficient arithmetic
        match (q as u64).checked_pow(depth as u32) {
            Some(v) if v <= 1 << 31 => {}
            _ => return Err(Error::InvalidParameter(format!("q^M = {q}^{depth} is too large"))),
        }
        Ok(HierarchicalCodec { lattice, q, depth })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn q(&self) -> u32 {
        self.q
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn dim(&self) -> usize {
        self.lattice.dim()
    }

    /// Bits per dimension, `M log2 q`.
    pub fn rate(&self) -> f64 {
        self.depth as f64 * (self.q as f64).log2()
    }

    /// Bits per encoded vector, `d M log2 q`.
    pub fn bits_per_vector(&self) -> f64 {
        self.dim() as f64 * self.rate()
    }

    fn weight(&self, m: usize) -> i64 {
        (self.q as i64).pow(m as u32)
    }

    /// `Q_L(point(coords) / q)`, in coefficients.
    fn coarsen(&self, coords: &[i64]) -> Vec<i64> {
        let scaled: Vec<f64> = self
            .lattice
            .point_of(coords)
            .iter()
            .map(|v| v / self.q as f64)
            .collect();
        self.lattice.nearest_coords(&scaled)
    }

    fn check_encoding(&self, enc: &HierarchicalEncoding) -> Result<()> {
        if enc.q != self.q || enc.dim != self.dim() || enc.depth() != self.depth {
            return Err(Error::Mismatch(format!(
                "encoding (q={}, d={}, M={}) does not match codec (q={}, d={}, M={})",
                enc.q,
                enc.dim,
                enc.depth(),
                self.q,
                self.dim(),
                self.depth
            )));
        }
        for layer in enc.layers() {
            check_digits(layer, self.q, self.dim())?;
        }
        Ok(())
    }

    pub fn encode(&self, x: &[f64]) -> Result<HierarchicalEncoding> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        let mut digits = Vec::with_capacity(d * self.depth);
        let mut g = self.lattice.nearest_coords(x);
        for m in 0..self.depth {
            if m > 0 {
                g = self.coarsen(&g);
            }
            digits.extend(reduce_digits(&g, self.q));
        }
        let overload = self.coarsen(&g).iter().any(|&c| c != 0);
        Ok(HierarchicalEncoding {
            q: self.q,
            dim: d,
            digits,
            overload,
        })
    }

    /// Layer point `x_m = G b - q Q_L(G b / q)`, an element of `A_q`.
    pub fn layer_point(&self, digits: &[u32]) -> Result<LatticePoint> {
        check_digits(digits, self.q, self.dim())?;
        Ok(self.lattice.lattice_point(coset_leader(&self.lattice, digits, self.q)))
    }

    fn decode_layers(&self, enc: &HierarchicalEncoding, layers: std::ops::Range<usize>) -> Vec<i64> {
        let mut acc = vec![0i64; self.dim()];
        for m in layers {
            let w = self.weight(m);
            let leader = coset_leader(&self.lattice, enc.layer(m), self.q);
            for (a, c) in acc.iter_mut().zip(&leader) {
                *a += w * c;
            }
        }
        acc
    }

    pub fn decode(&self, enc: &HierarchicalEncoding) -> Result<LatticePoint> {
        self.check_encoding(enc)?;
        Ok(self.lattice.lattice_point(self.decode_layers(enc, 0..self.depth)))
    }

    /// Sums only the coarsest `t` layers, recovering `Q^{M-t}(x) - Q^M(x)`.
    pub fn decode_partial(&self, enc: &HierarchicalEncoding, t: usize) -> Result<LatticePoint> {
        self.check_encoding(enc)?;
        if t == 0 || t > self.depth {
            return Err(Error::InvalidParameter(format!(
                "partial decode needs 1 <= t <= {}, got {t}",
                self.depth
            )));
        }
        Ok(self
            .lattice
            .lattice_point(self.decode_layers(enc, self.depth - t..self.depth)))
    }

    /// The composed quantizer `Q^m(x)`; `m = 0` is `Q_L(x)`.
    pub fn q_circ(&self, x: &[f64], m: usize) -> Result<LatticePoint> {
        let mut g = self.lattice.nn_quantize(x)?.coords;
        for _ in 0..m {
            g = self.coarsen(&g);
        }
        let w = (self.q as i64)
            .checked_pow(m as u32)
            .ok_or_else(|| Error::InvalidParameter(format!("q^{m} overflows")))?;
        Ok(self.lattice.lattice_point(g.iter().map(|c| c * w).collect()))
    }

    /// All `q^d` layer points, indexed by [`digits_to_index`].
    pub fn layer_points(&self) -> Vec<LatticePoint> {
        let d = self.dim();
        let count = (self.q as usize).pow(d as u32);
        (0..count)
            .map(|i| {
                let b = index_to_digits(i, self.q, d);
                self.lattice.lattice_point(coset_leader(&self.lattice, &b, self.q))
            })
            .collect()
    }

    fn codebook_size(&self) -> Result<u128> {
        let size = (self.q as u128)
            .checked_pow((self.dim() * self.depth) as u32)
            .unwrap_or(u128::MAX);
        if size > ENUMERATION_LIMIT {
            return Err(Error::EnumerationTooLarge {
                size,
                limit: ENUMERATION_LIMIT,
            });
        }
        Ok(size)
    }

    /// Visits the coefficients of every codeword, in digit order with the
    /// coarsest layer varying slowest.
    fn for_each_codeword(&self, mut visit: impl FnMut(&[i64])) -> Result<()> {
        self.codebook_size()?;
        let d = self.dim();
        let table: Vec<Vec<i64>> = self.layer_points().into_iter().map(|p| p.coords).collect();
        let per_layer = table.len();
        let weights: Vec<i64> = (0..self.depth).map(|m| self.weight(m)).collect();
        let mut idx = vec![0usize; self.depth];
        let mut acc = vec![0i64; d];
        loop {
            acc.iter_mut().for_each(|a| *a = 0);
            for (m, &i) in idx.iter().enumerate() {
                for (a, c) in acc.iter_mut().zip(&table[i]) {
                    *a += weights[m] * c;
                }
            }
            visit(&acc);
            let mut m = 0;
            loop {
                if m == self.depth {
                    return Ok(());
                }
                idx[m] += 1;
                if idx[m] == per_layer {
                    idx[m] = 0;
                    m += 1;
                } else {
                    break;
                }
            }
        }
    }

    /// Decodes every digit combination; `q^{dM}` points.
    pub fn enumerate_codebook(&self) -> Result<Vec<LatticePoint>> {
        let mut out = Vec::with_capacity(self.codebook_size()? as usize);
        self.for_each_codeword(|c| out.push(self.lattice.lattice_point(c.to_vec())))?;
        Ok(out)
    }

    /// Checks `A_{q^M(1-r)} ⊂ C ⊂ A_{q^M(1+r)}` by exhaustive enumeration.
    ///
    /// The outer inclusion walks the codebook. The inner inclusion scans every
    /// lattice point in the ball of radius `q^M (1-r)` times the covering
    /// radius (which contains the inner scaled cell) and looks up its coset
    /// of `q^M L` in a table filled while walking the codebook.
    pub fn verify_sandwich(&self) -> Result<SandwichReport> {
        let size = self.codebook_size()?;
        let d = self.dim();
        let r_qm = sandwich_ratio(self.q, self.depth);
        let big_q = self.weight(self.depth);
        let inner_scale = big_q as f64 * (1.0 - r_qm);
        let outer_scale = big_q as f64 * (1.0 + r_qm);

        let coset_index = |c: &[i64]| -> usize {
            c.iter()
                .fold(0usize, |acc, &v| acc * big_q as usize + v.rem_euclid(big_q) as usize)
        };

        // coset -> codeword coefficients; i16::MIN marks an empty slot
        let mut table = vec![i16::MIN; size as usize * d];
        let mut distinct = true;
        let mut outer_violations = 0u64;
        let mut overflow = false;
        self.for_each_codeword(|c| {
            let p = self.lattice.point_of(c);
            if !self.lattice.in_scaled_voronoi(&p, outer_scale).unwrap_or(false) {
                outer_violations += 1;
            }
            let slot = &mut table[coset_index(c) * d..][..d];
            if slot[0] != i16::MIN {
                distinct = false;
            }
            for (s, &v) in slot.iter_mut().zip(c) {
                match i16::try_from(v) {
                    Ok(v) if v != i16::MIN => *s = v,
                    _ => overflow = true,
                }
            }
        })?;
        if overflow {
            return Err(Error::InvalidParameter(
                "codeword coefficients exceed the coset table range".into(),
            ));
        }

        let radius = inner_scale * self.lattice.covering_radius() * (1.0 + 1e-9) + 1e-9;
        let inv = self.lattice.generator_inv();
        let bounds: Vec<i64> = (0..d)
            .map(|i| {
                let row_norm = inv[i * d..(i + 1) * d].iter().map(|v| v * v).sum::<f64>().sqrt();
                (row_norm * radius).floor() as i64
            })
            .collect();

        let (inner_points, inner_violations) = (-bounds[0]..=bounds[0])
            .into_par_iter()
            .map(|first| {
                let mut points = 0u64;
                let mut violations = 0u64;
                let mut c = vec![0i64; d];
                c[0] = first;
                for k in 1..d {
                    c[k] = -bounds[k];
                }
                loop {
                    let p = self.lattice.point_of(&c);
                    let norm_sq: f64 = p.iter().map(|v| v * v).sum();
                    if norm_sq <= radius * radius && self.lattice.in_scaled_voronoi(&p, inner_scale).unwrap_or(false) {
                        points += 1;
                        let slot = &table[coset_index(&c) * d..][..d];
                        if slot.iter().zip(&c).any(|(&s, &v)| s as i64 != v) {
                            violations += 1;
                        }
                    }
                    let mut k = 1;
                    loop {
                        if k >= d {
                            return (points, violations);
                        }
                        c[k] += 1;
                        if c[k] > bounds[k] {
                            c[k] = -bounds[k];
                            k += 1;
                        } else {
                            break;
                        }
                    }
                }
            })
            .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));

        Ok(SandwichReport {
            r_qm,
            inner_scale,
            outer_scale,
            codebook_size: size as u64,
            distinct,
            outer_violations,
            inner_points,
            inner_violations,
            inner_ok: inner_violations == 0,
            outer_ok: outer_violations == 0 && distinct,
        })
    }
}
