//! Inner products of hierarchically encoded vectors from a single table.
//!
//! The table holds `<x_i, x_j>` for every pair of layer points of `A_q`, so a
//! full inner product `<x_hat, y_hat> = sum_{i,j} q^{i+j} L(b_i(x), b_j(y))`
//! takes `M^2` lookups and no reconstruction. Entry `(b_i, b_j)` sits at
//! `digits_to_index(b_i) * q^d + digits_to_index(b_j)`.
//!
//! File layout (all little-endian): eight `u64` header words
//! `[magic, version, lattice id, d, q, value type, 0, 0]` followed by `q^{2d}`
//! eight-byte values, `i64` for integral lattices and `f64` otherwise.

use std::io::{Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::hierarchical::{digits_to_index, HierarchicalCodec, HierarchicalEncoding};
use crate::lattice::LatticeKind;

/// Default bound on the number of table entries.
pub const DEFAULT_LUT_LIMIT: u64 = 1 << 28;

pub const LUT_MAGIC: u64 = u64::from_le_bytes(*b"HNLQLUT\0");
pub const LUT_VERSION: u64 = 1;

const VALUE_INT: u64 = 0;
const VALUE_REAL: u64 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum LutValues {
    Int(Vec<i64>),
    Real(Vec<f64>),
}

impl LutValues {
    fn len(&self) -> usize {
        match self {
            LutValues::Int(v) => v.len(),
            LutValues::Real(v) => v.len(),
        }
    }
}

#[derive(Debug)]
pub struct InnerProductLut {
    kind: LatticeKind,
    dim: usize,
    q: u32,
    values: LutValues,
    queries: AtomicU64,
}

impl PartialEq for InnerProductLut {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.dim == other.dim && self.q == other.q && self.values == other.values
    }
}

impl Clone for InnerProductLut {
    fn clone(&self) -> Self {
        InnerProductLut {
            kind: self.kind,
            dim: self.dim,
            q: self.q,
            values: self.values.clone(),
            queries: AtomicU64::new(0),
        }
    }
}

fn layer_count(q: u32, dim: usize, limit: u64) -> Result<usize> {
    let per_side = (q as u128).pow(dim as u32);
    let size = per_side * per_side;
    if size > limit as u128 {
        return Err(Error::EnumerationTooLarge {
            size,
            limit: limit as u128,
        });
    }
    Ok(per_side as usize)
}

impl InnerProductLut {
    pub fn build(codec: &HierarchicalCodec) -> Result<Self> {
        Self::build_with_limit(codec, DEFAULT_LUT_LIMIT)
    }

    pub fn build_with_limit(codec: &HierarchicalCodec, limit: u64) -> Result<Self> {
        let side = layer_count(codec.q(), codec.dim(), limit)?;
        let points = codec.layer_points();
        debug_assert_eq!(points.len(), side);
        let kind = codec.lattice().kind();
        let values = if kind.has_integral_gram() {
            let ints: Vec<Vec<i64>> = points
                .iter()
                .map(|p| p.point.iter().map(|v| v.round() as i64).collect())
                .collect();
            let mut table = Vec::with_capacity(side * side);
            for a in &ints {
                for b in &ints {
                    table.push(a.iter().zip(b).map(|(x, y)| x * y).sum());
                }
            }
            LutValues::Int(table)
        } else {
            let mut table = Vec::with_capacity(side * side);
            for a in &points {
                for b in &points {
                    table.push(a.point.iter().zip(&b.point).map(|(x, y)| x * y).sum());
                }
            }
            LutValues::Real(table)
        };
        Ok(InnerProductLut {
            kind,
            dim: codec.dim(),
            q: codec.q(),
            values,
            queries: AtomicU64::new(0),
        })
    }

    pub fn q(&self) -> u32 {
        self.q
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lattice_kind(&self) -> LatticeKind {
        self.kind
    }

    pub fn values(&self) -> &LutValues {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.len() == 0
    }

    pub fn size_bytes(&self) -> usize {
        self.len() * 8
    }

    /// Table reads since construction or the last reset.
    pub fn query_count(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }

    pub fn reset_query_count(&self) {
        self.queries.store(0, Ordering::Relaxed);
    }

    fn side(&self) -> usize {
        (self.q as usize).pow(self.dim as u32)
    }

    /// Entry for a pair of digit vectors.
    pub fn entry(&self, bi: &[u32], bj: &[u32]) -> f64 {
        let idx = digits_to_index(bi, self.q) * self.side() + digits_to_index(bj, self.q);
        match &self.values {
            LutValues::Int(v) => v[idx] as f64,
            LutValues::Real(v) => v[idx],
        }
    }

    fn check(&self, enc: &HierarchicalEncoding) -> Result<()> {
        if enc.q() != self.q || enc.dim() != self.dim {
            return Err(Error::Mismatch(format!(
                "encoding (q={}, d={}) does not match table (q={}, d={})",
                enc.q(),
                enc.dim(),
                self.q,
                self.dim
            )));
        }
        Ok(())
    }

    fn check_dither(&self, id: &[u32]) -> Result<()> {
        crate::voronoi::check_digits(id, self.q, self.dim)
    }

    /// Exact `sum_{i,j} w_i w_j L(a_i, b_j)` over integer entries.
    fn weighted_int(&self, table: &[i64], a: &[(i64, usize)], b: &[(i64, usize)]) -> i128 {
        let side = self.side();
        let mut acc = 0i128;
        for &(wa, ia) in a {
            let row = &table[ia * side..(ia + 1) * side];
            for &(wb, ib) in b {
                acc += (wa * wb) as i128 * row[ib] as i128;
            }
        }
        acc
    }

    fn weighted_real(&self, table: &[f64], a: &[(f64, usize)], b: &[(f64, usize)]) -> f64 {
        let side = self.side();
        let mut acc = 0.0;
        for &(wa, ia) in a {
            let row = &table[ia * side..(ia + 1) * side];
            for &(wb, ib) in b {
                acc += wa * wb * row[ib];
            }
        }
        acc
    }

    fn layer_indices(&self, enc: &HierarchicalEncoding) -> Vec<(i64, usize)> {
        enc.layers()
            .enumerate()
            .map(|(m, b)| ((self.q as i64).pow(m as u32), digits_to_index(b, self.q)))
            .collect()
    }

    /// `<x_hat, y_hat>` via `M^2` lookups, exact for integral lattices.
    pub fn inner_product(&self, x: &HierarchicalEncoding, y: &HierarchicalEncoding) -> Result<f64> {
        self.check(x)?;
        self.check(y)?;
        let a = self.layer_indices(x);
        let b = self.layer_indices(y);
        self.queries.fetch_add((a.len() * b.len()) as u64, Ordering::Relaxed);
        Ok(match &self.values {
            LutValues::Int(t) => self.weighted_int(t, &a, &b) as f64,
            LutValues::Real(t) => {
                let fa: Vec<(f64, usize)> = a.iter().map(|&(w, i)| (w as f64, i)).collect();
                let fb: Vec<(f64, usize)> = b.iter().map(|&(w, i)| (w as f64, i)).collect();
                self.weighted_real(t, &fa, &fb)
            }
        })
    }

    /// Integer inner product; only for integral lattices.
    pub fn inner_product_exact(&self, x: &HierarchicalEncoding, y: &HierarchicalEncoding) -> Result<i128> {
        self.check(x)?;
        self.check(y)?;
        let LutValues::Int(t) = &self.values else {
            return Err(Error::Mismatch("table entries are not integral".into()));
        };
        let a = self.layer_indices(x);
        let b = self.layer_indices(y);
        self.queries.fetch_add((a.len() * b.len()) as u64, Ordering::Relaxed);
        Ok(self.weighted_int(t, &a, &b))
    }

    /// `<x_hat + z_x, y_hat + z_y>` via `(M+1)^2` lookups, with the dither
    /// digits acting as layer `-1` (weight `q^-1`).
    pub fn inner_product_dithered(
        &self,
        x: &HierarchicalEncoding,
        y: &HierarchicalEncoding,
        dither_x: &[u32],
        dither_y: &[u32],
    ) -> Result<f64> {
        self.check(x)?;
        self.check(y)?;
        self.check_dither(dither_x)?;
        self.check_dither(dither_y)?;
        // weights shifted by q: layer m gets q^{m+1}, the dither gets 1
        let shifted = |enc: &HierarchicalEncoding, z: &[u32]| {
            let mut v = vec![(1i64, digits_to_index(z, self.q))];
            v.extend(self.layer_indices(enc).into_iter().map(|(w, i)| (w * self.q as i64, i)));
            v
        };
        let a = shifted(x, dither_x);
        let b = shifted(y, dither_y);
        self.queries.fetch_add((a.len() * b.len()) as u64, Ordering::Relaxed);
        let q2 = (self.q as f64).powi(2);
        Ok(match &self.values {
            LutValues::Int(t) => self.weighted_int(t, &a, &b) as f64 / q2,
            LutValues::Real(t) => {
                let fa: Vec<(f64, usize)> = a.iter().map(|&(w, i)| (w as f64, i)).collect();
                let fb: Vec<(f64, usize)> = b.iter().map(|&(w, i)| (w as f64, i)).collect();
                self.weighted_real(t, &fa, &fb) / q2
            }
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let value_type = match self.values {
            LutValues::Int(_) => VALUE_INT,
            LutValues::Real(_) => VALUE_REAL,
        };
        let header = [
            LUT_MAGIC,
            LUT_VERSION,
            self.kind.id() as u64,
            self.dim as u64,
            self.q as u64,
            value_type,
            0,
            0,
        ];
        let mut buf = Vec::with_capacity(64 + self.size_bytes());
        for h in header {
            buf.extend_from_slice(&h.to_le_bytes());
        }
        match &self.values {
            LutValues::Int(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            LutValues::Real(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Reads a table, validating its header against `codec`.
    pub fn read_from<R: Read>(mut r: R, codec: &HierarchicalCodec) -> Result<Self> {
        let mut header = [0u8; 64];
        r.read_exact(&mut header)?;
        let word = |i: usize| u64::from_le_bytes(header[i * 8..(i + 1) * 8].try_into().unwrap());
        if word(0) != LUT_MAGIC {
            return Err(Error::Format("bad table magic".into()));
        }
        if word(1) != LUT_VERSION {
            return Err(Error::Format(format!("unsupported table version {}", word(1))));
        }
        let kind = LatticeKind::from_id(word(2) as u8)
            .filter(|_| word(2) <= u8::MAX as u64)
            .ok_or_else(|| Error::Format(format!("unknown lattice id {}", word(2))))?;
        let (dim, q) = (word(3), word(4));
        if kind != codec.lattice().kind() || dim != codec.dim() as u64 || q != codec.q() as u64 {
            return Err(Error::Mismatch(format!(
                "table header ({kind:?}, d={dim}, q={q}) does not match codec ({:?}, d={}, q={})",
                codec.lattice().kind(),
                codec.dim(),
                codec.q()
            )));
        }
        if word(6) != 0 || word(7) != 0 {
            return Err(Error::Format("reserved header words must be zero".into()));
        }
        let side = layer_count(codec.q(), codec.dim(), u64::MAX)?;
        let len = side * side;
        let mut body = vec![0u8; len * 8];
        r.read_exact(&mut body)?;
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::Format("trailing bytes after table".into()));
        }
        let words = body.chunks_exact(8).map(|c| <[u8; 8]>::try_from(c).unwrap());
        let values = match word(5) {
            VALUE_INT if kind.has_integral_gram() => LutValues::Int(words.map(i64::from_le_bytes).collect()),
            VALUE_REAL if !kind.has_integral_gram() => LutValues::Real(words.map(f64::from_le_bytes).collect()),
            other => return Err(Error::Format(format!("value type {other} invalid for {kind:?}"))),
        };
        Ok(InnerProductLut {
            kind,
            dim: codec.dim(),
            q: codec.q(),
            values,
            queries: AtomicU64::new(0),
        })
    }
}

/// Table of `<y, x_b>` for a fixed full-precision vector `y` and all layer
/// points `x_b` of `A_q`.
#[derive(Debug)]
pub struct OneSidedLut {
    dim: usize,
    q: u32,
    y: Vec<f64>,
    table: Vec<f64>,
    queries: AtomicU64,
}

impl OneSidedLut {
    pub fn build(codec: &HierarchicalCodec, y: &[f64]) -> Result<Self> {
        Self::build_with_limit(codec, y, DEFAULT_LUT_LIMIT)
    }

    pub fn build_with_limit(codec: &HierarchicalCodec, y: &[f64], limit: u64) -> Result<Self> {
        let d = codec.dim();
        if y.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: y.len(),
            });
        }
        let size = (codec.q() as u128).pow(d as u32);
        if size > limit as u128 {
            return Err(Error::EnumerationTooLarge {
                size,
                limit: limit as u128,
            });
        }
        let table = codec
            .layer_points()
            .iter()
            .map(|p| p.point.iter().zip(y).map(|(a, b)| a * b).sum())
            .collect();
        Ok(OneSidedLut {
            dim: d,
            q: codec.q(),
            y: y.to_vec(),
            table,
            queries: AtomicU64::new(0),
        })
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn query_count(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }

    /// `<y, x_hat>` via `M` lookups.
    pub fn inner_product(&self, x: &HierarchicalEncoding) -> Result<f64> {
        if x.q() != self.q || x.dim() != self.dim {
            return Err(Error::Mismatch(format!(
                "encoding (q={}, d={}) does not match table (q={}, d={})",
                x.q(),
                x.dim(),
                self.q,
                self.dim
            )));
        }
        let mut acc = 0.0;
        let mut weight = 1.0;
        let mut reads = 0u64;
        for layer in x.layers() {
            acc += weight * self.table[digits_to_index(layer, self.q)];
            weight *= self.q as f64;
            reads += 1;
        }
        self.queries.fetch_add(reads, Ordering::Relaxed);
        Ok(acc)
    }
}
