//! Quantized inner products and matrix products in `R^n` via product codes.
//!
//! A length-`n` column is split into `K = n / d` chunks, each encoded with the
//! hierarchical codec and its own retry count. Inner products are summed
//! chunk by chunk from the lookup table. With rotation enabled, a column `x`
//! is replaced by `sqrt(n) S x / |x|` before chunking (rotate first, then
//! normalize), and products are scaled back by `|x| |y| / n`.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hierarchical::{HierarchicalCodec, HierarchicalEncoding};
use crate::lattice::{Lattice, LatticeKind};
use crate::lut::InnerProductLut;
use crate::overload::{ScaledEncoding, ScalingConfig};

pub const MATRIX_MAGIC: [u8; 8] = *b"HNLQMAT\0";
pub const MATRIX_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DitherMode {
    None,
    /// The same dither digits for every chunk.
    Fixed(Vec<u32>),
    /// Digits drawn per `(column, chunk)` from a counter-based generator.
    PerChunk {
        seed: u64,
    },
}

impl DitherMode {
    fn tag(&self) -> u8 {
        match self {
            DitherMode::None => 0,
            DitherMode::Fixed(_) => 1,
            DitherMode::PerChunk { .. } => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub codec: HierarchicalCodec,
    pub scaling: ScalingConfig,
    pub n: usize,
    pub rotate: bool,
    pub rotation_seed: u64,
    pub dither: DitherMode,
}

impl PipelineConfig {
    pub fn new(codec: HierarchicalCodec, scaling: ScalingConfig, n: usize) -> Result<Self> {
        let cfg = PipelineConfig {
            codec,
            scaling,
            n,
            rotate: false,
            rotation_seed: 0,
            dither: DitherMode::None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_rotation(mut self, seed: u64) -> Self {
        self.rotate = true;
        self.rotation_seed = seed;
        self
    }

    pub fn with_dither(mut self, dither: DitherMode) -> Result<Self> {
        self.dither = dither;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let d = self.codec.dim();
        if self.n == 0 || !self.n.is_multiple_of(d) {
            return Err(Error::InvalidParameter(format!(
                "n = {} must be a positive multiple of d = {d}",
                self.n
            )));
        }
        if let DitherMode::Fixed(id) = &self.dither {
            crate::voronoi::check_digits(id, self.codec.q(), d)?;
        }
        Ok(())
    }

    /// Number of chunks `K = n / d`.
    pub fn chunks(&self) -> usize {
        self.n / self.codec.dim()
    }

    /// Everything but the dither must agree for two columns to be combined.
    pub fn compatible(&self, other: &PipelineConfig) -> bool {
        self.codec == other.codec
            && self.scaling == other.scaling
            && self.n == other.n
            && self.rotate == other.rotate
            && (!self.rotate || self.rotation_seed == other.rotation_seed)
    }

    fn dither_for(&self, column: usize, chunk: usize) -> Option<Vec<u32>> {
        match &self.dither {
            DitherMode::None => None,
            DitherMode::Fixed(id) => Some(id.clone()),
            DitherMode::PerChunk { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                rng.set_stream(column as u64);
                rng.set_word_pos(chunk as u128 * 32);
                let q = self.codec.q() as u64;
                Some((0..self.codec.dim()).map(|_| (rng.next_u64() % q) as u32).collect())
            }
        }
    }
}

/// Haar-distributed orthogonal matrix: QR of an i.i.d. Gaussian matrix with
/// the signs of `R`'s diagonal folded into `Q`.
pub fn random_rotation(n: usize, seed: u64) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::InvalidParameter("rotation size must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussian = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
    let qr = gaussian.qr();
    let r = qr.r();
    let mut q = qr.q();
    for (j, mut col) in q.column_iter_mut().enumerate() {
        if r[(j, j)] < 0.0 {
            col.neg_mut();
        }
    }
    Ok(q)
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedColumn {
    pub chunks: Vec<ScaledEncoding>,
    /// Euclidean norm of the original column, when rotation is on.
    pub norm: Option<f64>,
}

impl QuantizedColumn {
    pub fn retries(&self) -> impl Iterator<Item = u32> + '_ {
        self.chunks.iter().map(|c| c.retries)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedMatrix {
    pub config: PipelineConfig,
    pub columns: Vec<QuantizedColumn>,
}

impl QuantizedMatrix {
    pub fn rows(&self) -> usize {
        self.config.n
    }

    pub fn cols(&self) -> usize {
        self.columns.len()
    }
}

#[derive(Clone, Debug)]
pub struct Pipeline {
    config: PipelineConfig,
    rotation: Option<DMatrix<f64>>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let rotation = if config.rotate {
            Some(random_rotation(config.n, config.rotation_seed)?)
        } else {
            None
        };
        Ok(Pipeline { config, rotation })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn rotation(&self) -> Option<&DMatrix<f64>> {
        self.rotation.as_ref()
    }

    pub fn build_lut(&self) -> Result<InnerProductLut> {
        InnerProductLut::build(&self.config.codec)
    }

    /// Rotated and normalized copy of `x` (or `x` itself without rotation).
    fn prepare(&self, x: &[f64]) -> (Vec<f64>, Option<f64>) {
        match &self.rotation {
            None => (x.to_vec(), None),
            Some(s) => {
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let rotated = s * nalgebra::DVector::from_column_slice(x);
                let factor = if norm > 0.0 {
                    (self.config.n as f64).sqrt() / norm
                } else {
                    1.0
                };
                (rotated.iter().map(|v| v * factor).collect(), Some(norm))
            }
        }
    }

    pub fn quantize_vector(&self, x: &[f64]) -> Result<QuantizedColumn> {
        self.quantize_column(x, 0)
    }

    /// Quantizes column `column` of a matrix; the index selects per-chunk dithers.
    pub fn quantize_column(&self, x: &[f64], column: usize) -> Result<QuantizedColumn> {
        let cfg = &self.config;
        if x.len() != cfg.n {
            return Err(Error::DimensionMismatch {
                expected: cfg.n,
                got: x.len(),
            });
        }
        let (prepared, norm) = self.prepare(x);
        let chunks = prepared
            .chunks(cfg.codec.dim())
            .enumerate()
            .map(|(k, chunk)| {
                let dither = cfg.dither_for(column, k);
                cfg.codec.encode_scaled(&cfg.scaling, chunk, dither.as_deref())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(QuantizedColumn { chunks, norm })
    }

    /// Quantizes every column of an `n x cols` matrix.
    pub fn quantize_matrix(&self, a: &DMatrix<f64>) -> Result<QuantizedMatrix> {
        if a.nrows() != self.config.n {
            return Err(Error::DimensionMismatch {
                expected: self.config.n,
                got: a.nrows(),
            });
        }
        let columns = (0..a.ncols())
            .into_par_iter()
            .map(|j| self.quantize_column(a.column(j).as_slice(), j))
            .collect::<Result<Vec<_>>>()?;
        Ok(QuantizedMatrix {
            config: self.config.clone(),
            columns,
        })
    }

    fn check_column(&self, c: &QuantizedColumn) -> Result<()> {
        if c.chunks.len() != self.config.chunks() {
            return Err(Error::Mismatch(format!(
                "column has {} chunks, expected {}",
                c.chunks.len(),
                self.config.chunks()
            )));
        }
        if self.config.rotate != c.norm.is_some() {
            return Err(Error::Mismatch("rotation metadata does not match the pipeline".into()));
        }
        Ok(())
    }

    fn check_lut(&self, lut: &InnerProductLut) -> Result<()> {
        let codec = &self.config.codec;
        if lut.q() != codec.q() || lut.dim() != codec.dim() || lut.lattice_kind() != codec.lattice().kind() {
            return Err(Error::Mismatch(
                "lookup table was built for different parameters".into(),
            ));
        }
        Ok(())
    }

    fn descale(&self, x: &QuantizedColumn, y: &QuantizedColumn) -> f64 {
        match (x.norm, y.norm) {
            (Some(a), Some(b)) => a * b / self.config.n as f64,
            _ => 1.0,
        }
    }

    /// Approximate `<x, y>` from the lookup table.
    pub fn ip_approx(&self, lut: &InnerProductLut, x: &QuantizedColumn, y: &QuantizedColumn) -> Result<f64> {
        self.check_lut(lut)?;
        self.check_column(x)?;
        self.check_column(y)?;
        let scaling = &self.config.scaling;
        let zero = vec![0u32; self.config.codec.dim()];
        let mut total = 0.0;
        for (cx, cy) in x.chunks.iter().zip(&y.chunks) {
            let v = if cx.dither.is_none() && cy.dither.is_none() {
                lut.inner_product(&cx.encoding, &cy.encoding)?
            } else {
                lut.inner_product_dithered(
                    &cx.encoding,
                    &cy.encoding,
                    cx.dither.as_deref().unwrap_or(&zero),
                    cy.dither.as_deref().unwrap_or(&zero),
                )?
            };
            total += scaling.scale(cx.retries) * scaling.scale(cy.retries) * v;
        }
        Ok(total * self.descale(x, y))
    }

    /// Chunk reconstructions in the quantized domain (rotated and normalized).
    pub fn dequantize_chunks(&self, x: &QuantizedColumn) -> Result<Vec<f64>> {
        self.check_column(x)?;
        let cfg = &self.config;
        let mut out = Vec::with_capacity(cfg.n);
        for c in &x.chunks {
            out.extend(cfg.codec.decode_scaled(&cfg.scaling, c)?);
        }
        Ok(out)
    }

    /// Approximation of the original column.
    pub fn dequantize(&self, x: &QuantizedColumn) -> Result<Vec<f64>> {
        let v = self.dequantize_chunks(x)?;
        Ok(match (&self.rotation, x.norm) {
            (Some(s), Some(norm)) => {
                let factor = norm / (self.config.n as f64).sqrt();
                let back = s.transpose() * nalgebra::DVector::from_vec(v);
                back.iter().map(|t| t * factor).collect()
            }
            _ => v,
        })
    }

    /// `<x, y>` from fully reconstructed chunks, without the lookup table.
    pub fn ip_reconstructed(&self, x: &QuantizedColumn, y: &QuantizedColumn) -> Result<f64> {
        let a = self.dequantize_chunks(x)?;
        let b = self.dequantize_chunks(y)?;
        let dot: f64 = a.iter().zip(&b).map(|(u, v)| u * v).sum();
        Ok(dot * self.descale(x, y))
    }

    /// Approximate `A^T B` for quantized `A` (`n x a`) and `B` (`n x b`).
    pub fn matmul_approx(
        &self,
        lut: &InnerProductLut,
        a: &QuantizedMatrix,
        b: &QuantizedMatrix,
    ) -> Result<DMatrix<f64>> {
        for m in [a, b] {
            if !self.config.compatible(&m.config) {
                return Err(Error::Mismatch(
                    "matrix was quantized with a different configuration".into(),
                ));
            }
        }
        let rows = (0..a.cols())
            .into_par_iter()
            .map(|i| {
                b.columns
                    .iter()
                    .map(|cb| self.ip_approx(lut, &a.columns[i], cb))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_fn(a.cols(), b.cols(), |i, j| rows[i][j]))
    }
}

/// Bytes needed for one packed digit vector: enough for `q^d - 1`.
pub fn packed_width(q: u32, dim: usize) -> usize {
    let max = (q as u128).pow(dim as u32) - 1;
    let bits = 128 - max.leading_zeros() as usize;
    bits.div_ceil(8).max(1)
}

fn pack(digits: &[u32], q: u32, width: usize, out: &mut Vec<u8>) {
    let value = digits.iter().fold(0u128, |acc, &b| acc * q as u128 + b as u128);
    out.extend_from_slice(&value.to_le_bytes()[..width]);
}

fn unpack(bytes: &[u8], q: u32, dim: usize) -> Result<Vec<u32>> {
    let mut buf = [0u8; 16];
    buf[..bytes.len()].copy_from_slice(bytes);
    let mut value = u128::from_le_bytes(buf);
    if value >= (q as u128).pow(dim as u32) {
        return Err(Error::Format("packed digit vector out of range".into()));
    }
    let mut out = vec![0u32; dim];
    for slot in out.iter_mut().rev() {
        *slot = (value % q as u128) as u32;
        value /= q as u128;
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::Format("unexpected end of matrix data".into()));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}

impl QuantizedMatrix {
    /// Serialized layout, little-endian throughout:
    ///
    /// ```text
    /// magic[8] version:u32 lattice:u8 n:u64 cols:u64 d:u32 q:u32 M:u32
    /// alpha:f64 beta0:f64 max_retries:u32 rotate:u8 rotation_seed:u64
    /// dither:u8 [fixed: packed digits | per-chunk: seed:u64]
    /// digits: cols x K x M packed digit vectors
    /// retries: cols x K bytes
    /// norms: cols x f64 (only when rotate = 1)
    /// ```
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let cfg = &self.config;
        let codec = &cfg.codec;
        let (q, d) = (codec.q(), codec.dim());
        if cfg.scaling.max_retries > u8::MAX as u32 {
            return Err(Error::InvalidParameter(
                "max_retries must fit in a byte for serialization".into(),
            ));
        }
        let width = packed_width(q, d);
        let mut buf = Vec::new();
        buf.extend_from_slice(&MATRIX_MAGIC);
        buf.extend_from_slice(&MATRIX_VERSION.to_le_bytes());
        buf.push(codec.lattice().kind().id());
        buf.extend_from_slice(&(cfg.n as u64).to_le_bytes());
        buf.extend_from_slice(&(self.columns.len() as u64).to_le_bytes());
        buf.extend_from_slice(&(d as u32).to_le_bytes());
        buf.extend_from_slice(&q.to_le_bytes());
        buf.extend_from_slice(&(codec.depth() as u32).to_le_bytes());
        buf.extend_from_slice(&cfg.scaling.alpha.to_le_bytes());
        buf.extend_from_slice(&cfg.scaling.beta0.to_le_bytes());
        buf.extend_from_slice(&cfg.scaling.max_retries.to_le_bytes());
        buf.push(cfg.rotate as u8);
        buf.extend_from_slice(&cfg.rotation_seed.to_le_bytes());
        buf.push(cfg.dither.tag());
        match &cfg.dither {
            DitherMode::None => {}
            DitherMode::Fixed(id) => pack(id, q, width, &mut buf),
            DitherMode::PerChunk { seed } => buf.extend_from_slice(&seed.to_le_bytes()),
        }
        for col in &self.columns {
            for chunk in &col.chunks {
                for layer in chunk.encoding.layers() {
                    pack(layer, q, width, &mut buf);
                }
            }
        }
        for col in &self.columns {
            buf.extend(col.retries().map(|t| t as u8));
        }
        if cfg.rotate {
            for col in &self.columns {
                buf.extend_from_slice(&col.norm.unwrap_or(0.0).to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes };
        if r.array::<8>()? != MATRIX_MAGIC {
            return Err(Error::Format("bad matrix magic".into()));
        }
        let version = r.u32()?;
        if version != MATRIX_VERSION {
            return Err(Error::Format(format!("unsupported matrix version {version}")));
        }
        let kind_id = r.u8()?;
        let kind =
            LatticeKind::from_id(kind_id).ok_or_else(|| Error::Format(format!("unknown lattice id {kind_id}")))?;
        let n = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let d = r.u32()? as usize;
        let q = r.u32()?;
        let depth = r.u32()? as usize;
        let alpha = r.f64()?;
        let beta0 = r.f64()?;
        let max_retries = r.u32()?;
        let rotate = match r.u8()? {
            0 => false,
            1 => true,
            other => return Err(Error::Format(format!("bad rotate flag {other}"))),
        };
        let rotation_seed = r.u64()?;
        let lattice = Lattice::new(kind, d)?;
        let codec = HierarchicalCodec::new(lattice, q, depth)?;
        let width = packed_width(q, d);
        let dither = match r.u8()? {
            0 => DitherMode::None,
            1 => DitherMode::Fixed(unpack(r.take(width)?, q, d)?),
            2 => DitherMode::PerChunk { seed: r.u64()? },
            other => return Err(Error::Format(format!("bad dither mode {other}"))),
        };
        let scaling = ScalingConfig::with_max_retries(beta0, alpha, max_retries)?;
        let mut config = PipelineConfig::new(codec, scaling, n)?.with_dither(dither)?;
        config.rotate = rotate;
        config.rotation_seed = rotation_seed;
        let chunks = config.chunks();

        let mut digit_cols = Vec::with_capacity(cols);
        for _ in 0..cols {
            let mut encs = Vec::with_capacity(chunks);
            for _ in 0..chunks {
                let mut digits = Vec::with_capacity(depth * d);
                for _ in 0..depth {
                    digits.extend(unpack(r.take(width)?, q, d)?);
                }
                encs.push(HierarchicalEncoding::from_digits(q, d, digits)?);
            }
            digit_cols.push(encs);
        }
        let mut columns = Vec::with_capacity(cols);
        for (j, encs) in digit_cols.into_iter().enumerate() {
            let retries = r.take(chunks)?;
            let chunks = encs
                .into_iter()
                .zip(retries)
                .enumerate()
                .map(|(k, (encoding, &t))| {
                    if t as u32 > max_retries {
                        return Err(Error::Format(format!("retry count {t} exceeds {max_retries}")));
                    }
                    Ok(ScaledEncoding {
                        encoding,
                        retries: t as u32,
                        dither: config.dither_for(j, k),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            columns.push(QuantizedColumn { chunks, norm: None });
        }
        if rotate {
            for col in columns.iter_mut() {
                col.norm = Some(r.f64()?);
            }
        }
        if !r.bytes.is_empty() {
            return Err(Error::Format("trailing bytes after matrix".into()));
        }
        Ok(QuantizedMatrix { config, columns })
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d4_pipeline(q: u32, depth: usize, n: usize) -> Pipeline {
        let codec = HierarchicalCodec::new(Lattice::checkerboard(4).unwrap(), q, depth).unwrap();
        let scaling = ScalingConfig::new(0.3, 1.0 / 3.0).unwrap();
        Pipeline::new(PipelineConfig::new(codec, scaling, n).unwrap()).unwrap()
    }

    fn gaussian(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn rotation_is_orthogonal_and_seeded() {
        let one = random_rotation(1, 3).unwrap();
        assert_eq!(one[(0, 0)].abs(), 1.0);
        let s = random_rotation(32, 5).unwrap();
        let gram = s.transpose() * &s;
        for i in 0..32 {
            for j in 0..32 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram[(i, j)] - want).abs() < 1e-9);
            }
        }
        let x = nalgebra::DVector::from_vec(gaussian(32, 1));
        assert!(((&s * &x).norm() - x.norm()).abs() < 1e-9);
        assert_eq!(s, random_rotation(32, 5).unwrap());
        assert!((s - random_rotation(32, 6).unwrap()).norm() > 0.0);
        assert!(random_rotation(0, 1).is_err());
    }

    #[test]
    fn n_must_be_a_multiple_of_d() {
        let codec = HierarchicalCodec::new(Lattice::checkerboard(4).unwrap(), 4, 2).unwrap();
        let scaling = ScalingConfig::new(0.3, 1.0 / 3.0).unwrap();
        assert!(PipelineConfig::new(codec, scaling, 10).is_err());
    }

    #[test]
    fn zero_vector_quantizes_to_zero() {
        let p = d4_pipeline(4, 2, 8);
        let c = p.quantize_vector(&[0.0; 8]).unwrap();
        assert_eq!(c.chunks.len(), 2);
        assert!(c.chunks.iter().all(|s| s.retries == 0 && s.encoding.is_zero()));
    }

    #[test]
    fn rotated_column_stores_norm() {
        let codec = HierarchicalCodec::new(Lattice::checkerboard(4).unwrap(), 4, 2).unwrap();
        let scaling = ScalingConfig::new(0.3, 1.0 / 3.0).unwrap();
        let p = Pipeline::new(PipelineConfig::new(codec, scaling, 16).unwrap().with_rotation(4)).unwrap();
        let x = gaussian(16, 2);
        let c = p.quantize_vector(&x).unwrap();
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((c.norm.unwrap() - norm).abs() < 1e-9);
        let zero = p.quantize_vector(&[0.0; 16]).unwrap();
        assert_eq!(zero.norm, Some(0.0));
    }

    #[test]
    fn single_chunk_matches_scaled_lut_product() {
        let p = d4_pipeline(4, 2, 4);
        let lut = p.build_lut().unwrap();
        let x = p.quantize_vector(&gaussian(4, 1)).unwrap();
        let y = p.quantize_vector(&gaussian(4, 2)).unwrap();
        let s = &p.config().scaling;
        let expect = s.scale(x.chunks[0].retries)
            * s.scale(y.chunks[0].retries)
            * lut.inner_product(&x.chunks[0].encoding, &y.chunks[0].encoding).unwrap();
        assert_eq!(p.ip_approx(&lut, &x, &y).unwrap(), expect);
    }

    #[test]
    fn zero_column_gives_zero_product() {
        let p = d4_pipeline(4, 2, 16);
        let lut = p.build_lut().unwrap();
        let x = p.quantize_vector(&gaussian(16, 1)).unwrap();
        let z = p.quantize_vector(&[0.0; 16]).unwrap();
        assert_eq!(p.ip_approx(&lut, &x, &z).unwrap(), 0.0);
    }

    #[test]
    fn per_chunk_dithers_are_reproducible() {
        let codec = HierarchicalCodec::new(Lattice::checkerboard(4).unwrap(), 4, 2).unwrap();
        let scaling = ScalingConfig::new(0.3, 1.0 / 3.0).unwrap();
        let cfg = PipelineConfig::new(codec, scaling, 64)
            .unwrap()
            .with_dither(DitherMode::PerChunk { seed: 77 })
            .unwrap();
        let ids: Vec<_> = (0..16).map(|k| cfg.dither_for(3, k).unwrap()).collect();
        let again: Vec<_> = (0..16).map(|k| cfg.dither_for(3, k).unwrap()).collect();
        assert_eq!(ids, again);
        assert!(ids.iter().flatten().all(|&b| b < 4));
        assert_ne!(ids, (0..16).map(|k| cfg.dither_for(4, k).unwrap()).collect::<Vec<_>>());
    }

    #[test]
    fn packed_widths() {
        assert_eq!(packed_width(4, 4), 1);
        assert_eq!(packed_width(3, 4), 1);
        assert_eq!(packed_width(5, 4), 2);
        assert_eq!(packed_width(2, 1), 1);
        assert_eq!(packed_width(36, 4), 3);
        let mut out = Vec::new();
        pack(&[2, 0, 1, 3], 4, 1, &mut out);
        assert_eq!(out, vec![0b10_00_01_11]);
        assert_eq!(unpack(&out, 4, 4).unwrap(), vec![2, 0, 1, 3]);
    }

    #[test]
    fn truncated_matrix_rejected() {
        let p = d4_pipeline(3, 2, 8);
        let a = DMatrix::from_fn(8, 2, |i, j| (i as f64 - 3.0) * 0.3 + j as f64);
        let qa = p.quantize_matrix(&a).unwrap();
        let bytes = qa.to_bytes();
        assert!(QuantizedMatrix::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(QuantizedMatrix::from_bytes(&extra).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(matches!(QuantizedMatrix::from_bytes(&bad), Err(Error::Format(_))));
    }
}
