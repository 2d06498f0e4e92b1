//! Low-dimensional lattices with exact nearest-neighbor decoders.
//!
//! Three families are supported: the integer lattice `Z^d`, the checkerboard
//! lattice `D_n = {x in Z^n : sum(x) even}` and the hexagonal lattice `A_2`.
//! Points are carried as integer coefficient vectors with respect to the
//! generator matrix, so comparisons between lattice points are exact.
//!
//! Every nearest-neighbor call quantizes `x + eps` rather than `x`, where
//! `eps` is a tiny fixed perturbation chosen off every Voronoi facet. This
//! makes the tie-breaking on cell boundaries systematic, which the nested
//! codes rely on (for even nesting ratios there are always lattice points on
//! the boundary of the scaled cell).

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for [`Lattice::coords_of`] to accept a vector as a lattice point.
pub const COORDS_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatticeKind {
    /// `Z^d`
    Integer,
    /// `D_n`, the integer vectors with even coordinate sum.
    Checkerboard,
    /// `A_2`, the hexagonal lattice with unit minimum distance.
    Hexagonal,
}

impl LatticeKind {
    /// Stable numeric id used by the binary file formats.
    pub fn id(self) -> u8 {
        match self {
            LatticeKind::Integer => 0,
            LatticeKind::Checkerboard => 1,
            LatticeKind::Hexagonal => 2,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(LatticeKind::Integer),
            1 => Some(LatticeKind::Checkerboard),
            2 => Some(LatticeKind::Hexagonal),
            _ => None,
        }
    }

    /// Whether all inner products between lattice points are integers.
    pub fn has_integral_gram(self) -> bool {
        !matches!(self, LatticeKind::Hexagonal)
    }
}

/// A point of a lattice, as integer coefficients and the real vector `G * coords`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticePoint {
    pub coords: Vec<i64>,
    pub point: Vec<f64>,
}

impl LatticePoint {
    pub fn is_zero(&self) -> bool {
        self.coords.iter().all(|&c| c == 0)
    }
}

/// Monte-Carlo estimate together with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Lattice {
    kind: LatticeKind,
    dim: usize,
    /// Uniform scale applied on top of the canonical generator.
    scale: f64,
    /// Row-major `dim x dim`, canonical (unscaled) generator.
    generator: Vec<f64>,
    generator_inv: Vec<f64>,
    eps: Vec<f64>,
}

/// Default tie-break perturbation: `eps_k = (1e-7 * (k + 1) * pi) mod 1e-6`.
pub fn default_eps(dim: usize) -> Vec<f64> {
    (0..dim).map(|k| (1e-7 * (k + 1) as f64 * PI) % 1e-6).collect()
}

impl Lattice {
    pub fn new(kind: LatticeKind, dim: usize) -> Result<Self> {
        match kind {
            LatticeKind::Integer => Self::integer(dim),
            LatticeKind::Checkerboard => Self::checkerboard(dim),
            LatticeKind::Hexagonal if dim == 2 => Ok(Self::hexagonal()),
            LatticeKind::Hexagonal => Err(Error::InvalidParameter(format!(
                "A2 is two-dimensional, got dimension {dim}"
            ))),
        }
    }

    /// `Z^d` with the identity generator.
    pub fn integer(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        let mut g = vec![0.0; dim * dim];
        for i in 0..dim {
            g[i * dim + i] = 1.0;
        }
        Ok(Self::from_parts(LatticeKind::Integer, dim, g.clone(), g))
    }

    /// `D_n` for `n >= 2`. Generator columns are `e_i - e_{i+1}` for
    /// `i < n - 1` and `e_{n-2} + e_{n-1}` last.
    pub fn checkerboard(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidParameter(format!("D_n needs n >= 2, got {dim}")));
        }
        let mut g = vec![0.0; dim * dim];
        for col in 0..dim - 1 {
            g[col * dim + col] = 1.0;
            g[(col + 1) * dim + col] = -1.0;
        }
        let last = dim - 1;
        g[(dim - 2) * dim + last] = 1.0;
        g[(dim - 1) * dim + last] = 1.0;
        let inv = invert(&g, dim).expect("D_n generator is nonsingular");
        Ok(Self::from_parts(LatticeKind::Checkerboard, dim, g, inv))
    }

    /// `A_2` with generator `[[1, 1/2], [0, sqrt(3)/2]]`.
    pub fn hexagonal() -> Self {
        let h = 3f64.sqrt() / 2.0;
        let g = vec![1.0, 0.5, 0.0, h];
        let inv = vec![1.0, -0.5 / h, 0.0, 1.0 / h];
        Self::from_parts(LatticeKind::Hexagonal, 2, g, inv)
    }

    fn from_parts(kind: LatticeKind, dim: usize, generator: Vec<f64>, generator_inv: Vec<f64>) -> Self {
        Lattice {
            kind,
            dim,
            scale: 1.0,
            generator,
            generator_inv,
            eps: default_eps(dim),
        }
    }

    /// Replaces the tie-break perturbation.
    pub fn with_eps(mut self, eps: Vec<f64>) -> Result<Self> {
        if eps.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: eps.len(),
            });
        }
        self.eps = eps;
        Ok(self)
    }

    /// The lattice `beta * L`, with the perturbation kept relative to the
    /// canonical cell.
    pub fn scaled(&self, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("scale must be positive, got {beta}")));
        }
        let mut out = self.clone();
        out.scale *= beta;
        Ok(out)
    }

    pub fn kind(&self) -> LatticeKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn eps(&self) -> &[f64] {
        &self.eps
    }

    /// Generator matrix (row-major), including the scale.
    pub fn generator(&self) -> Vec<f64> {
        self.generator.iter().map(|g| g * self.scale).collect()
    }

    /// Inverse generator matrix (row-major), including the scale.
    pub fn generator_inv(&self) -> Vec<f64> {
        self.generator_inv.iter().map(|g| g / self.scale).collect()
    }

    /// Covering radius of the lattice.
    pub fn covering_radius(&self) -> f64 {
        let base = match self.kind {
            LatticeKind::Integer => (self.dim as f64).sqrt() / 2.0,
            LatticeKind::Checkerboard => f64::max(1.0, (self.dim as f64).sqrt() / 2.0),
            LatticeKind::Hexagonal => 1.0 / 3f64.sqrt(),
        };
        base * self.scale
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len == self.dim {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.dim,
                got: len,
            })
        }
    }

    /// `G * coords`.
    pub fn point_of(&self, coords: &[i64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|i| {
                let row = &self.generator[i * d..(i + 1) * d];
                self.scale * row.iter().zip(coords).map(|(g, &c)| g * c as f64).sum::<f64>()
            })
            .collect()
    }

    pub fn lattice_point(&self, coords: Vec<i64>) -> LatticePoint {
        let point = self.point_of(&coords);
        LatticePoint { coords, point }
    }

    /// Nearest lattice point to `x + eps`.
    pub fn nn_quantize(&self, x: &[f64]) -> Result<LatticePoint> {
        self.check_dim(x.len())?;
        Ok(self.lattice_point(self.nearest_coords(x)))
    }

    /// Coefficients of the nearest lattice point to `x + eps`.
    ///
    /// Panics if `x.len()` differs from the lattice dimension; use
    /// [`Lattice::nn_quantize`] for a checked call.
    pub fn nearest_coords(&self, x: &[f64]) -> Vec<i64> {
        assert_eq!(x.len(), self.dim, "dimension mismatch");
        let y: Vec<f64> = x.iter().zip(&self.eps).map(|(v, e)| v / self.scale + e).collect();
        match self.kind {
            LatticeKind::Integer => y.iter().map(|v| v.round() as i64).collect(),
            LatticeKind::Checkerboard => {
                let p = nearest_checkerboard(&y);
                checkerboard_coords(&p)
            }
            LatticeKind::Hexagonal => self.nearest_hexagonal(&y),
        }
    }

    /// Exhaustive check over the generator-coordinate neighbors of the
    /// rounded coefficient vector.
    fn nearest_hexagonal(&self, y: &[f64]) -> Vec<i64> {
        let u0 = self.generator_inv[0] * y[0] + self.generator_inv[1] * y[1];
        let u1 = self.generator_inv[2] * y[0] + self.generator_inv[3] * y[1];
        let (r0, r1) = (u0.round() as i64, u1.round() as i64);
        let mut best = (f64::INFINITY, [r0, r1]);
        for a in r0 - 1..=r0 + 1 {
            for b in r1 - 1..=r1 + 1 {
                let px = self.generator[0] * a as f64 + self.generator[1] * b as f64;
                let py = self.generator[2] * a as f64 + self.generator[3] * b as f64;
                let dist = (y[0] - px).powi(2) + (y[1] - py).powi(2);
                if dist < best.0 {
                    best = (dist, [a, b]);
                }
            }
        }
        best.1.to_vec()
    }

    /// Coefficients of a lattice point `p`, i.e. `round(G^-1 p)`.
    pub fn coords_of(&self, p: &[f64]) -> Result<Vec<i64>> {
        self.check_dim(p.len())?;
        let d = self.dim;
        let coords: Vec<i64> = (0..d)
            .map(|i| {
                let row = &self.generator_inv[i * d..(i + 1) * d];
                (row.iter().zip(p).map(|(g, v)| g * v).sum::<f64>() / self.scale).round() as i64
            })
            .collect();
        let back = self.point_of(&coords);
        let residual = back.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        if residual > COORDS_TOLERANCE {
            return Err(Error::NotALatticePoint { residual });
        }
        Ok(coords)
    }

    /// Whether `x` lies in the scaled Voronoi cell `s * V` (with the same
    /// tie-breaking as [`Lattice::nn_quantize`]).
    pub fn in_scaled_voronoi(&self, x: &[f64], s: f64) -> Result<bool> {
        self.check_dim(x.len())?;
        if s.is_nan() || s <= 0.0 {
            return Err(Error::InvalidParameter(format!("scale must be positive, got {s}")));
        }
        let scaled: Vec<f64> = x.iter().map(|v| v / s).collect();
        Ok(self.nearest_coords(&scaled).iter().all(|&c| c == 0))
    }

    /// Monte-Carlo estimate of the normalized second moment `E|Z|^2 / d` for
    /// `Z` uniform over the Voronoi cell.
    pub fn second_moment(&self, num_samples: usize, seed: u64) -> Result<MomentEstimate> {
        if num_samples == 0 {
            return Err(Error::InvalidParameter("num_samples must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.dim;
        let mut unit = vec![0.0; d];
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..num_samples {
            // uniform over the fundamental parallelepiped G [0,1)^d
            for u in unit.iter_mut() {
                *u = rng.random::<f64>();
            }
            let x: Vec<f64> = (0..d)
                .map(|i| {
                    let row = &self.generator[i * d..(i + 1) * d];
                    self.scale * row.iter().zip(&unit).map(|(g, u)| g * u).sum::<f64>()
                })
                .collect();
            let q = self.point_of(&self.nearest_coords(&x));
            let v = x.iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / d as f64;
            sum += v;
            sum_sq += v * v;
        }
        let n = num_samples as f64;
        let mean = sum / n;
        let var = if num_samples > 1 {
            (sum_sq - n * mean * mean).max(0.0) / (n - 1.0)
        } else {
            0.0
        };
        Ok(MomentEstimate {
            mean,
            std_error: (var / n).sqrt(),
            samples: num_samples,
        })
    }
}

/// Nearest point of `D_n` to `y` (no perturbation applied here).
fn nearest_checkerboard(y: &[f64]) -> Vec<i64> {
    let mut f: Vec<i64> = y.iter().map(|v| v.round() as i64).collect();
    if f.iter().sum::<i64>().rem_euclid(2) == 1 {
        // re-round the worst coordinate the other way; lowest index wins ties
        let mut worst = 0;
        let mut worst_err = -1.0;
        for (k, (&v, &r)) in y.iter().zip(&f).enumerate() {
            let err = (v - r as f64).abs();
            if err > worst_err {
                worst_err = err;
                worst = k;
            }
        }
        if y[worst] >= f[worst] as f64 {
            f[worst] += 1;
        } else {
            f[worst] -= 1;
        }
    }
    f
}

/// Coefficients of an integer `D_n` point in the generator basis.
fn checkerboard_coords(p: &[i64]) -> Vec<i64> {
    let n = p.len();
    let mut prefix = 0i64;
    let mut c = vec![0i64; n];
    for i in 0..n - 2 {
        prefix += p[i];
        c[i] = prefix;
    }
    let s = prefix + p[n - 2];
    let total = s + p[n - 1];
    c[n - 1] = total / 2;
    c[n - 2] = (s - p[n - 1]) / 2;
    c
}

/// Gauss-Jordan inverse of a small row-major matrix.
fn invert(m: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut a = m.to_vec();
    let mut inv = vec![0.0; d * d];
    for i in 0..d {
        inv[i * d + i] = 1.0;
    }
    for col in 0..d {
        let pivot = (col..d).max_by(|&x, &y| a[x * d + col].abs().total_cmp(&a[y * d + col].abs()))?;
        if a[pivot * d + col].abs() < 1e-12 {
            return None;
        }
        for k in 0..d {
            a.swap(col * d + k, pivot * d + k);
            inv.swap(col * d + k, pivot * d + k);
        }
        let p = a[col * d + col];
        for k in 0..d {
            a[col * d + k] /= p;
            inv[col * d + k] /= p;
        }
        for row in 0..d {
            if row != col {
                let f = a[row * d + col];
                if f != 0.0 {
                    for k in 0..d {
                        a[row * d + k] -= f * a[col * d + k];
                        inv[row * d + k] -= f * inv[col * d + k];
                    }
                }
            }
        }
    }
    Some(inv)
}
