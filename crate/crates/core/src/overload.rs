//! Scaling, dithering and the retry loop that avoids overload.
//!
//! The encoder quantizes `x / beta - z` with `beta = 2^(alpha T) beta0`,
//! increasing `T` until the hierarchical encoder reports no overload. The
//! decoder outputs `beta (x_hat + z)`. Dithers are restricted to
//! `q^-1 A_q` so that inner products stay computable from the lookup table.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchical::{HierarchicalCodec, HierarchicalEncoding};

pub const DEFAULT_MAX_RETRIES: u32 = 60;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub beta0: f64,
    pub alpha: f64,
    pub max_retries: u32,
}

impl ScalingConfig {
    pub fn new(beta0: f64, alpha: f64) -> Result<Self> {
        Self::with_max_retries(beta0, alpha, DEFAULT_MAX_RETRIES)
    }

    pub fn with_max_retries(beta0: f64, alpha: f64, max_retries: u32) -> Result<Self> {
        if !(beta0 > 0.0 && beta0.is_finite()) {
            return Err(Error::InvalidParameter(format!("beta0 must be positive, got {beta0}")));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
        }
        if max_retries == 0 {
            return Err(Error::InvalidParameter("max_retries must be >= 1".into()));
        }
        Ok(ScalingConfig {
            beta0,
            alpha,
            max_retries,
        })
    }

    /// Effective scale after `retries` retries, `2^(alpha T) beta0`.
    pub fn scale(&self, retries: u32) -> f64 {
        self.beta0 * (self.alpha * retries as f64).exp2()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ScaledEncoding {
    pub encoding: HierarchicalEncoding,
    /// Retry count `T`.
    pub retries: u32,
    /// Digits `b_z` of the dither `z`, if one was applied.
    pub dither: Option<Vec<u32>>,
}

impl HierarchicalCodec {
    /// The dither `z = q^-1 (G b_z - q Q_L(G b_z / q))`, a point of `q^-1 A_q`.
    pub fn dither_point(&self, dither_id: &[u32]) -> Result<Vec<f64>> {
        let q = self.q() as f64;
        Ok(self.layer_point(dither_id)?.point.iter().map(|v| v / q).collect())
    }

    /// Smallest `T >= 0` whose scaled, dithered input encodes without overload.
    pub fn encode_scaled(
        &self,
        scaling: &ScalingConfig,
        x: &[f64],
        dither_id: Option<&[u32]>,
    ) -> Result<ScaledEncoding> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        let z = match dither_id {
            Some(id) => self.dither_point(id)?,
            None => vec![0.0; d],
        };
        let mut input = vec![0.0; d];
        for retries in 0..=scaling.max_retries {
            let beta = scaling.scale(retries);
            for ((u, v), zk) in input.iter_mut().zip(x).zip(&z) {
                *u = v / beta - zk;
            }
            let encoding = self.encode(&input)?;
            if !encoding.overload {
                return Ok(ScaledEncoding {
                    encoding,
                    retries,
                    dither: dither_id.map(<[u32]>::to_vec),
                });
            }
        }
        Err(Error::Unencodable {
            retries: scaling.max_retries,
        })
    }

    /// `2^(alpha T) beta0 (x_hat + z)`.
    pub fn decode_scaled(&self, scaling: &ScalingConfig, senc: &ScaledEncoding) -> Result<Vec<f64>> {
        let rec = self.decode(&senc.encoding)?;
        let beta = scaling.scale(senc.retries);
        let z = match &senc.dither {
            Some(id) => self.dither_point(id)?,
            None => vec![0.0; self.dim()],
        };
        Ok(rec.point.iter().zip(&z).map(|(p, zk)| beta * (p + zk)).collect())
    }
}

/// Counts of each retry value.
pub fn retry_histogram(samples: &[u32]) -> BTreeMap<u32, u64> {
    let mut hist = BTreeMap::new();
    for &t in samples {
        *hist.entry(t).or_insert(0u64) += 1;
    }
    hist
}

/// Plug-in entropy of a histogram in bits.
pub fn histogram_entropy(hist: &BTreeMap<u32, u64>) -> f64 {
    let total: u64 = hist.values().sum();
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    hist.values()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum::<f64>()
        .max(0.0)
}

/// `M log2 q + H(T) / d` from a histogram of retry counts.
pub fn rate_from_histogram(dim: usize, q: u32, depth: usize, hist: &BTreeMap<u32, u64>) -> f64 {
    depth as f64 * (q as f64).log2() + histogram_entropy(hist) / dim as f64
}

/// `M log2 q + H(T) / d` in bits per dimension, with `H` the empirical entropy
/// of the retry samples.
pub fn empirical_rate(dim: usize, q: u32, depth: usize, retries: &[u32]) -> Result<f64> {
    if retries.is_empty() {
        return Err(Error::Empty("retry samples"));
    }
    Ok(rate_from_histogram(dim, q, depth, &retry_histogram(retries)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Lattice;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn z1(q: u32, depth: usize) -> HierarchicalCodec {
        HierarchicalCodec::new(Lattice::integer(1).unwrap(), q, depth).unwrap()
    }

    #[test]
    fn small_input_needs_no_retry() {
        let codec = HierarchicalCodec::new(Lattice::checkerboard(4).unwrap(), 4, 2).unwrap();
        let cfg = ScalingConfig::new(1.0, 1.0 / 3.0).unwrap();
        let s = codec.encode_scaled(&cfg, &[0.3, -0.2, 0.1, 0.5], None).unwrap();
        assert_eq!(s.retries, 0);
    }

    #[test]
    fn scalar_retry_trace() {
        let codec = z1(3, 2);
        let cfg = ScalingConfig::new(1.0, 1.0 / 3.0).unwrap();
        let s = codec.encode_scaled(&cfg, &[5.3], None).unwrap();
        assert_eq!(s.retries, 1);
        assert_eq!(codec.decode(&s.encoding).unwrap().coords, vec![4]);
        let out = codec.decode_scaled(&cfg, &s).unwrap();
        assert!((out[0] - 2f64.powf(1.0 / 3.0) * 4.0).abs() < 1e-12);
        assert!((out[0] - 5.0397).abs() < 1e-4);
    }

    #[test]
    fn three_retries_at_one_third_double_the_scale() {
        let cfg = ScalingConfig::new(0.7, 1.0 / 3.0).unwrap();
        assert_eq!(cfg.scale(3), 1.4);
    }

    #[test]
    fn decode_without_retries_is_beta0_times_reconstruction() {
        let codec = HierarchicalCodec::new(Lattice::hexagonal(), 3, 2).unwrap();
        let cfg = ScalingConfig::new(0.5, 1.0 / 3.0).unwrap();
        let s = codec.encode_scaled(&cfg, &[0.4, 0.9], None).unwrap();
        assert_eq!(s.retries, 0);
        let rec = codec.decode(&s.encoding).unwrap();
        let out = codec.decode_scaled(&cfg, &s).unwrap();
        for (o, r) in out.iter().zip(&rec.point) {
            assert!((o - 0.5 * r).abs() < 1e-15);
        }
    }

    #[test]
    fn scalar_dither_points() {
        let codec = z1(4, 1);
        assert_eq!(codec.dither_point(&[0]).unwrap(), vec![0.0]);
        assert_eq!(codec.dither_point(&[1]).unwrap(), vec![0.25]);
        assert_eq!(codec.dither_point(&[3]).unwrap(), vec![-0.25]);
        assert!(codec.dither_point(&[4]).is_err());
    }

    #[test]
    fn dithers_lie_in_voronoi_cell() {
        for lat in [
            Lattice::integer(2).unwrap(),
            Lattice::hexagonal(),
            Lattice::checkerboard(4).unwrap(),
        ] {
            for q in [2, 3, 4, 5] {
                let codec = HierarchicalCodec::new(lat.clone(), q, 1).unwrap();
                for p in codec.layer_points() {
                    let id = crate::voronoi::reduce_digits(&p.coords, q);
                    let z = codec.dither_point(&id).unwrap();
                    assert!(lat.in_scaled_voronoi(&z, 1.0).unwrap());
                }
            }
        }
    }

    #[test]
    fn unencodable_when_retries_exhausted() {
        let codec = z1(3, 1);
        let cfg = ScalingConfig::with_max_retries(1e-3, 0.1, 2).unwrap();
        assert!(matches!(
            codec.encode_scaled(&cfg, &[100.0], None),
            Err(Error::Unencodable { retries: 2 })
        ));
    }

    #[test]
    fn retry_count_is_minimal_and_deterministic() {
        let codec = HierarchicalCodec::new(Lattice::checkerboard(4).unwrap(), 3, 2).unwrap();
        let cfg = ScalingConfig::new(0.2, 1.0 / 3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..300 {
            let x: Vec<f64> = (0..4).map(|_| StandardNormal.sample(&mut rng)).collect();
            let id: Vec<u32> = (0..4).map(|_| rng.random_range(0..3)).collect();
            let s = codec.encode_scaled(&cfg, &x, Some(&id)).unwrap();
            assert!(!s.encoding.overload);
            assert_eq!(codec.encode_scaled(&cfg, &x, Some(&id)).unwrap(), s);
            if s.retries > 0 {
                let beta = cfg.scale(s.retries - 1);
                let z = codec.dither_point(&id).unwrap();
                let input: Vec<f64> = x.iter().zip(&z).map(|(v, zk)| v / beta - zk).collect();
                assert!(codec.encode(&input).unwrap().overload);
            }
        }
    }

    #[test]
    fn scaled_round_trip_matches_composition() {
        let codec = HierarchicalCodec::new(Lattice::checkerboard(4).unwrap(), 4, 2).unwrap();
        let cfg = ScalingConfig::new(0.3, 1.0 / 3.0).unwrap();
        let x = [1.2, -0.7, 2.5, 0.1];
        let id = [1, 0, 3, 2];
        let s = codec.encode_scaled(&cfg, &x, Some(&id)).unwrap();
        let beta = cfg.scale(s.retries);
        let z = codec.dither_point(&id).unwrap();
        let input: Vec<f64> = x.iter().zip(&z).map(|(v, zk)| v / beta - zk).collect();
        let q = codec.lattice().nn_quantize(&input).unwrap();
        let expect: Vec<f64> = q.point.iter().zip(&z).map(|(p, zk)| beta * (p + zk)).collect();
        let got = codec.decode_scaled(&cfg, &s).unwrap();
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn empirical_rate_examples() {
        assert_eq!(empirical_rate(4, 4, 2, &[0, 0, 0]).unwrap(), 4.0);
        assert_eq!(empirical_rate(4, 4, 2, &[0, 1, 0, 1]).unwrap(), 4.25);
        assert!((empirical_rate(4, 3, 2, &[0; 10]).unwrap() - 2.0 * 3f64.log2()).abs() < 1e-15);
        assert!((2.0 * 3f64.log2() - 3.1699).abs() < 1e-4);
        assert!(matches!(empirical_rate(4, 3, 2, &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn rate_never_below_nominal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let len = rng.random_range(1..50);
            let samples: Vec<u32> = (0..len).map(|_| rng.random_range(0..4)).collect();
            let r = empirical_rate(4, 3, 2, &samples).unwrap();
            let nominal = 2.0 * 3f64.log2();
            let point_mass = samples.iter().all(|&t| t == samples[0]);
            assert!(r >= nominal);
            assert_eq!(r == nominal, point_mass);
        }
    }
}
