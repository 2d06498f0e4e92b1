//! Distortion-rate experiments, beta0 calibration and lemma checks.

use std::collections::BTreeMap;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hierarchical::{sandwich_ratio, HierarchicalCodec, HierarchicalEncoding, SandwichReport, ENUMERATION_LIMIT};
use crate::lattice::{Lattice, LatticeKind, LatticePoint};
use crate::lut::InnerProductLut;
use crate::overload::{empirical_rate, retry_histogram, ScalingConfig};
use crate::pipeline::{DitherMode, Pipeline, PipelineConfig};

/// Samples per parallel batch; each batch draws from its own ChaCha stream.
const VECTOR_BATCH: usize = 64;
const PAIR_BATCH: usize = 4;

pub const DEFAULT_GRID_LEN: usize = 24;
pub const DEFAULT_GRID_RANGE: (f64, f64) = (0.05, 2.0);

pub const CSV_HEADER: [&str; 13] = [
    "scheme",
    "lattice",
    "d",
    "q",
    "M",
    "beta0",
    "alpha",
    "rate_bits",
    "distortion",
    "shannon_or_gamma_ref",
    "overload_T_histogram",
    "samples",
    "seed",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, clap::ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Single-layer Voronoi code with `r = q^M`.
    Voronoi,
    /// Single-layer Voronoi code with `r = round(q^M (1 - r_qM))`.
    VoronoiReduced,
    Hierarchical,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Voronoi => "voronoi",
            Scheme::VoronoiReduced => "voronoi-reduced",
            Scheme::Hierarchical => "hierarchical",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum DitherChoice {
    #[default]
    None,
    /// One dither id derived from the seed, shared by every vector.
    Fixed,
    /// A fresh pseudo-random dither id per vector (or per chunk).
    Random,
}

/// What `beta0 = auto` minimizes on the pilot run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Objective {
    /// Pilot distortion alone.
    Distortion,
    /// Bits between the pilot's empirical rate and the rate the reference
    /// curve needs for the pilot distortion.
    #[default]
    Gap,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Beta0 {
    Fixed(f64),
    Auto,
}

impl FromStr for Beta0 {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Beta0::Auto);
        }
        match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(Beta0::Fixed(v)),
            _ => Err(format!("expected a positive number or `auto`, got `{s}`")),
        }
    }
}

pub fn lattice_name(kind: LatticeKind, dim: usize) -> String {
    match kind {
        LatticeKind::Integer => format!("z{dim}"),
        LatticeKind::Checkerboard => format!("d{dim}"),
        LatticeKind::Hexagonal => "a2".into(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub schemes: Vec<Scheme>,
    pub lattice: LatticeKind,
    pub d: usize,
    pub qs: Vec<u32>,
    pub ms: Vec<usize>,
    /// Vector length for inner-product runs.
    pub n: usize,
    /// `N`: vectors (or pairs) per point.
    pub samples: usize,
    pub alpha: f64,
    pub beta0: Beta0,
    pub seed: u64,
    pub dither: DitherChoice,
    pub rotate: bool,
    /// Candidates for `beta0 = auto`.
    pub grid: Vec<f64>,
    pub pilot_samples: usize,
    pub objective: Objective,
}

impl ExperimentConfig {
    /// Desk-scale vector run: D4, M = 2, q = 3..6, N = 1000.
    pub fn vector_defaults() -> Self {
        ExperimentConfig {
            schemes: vec![Scheme::Voronoi, Scheme::VoronoiReduced, Scheme::Hierarchical],
            lattice: LatticeKind::Checkerboard,
            d: 4,
            qs: vec![3, 4, 5, 6],
            ms: vec![2],
            n: 4,
            samples: 1000,
            alpha: 1.0 / 3.0,
            beta0: Beta0::Auto,
            seed: 1,
            dither: DitherChoice::None,
            rotate: false,
            grid: default_grid(),
            pilot_samples: 500,
            objective: Objective::Gap,
        }
    }

    /// Desk-scale inner-product run: n = 512, D4, q = 4, M = 1..3, N = 500 pairs.
    pub fn inner_product_defaults() -> Self {
        ExperimentConfig {
            schemes: vec![Scheme::Hierarchical],
            qs: vec![4],
            ms: vec![1, 2, 3],
            n: 512,
            samples: 500,
            dither: DitherChoice::Fixed,
            pilot_samples: 60,
            ..Self::vector_defaults()
        }
    }

    pub fn lattice(&self) -> Result<Lattice> {
        Lattice::new(self.lattice, self.d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::InvalidParameter("sample count must be >= 1".into()));
        }
        if self.schemes.is_empty() || self.qs.is_empty() || self.ms.is_empty() {
            return Err(Error::InvalidParameter(
                "scheme, q and M lists must be non-empty".into(),
            ));
        }
        if let Some(q) = self.qs.iter().find(|&&q| q < 2) {
            return Err(Error::InvalidParameter(format!("q must be >= 2, got {q}")));
        }
        if self.ms.contains(&0) {
            return Err(Error::InvalidParameter("M must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if self.beta0 == Beta0::Auto && (self.grid.is_empty() || self.pilot_samples == 0) {
            return Err(Error::Empty("beta0 calibration grid"));
        }
        self.lattice().map(|_| ())
    }
}

/// `len` log-spaced values spanning `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, len: usize) -> Vec<f64> {
    match len {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..len)
            .map(|i| lo * (hi / lo).powf(i as f64 / (len - 1) as f64))
            .collect(),
    }
}

pub fn default_grid() -> Vec<f64> {
    log_grid(DEFAULT_GRID_RANGE.0, DEFAULT_GRID_RANGE.1, DEFAULT_GRID_LEN)
}

/// Gaussian rate-distortion function `2^(-2R)`.
pub fn shannon(rate: f64) -> f64 {
    (-2.0 * rate).exp2()
}

/// Inverse of [`shannon`]: the rate at which the Shannon limit equals `distortion`.
pub fn shannon_rate(distortion: f64) -> f64 {
    -0.5 * distortion.log2()
}

/// Inner-product limit `2 * 2^(-2R) - 2^(-4R)`; NaN for `R <= 0.906` where
/// this closed form does not apply.
pub fn gamma(rate: f64) -> f64 {
    if rate <= 0.906 {
        return f64::NAN;
    }
    let t = (-2.0 * rate).exp2();
    2.0 * t - t * t
}

/// Inverse of [`gamma`] on its closed-form branch.
pub fn gamma_rate(distortion: f64) -> f64 {
    -0.5 * (1.0 - (1.0 - distortion).sqrt()).log2()
}

/// One row of the output CSV.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DrPoint {
    pub scheme: Scheme,
    pub lattice: String,
    pub d: usize,
    /// Nesting ratio of the codec that was run (`r` for Voronoi schemes).
    pub q: u32,
    /// Layers of the codec that was run (1 for Voronoi schemes).
    #[serde(rename = "M")]
    pub m: usize,
    pub beta0: f64,
    pub alpha: f64,
    pub rate_bits: f64,
    pub distortion: f64,
    pub reference: f64,
    pub histogram: BTreeMap<u32, u64>,
    pub samples: usize,
    pub seed: u64,
}

impl DrPoint {
    pub fn histogram_json(&self) -> String {
        serde_json::to_string(&self.histogram).expect("map of integers serializes")
    }

    /// Rate implied by the stored histogram.
    pub fn recomputed_rate(&self) -> f64 {
        crate::overload::rate_from_histogram(self.d, self.q, self.m, &self.histogram)
    }

    /// Distance in bits between the achieved rate and the rate the reference
    /// curve needs for the same distortion.
    pub fn gap_bits(&self, inner_product: bool) -> f64 {
        let ideal = if inner_product {
            gamma_rate(self.distortion)
        } else {
            shannon_rate(self.distortion)
        };
        self.rate_bits - ideal
    }
}

/// Writes the header and one row per point.
pub fn write_csv<W: Write>(w: W, points: &[DrPoint]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Format(e.to_string());
    out.write_record(CSV_HEADER).map_err(io)?;
    for p in points {
        out.write_record([
            p.scheme.name().to_string(),
            p.lattice.clone(),
            p.d.to_string(),
            p.q.to_string(),
            p.m.to_string(),
            p.beta0.to_string(),
            p.alpha.to_string(),
            p.rate_bits.to_string(),
            p.distortion.to_string(),
            p.reference.to_string(),
            p.histogram_json(),
            p.samples.to_string(),
            p.seed.to_string(),
        ])
        .map_err(io)?;
    }
    out.flush()?;
    Ok(())
}

pub fn csv_string(points: &[DrPoint]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(&mut buf, points)?;
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}

/// Codec that realizes `scheme` at `(q, M)`, plus the unrounded Voronoi
/// ratio for the reduced scheme.
pub fn scheme_codec(scheme: Scheme, lattice: &Lattice, q: u32, m: usize) -> Result<(HierarchicalCodec, Option<f64>)> {
    let full = (q as f64).powi(m as i32);
    match scheme {
        Scheme::Hierarchical => Ok((HierarchicalCodec::new(lattice.clone(), q, m)?, None)),
        Scheme::Voronoi => {
            let r = u32::try_from((q as u64).pow(m as u32))
                .map_err(|_| Error::InvalidParameter(format!("q^M too large: {q}^{m}")))?;
            Ok((HierarchicalCodec::new(lattice.clone(), r, 1)?, Some(full)))
        }
        Scheme::VoronoiReduced => {
            let exact = full * (1.0 - sandwich_ratio(q, m));
            let r = (exact.round() as u32).max(2);
            Ok((HierarchicalCodec::new(lattice.clone(), r, 1)?, Some(exact)))
        }
    }
}

fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

fn random_id(rng: &mut impl RngCore, q: u32, dim: usize) -> Vec<u32> {
    (0..dim).map(|_| (rng.next_u64() % q as u64) as u32).collect()
}

/// Dither id used by [`DitherChoice::Fixed`]; `salt` separates the two sides
/// of an inner product.
pub fn fixed_dither(seed: u64, salt: u64, q: u32, dim: usize) -> Vec<u32> {
    random_id(&mut substream(seed ^ 0x6469_7468_6572, salt), q, dim)
}

/// Mean distortion and every retry count of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    pub distortion: f64,
    pub retries: Vec<u32>,
}

/// Runs `per_item` over `count` items in parallel batches. Item `i` of batch
/// `b` sees the `i`-th draw of stream `b`; results are merged in batch order.
fn batched<F>(count: usize, batch: usize, seed: u64, per_item: F) -> Result<Measurement>
where
    F: Fn(&mut ChaCha8Rng, usize) -> Result<(f64, Vec<u32>)> + Sync,
{
    let batches = count.div_ceil(batch);
    let parts = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(seed, b as u64);
            let mut err = 0.0;
            let mut retries = Vec::new();
            for i in b * batch..((b + 1) * batch).min(count) {
                let (e, t) = per_item(&mut rng, i)?;
                err += e;
                retries.extend(t);
            }
            Ok((err, retries))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    let mut retries = Vec::new();
    for (e, t) in parts {
        total += e;
        retries.extend(t);
    }
    Ok(Measurement {
        distortion: total / count as f64,
        retries,
    })
}

/// `(1/d) mean |X - X_hat|^2` over `samples` standard Gaussian vectors.
pub fn vector_distortion(
    codec: &HierarchicalCodec,
    scaling: &ScalingConfig,
    dither: DitherChoice,
    samples: usize,
    seed: u64,
) -> Result<Measurement> {
    let d = codec.dim();
    let fixed = fixed_dither(seed, 0, codec.q(), d);
    let mut m = batched(samples, VECTOR_BATCH, seed, |rng, _| {
        let x = gaussian(rng, d);
        let id = match dither {
            DitherChoice::None => None,
            DitherChoice::Fixed => Some(fixed.clone()),
            DitherChoice::Random => Some(random_id(rng, codec.q(), d)),
        };
        let enc = codec.encode_scaled(scaling, &x, id.as_deref())?;
        let rec = codec.decode_scaled(scaling, &enc)?;
        let err: f64 = x.iter().zip(&rec).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok((err, vec![enc.retries]))
    })?;
    m.distortion /= d as f64;
    Ok(m)
}

/// `(1/n) mean (X^T Y - estimate)^2` over `samples` Gaussian pairs. The
/// estimator gets `(x, y, pair index)` and returns its value and retry counts.
pub fn inner_product_distortion<F>(n: usize, samples: usize, seed: u64, estimator: F) -> Result<Measurement>
where
    F: Fn(&[f64], &[f64], usize) -> Result<(f64, Vec<u32>)> + Sync,
{
    let mut m = batched(samples, PAIR_BATCH, seed, |rng, i| {
        let x = gaussian(rng, n);
        let y = gaussian(rng, n);
        let exact: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let (est, retries) = estimator(&x, &y, i)?;
        Ok(((exact - est) * (exact - est), retries))
    })?;
    m.distortion /= n as f64;
    Ok(m)
}

/// Quantizes both sides through a pipeline and scores the LUT estimate.
pub struct InnerProductSetup {
    pub x_side: Pipeline,
    pub y_side: Pipeline,
    /// `None` falls back to reconstructed inner products (large Voronoi codes).
    pub lut: Option<InnerProductLut>,
}

impl InnerProductSetup {
    pub fn new(
        codec: HierarchicalCodec,
        scaling: ScalingConfig,
        n: usize,
        dither: DitherChoice,
        rotate: bool,
        seed: u64,
    ) -> Result<Self> {
        let (q, d) = (codec.q(), codec.dim());
        let side = |salt: u64| -> Result<Pipeline> {
            let mode = match dither {
                DitherChoice::None => DitherMode::None,
                DitherChoice::Fixed => DitherMode::Fixed(fixed_dither(seed, salt, q, d)),
                DitherChoice::Random => DitherMode::PerChunk {
                    seed: seed ^ (salt + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15),
                },
            };
            let mut cfg = PipelineConfig::new(codec.clone(), scaling, n)?.with_dither(mode)?;
            if rotate {
                cfg = cfg.with_rotation(seed);
            }
            Pipeline::new(cfg)
        };
        let x_side = side(1)?;
        let y_side = side(2)?;
        let lut = match InnerProductLut::build(&codec) {
            Ok(l) => Some(l),
            Err(Error::EnumerationTooLarge { .. }) => None,
            Err(e) => return Err(e),
        };
        Ok(InnerProductSetup { x_side, y_side, lut })
    }

    pub fn estimate(&self, x: &[f64], y: &[f64], pair: usize) -> Result<(f64, Vec<u32>)> {
        let qx = self.x_side.quantize_column(x, pair)?;
        let qy = self.y_side.quantize_column(y, pair)?;
        let v = match &self.lut {
            Some(lut) => self.x_side.ip_approx(lut, &qx, &qy)?,
            None => self.x_side.ip_reconstructed(&qx, &qy)?,
        };
        let retries = qx.retries().chain(qy.retries()).collect();
        Ok((v, retries))
    }
}

/// Grid candidate with the smallest objective; ties keep the earlier one.
pub fn select_beta0<F>(grid: &[f64], objective: F) -> Result<(f64, Vec<f64>)>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    if grid.is_empty() {
        return Err(Error::Empty("beta0 calibration grid"));
    }
    let scores = grid.par_iter().map(|&b| objective(b)).collect::<Result<Vec<f64>>>()?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s < scores[best] || scores[best].is_nan() {
            best = i;
        }
    }
    Ok((grid[best], scores))
}

fn pilot_seed(seed: u64) -> u64 {
    seed.wrapping_add(0x0070_696c_6f74)
}

/// Pilot-selected beta0 for one `(scheme, q, M)` cell. Returns the selected
/// value and the pilot score of every grid entry.
pub fn calibrate_beta0(
    cfg: &ExperimentConfig,
    scheme: Scheme,
    q: u32,
    m: usize,
    inner_product: bool,
) -> Result<(f64, Vec<f64>)> {
    let (codec, _) = scheme_codec(scheme, &cfg.lattice()?, q, m)?;
    let seed = pilot_seed(cfg.seed);
    let pilot = cfg.pilot_samples.min(cfg.samples).max(1);
    let score = |measured: Measurement| -> Result<f64> {
        Ok(match cfg.objective {
            Objective::Distortion => measured.distortion,
            Objective::Gap => {
                let rate = empirical_rate(codec.dim(), codec.q(), codec.depth(), &measured.retries)?;
                let ideal = if inner_product {
                    gamma_rate(measured.distortion)
                } else {
                    shannon_rate(measured.distortion)
                };
                rate - ideal
            }
        })
    };
    if inner_product {
        // one LUT for the whole grid
        let lut = match InnerProductLut::build(&codec) {
            Ok(l) => Some(l),
            Err(Error::EnumerationTooLarge { .. }) => None,
            Err(e) => return Err(e),
        };
        select_beta0(&cfg.grid, |b| {
            let scaling = ScalingConfig::new(b, cfg.alpha)?;
            let mut setup = InnerProductSetup::new(codec.clone(), scaling, cfg.n, cfg.dither, cfg.rotate, cfg.seed)?;
            setup.lut = lut.clone();
            score(inner_product_distortion(cfg.n, pilot, seed, |x, y, i| {
                setup.estimate(x, y, i)
            })?)
        })
    } else {
        select_beta0(&cfg.grid, |b| {
            let scaling = ScalingConfig::new(b, cfg.alpha)?;
            score(vector_distortion(&codec, &scaling, cfg.dither, pilot, seed)?)
        })
    }
}

fn resolve_beta0(cfg: &ExperimentConfig, scheme: Scheme, q: u32, m: usize, inner_product: bool) -> Result<f64> {
    match cfg.beta0 {
        Beta0::Fixed(b) => Ok(b),
        Beta0::Auto => Ok(calibrate_beta0(cfg, scheme, q, m, inner_product)?.0),
    }
}

fn point(
    cfg: &ExperimentConfig,
    scheme: Scheme,
    codec: &HierarchicalCodec,
    beta0: f64,
    measured: &Measurement,
    inner_product: bool,
) -> Result<DrPoint> {
    let rate_bits = empirical_rate(codec.dim(), codec.q(), codec.depth(), &measured.retries)?;
    Ok(DrPoint {
        scheme,
        lattice: lattice_name(cfg.lattice, cfg.d),
        d: codec.dim(),
        q: codec.q(),
        m: codec.depth(),
        beta0,
        alpha: cfg.alpha,
        rate_bits,
        distortion: measured.distortion,
        reference: if inner_product {
            gamma(rate_bits)
        } else {
            shannon(rate_bits)
        },
        histogram: retry_histogram(&measured.retries),
        samples: cfg.samples,
        seed: cfg.seed,
    })
}

/// Vector distortion-rate sweep over `q x M x scheme`. Every cell sees the
/// same source samples.
pub fn run_dr_vector(cfg: &ExperimentConfig) -> Result<Vec<DrPoint>> {
    cfg.validate()?;
    let lattice = cfg.lattice()?;
    let mut out = Vec::new();
    for &q in &cfg.qs {
        for &m in &cfg.ms {
            for &scheme in &cfg.schemes {
                let (codec, _) = scheme_codec(scheme, &lattice, q, m)?;
                let beta0 = resolve_beta0(cfg, scheme, q, m, false)?;
                let scaling = ScalingConfig::new(beta0, cfg.alpha)?;
                let measured = vector_distortion(&codec, &scaling, cfg.dither, cfg.samples, cfg.seed)?;
                out.push(point(cfg, scheme, &codec, beta0, &measured, false)?);
            }
        }
    }
    Ok(out)
}

/// Inner-product distortion-rate sweep with `n`-dimensional Gaussian pairs.
pub fn run_dr_ip(cfg: &ExperimentConfig) -> Result<Vec<DrPoint>> {
    cfg.validate()?;
    if !cfg.n.is_multiple_of(cfg.d) {
        return Err(Error::InvalidParameter(format!(
            "n = {} is not a multiple of d = {}",
            cfg.n, cfg.d
        )));
    }
    let lattice = cfg.lattice()?;
    let mut out = Vec::new();
    for &q in &cfg.qs {
        for &m in &cfg.ms {
            for &scheme in &cfg.schemes {
                let (codec, _) = scheme_codec(scheme, &lattice, q, m)?;
                let beta0 = resolve_beta0(cfg, scheme, q, m, true)?;
                let scaling = ScalingConfig::new(beta0, cfg.alpha)?;
                let setup = InnerProductSetup::new(codec.clone(), scaling, cfg.n, cfg.dither, cfg.rotate, cfg.seed)?;
                let measured =
                    inner_product_distortion(cfg.n, cfg.samples, cfg.seed, |x, y, i| setup.estimate(x, y, i))?;
                out.push(point(cfg, scheme, &codec, beta0, &measured, true)?);
            }
        }
    }
    Ok(out)
}

/// Decoder under test in [`verify_lemmas_with`].
pub type Decoder = dyn Fn(&HierarchicalCodec, &HierarchicalEncoding) -> Result<LatticePoint> + Sync;

#[derive(Clone, Debug, PartialEq)]
pub struct LemmaConfig {
    pub cases: Vec<(LatticeKind, usize, u32, usize)>,
    /// Random inputs per case.
    pub samples: usize,
    pub seed: u64,
    /// Skip sandwich checks whose codebook exceeds this many points.
    pub sandwich_limit: u128,
}

impl Default for LemmaConfig {
    fn default() -> Self {
        let mut cases = Vec::new();
        for (kind, d) in [
            (LatticeKind::Integer, 1),
            (LatticeKind::Integer, 2),
            (LatticeKind::Hexagonal, 2),
            (LatticeKind::Checkerboard, 4),
        ] {
            for q in [3, 4] {
                for m in [1, 2, 3] {
                    cases.push((kind, d, q, m));
                }
            }
        }
        LemmaConfig {
            cases,
            samples: 10_000,
            seed: 7,
            sandwich_limit: ENUMERATION_LIMIT,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LemmaCase {
    pub lattice: String,
    pub q: u32,
    #[serde(rename = "M")]
    pub m: usize,
    pub samples: usize,
    pub overloaded: usize,
    /// Inputs where decode(encode(x)) = Q_L(x), the overload flag and
    /// `Q^{oM}(x) = 0` do not all agree.
    pub lemma1_violations: usize,
    /// Non-overloaded inputs where some partial decode differs from
    /// `Q^{o(M-t)}(x) - Q^{oM}(x)`.
    pub refinement_violations: usize,
    pub both_outcomes_seen: bool,
    pub sandwich: Option<SandwichReport>,
    pub r_qm_error: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LemmaReport {
    pub pass: bool,
    pub cases: Vec<LemmaCase>,
}

impl LemmaReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn verify_lemmas(cfg: &LemmaConfig) -> Result<LemmaReport> {
    verify_lemmas_with(cfg, &|c, e| c.decode(e))
}

/// Gaussian widths relative to `q^M`, cycled over the samples so both
/// overload outcomes occur.
const SIGMA_SWEEP: [f64; 5] = [0.05, 0.15, 0.3, 0.6, 1.0];

pub fn verify_lemmas_with(cfg: &LemmaConfig, decoder: &Decoder) -> Result<LemmaReport> {
    let mut cases = Vec::with_capacity(cfg.cases.len());
    for (idx, &(kind, dim, q, m)) in cfg.cases.iter().enumerate() {
        let codec = HierarchicalCodec::new(Lattice::new(kind, dim)?, q, m)?;
        let span = (q as f64).powi(m as i32);
        let counts = (0..cfg.samples)
            .into_par_iter()
            .map(|i| -> Result<[usize; 3]> {
                let mut rng = substream(cfg.seed.wrapping_add(idx as u64), i as u64);
                let sigma = SIGMA_SWEEP[i % SIGMA_SWEEP.len()] * span;
                let x: Vec<f64> = gaussian(&mut rng, dim).iter().map(|v| v * sigma).collect();
                let enc = codec.encode(&x)?;
                let nearest = codec.lattice().nn_quantize(&x)?;
                let tail = codec.q_circ(&x, m)?;
                let exact = decoder(&codec, &enc)?.coords == nearest.coords;
                let consistent = exact == !enc.overload && enc.overload == !tail.is_zero();
                let mut refine_ok = true;
                if !enc.overload {
                    for t in 1..=m {
                        let head = codec.q_circ(&x, m - t)?;
                        let want: Vec<i64> = head.coords.iter().zip(&tail.coords).map(|(a, b)| a - b).collect();
                        if codec.decode_partial(&enc, t)?.coords != want {
                            refine_ok = false;
                        }
                    }
                }
                Ok([enc.overload as usize, !consistent as usize, !refine_ok as usize])
            })
            .try_reduce(|| [0; 3], |a, b| Ok([a[0] + b[0], a[1] + b[1], a[2] + b[2]]))?;
        let size = (q as u128).pow((dim * m) as u32);
        let sandwich = if m >= 2 && size <= cfg.sandwich_limit {
            Some(codec.verify_sandwich()?)
        } else {
            None
        };
        let closed = (1.0 - (q as f64).powi(1 - m as i32)) / (q as f64 - 1.0);
        let r_qm_error = (sandwich_ratio(q, m) - closed).abs();
        let both_outcomes_seen = counts[0] > 0 && counts[0] < cfg.samples;
        let sandwich_ok = sandwich.as_ref().is_none_or(|s| s.inner_ok && s.outer_ok);
        let pass = counts[1] == 0 && counts[2] == 0 && sandwich_ok && r_qm_error <= 1e-12;
        cases.push(LemmaCase {
            lattice: lattice_name(kind, dim),
            q,
            m,
            samples: cfg.samples,
            overloaded: counts[0],
            lemma1_violations: counts[1],
            refinement_violations: counts[2],
            both_outcomes_seen,
            sandwich,
            r_qm_error,
            pass,
        });
    }
    let pass = cases.iter().all(|c| c.pass);
    Ok(LemmaReport { pass, cases })
}
