//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::process::ExitCode;
use std::time::Instant;

use hnlq::bench::{
    csv_string, run_dr_ip, run_dr_vector, verify_lemmas, Beta0, DrPoint, ExperimentConfig, LemmaConfig, Scheme,
};
use hnlq::hierarchical::{sandwich_ratio, ENUMERATION_LIMIT};
use hnlq::overload::rate_from_histogram;
use hnlq::{
    DitherMode, HierarchicalCodec, HierarchicalEncoding, InnerProductLut, Lattice, LatticeKind, Pipeline,
    PipelineConfig, QuantizedMatrix, ScalingConfig,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

trait Bound {
    fn exceeds(self, limit: f64) -> bool;
}

impl Bound for f64 {
    fn exceeds(self, limit: f64) -> bool {
        self.is_nan() || self > limit
    }
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn lemma_cases(lattices: &[(LatticeKind, usize)], qs: &[u32], ms: &[usize]) -> Vec<(LatticeKind, usize, u32, usize)> {
    let mut out = Vec::new();
    for &(k, d) in lattices {
        for &q in qs {
            for &m in ms {
                out.push((k, d, q, m));
            }
        }
    }
    out
}

fn lemma1_and_refinement() -> (Outcome, Outcome) {
    let cfg = LemmaConfig {
        cases: lemma_cases(
            &[
                (LatticeKind::Integer, 1),
                (LatticeKind::Integer, 2),
                (LatticeKind::Hexagonal, 2),
                (LatticeKind::Checkerboard, 4),
            ],
            &[3, 4],
            &[1, 2, 3],
        ),
        samples: 10_000,
        seed: 11,
        sandwich_limit: 0,
    };
    let report = match verify_lemmas(&cfg) {
        Ok(r) => r,
        Err(e) => return (Err(e.to_string()), Err(e.to_string())),
    };
    let mut bad1 = Vec::new();
    let mut bad6 = Vec::new();
    for c in &report.cases {
        let tag = format!("{} q={} M={}", c.lattice, c.q, c.m);
        if c.lemma1_violations > 0 || !c.both_outcomes_seen {
            bad1.push(format!(
                "{tag}: {} violations, {} overloaded",
                c.lemma1_violations, c.overloaded
            ));
        }
        if c.refinement_violations > 0 || c.samples - c.overloaded < 1000 {
            bad6.push(format!(
                "{tag}: {} violations over {} clean inputs",
                c.refinement_violations,
                c.samples - c.overloaded
            ));
        }
    }
    let n = report.cases.len();
    (
        check(
            bad1.is_empty(),
            if bad1.is_empty() {
                format!("{n} configs x 10^4 inputs, both overload outcomes seen")
            } else {
                bad1.join("; ")
            },
        ),
        check(
            bad6.is_empty(),
            if bad6.is_empty() {
                format!("{n} configs, >= 10^3 non-overloaded inputs each")
            } else {
                bad6.join("; ")
            },
        ),
    )
}

fn sandwich() -> Outcome {
    let cfg = LemmaConfig {
        cases: lemma_cases(
            &[
                (LatticeKind::Integer, 2),
                (LatticeKind::Hexagonal, 2),
                (LatticeKind::Checkerboard, 4),
            ],
            &[3, 4],
            &[2, 3],
        ),
        samples: 1,
        seed: 3,
        sandwich_limit: ENUMERATION_LIMIT,
    };
    let report = verify_lemmas(&cfg).map_err(|e| e.to_string())?;
    let mut bad = Vec::new();
    for c in &report.cases {
        let s = match &c.sandwich {
            Some(s) => s,
            None => {
                bad.push(format!("{} q={} M={}: skipped", c.lattice, c.q, c.m));
                continue;
            }
        };
        let closed = (1.0 - (c.q as f64).powi(1 - c.m as i32)) / (c.q as f64 - 1.0);
        if !(s.inner_ok && s.outer_ok) || (sandwich_ratio(c.q, c.m) - closed).abs() > 1e-12 {
            bad.push(format!("{} q={} M={}", c.lattice, c.q, c.m));
        }
    }
    check(
        bad.is_empty(),
        if bad.is_empty() {
            format!("{} configs, r_qM within 1e-12", report.cases.len())
        } else {
            bad.join("; ")
        },
    )
}

fn random_encoding(rng: &mut ChaCha8Rng, q: u32, dim: usize, depth: usize) -> HierarchicalEncoding {
    let digits = (0..dim * depth).map(|_| rng.random_range(0..q)).collect();
    HierarchicalEncoding::from_digits(q, dim, digits).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn lut_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst_dithered = 0.0f64;
    let mut detail = Vec::new();
    for (lat, q, m) in [
        (Lattice::checkerboard(4).unwrap(), 3, 3),
        (Lattice::checkerboard(4).unwrap(), 4, 2),
        (Lattice::integer(3).unwrap(), 4, 3),
        (Lattice::hexagonal(), 5, 2),
    ] {
        let d = lat.dim();
        let codec = HierarchicalCodec::new(lat, q, m).map_err(|e| e.to_string())?;
        let lut = InnerProductLut::build(&codec).map_err(|e| e.to_string())?;
        let integral = codec.lattice().kind().has_integral_gram();
        for _ in 0..10_000 {
            let x = random_encoding(&mut rng, q, d, m);
            let y = random_encoding(&mut rng, q, d, m);
            let px = codec.decode(&x).unwrap().point;
            let py = codec.decode(&y).unwrap().point;
            lut.reset_query_count();
            let v = lut.inner_product(&x, &y).unwrap();
            if lut.query_count() != (m * m) as u64 {
                return Err(format!(
                    "plain product made {} queries, expected {}",
                    lut.query_count(),
                    m * m
                ));
            }
            if integral && v != dot(&px, &py) {
                return Err(format!(
                    "undithered mismatch on {:?}: {v} vs {}",
                    codec.lattice().kind(),
                    dot(&px, &py)
                ));
            }
            let zx: Vec<u32> = (0..d).map(|_| rng.random_range(0..q)).collect();
            let zy: Vec<u32> = (0..d).map(|_| rng.random_range(0..q)).collect();
            let dx = codec.dither_point(&zx).unwrap();
            let dy = codec.dither_point(&zy).unwrap();
            let a: Vec<f64> = px.iter().zip(&dx).map(|(p, z)| p + z).collect();
            let b: Vec<f64> = py.iter().zip(&dy).map(|(p, z)| p + z).collect();
            lut.reset_query_count();
            let w = lut.inner_product_dithered(&x, &y, &zx, &zy).unwrap();
            if lut.query_count() != ((m + 1) * (m + 1)) as u64 {
                return Err(format!("dithered product made {} queries", lut.query_count()));
            }
            worst_dithered = worst_dithered.max((w - dot(&a, &b)).abs());
        }
        detail.push(format!("{:?} q={q} M={m}", codec.lattice().kind()));
    }
    check(
        worst_dithered <= 1e-9,
        format!(
            "10^4 pairs each for {}; exact undithered, dithered max error {worst_dithered:.1e}",
            detail.join(", ")
        ),
    )
}

fn within(points: &[DrPoint], inner_product: bool, tol: f64) -> Vec<String> {
    points
        .iter()
        .filter(|p| p.scheme == Scheme::Hierarchical && p.gap_bits(inner_product).exceeds(tol))
        .map(|p| format!("q={} M={} gap {:.3}", p.q, p.m, p.gap_bits(inner_product)))
        .collect()
}

fn vector_dr(points: &[DrPoint]) -> Outcome {
    let mut failures = within(points, false, 0.65);
    let mut lines = Vec::new();
    for row in points.chunks(3) {
        let [vor, red, hier] = [0, 1, 2].map(|i| &row[i]);
        let q = hier.q;
        let ratio = hier.distortion / vor.distortion;
        lines.push(format!("q={q} gap {:.3} D/D_vor {ratio:.3}", hier.gap_bits(false)));
        if hier.distortion >= red.distortion || hier.distortion.is_nan() {
            failures.push(format!(
                "q={q}: D {:.5} not below voronoi-reduced {:.5}",
                hier.distortion, red.distortion
            ));
        }
        if ratio.exceeds(1.15) {
            failures.push(format!(
                "q={q}: D {:.5} > 1.15 x voronoi {:.5} (ratio {ratio:.3})",
                hier.distortion, vor.distortion
            ));
        }
    }
    if failures.is_empty() {
        Ok(lines.join(", "))
    } else {
        Err(format!("{} | {}", lines.join(", "), failures.join("; ")))
    }
}

fn ip_dr(points: &[DrPoint]) -> Outcome {
    let failures = within(points, true, 0.75);
    let lines: Vec<String> = points
        .iter()
        .map(|p| format!("M={} gap {:.3}", p.m, p.gap_bits(true)))
        .collect();
    check(
        failures.is_empty(),
        if failures.is_empty() {
            lines.join(", ")
        } else {
            failures.join("; ")
        },
    )
}

fn rate_accounting(runs: &[&[DrPoint]]) -> Outcome {
    let mut rows = 0;
    for points in runs {
        let text = csv_string(points).map_err(|e| e.to_string())?;
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        for rec in reader.deserialize::<std::collections::HashMap<String, String>>() {
            let rec = rec.map_err(|e| e.to_string())?;
            let hist: std::collections::BTreeMap<u32, u64> =
                serde_json::from_str(&rec["overload_T_histogram"]).map_err(|e| e.to_string())?;
            let field = |k: &str| rec[k].parse::<f64>().unwrap();
            let (d, q, m) = (field("d") as usize, field("q") as u32, field("M") as usize);
            let rate = field("rate_bits");
            if (rate_from_histogram(d, q, m, &hist) - rate).abs() > 1e-12 {
                return Err(format!("row {rows}: rate {rate} does not match its histogram"));
            }
            rows += 1;
        }
    }
    // beta0 large enough that nothing overloads
    let cfg = ExperimentConfig {
        beta0: Beta0::Fixed(1.5),
        samples: 400,
        qs: vec![4],
        schemes: vec![Scheme::Hierarchical],
        ..ExperimentConfig::vector_defaults()
    };
    let p = &run_dr_vector(&cfg).map_err(|e| e.to_string())?[0];
    let exact = 2.0 * 4f64.log2();
    check(
        p.histogram.len() == 1 && p.histogram.contains_key(&0) && p.rate_bits == exact,
        format!(
            "{rows} rows recomputed to 1e-12; all-T=0 run rate {} (expected {exact})",
            p.rate_bits
        ),
    )
}

fn second_moment() -> Outcome {
    let mut detail = Vec::new();
    for lat in [
        Lattice::integer(3).unwrap(),
        Lattice::hexagonal(),
        Lattice::checkerboard(4).unwrap(),
    ] {
        let base = lat.second_moment(200_000, 1).map_err(|e| e.to_string())?;
        if lat.kind() == LatticeKind::Integer && (base.mean - 1.0 / 12.0).abs() > 3.0 * base.std_error {
            return Err(format!("Z3 moment {} not within 3 SE of 1/12", base.mean));
        }
        for (i, beta) in [0.5, 2.0].into_iter().enumerate() {
            let s = lat
                .scaled(beta)
                .unwrap()
                .second_moment(200_000, 2 + i as u64)
                .map_err(|e| e.to_string())?;
            let b2 = beta * beta;
            let se = (s.std_error.powi(2) + b2 * b2 * base.std_error.powi(2)).sqrt();
            let z = (s.mean - b2 * base.mean).abs() / se;
            if z > 4.0 {
                return Err(format!("{:?} beta={beta}: {z:.2} SE off", lat.kind()));
            }
            detail.push(format!("{:?} b={beta} {z:.2}SE", lat.kind()));
        }
    }
    Ok(detail.join(", "))
}

fn serialization() -> Outcome {
    let codec = HierarchicalCodec::new(Lattice::checkerboard(4).unwrap(), 4, 2).unwrap();
    let lut = InnerProductLut::build(&codec).unwrap();
    let bytes = lut.to_bytes();
    let lut2 = InnerProductLut::read_from(bytes.as_slice(), &codec).map_err(|e| e.to_string())?;
    if lut2.to_bytes() != bytes || lut2 != lut {
        return Err("LUT round trip changed bytes".into());
    }
    let scaling = ScalingConfig::new(0.3, 1.0 / 3.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for (rotate, dither) in [
        (false, DitherMode::None),
        (true, DitherMode::PerChunk { seed: 5 }),
        (false, DitherMode::Fixed(vec![1, 2, 3, 0])),
    ] {
        let mut cfg = PipelineConfig::new(codec.clone(), scaling, 64)
            .unwrap()
            .with_dither(dither)
            .unwrap();
        if rotate {
            cfg = cfg.with_rotation(17);
        }
        let pipe = Pipeline::new(cfg).unwrap();
        let a = DMatrix::from_fn(64, 5, |_, _| rng.sample::<f64, _>(StandardNormal));
        let b = DMatrix::from_fn(64, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let qa = pipe.quantize_matrix(&a).unwrap();
        let qb = pipe.quantize_matrix(&b).unwrap();
        let (ba, bb) = (qa.to_bytes(), qb.to_bytes());
        let qa2 = QuantizedMatrix::from_bytes(&ba).map_err(|e| e.to_string())?;
        let qb2 = QuantizedMatrix::from_bytes(&bb).map_err(|e| e.to_string())?;
        if qa2.to_bytes() != ba || qb2.to_bytes() != bb {
            return Err(format!("matrix round trip changed bytes (rotate={rotate})"));
        }
        let before = pipe.matmul_approx(&lut, &qa, &qb).unwrap();
        let after = pipe.matmul_approx(&lut2, &qa2, &qb2).unwrap();
        if before != after {
            return Err(format!("ip_approx differs after round trip (rotate={rotate})"));
        }
    }
    Ok("LUT and matrices (plain, rotated + per-chunk dither, fixed dither) byte-identical, products identical".into())
}

fn main() -> ExitCode {
    let mut all_ok = true;
    let mut report = |n: u32, name: &str, started: Instant, outcome: Outcome| {
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {n} {name}: PASS ({secs:.1}s) {d}"),
            Err(d) => {
                all_ok = false;
                println!("criterion {n} {name}: FAIL ({secs:.1}s) {d}");
            }
        }
    };

    let t = Instant::now();
    let (c1, c6) = lemma1_and_refinement();
    report(1, "decode exactness", t, c1);

    let t = Instant::now();
    report(2, "codebook sandwich", t, sandwich());

    let t = Instant::now();
    report(3, "LUT equivalence", t, lut_equivalence());

    let t = Instant::now();
    let vector = run_dr_vector(&ExperimentConfig::vector_defaults());
    let c4 = match &vector {
        Ok(p) => vector_dr(p),
        Err(e) => Err(e.to_string()),
    };
    report(4, "vector distortion-rate", t, c4);

    let t = Instant::now();
    let ip = run_dr_ip(&ExperimentConfig::inner_product_defaults());
    let c5 = match &ip {
        Ok(p) => ip_dr(p),
        Err(e) => Err(e.to_string()),
    };
    report(5, "inner-product distortion-rate", t, c5);

    report(6, "successive refinement", Instant::now(), c6);

    let t = Instant::now();
    let c7 = match (&vector, &ip) {
        (Ok(v), Ok(i)) => rate_accounting(&[v, i]),
        _ => Err("distortion-rate runs failed".into()),
    };
    report(7, "rate accounting", t, c7);

    let t = Instant::now();
    report(8, "second-moment scaling", t, second_moment());

    let t = Instant::now();
    report(9, "serialization round-trip", t, serialization());

    if all_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
