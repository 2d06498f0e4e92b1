use hnlq::{
    DitherMode, HierarchicalCodec, HierarchicalEncoding, InnerProductLut, Lattice, OneSidedLut, Pipeline,
    PipelineConfig, QuantizedMatrix, ScalingConfig,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn d4_pipeline(n: usize, q: u32, m: usize, dither: DitherMode, rotate: bool) -> Pipeline {
    let codec = HierarchicalCodec::new(Lattice::checkerboard(4).unwrap(), q, m).unwrap();
    let scaling = ScalingConfig::new(0.25, 1.0 / 3.0).unwrap();
    let mut cfg = PipelineConfig::new(codec, scaling, n)
        .unwrap()
        .with_dither(dither)
        .unwrap();
    if rotate {
        cfg = cfg.with_rotation(99);
    }
    Pipeline::new(cfg).unwrap()
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

#[test]
fn matmul_matches_dequantized_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (dither, rotate) in [
        (DitherMode::None, false),
        (DitherMode::PerChunk { seed: 8 }, false),
        (DitherMode::Fixed(vec![3, 1, 0, 2]), true),
    ] {
        let pipe = d4_pipeline(8, 4, 2, dither, rotate);
        let lut = pipe.build_lut().unwrap();
        let a = gaussian_matrix(&mut rng, 8, 2);
        let b = gaussian_matrix(&mut rng, 8, 3);
        let qa = pipe.quantize_matrix(&a).unwrap();
        let qb = pipe.quantize_matrix(&b).unwrap();
        let got = pipe.matmul_approx(&lut, &qa, &qb).unwrap();
        assert_eq!(got.shape(), (2, 3));
        for i in 0..2 {
            let ai = pipe.dequantize(&qa.columns[i]).unwrap();
            for j in 0..3 {
                let bj = pipe.dequantize(&qb.columns[j]).unwrap();
                let want: f64 = ai.iter().zip(&bj).map(|(x, y)| x * y).sum();
                assert!(
                    (got[(i, j)] - want).abs() <= 1e-6 * want.abs().max(1.0),
                    "{} vs {want}",
                    got[(i, j)]
                );
            }
        }
    }
}

#[test]
fn ip_approx_matches_reconstruction_on_many_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pipe = d4_pipeline(32, 3, 3, DitherMode::PerChunk { seed: 1 }, false);
    let lut = pipe.build_lut().unwrap();
    for i in 0..1000 {
        let x: Vec<f64> = (0..32).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = (0..32).map(|_| rng.sample(StandardNormal)).collect();
        let qx = pipe.quantize_column(&x, i).unwrap();
        let qy = pipe.quantize_column(&y, i + 1000).unwrap();
        let a = pipe.ip_approx(&lut, &qx, &qy).unwrap();
        let b = pipe.ip_reconstructed(&qx, &qy).unwrap();
        assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn single_column_matmul_equals_ip_approx() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pipe = d4_pipeline(16, 4, 2, DitherMode::None, false);
    let lut = pipe.build_lut().unwrap();
    let a = gaussian_matrix(&mut rng, 16, 1);
    let b = gaussian_matrix(&mut rng, 16, 1);
    let qa = pipe.quantize_matrix(&a).unwrap();
    let qb = pipe.quantize_matrix(&b).unwrap();
    let m = pipe.matmul_approx(&lut, &qa, &qb).unwrap();
    assert_eq!(m[(0, 0)], pipe.ip_approx(&lut, &qa.columns[0], &qb.columns[0]).unwrap());
}

#[test]
fn matmul_query_count_is_a_b_k_m_squared() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pipe = d4_pipeline(12, 3, 2, DitherMode::None, false);
    let lut = pipe.build_lut().unwrap();
    let qa = pipe.quantize_matrix(&gaussian_matrix(&mut rng, 12, 2)).unwrap();
    let qb = pipe.quantize_matrix(&gaussian_matrix(&mut rng, 12, 3)).unwrap();
    lut.reset_query_count();
    pipe.matmul_approx(&lut, &qa, &qb).unwrap();
    assert_eq!(lut.query_count(), 2 * 3 * 3 * 4);
}

#[test]
fn incompatible_matrices_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p1 = d4_pipeline(8, 4, 2, DitherMode::None, false);
    let p2 = d4_pipeline(8, 3, 2, DitherMode::None, false);
    let lut = p1.build_lut().unwrap();
    let a = p1.quantize_matrix(&gaussian_matrix(&mut rng, 8, 2)).unwrap();
    let b = p2.quantize_matrix(&gaussian_matrix(&mut rng, 8, 2)).unwrap();
    assert!(p1.matmul_approx(&lut, &a, &b).is_err());
    let other_lut = p2.build_lut().unwrap();
    assert!(p1.ip_approx(&other_lut, &a.columns[0], &a.columns[1]).is_err());
}

#[test]
fn matrix_file_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let pipe = d4_pipeline(16, 5, 2, DitherMode::PerChunk { seed: 3 }, true);
    let qa = pipe.quantize_matrix(&gaussian_matrix(&mut rng, 16, 4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.hnlq");
    qa.write_to(std::fs::File::create(&path).unwrap()).unwrap();
    let back = QuantizedMatrix::read_from(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(back.to_bytes(), qa.to_bytes());
    assert_eq!(back.columns, qa.columns);
}

#[test]
fn one_sided_lut_matches_direct_product() {
    let codec = HierarchicalCodec::new(Lattice::hexagonal(), 4, 3).unwrap();
    let y = [0.7, -1.9];
    let lut = OneSidedLut::build(&codec, &y).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..500 {
        let digits = (0..6).map(|_| rng.random_range(0..4)).collect();
        let enc = HierarchicalEncoding::from_digits(4, 2, digits).unwrap();
        let p = codec.decode(&enc).unwrap().point;
        let want = p[0] * y[0] + p[1] * y[1];
        assert!((lut.inner_product(&enc).unwrap() - want).abs() < 1e-9);
    }
}

fn encoding_strategy(q: u32, dim: usize, depth: usize) -> impl Strategy<Value = HierarchicalEncoding> {
    prop::collection::vec(0..q, dim * depth).prop_map(move |d| HierarchicalEncoding::from_digits(q, dim, d).unwrap())
}

proptest! {
    #[test]
    fn lut_product_is_exact_for_d4(x in encoding_strategy(3, 4, 3), y in encoding_strategy(3, 4, 3)) {
        let codec = HierarchicalCodec::new(Lattice::checkerboard(4).unwrap(), 3, 3).unwrap();
        let lut = InnerProductLut::build(&codec).unwrap();
        let a = codec.decode(&x).unwrap().coords;
        let b = codec.decode(&y).unwrap().coords;
        let pa = codec.lattice().point_of(&a);
        let pb = codec.lattice().point_of(&b);
        let want: f64 = pa.iter().zip(&pb).map(|(u, v)| u * v).sum();
        prop_assert_eq!(lut.inner_product(&x, &y).unwrap(), want);
        prop_assert_eq!(lut.inner_product_exact(&x, &y).unwrap() as f64, want);
    }

    #[test]
    fn lut_product_is_symmetric(x in encoding_strategy(4, 2, 2), y in encoding_strategy(4, 2, 2)) {
        let codec = HierarchicalCodec::new(Lattice::hexagonal(), 4, 2).unwrap();
        let lut = InnerProductLut::build(&codec).unwrap();
        let a = lut.inner_product(&x, &y).unwrap();
        let b = lut.inner_product(&y, &x).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn matrix_bytes_round_trip(seed in any::<u64>(), cols in 1usize..4, rotate in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pipe = d4_pipeline(8, 3, 2, DitherMode::PerChunk { seed }, rotate);
        let qa = pipe.quantize_matrix(&gaussian_matrix(&mut rng, 8, cols)).unwrap();
        let bytes = qa.to_bytes();
        let back = QuantizedMatrix::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
    }
}
