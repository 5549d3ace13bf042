use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use uvq::estimator::{EstimatorConfig, MinDistanceEstimator};
use uvq::param_codec::ParamGrid;
use uvq::sources::{
    mixture_lipschitz, relative_entropy, variational_distance, Component, ExpFamily, Family, MixtureFamily, ParamBox,
    ParamSpace, ParamVector, QuadratureGrid, SourceModel, Statistic, Support,
};
use uvq::two_stage::{CodeBank, EncodedBlock, TwoStageCode};
use uvq::vq::{sample_blocks, CodeShape, Codebook, DesignBudget, DistortionSpec};

fn mixture3() -> Arc<Family> {
    let c = vec![
        Component::uniform(0.0, 1.0).unwrap(),
        Component::triangular(0.0, 1.0, 2.0).unwrap(),
        Component::truncated_gaussian(1.5, 0.3, 0.0, 2.0).unwrap(),
    ];
    Arc::new(Family::Mixture(MixtureFamily::new(c, Support::new(0.0, 2.0).unwrap()).unwrap()))
}

fn uniforms() -> Arc<Family> {
    let c = vec![Component::uniform(0.0, 1.0).unwrap(), Component::uniform(0.5, 1.5).unwrap()];
    Arc::new(Family::Mixture(MixtureFamily::new(c, Support::new(0.0, 1.5).unwrap()).unwrap()))
}

fn exp2() -> Arc<Family> {
    let stats = vec![Statistic::Power { degree: 1 }, Statistic::Cos { freq: std::f64::consts::PI }];
    let bx = ParamBox::new(vec![-1.0, -0.5], vec![1.0, 0.5]).unwrap();
    let s = Support::new(0.0, 1.0).unwrap();
    Arc::new(Family::Exponential(ExpFamily::new(Component::uniform(0.0, 1.0).unwrap(), stats, bx, s).unwrap()))
}

fn point(space: &ParamSpace, rng: &mut ChaCha8Rng) -> ParamVector {
    space.random_point(rng)
}

#[test]
fn densities_integrate_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for fam in [mixture3(), exp2()] {
        let quad = QuadratureGrid::with_default(fam.support());
        for _ in 0..20 {
            let m = SourceModel::new(fam.clone(), point(&fam.param_space(), &mut rng)).unwrap();
            let mass = quad.integrate(&m.density_on(&quad));
            assert!((mass - 1.0).abs() < 1e-4, "{mass}");
        }
    }
}

#[test]
fn mixture_lipschitz_and_pinsker() {
    let fam = mixture3();
    let quad = QuadratureGrid::with_default(fam.support());
    let space = fam.param_space();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let (a, b) = (point(&space, &mut rng), point(&space, &mut rng));
        let dv = variational_distance(&fam, &a, &b, &quad).unwrap();
        assert!(dv <= mixture_lipschitz(3) * a.euclidean_distance(&b) + 1e-4);
        let d = relative_entropy(&fam, &a, &b, &quad).unwrap();
        assert!(d >= -1e-8);
        assert!(dv <= (d / 2.0).sqrt() + 1e-4, "dv {dv} kl {d}");
    }
}

#[test]
fn exponential_family_bound() {
    let fam = exp2();
    let Family::Exponential(e) = fam.as_ref() else { unreachable!() };
    let quad = QuadratureGrid::with_default(fam.support());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let (a, b) = (point(&fam.param_space(), &mut rng), point(&fam.param_space(), &mut rng));
        let dv = variational_distance(&fam, &a, &b, &quad).unwrap();
        assert!(dv <= e.constants().dv_bound(&a, &b) + 1e-3);
    }
}

#[test]
fn triangle_inequality() {
    let fam = mixture3();
    let quad = QuadratureGrid::with_default(fam.support());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let p: Vec<ParamVector> = (0..3).map(|_| point(&fam.param_space(), &mut rng)).collect();
        let d = |i: usize, j: usize| variational_distance(&fam, &p[i], &p[j], &quad).unwrap();
        assert!(d(0, 2) <= d(0, 1) + d(1, 2) + 1e-6);
    }
}

#[test]
fn delta_stat_within_vc_deviation() {
    let fam = uniforms();
    let n = 4096;
    let est = MinDistanceEstimator::for_block_length(fam.clone(), n, &EstimatorConfig::default()).unwrap();
    let model = SourceModel::new(fam, ParamVector::new(vec![0.7, 0.3])).unwrap();
    let measures = est.model_measures(&model);
    let mut deltas: Vec<f64> =
        (0..100).map(|s| est.delta_with(&measures, &est.empirical(&model.sample(s, n)))).collect();
    deltas.sort_by(f64::total_cmp);
    let limit = (128.0 * 2.0 * (n as f64).ln() / n as f64).sqrt();
    assert!(deltas[94] <= limit, "{} > {limit}", deltas[94]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn param_quantizer_error(seed in any::<u64>(), e in 2u32..13, simplex in any::<bool>()) {
        let n = 1usize << e;
        let space = if simplex {
            ParamSpace::Simplex { k: 3 }
        } else {
            ParamSpace::Box(ParamBox::new(vec![-1.0, 0.0], vec![1.0, 0.3]).unwrap())
        };
        let grid = ParamGrid::new(space.clone(), n);
        let k = space.dim() as f64;
        prop_assert!(grid.header_bits() as f64 <= grid.header_bound());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..200 {
            let theta = space.random_point(&mut rng);
            let bits = grid.encode(&theta).unwrap();
            let back = grid.decode(bits).unwrap();
            prop_assert!(theta.euclidean_distance(back) <= (k / n as f64).sqrt() + 1e-12);
            prop_assert_eq!(grid.encode(back).unwrap(), bits);
        }
    }

    #[test]
    fn nn_encoding_is_optimal(seed in any::<u64>(), dim in 1usize..4, words in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = DistortionSpec::new(2.0, Support::new(0.0, 1.0).unwrap()).unwrap();
        let vals: Vec<f64> = (0..dim * words).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
        let bits = (words as f64).log2().ceil() as u32;
        let cb = Codebook::new(dim, dim, vals, bits, 2.0, Default::default()).unwrap();
        let x: Vec<f64> = (0..dim).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
        let (idx, d) = cb.encode(&x, &spec).unwrap();
        for j in 0..words {
            let dj = Codebook::block_distortion(&x, cb.word(j), &spec);
            prop_assert!(d <= dj);
            if dj == d {
                prop_assert!(idx.0[0] as usize <= j);
            }
        }
    }

    #[test]
    fn stream_roundtrip(seed in any::<u64>(), e in 2u32..7, blocks in 1usize..6, rate in 0.5f64..3.0) {
        let n = 1usize << e;
        let fam = uniforms();
        let spec = DistortionSpec::new(2.0, fam.support()).unwrap();
        let shape = CodeShape::new(n, 1, rate).unwrap();
        let budget = DesignBudget { training_per_word: 20, ..DesignBudget::default() };
        let bank = Arc::new(CodeBank::new(fam.clone(), shape, spec, budget, seed));
        let est = Arc::new(MinDistanceEstimator::for_block_length(fam.clone(), n, &EstimatorConfig::default()).unwrap());
        let code = TwoStageCode::new(bank, est).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = fam.param_space().random_point(&mut rng);
        let model = SourceModel::new(fam, theta).unwrap();
        let data = sample_blocks(&model, seed, blocks, n);
        let traced = code.encode_stream_traced(&data).unwrap();
        let enc: Vec<EncodedBlock> = traced.iter().map(|t| t.encoded.clone()).collect();
        let bytes = code.write(&enc).unwrap();
        let decoded = code.decode_stream(&code.read(&bytes).unwrap()).unwrap();
        for (d, t) in decoded.iter().zip(&traced) {
            prop_assert_eq!(&d.reproduction, &t.reproduction);
        }
        // any strict prefix is rejected outright
        let cut = (seed as usize) % bytes.len();
        prop_assert!(code.read(&bytes[..cut]).is_err());
    }
}
