use bezsketch_core::sketch_io::{EncodedSketch, EncodedStroke};
use bezsketch_core::{curve_noise_cov, eval_curve, perturb, ControlPolygon, DiagonalNoise, Point};
use bezsketch_diffgraph::gradcheck::check_params;
use bezsketch_diffgraph::{Graph, Tensor};
use bezsketch_models::sketch_generator::{
    gmm_log_likelihood, gmm_log_likelihood_graph, GenBatch, GeneratorConfig, GeneratorMode,
    GeneratorModel, GmmParams,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_sketch(rng: &mut ChaCha8Rng, degrees: &[usize]) -> EncodedSketch {
    let strokes = degrees
        .iter()
        .map(|&d| {
            let offset = Point::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let mut p = Point::ORIGIN;
            let mut points = vec![p];
            for _ in 0..d {
                p += Point::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
                points.push(p);
            }
            EncodedStroke {
                degree: d,
                offset,
                points,
                loss: None,
            }
        })
        .collect();
    EncodedSketch {
        id: 0,
        category: None,
        raw_len: 0,
        strokes,
    }
}

#[test]
fn generator_loss_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for mode in [GeneratorMode::Stroke, GeneratorMode::ControlPoint] {
        let config = GeneratorConfig {
            mode,
            latent: 3,
            enc_hidden: 4,
            dec_hidden: 4,
            mixtures: 2,
            nmax: 10,
            degree: 2,
            free_bits: 0.0,
            ..GeneratorConfig::default()
        };
        let data = vec![
            random_sketch(&mut rng, &[2, 2]),
            random_sketch(&mut rng, &[2]),
        ];
        let GeneratorModel { net, mut store, .. } = GeneratorModel::new(config.clone(), 3).unwrap();
        let model = GeneratorModel::new(config.clone(), 3).unwrap();
        let seqs: Vec<_> = data.iter().map(|s| model.sequence(s).unwrap()).collect();
        let refs: Vec<_> = seqs.iter().collect();
        let eps = Tensor::matrix(2, 3, vec![0.3, -0.7, 1.1, -0.2, 0.5, 0.9]);
        let batch = GenBatch::new(&config, &refs, eps).unwrap();
        let errs = check_params(&mut store, 1e-6, 30, |g, s| {
            Ok(net.loss(g, s, &batch, 0.8)?.total)
        })
        .unwrap();
        for (name, err) in errs {
            assert!(err < 1e-5, "{mode:?} {name}: relative error {err}");
        }
    }
}

fn random_gmm(rng: &mut ChaCha8Rng, m: usize, d: usize) -> (Vec<f64>, GmmParams) {
    let raw: Vec<f64> = (0..m + 2 * m * d)
        .map(|_| rng.gen_range(-1.5..1.5))
        .collect();
    let p = GmmParams::from_raw(&raw, m, d).unwrap();
    (raw, p)
}

/// Mixture density summed directly in linear space.
fn naive_density(x: &[f64], p: &GmmParams) -> f64 {
    let mut total = 0.0;
    for k in 0..p.components() {
        let mut dens = p.weights[k];
        for j in 0..x.len() {
            let v = p.variances[k][j];
            let diff = x[j] - p.means[k][j];
            dens *= (-(diff * diff) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
        }
        total += dens;
    }
    total
}

#[test]
fn gmm_matches_linear_space_sum_and_graph_version() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let m = rng.gen_range(1..5);
        let d = rng.gen_range(1..5);
        let (raw, p) = random_gmm(&mut rng, m, d);
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let ours = gmm_log_likelihood(&x, &p);
        assert!((ours - naive_density(&x, &p).ln()).abs() < 1e-10);
        let mut g = Graph::new();
        let out = g.input(Tensor::matrix(1, raw.len(), raw.clone()));
        let xv = g.input(Tensor::matrix(1, d, x.clone()));
        let ll = gmm_log_likelihood_graph(&mut g, out, xv, m, d).unwrap();
        assert!((g.value(ll).item() - ours).abs() < 1e-10);
    }
}

proptest! {
    #[test]
    fn gmm_is_invariant_to_component_order(seed in 0u64..1000, shift in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, p) = random_gmm(&mut rng, 4, 3);
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let rot = |v: &Vec<Vec<f64>>| { let mut v = v.clone(); v.rotate_left(shift); v };
        let mut w = p.weights.clone();
        w.rotate_left(shift);
        let q = GmmParams { weights: w, means: rot(&p.means), variances: rot(&p.variances) };
        prop_assert!((gmm_log_likelihood(&x, &p) - gmm_log_likelihood(&x, &q)).abs() < 1e-12);
    }

    #[test]
    fn decoder_outputs_are_valid_for_any_weights(seed in 0u64..200) {
        let config = GeneratorConfig { latent: 4, enc_hidden: 3, dec_hidden: 5, mixtures: 3, degree: 3, ..GeneratorConfig::default() };
        let mut model = GeneratorModel::new(config, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for id in model.store.ids().collect::<Vec<_>>() {
            model.store.value_mut(id).data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-3.0..3.0));
        }
        let z: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let state = model.initial_state(&z).unwrap();
        let prev: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let out = model.decode_step(&prev, &z, &state).unwrap();
        prop_assert!((out.gmm.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(out.gmm.variances.iter().flatten().all(|&v| v > 0.0));
        prop_assert!((0.0..=1.0).contains(&out.stop.unwrap()));
    }
}

/// Perturbing a decoded polygon gives pointwise covariance matching the propagated one.
#[test]
fn decoded_polygons_follow_noise_propagation() {
    let config = GeneratorConfig {
        latent: 4,
        enc_hidden: 3,
        dec_hidden: 6,
        mixtures: 2,
        nmax: 3,
        degree: 9,
        ..GeneratorConfig::default()
    };
    let mut model = GeneratorModel::new(config, 11).unwrap();
    model.trained = true;
    let sample = model.sample_unconditional(0.65, 5).unwrap();
    let encoded = sample.sketch.to_encoded();
    let s = &encoded.strokes[0];
    let poly = ControlPolygon::new(s.points.iter().map(|&p| p + s.offset).collect()).unwrap();
    let noise = DiagonalNoise::isotropic(10, 0.04).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let samples = 20_000;
    for &t in &[0.1, 0.5, 0.8] {
        let center = eval_curve(&poly, t).unwrap();
        let mut sq = [0.0; 2];
        for _ in 0..samples {
            let d = eval_curve(&perturb(&poly, &noise, &mut rng).unwrap(), t).unwrap() - center;
            sq[0] += d.x * d.x;
            sq[1] += d.y * d.y;
        }
        let cov = curve_noise_cov(&noise, 9, t).unwrap();
        for c in 0..2 {
            let var = sq[c] / samples as f64;
            let se = cov[c] * (2.0 / samples as f64).sqrt();
            assert!(
                (var - cov[c]).abs() < 4.0 * se,
                "t {t}: {var} vs {}",
                cov[c]
            );
        }
    }
}
