mod common;

use cnn_recon::convnet::{build_network, FeatureVector, LayerSpec, Network, WeightInit};
use cnn_recon::inversion::{alpha_norm, feature_loss, invert, tv_norm, InitImage, InversionConfig};
use cnn_recon::Tensor;
use common::*;
use rand::Rng;

fn toy_net(seed: u64) -> Network {
    let specs = [LayerSpec::conv(4, 3, 1, 1), LayerSpec::Rectifier, LayerSpec::maxpool(2, 2)];
    build_network([1, 16, 16], &specs, &WeightInit::SeededRandom(seed)).unwrap()
}

fn identity(shape: [usize; 3]) -> Network {
    build_network(shape, &[], &WeightInit::Zeros).unwrap()
}

fn features(values: &[f64]) -> FeatureVector {
    FeatureVector {
        layer_index: 0,
        values: values.to_vec(),
    }
}

fn unregularized() -> InversionConfig {
    InversionConfig {
        lambda_alpha: 0.0,
        lambda_tv: 0.0,
        ..Default::default()
    }
}

/// Worst directional finite-difference error of `f` over `probes` random
/// points and directions.
fn fd_worst(shape: &[usize], probes: usize, seed: u64, f: impl Fn(&Tensor) -> (f64, Tensor)) -> f64 {
    let mut rng = rng(seed);
    (0..probes)
        .map(|_| {
            let x = uniform_tensor(shape, &mut rng);
            let d = unit_direction(shape, &mut rng);
            let analytic = f(&x).1.dot(&d);
            relative_error(analytic, central_difference(|y| f(y).0, &x, &d, 1e-5))
        })
        .fold(0.0, f64::max)
}

#[test]
fn feature_loss_gradient_matches_finite_differences() {
    let net = toy_net(1);
    let mut rng = rng(2);
    let target = features(&(0..256).map(|_| rng.random::<f64>()).collect::<Vec<_>>());
    let worst = fd_worst(&[1, 16, 16], 30, 3, |x| feature_loss(&net, 2, x, &target).unwrap());
    assert!(worst < 1e-6, "{worst:e}");
}

#[test]
fn alpha_norm_gradient_matches_finite_differences() {
    let worst = fd_worst(&[2, 5, 7], 30, 4, |x| alpha_norm(x, 6.0));
    assert!(worst < 1e-6, "{worst:e}");
}

#[test]
fn tv_gradient_matches_finite_differences() {
    for beta in [2.0, 1.5, 3.0] {
        let worst = fd_worst(&[2, 6, 5], 30, 5, |x| tv_norm(x, beta).unwrap());
        assert!(worst < 1e-6, "beta {beta}: {worst:e}");
    }
}

#[test]
fn hand_examples() {
    let c = 2.0;
    let (v, _) = alpha_norm(&Tensor::new(vec![1, 2, 2], vec![0.0, 0.0, 0.0, c]).unwrap(), 2.0);
    assert!((v - 0.75 * c * c).abs() < 1e-15);
    let (v, g) = alpha_norm(&Tensor::filled(&[1, 3, 3], 0.4), 6.0);
    assert_eq!(v, 0.0);
    assert!(g.data().iter().all(|&e| e == 0.0));

    let (v, _) = tv_norm(&Tensor::new(vec![1, 2, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap(), 2.0).unwrap();
    assert_eq!(v, 2.0);
    let (v, g) = tv_norm(&Tensor::new(vec![1, 1, 1], vec![0.7]).unwrap(), 2.0).unwrap();
    assert_eq!((v, g.data()), (0.0, &[0.0][..]));
}

#[test]
fn identity_network_loss_and_gradient() {
    let net = identity([1, 3, 4]);
    let mut rng = rng(6);
    let x = gaussian_tensor(&[1, 3, 4], &mut rng);
    let (loss, grad) = feature_loss(&net, 0, &x, &features(&[0.0; 12])).unwrap();
    assert!((loss - x.norm_sq()).abs() < 1e-12);
    for (g, v) in grad.data().iter().zip(x.data()) {
        assert!((g - 2.0 * v).abs() < 1e-12);
    }
}

#[test]
fn identity_inversion_recovers_the_target() {
    let net = identity([1, 6, 6]);
    let mut rng = rng(7);
    let x0 = uniform_tensor(&[1, 6, 6], &mut rng);
    let result = invert(&net, 0, &features(x0.data()), &unregularized()).unwrap();
    let last = result.trajectory.last().unwrap();
    assert!(result.converged, "ran {} iterations", result.iterations_run);
    assert!(last.feature < 1e-10, "{}", last.feature);
    let max_err = result.image.data().iter().zip(x0.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(max_err < 1e-5);
}

#[test]
fn stationary_start_stays_put() {
    let net = toy_net(8);
    let x0 = uniform_tensor(&[1, 16, 16], &mut rng(9));
    let target = net.extract_features(&x0, 2).unwrap();
    let cfg = InversionConfig {
        init: InitImage::Provided(x0.clone()),
        max_iterations: 5,
        ..unregularized()
    };
    let result = invert(&net, 2, &target, &cfg).unwrap();
    assert_eq!(result.image, x0);
    assert_eq!(result.trajectory[0].total, 0.0);
}

#[test]
fn plain_descent_is_monotone_on_a_quadratic() {
    let net = identity([1, 5, 5]);
    let target = uniform_tensor(&[1, 5, 5], &mut rng(10));
    let cfg = InversionConfig {
        momentum: 0.0,
        learning_rate: 0.1,
        max_iterations: 300,
        ..unregularized()
    };
    let result = invert(&net, 0, &features(target.data()), &cfg).unwrap();
    for pair in result.trajectory.windows(2) {
        assert!(pair[1].total <= pair[0].total);
    }
}

#[test]
fn toy_net_feature_loss_drops_a_hundredfold() {
    let net = toy_net(11);
    let known = &cnn_recon::synth::generate_stimuli(1, 16, 16, 12).unwrap()[0];
    let target = net.extract_features(known, 2).unwrap();
    let result = invert(&net, 2, &target, &InversionConfig::default()).unwrap();
    let (first, last) = (result.trajectory[0].feature, result.trajectory.last().unwrap().feature);
    assert!(result.iterations_run <= 2000);
    assert!(last <= 0.01 * first, "{first} -> {last}");
}

#[test]
fn trajectory_decomposes_and_runs_are_reproducible() {
    let net = toy_net(13);
    let target = net.extract_features(&uniform_tensor(&[1, 16, 16], &mut rng(14)), 2).unwrap();
    let cfg = InversionConfig {
        lambda_alpha: 1e-3,
        lambda_tv: 1e-2,
        max_iterations: 150,
        seed: 3,
        ..Default::default()
    };
    let a = invert(&net, 2, &target, &cfg).unwrap();
    for r in &a.trajectory {
        let sum = r.feature + cfg.lambda_alpha * r.alpha + cfg.lambda_tv * r.tv;
        assert!((r.total - sum).abs() <= 1e-12 * r.total.abs().max(1.0));
    }
    let b = invert(&net, 2, &target, &cfg).unwrap();
    assert_eq!(a, b);
    let other = invert(&net, 2, &target, &InversionConfig { seed: 4, ..cfg }).unwrap();
    assert_ne!(a.image, other.image);
}

#[test]
fn heavy_tv_smooths_the_result() {
    let net = toy_net(15);
    let target = net.extract_features(&uniform_tensor(&[1, 16, 16], &mut rng(16)), 2).unwrap();
    // The effective step is learning_rate·‖Φ0‖²; a heavy TV weight needs an
    // absolute step well inside the TV term's curvature bound.
    let energy: f64 = target.values.iter().map(|v| v * v).sum();
    let cfg = InversionConfig {
        lambda_tv: 10.0,
        learning_rate: 2e-3 / energy,
        max_iterations: 400,
        ..Default::default()
    };
    let result = invert(&net, 2, &target, &cfg).unwrap();
    let start = result.trajectory[0].tv;
    let end = tv_norm(&result.image, cfg.tv_beta).unwrap().0;
    assert!(end < start, "{start} -> {end}");
}
