mod common;

use cnn_recon::metrics::{
    chance_baseline, complex_pyramid, cwssim, gabor_factors, one_sample_ttest, paired_ttest, pearson, CwssimParams,
    PairScores,
};
use cnn_recon::synth::generate_stimuli;
use cnn_recon::Tensor;
use common::*;
use proptest::prelude::*;

/// Moves the image one pixel right, repeating the first column.
fn shift_right(img: &Tensor) -> Tensor {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let d = img.data();
    Tensor::from_fn(img.shape(), |i| {
        let (r, c) = (i / w % h, i % w);
        d[r * w + c.saturating_sub(1)]
    })
}

#[test]
fn impulse_energy_matches_the_filter_bank() {
    let params = CwssimParams::uniform(1, 4);
    let (h, w) = (21, 21);
    let impulse = Tensor::from_fn(&[h, w], |i| if i == 10 * w + 10 { 1.0 } else { 0.0 });
    let bands = complex_pyramid(&impulse, &params).unwrap();
    let measured: f64 = bands.iter().flat_map(|b| &b.coeffs).map(|c| c.norm_sqr()).sum();
    // A centred impulse away from the border reproduces each separable
    // kernel, whose energy is the product of its factors' energies.
    let expected: f64 = gabor_factors(4)
        .iter()
        .map(|(hx, hy)| hx.iter().map(|c| c.norm_sqr()).sum::<f64>() * hy.iter().map(|c| c.norm_sqr()).sum::<f64>())
        .sum();
    assert!(measured > 0.0);
    assert!((measured - expected).abs() < 1e-12 * expected, "{measured} vs {expected}");
}

#[test]
fn zero_image_has_zero_subbands() {
    let bands = complex_pyramid(&Tensor::zeros(&[16, 16]), &CwssimParams::default()).unwrap();
    assert!(bands.iter().flat_map(|b| &b.coeffs).all(|c| c.norm_sqr() == 0.0));
    assert_eq!(bands.iter().map(|b| (b.height, b.width)).next_back(), Some((4, 4)));
}

#[test]
fn pyramid_is_linear() {
    let mut rng = rng(1);
    let a = uniform_tensor(&[24, 20], &mut rng);
    let b = gaussian_tensor(&[24, 20], &mut rng);
    let mut sum = a.clone();
    sum.axpy(1.0, &b);
    let params = CwssimParams::default();
    let (pa, pb, ps) = (
        complex_pyramid(&a, &params).unwrap(),
        complex_pyramid(&b, &params).unwrap(),
        complex_pyramid(&sum, &params).unwrap(),
    );
    for ((x, y), s) in pa.iter().zip(&pb).zip(&ps) {
        for ((cx, cy), cs) in x.coeffs.iter().zip(&y.coeffs).zip(&s.coeffs) {
            assert!((cx + cy - cs).norm() < 1e-12);
        }
    }
}

#[test]
fn one_pixel_shift_keeps_level_one_magnitudes() {
    let img = &generate_stimuli(1, 32, 32, 3).unwrap()[0];
    let shifted = shift_right(img);
    let params = CwssimParams::uniform(1, 4);
    let (pa, pb) = (complex_pyramid(img, &params).unwrap(), complex_pyramid(&shifted, &params).unwrap());
    for (a, b) in pa.iter().zip(&pb) {
        let w = a.width;
        // Interior coefficients, aligned by the shift.
        let (mut ma, mut mb) = (Vec::new(), Vec::new());
        for r in 4..a.height - 4 {
            for c in 4..w - 5 {
                ma.push(a.coeffs[r * w + c].norm());
                mb.push(b.coeffs[r * w + c + 1].norm());
            }
        }
        let r = pearson_oracle(&ma, &mb).unwrap();
        assert!(r > 0.95, "orientation {}: magnitude correlation {r}", a.orientation);
    }
}

#[test]
fn cwssim_tolerates_small_shifts() {
    let params = CwssimParams::default();
    for (i, img) in generate_stimuli(4, 32, 32, 8).unwrap().iter().enumerate() {
        let s = cwssim(img, &shift_right(img), &params).unwrap();
        assert!(s >= 0.85, "stimulus {i}: shifted score {s}");
    }
}

#[test]
fn noise_scores_below_mismatched_stimuli() {
    let params = CwssimParams::default();
    let stimuli = generate_stimuli(20, 32, 32, 21).unwrap();
    let baseline = chance_baseline(&stimuli, &stimuli, 200, 4, &params).unwrap();
    let mut rng = rng(5);
    let noise_mean = stimuli
        .iter()
        .map(|img| {
            let mut noise = gaussian_tensor(img.shape(), &mut rng);
            let scale = (img.norm_sq() / noise.norm_sq()).sqrt();
            noise = noise.scale(scale);
            cwssim(img, &noise, &params).unwrap()
        })
        .sum::<f64>()
        / stimuli.len() as f64;
    assert!(noise_mean < baseline.quantile(0.95), "{noise_mean} vs {}", baseline.quantile(0.95));
}

#[test]
fn chance_baseline_against_perfect_reconstructions() {
    let params = CwssimParams::default();
    let stimuli = generate_stimuli(6, 16, 16, 2).unwrap();
    let pairs = PairScores::compute(&stimuli, &stimuli, &params).unwrap();
    assert!(pairs.matched().iter().all(|&s| (s - 1.0).abs() < 1e-12));
    let a = pairs.chance_baseline(1, 9).unwrap();
    assert!(a.mean < 1.0);
    assert_eq!(a, pairs.chance_baseline(1, 9).unwrap());
    assert!(pairs.chance_baseline(0, 9).is_err());
    assert_eq!(a.percentile(1.0), 1.0);
}

#[test]
fn pearson_hand_example() {
    // Means 2.5 and 2.75; Σdx·dy = 6.5, Σdx² = 5, Σdy² = 8.75.
    let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 5.0]).unwrap();
    assert!((r - 6.5 / (5.0f64 * 8.75).sqrt()).abs() < 1e-15);
}

#[test]
fn paired_ttest_matches_the_formula() {
    let mut rng = rng(12);
    let a: Vec<f64> = (0..15).map(|_| gaussian(&mut rng) + 0.3).collect();
    let b: Vec<f64> = (0..15).map(|_| gaussian(&mut rng)).collect();
    let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let test = paired_ttest(&a, &b).unwrap();
    assert!((test.t - mean / (sd / n.sqrt())).abs() < 1e-12);
    assert_eq!(test.df, n - 1.0);
    let p_two = 2.0 * student_t_cdf_oracle(-test.t.abs(), 14);
    assert!((test.p_two_sided - p_two).abs() < 1e-10);
    let shifted: Vec<f64> = b.iter().map(|v| v + 2.0).collect();
    assert!(paired_ttest(&shifted, &b).is_err());
}

fn image(seed: u64) -> Tensor {
    uniform_tensor(&[16, 16], &mut rng(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cwssim_is_symmetric_and_bounded(s1 in any::<u64>(), s2 in any::<u64>()) {
        let params = CwssimParams::uniform(2, 4);
        let (a, b) = (image(s1), image(s2));
        let ab = cwssim(&a, &b, &params).unwrap();
        prop_assert_eq!(ab, cwssim(&b, &a, &params).unwrap());
        prop_assert!(ab > 0.0 && ab <= 1.0);
        prop_assert!((cwssim(&a, &a, &params).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn pearson_is_affine_invariant(
        a in prop::collection::vec(-100.0f64..100.0, 3..40),
        p in 0.01f64..50.0,
        q in -50.0f64..50.0,
        seed in any::<u64>(),
    ) {
        let mut rng = rng(seed);
        let b: Vec<f64> = a.iter().map(|_| gaussian(&mut rng)).collect();
        let Ok(r) = pearson(&a, &b) else { return Ok(()) };
        prop_assert!((-1.0..=1.0).contains(&r));
        let moved: Vec<f64> = b.iter().map(|v| p * v + q).collect();
        prop_assert!((pearson(&a, &moved).unwrap() - r).abs() < 1e-12);
        let flipped: Vec<f64> = b.iter().map(|v| -p * v + q).collect();
        prop_assert!((pearson(&a, &flipped).unwrap() + r).abs() < 1e-12);
    }

    #[test]
    fn symmetric_samples_give_zero_t(half in prop::collection::vec(0.1f64..10.0, 1..10), mu in -5.0f64..5.0) {
        let values: Vec<f64> = half.iter().flat_map(|d| [mu + d, mu - d]).collect();
        let test = one_sample_ttest(&values, mu).unwrap();
        prop_assert!(test.t.abs() < 1e-9);
        prop_assert!((test.p_two_sided - 1.0).abs() < 1e-8);
    }
}
