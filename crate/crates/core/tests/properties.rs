use lcdiff::autodiff::Tape;
use lcdiff::colorlab::{rgb_to_ycbcr, swap_luminance, Image};
use lcdiff::freqlab::{haar_dwt, haar_idwt, make_masks, split_frequency};
use lcdiff::lcdn::{init_params, lcdn_forward, restoration_loss, LcdnConfig, LossWeights};
use lcdiff::lgdm::{omega, predict_x0, q_sample, NoiseSchedule};
use lcdiff::metrics::{psnr, psnr_from_mse, ssim};
use lcdiff::nn::Bound;
use lcdiff::weathersim::{clean_scene, synthesize, WeatherKind, WeatherSpec};
use lcdiff::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn image(h: usize, w: usize, seed: u64) -> Image {
    let t = Tensor::<f64>::uniform(&[1, 3, h, w], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
    Image::from_tensor(&t).unwrap()
}

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn achromatic_maps_to_half(g in 0.0f64..=1.0, h in 4usize..10, w in 4usize..10) {
        let ycc = rgb_to_ycbcr(&Image::filled(2 * h, 2 * w, [g, g, g]).unwrap()).unwrap();
        prop_assert!(ycc.chrom().iter().all(|&c| c == 0.5));
    }

    #[test]
    fn luminance_swap_is_an_involution(s1 in any::<u64>(), s2 in any::<u64>()) {
        let a = rgb_to_ycbcr(&image(8, 10, s1)).unwrap();
        let b = rgb_to_ycbcr(&image(8, 10, s2)).unwrap();
        let (ab, ba) = swap_luminance(&a, &b).unwrap();
        prop_assert_eq!(ab.chrom(), a.chrom());
        prop_assert_eq!(ba.chrom(), b.chrom());
        let (a2, b2) = swap_luminance(&ab, &ba).unwrap();
        prop_assert_eq!(a2, a);
        prop_assert_eq!(b2, b);
    }

    #[test]
    fn mask_complement_is_exact(h in 1usize..20, w in 1usize..20, r in 0.0f64..1.0) {
        let m = make_masks(2 * h, 2 * w, r).unwrap();
        prop_assert!(m.low().iter().zip(m.high()).all(|(a, b)| a + b == 1));
    }

    #[test]
    fn frequency_split_is_linear(
        h in 1usize..10, w in 1usize..10, alpha in -3.0f64..3.0, beta in -3.0f64..3.0, seed in any::<u64>()
    ) {
        let (h, w) = (2 * h, 2 * w);
        let m = make_masks(h, w, 0.25).unwrap();
        let x = randn(&[1, 2, h, w], seed);
        let y = randn(&[1, 2, h, w], seed ^ 1);
        let mix = x.zip_map(&y, |a, b| alpha * a + beta * b);
        let (sx, sy, sm) = (split_frequency(&x, &m).unwrap(), split_frequency(&y, &m).unwrap(), split_frequency(&mix, &m).unwrap());
        for (band_m, band_x, band_y) in [(&sm.low, &sx.low, &sy.low), (&sm.high, &sx.high, &sy.high)] {
            for ((a, b), c) in band_m.data().iter().zip(band_x.data()).zip(band_y.data()) {
                prop_assert!((a - (alpha * b + beta * c)).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn haar_preserves_energy_and_inverts(h in 1usize..12, w in 1usize..12, seed in any::<u64>()) {
        let x = randn(&[2, 2, 2 * h, 2 * w], seed);
        let bands = haar_dwt(&x).unwrap();
        let e = |t: &Tensor<f64>| t.data().iter().map(|v| v * v).sum::<f64>();
        let eb = e(&bands.ll) + e(&bands.lh) + e(&bands.hl) + e(&bands.hh);
        prop_assert!((eb - e(&x)).abs() <= 1e-6 * e(&x).max(1.0));
        let back = haar_idwt(&bands).unwrap();
        prop_assert!(back.data().iter().zip(x.data()).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn restoration_loss_is_nonnegative_and_zero_on_equal(s1 in any::<u64>(), s2 in any::<u64>()) {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::uniform(&[1, 3, 16, 16], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(s1)));
        let b = tape.constant(Tensor::uniform(&[1, 3, 16, 16], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(s2)));
        let w = LossWeights::default();
        prop_assert!(restoration_loss(a, a, &w).unwrap().item().abs() < 1e-12);
        prop_assert!(restoration_loss(a, b, &w).unwrap().item() >= 0.0);
    }

    #[test]
    fn schedule_is_monotone(steps in 2usize..400, lo in 1e-5f64..1e-2, span in 1e-4f64..0.3) {
        let s = NoiseSchedule::linear(steps, lo, lo + span).unwrap();
        for t in 1..=steps {
            prop_assert!(0.0 < s.beta(t) && s.beta(t) < 1.0);
            prop_assert!(0.0 < s.alpha_bar(t) && s.alpha_bar(t) < 1.0);
            if t > 1 {
                prop_assert!(s.beta(t) > s.beta(t - 1));
                prop_assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            }
        }
    }

    #[test]
    fn predict_x0_inverts_q_sample(t in 1usize..=200, seed in any::<u64>()) {
        let s = NoiseSchedule::linear(200, 1e-4, 0.02).unwrap();
        let x0 = randn(&[1, 3, 4, 4], seed);
        let eps = randn(&[1, 3, 4, 4], seed ^ 7);
        let back = predict_x0(&q_sample(&x0, t, &eps, &s).unwrap(), &eps, t, &s).unwrap();
        prop_assert!(back.data().iter().zip(x0.data()).all(|(a, b)| (a - b).abs() < 1e-5));
    }

    #[test]
    fn omega_decreases_from_one(steps in 1usize..1000, k in 0.01f64..10.0) {
        prop_assert_eq!(omega(0, steps, k), 1.0);
        prop_assert!((omega(steps, steps, k) - (-k).exp()).abs() < 1e-12);
        for t in 1..=steps.min(50) {
            prop_assert!(omega(t, steps, k) < omega(t - 1, steps, k));
        }
    }

    #[test]
    fn ssim_is_symmetric_and_bounded(s1 in any::<u64>(), s2 in any::<u64>()) {
        let (a, b) = (image(16, 16, s1), image(16, 16, s2));
        let ab = ssim(&a, &b).unwrap();
        prop_assert!((ab - ssim(&b, &a).unwrap()).abs() < 1e-9);
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_decreases_with_mse(m1 in 1e-8f64..1.0, m2 in 1e-8f64..1.0) {
        prop_assume!(m1 != m2);
        let (lo, hi) = if m1 < m2 { (m1, m2) } else { (m2, m1) };
        prop_assert!(psnr_from_mse(lo, 1.0) > psnr_from_mse(hi, 1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn weather_is_seed_deterministic(seed in any::<u64>(), sev in 1u8..=5, k in 0usize..7) {
        let clean = clean_scene(24, 24, seed).unwrap();
        let spec = WeatherSpec::new(WeatherKind::ALL[k], sev, seed).unwrap();
        prop_assert_eq!(synthesize(&clean, &spec).unwrap().to_bytes(), synthesize(&clean, &spec).unwrap().to_bytes());
    }

    #[test]
    fn severity_lowers_psnr(seed in 0u64..1000) {
        let clean = clean_scene(32, 32, seed).unwrap();
        for kind in [WeatherKind::Densefog, WeatherKind::Overcast, WeatherKind::Rainstreaks] {
            let scores: Vec<f64> = (1..=5)
                .map(|s| psnr(&synthesize(&clean, &WeatherSpec::new(kind, s, seed).unwrap()).unwrap(), &clean, 1.0).unwrap())
                .collect();
            prop_assert!(scores.windows(2).all(|w| w[1] < w[0]), "{kind}: {scores:?}");
        }
    }

    #[test]
    fn lcdn_forward_is_deterministic(seed in any::<u64>()) {
        let cfg = LcdnConfig { lrm_width: 4, lrm_blocks: 1, fcrm_features: 4, reduction: 2, ..LcdnConfig::default() };
        let p = init_params::<f64>(&cfg, seed).unwrap();
        let x = Tensor::<f64>::uniform(&[1, 3, 8, 8], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
        let run = || {
            let tape = Tape::new();
            let b = Bound::frozen(&tape, &p);
            (*lcdn_forward(&b, &cfg, tape.constant(x.clone())).unwrap().value()).clone()
        };
        prop_assert_eq!(run(), run());
    }
}
