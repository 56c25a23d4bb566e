mod common;

use ctharm_core::codec::{init_codec, LatentVector};
use ctharm_core::diffusion::{build_schedule, combined_loss, diffusion_loss, sample_trajectory, NoiseSchedule};
use ctharm_core::image::Mask;
use ctharm_core::metrics::{ccc, re_curve_from_errors, relative_error, ReproducibleCount};
use ctharm_core::radiomics::{extract_all, glcm_matrix, Quantized, RadiomicsConfig, FOUR_DIRECTIONS};
use ctharm_core::ImageSlice;
use proptest::prelude::*;

use common::{micro_codec_config, OracleDenoiser};

fn group(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e3f64..1e3, len)
}

fn paired_groups() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..30).prop_flat_map(|n| (group(n), group(n)))
}

fn non_constant(v: &[f64]) -> bool {
    v.iter().any(|x| *x != v[0])
}

fn grid() -> impl Strategy<Value = Quantized> {
    (2usize..9, 2usize..9, 2usize..7).prop_flat_map(|(h, w, n)| {
        prop::collection::vec(0u16..=n as u16, h * w)
            .prop_filter("non-empty", |l| l.iter().any(|&v| v > 0))
            .prop_map(move |l| Quantized::from_levels(h, w, n, l).unwrap())
    })
}

proptest! {
    #[test]
    fn re_is_non_negative(s in -1e6f64..1e6, t in -1e6f64..1e6) {
        if let Some(re) = relative_error(s, t).unwrap() {
            prop_assert!(re >= 0.0);
        }
    }

    #[test]
    fn re_is_asymmetric(t in 1.0f64..100.0, k in 1.5f64..4.0) {
        // Doubling the target halves the error; the two directions differ.
        let forward = relative_error(k * t, t).unwrap().unwrap();
        let backward = relative_error(t, k * t).unwrap().unwrap();
        prop_assert!((forward - (k - 1.0)).abs() < 1e-12);
        prop_assert!((backward - (k - 1.0) / k).abs() < 1e-12);
        prop_assert!(forward > backward);
    }

    #[test]
    fn ccc_bounded_and_attenuated((s, t) in paired_groups()) {
        let r = ccc(&s, &t).unwrap();
        if let Some(c) = r.ccc {
            prop_assert!((-1.0..=1.0).contains(&c));
            if let Some(rho) = r.pearson {
                prop_assert!(c.abs() <= rho.abs() + 1e-12);
            }
        }
    }

    #[test]
    fn ccc_symmetric((s, t) in paired_groups()) {
        let a = ccc(&s, &t).unwrap().ccc;
        let b = ccc(&t, &s).unwrap().ccc;
        match (a, b) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
            (a, b) => prop_assert_eq!(a, b),
        }
    }

    #[test]
    fn ccc_self_is_one(x in group(12)) {
        prop_assume!(non_constant(&x));
        prop_assert!((ccc(&x, &x).unwrap().ccc.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ccc_penalizes_scale(x in group(12)) {
        prop_assume!(non_constant(&x));
        let doubled: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        prop_assert!(ccc(&x, &doubled).unwrap().ccc.unwrap() < 1.0);
    }

    #[test]
    fn re_curve_non_decreasing(
        errors in prop::collection::vec(prop::option::weighted(0.9, 0.0f64..2.0), 1..60),
        mut thresholds in prop::collection::vec(0.0f64..2.5, 1..12),
    ) {
        thresholds.sort_by(f64::total_cmp);
        let curve = re_curve_from_errors(&errors, &thresholds).unwrap();
        prop_assert!(curve.windows(2).all(|w| w[0].1 <= w[1].1));
        for (th, n) in &curve {
            prop_assert_eq!(*n, ReproducibleCount::from_errors(&errors, *th).count);
        }
    }

    #[test]
    fn stricter_threshold_never_counts_more(
        errors in prop::collection::vec(prop::option::of(0.0f64..1.0), 1..60),
        a in 0.0f64..1.0,
        b in 0.0f64..1.0,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(
            ReproducibleCount::from_errors(&errors, lo).count <= ReproducibleCount::from_errors(&errors, hi).count
        );
    }

    #[test]
    fn glcm_sums_to_one_and_is_symmetric(q in grid(), k in 0usize..4) {
        if let Ok(p) = glcm_matrix(&q, FOUR_DIRECTIONS[k]) {
            let n = q.n_levels;
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(p[i * n + j], p[j * n + i]);
                }
            }
        }
    }

    #[test]
    fn features_invariant_under_translation(seed in any::<u64>(), dr in 0usize..5, dc in 0usize..5) {
        let cfg = RadiomicsConfig::default();
        let mut rng = common::Rng::new(seed);
        let (img, mask) = common::random_image(&mut rng, 8, 8, &cfg);
        let at = |r0: usize, c0: usize| {
            let mut px = vec![-600.0; 12 * 12];
            let mut bits = vec![false; 12 * 12];
            for r in 0..8 {
                for c in 0..8 {
                    px[(r + r0) * 12 + c + c0] = img.get(r, c);
                    bits[(r + r0) * 12 + c + c0] = mask.contains(r, c);
                }
            }
            extract_all(&ImageSlice::new(12, 12, px).unwrap(), &Mask::new(12, 12, bits).unwrap(), &cfg).unwrap()
        };
        prop_assert_eq!(at(0, 0).values(), at(dr, dc).values());
    }

    #[test]
    fn schedules_are_monotone(steps in 2usize..300, lo in 1e-5f64..1e-2, span in 1e-4f64..0.4) {
        let s = build_schedule(steps, lo, lo + span).unwrap();
        prop_assert!(s.alpha_bar.windows(2).all(|w| w[1] < w[0]));
        prop_assert!(s.alpha_bar.iter().all(|&a| a > 0.0 && a < 1.0));
    }

    #[test]
    fn diffusion_loss_zero_only_for_exact_noise(
        z in prop::collection::vec(-2.0f64..2.0, 4),
        eta in prop::collection::vec(-2.0f64..2.0, 4),
        off in prop::collection::vec(-1.0f64..1.0, 4),
        t in 1usize..10,
    ) {
        prop_assert_eq!(combined_loss(&eta, &eta, 1.0), 0.0);
        let l = combined_loss(&eta, &off, 1.0);
        prop_assert!(l >= 0.0);
        prop_assert_eq!(l == 0.0, eta == off);

        // An oracle predictor that knows z_B reproduces eta, so the loss
        // vanishes up to rounding.
        let schedule = build_schedule(10, 1e-3, 0.2).unwrap();
        let model = OracleDenoiser { x0: z.clone(), schedule: schedule.clone() };
        let zero = LatentVector(vec![0.0; 4]);
        let l = diffusion_loss(&model, &zero, &LatentVector(z), t, &LatentVector(eta), &schedule, 1.0).unwrap();
        prop_assert!((0.0..1e-12).contains(&l));
    }

    #[test]
    fn sampler_is_deterministic(seed in any::<u64>()) {
        let schedule = NoiseSchedule::from_betas(vec![0.05, 0.1, 0.2]).unwrap();
        let model = OracleDenoiser { x0: vec![0.5, -0.25, 1.0], schedule: schedule.clone() };
        let cond = LatentVector(vec![0.0; 3]);
        let a = sample_trajectory(&model, &cond, &schedule, None, seed).unwrap();
        let b = sample_trajectory(&model, &cond, &schedule, None, seed).unwrap();
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn codec_shapes(px in prop::collection::vec(-1024.0f64..3071.0, 16)) {
        let model = init_codec(&micro_codec_config()).unwrap();
        let img = ImageSlice::new(4, 4, px).unwrap();
        let z = model.encode(&img).unwrap();
        prop_assert_eq!(z.len(), model.latent_dim());
        prop_assert_eq!(model.decode(&z).unwrap().dims(), (4, 4));
        prop_assert!(model.decode(&LatentVector(vec![0.0; model.latent_dim() + 1])).is_err());
        prop_assert!(model.encode(&ImageSlice::filled(4, 8, 0.0).unwrap()).is_err());
    }
}
