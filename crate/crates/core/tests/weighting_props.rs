use std::collections::BTreeMap;

use curriseg::weighting::{
    pixel_weight_matrix, sample_weights, temporal_stats, weights_from_normalized, BetaVariant, DifficultyBuffer,
    PixelWeightConfig, SampleWeightParams, SigmaVariant, WeightAblation,
};
use curriseg::grid::Grid2D;
use proptest::prelude::*;

fn params() -> impl Strategy<Value = SampleWeightParams> {
    (0.0f64..1.0, 0.05f64..0.5, 0.0f64..0.9, 0usize..3, any::<[bool; 3]>()).prop_map(|(s, g, w, v, d)| {
        SampleWeightParams {
            sigma_star: s,
            gamma: g,
            w_min_s: w,
            sigma_variant: [SigmaVariant::Gaussian, SigmaVariant::Triangular, SigmaVariant::Quadratic][v],
            ablation: WeightAblation { drop_mu: d[0], drop_sigma: d[1], drop_out: d[2] },
        }
    })
}

fn history(mean: f64, swing: f64, len: usize) -> DifficultyBuffer<f64> {
    let mut b = DifficultyBuffer::new(10);
    for i in 0..len {
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        b.push((mean + sign * swing).clamp(0.0, 1.0));
    }
    b
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn weights_stay_between_floor_and_one(p in params(), m in 0.0f64..=1.0, v in 0.0f64..=1.0) {
        let s = weights_from_normalized(0.0, 0.0, m, v, &p);
        prop_assert!(s.w >= p.w_min_s - 1e-12 && s.w <= 1.0 + 1e-12);
        for f in [s.w_mu, s.w_sigma, s.w_out] {
            prop_assert!((0.0..=1.0).contains(&f));
        }
    }

    #[test]
    fn pixel_weights_respect_the_floor(
        probs in prop::collection::vec(0.0f64..=1.0, 1..40),
        t_c in 1usize..80,
        t in 0usize..80,
        exp in any::<bool>(),
    ) {
        let cfg = PixelWeightConfig {
            w_min: 0.1,
            t_c,
            beta_variant: if exp { BetaVariant::Exponential } else { BetaVariant::Linear },
        };
        let grid = Grid2D::new(1, probs.len(), probs).unwrap();
        let w = pixel_weight_matrix(&grid, t.min(t_c), &cfg).unwrap();
        prop_assert!(w.as_slice().iter().all(|&v| (0.1 - 1e-12..=1.0 + 1e-12).contains(&v)));
    }

    #[test]
    fn default_floor_holds(m in 0.0f64..=1.0, v in 0.0f64..=1.0) {
        prop_assert!(weights_from_normalized(0.0, 0.0, m, v, &SampleWeightParams::default()).w >= 0.1);
    }

    #[test]
    fn harder_on_average_never_weighs_more(p in params(), m1 in 0.0f64..=1.0, m2 in 0.0f64..=1.0, v in 0.0f64..=1.0) {
        let (lo, hi) = if m1 <= m2 { (m1, m2) } else { (m2, m1) };
        let easy = weights_from_normalized(0.0, 0.0, lo, v, &p);
        let hard = weights_from_normalized(0.0, 0.0, hi, v, &p);
        prop_assert!(hard.w <= easy.w + 1e-12);
    }

    #[test]
    fn variance_weight_peaks_at_target(p in params(), v in 0.0f64..=1.0) {
        let at = weights_from_normalized(0.0, 0.0, 0.3, p.sigma_star, &p);
        let off = weights_from_normalized(0.0, 0.0, 0.3, v, &p);
        prop_assert!(off.w_sigma <= at.w_sigma + 1e-12);
    }

    #[test]
    fn buffer_keeps_the_latest_entries(xs in prop::collection::vec(0.0f64..=1.0, 1..30), cap in 1usize..12) {
        let mut b = DifficultyBuffer::new(cap);
        xs.iter().for_each(|&x| b.push(x));
        let tail: Vec<f64> = xs[xs.len().saturating_sub(cap)..].to_vec();
        prop_assert_eq!(b.entries().collect::<Vec<_>>(), tail.clone());
        let (mu, var) = temporal_stats(&b).unwrap();
        let n = tail.len() as f64;
        let m = tail.iter().sum::<f64>() / n;
        prop_assert!((mu - m).abs() < 1e-12);
        prop_assert!((var - tail.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).abs() < 1e-12);
    }

    /// Persistently hard, stable samples (mislabelled) end up weighted below
    /// every sample that is hard but still moving (being learnt).
    #[test]
    fn stable_high_difficulty_is_downweighted(
        outliers in 1usize..6,
        clean in 3usize..20,
        jitter in 0.0f64..0.02,
    ) {
        let mut cohort = BTreeMap::new();
        for i in 0..clean {
            let b = history(0.3 + 0.02 * i as f64, 0.15 + jitter * i as f64, 10);
            cohort.insert(i, temporal_stats(&b).unwrap());
        }
        for j in 0..outliers {
            let b = history(0.95, jitter * 0.5, 10);
            cohort.insert(1000 + j, temporal_stats(&b).unwrap());
        }
        let p = SampleWeightParams::default();
        let w = sample_weights(&cohort, &p).unwrap();
        let worst_clean = w.iter().filter(|(k, _)| **k < 1000).map(|(_, s)| s.w).fold(1.0, f64::min);
        for (_, s) in w.iter().filter(|(k, _)| **k >= 1000) {
            prop_assert!(s.w < worst_clean);
            prop_assert!((s.w - p.w_min_s).abs() < 1e-12, "maximal mean pins the weight to the floor");
        }
    }

    /// With clean variances spread around the target the margin is wide.
    #[test]
    fn outlier_margin_with_spread_variances(clean in 3usize..20, outliers in 1usize..6) {
        let mut cohort = BTreeMap::new();
        // one sample sets the variance range, the rest sit at half of it
        cohort.insert(0, temporal_stats(&history(0.4, 0.2, 10)).unwrap());
        for i in 1..clean {
            let b = history(0.3 + 0.01 * i as f64, 0.2 / 2f64.sqrt(), 10);
            cohort.insert(i, temporal_stats(&b).unwrap());
        }
        for j in 0..outliers {
            cohort.insert(1000 + j, temporal_stats(&history(0.95, 0.0, 10)).unwrap());
        }
        let w = sample_weights(&cohort, &SampleWeightParams::default()).unwrap();
        let mean = |out: bool| {
            let v: Vec<f64> = w.iter().filter(|(k, _)| (**k >= 1000) == out).map(|(_, s)| s.w).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        prop_assert!(mean(true) < 0.7 * mean(false));
    }
}

#[test]
fn empty_buffer_has_no_statistics() {
    assert_eq!(temporal_stats(&DifficultyBuffer::<f64>::new(3)), None);
    assert!(sample_weights::<f64>(&BTreeMap::new(), &SampleWeightParams::default()).is_err());
}

#[test]
fn degenerate_cohort_is_neutral() {
    let cohort: BTreeMap<usize, (f64, f64)> = (0..4).map(|i| (i, (0.4, 0.01))).collect();
    let p = SampleWeightParams::default();
    for s in sample_weights(&cohort, &p).unwrap().values() {
        assert_eq!(s.mu_norm, 0.0);
        assert_eq!(s.var_norm, p.sigma_star);
        assert_eq!(s.w, 1.0);
    }
}
