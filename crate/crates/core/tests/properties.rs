mod common;

use advmil::data::{read_bag, write_bag, TimeNormalizer};
use advmil::discriminator::Discriminator;
use advmil::eval::{c_index, mae, pair_counts, regions_kept, RiskRecord};
use advmil::generator::{EncoderKind, Generator, NoiseCode};
use advmil::losses::{d_loss, g_adv_loss, sl_loss, SlPair};
use advmil::rng::rng_for;
use advmil::tensors::BagTensors;
use advmil::trainer::{mask_labels, unlabeled_folds};
use common::{brute_force_counts, random_bag, small_discriminator, small_generator};
use proptest::prelude::*;

fn records() -> impl Strategy<Value = Vec<RiskRecord>> {
    prop::collection::vec((0u8..6, 0u8..2, -3i8..3), 2..40).prop_map(|v| {
        v.into_iter()
            .map(|(t, delta, risk)| RiskRecord {
                t: f64::from(t) / 5.0,
                delta,
                risk: f64::from(risk) * 0.25,
            })
            .collect()
    })
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_for(seed, &[]));
    idx
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn pair_counts_match_enumeration(recs in records()) {
        let p = pair_counts(&recs);
        prop_assert_eq!((p.comparable, p.concordant, p.tied), brute_force_counts(&recs));
    }

    #[test]
    fn c_index_depends_only_on_risk_order(recs in records()) {
        let Ok(base) = c_index(&recs) else { return Ok(()); };
        prop_assert!((0.0..=1.0).contains(&base));
        let doubled: Vec<RiskRecord> = recs.iter().map(|r| RiskRecord { risk: 2.0 * r.risk - 7.0, ..*r }).collect();
        let ranked: Vec<RiskRecord> = recs
            .iter()
            .map(|r| RiskRecord { risk: recs.iter().filter(|o| o.risk < r.risk).count() as f64, ..*r })
            .collect();
        prop_assert_eq!(c_index(&doubled).unwrap(), base);
        prop_assert_eq!(c_index(&ranked).unwrap(), base);
        let reversed: Vec<RiskRecord> = recs.iter().rev().copied().collect();
        prop_assert_eq!(c_index(&reversed).unwrap(), base);
    }

    #[test]
    fn mae_is_the_supervision_loss(v in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0u8..2), 1..30)) {
        let pairs: Vec<SlPair> = v.iter().map(|&(h, t, d)| SlPair::new(h, t, d)).collect();
        prop_assert_eq!(mae(&pairs), sl_loss(&pairs));
        prop_assert!(sl_loss(&pairs) >= 0.0);
        let exact: Vec<SlPair> = v.iter().map(|&(_, t, d)| SlPair::new(t, t, d)).collect();
        prop_assert_eq!(sl_loss(&exact), 0.0);
    }

    #[test]
    fn censored_estimates_past_the_horizon_cost_nothing(t in 0.0f64..1.0, extra in 0.0f64..1.0) {
        prop_assert_eq!(sl_loss(&[SlPair::new(t + extra, t, 1)]), 0.0);
    }

    #[test]
    fn adversarial_losses_are_finite(real in prop::collection::vec(0.0f64..=1.0, 0..8),
                                     fake in prop::collection::vec(0.0f64..=1.0, 1..8)) {
        let d = d_loss(&real, &fake);
        prop_assert!(d.is_finite() && d >= 0.0);
        let g = g_adv_loss(&fake);
        prop_assert!(g.is_finite() && g >= 0.0);
    }

    #[test]
    fn unlabeled_folds_partition_evenly(n in 0usize..200, k in 1usize..12, seed in any::<u64>()) {
        prop_assume!(n == 0 || k <= n);
        let folds = unlabeled_folds(n, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn too_many_folds_is_an_error(n in 1usize..20, extra in 1usize..5) {
        prop_assert!(unlabeled_folds(n, n + extra, 0).is_err());
    }

    #[test]
    fn label_mask_partitions_training_positions(n in 1usize..300, ratio in 0.01f64..=1.0, seed in any::<u64>()) {
        let (lab, unl) = mask_labels(n, ratio, seed).unwrap();
        prop_assert_eq!(lab.len(), ((ratio * n as f64).round() as usize).clamp(1, n));
        let mut all = [lab, unl].concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn normalization_is_idempotent(ts in prop::collection::vec(0.0f64..5000.0, 1..50)) {
        let first = TimeNormalizer::fit(ts.iter().copied()).unwrap();
        let once: Vec<f64> = ts.iter().map(|&t| first.apply(t)).collect();
        prop_assert!(once.iter().all(|t| (0.0..=1.0).contains(t)));
        let second = TimeNormalizer::fit(once.iter().copied()).unwrap();
        let twice: Vec<f64> = once.iter().map(|&t| second.apply(t)).collect();
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() <= 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn regions_kept_is_monotone(n in 1usize..500, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (k_lo, k_hi) = (regions_kept(n, lo), regions_kept(n, hi));
        prop_assert!(k_hi >= 1 && k_hi <= k_lo && k_lo <= n);
        prop_assert_eq!(regions_kept(n, 0.0), n);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn bag_container_round_trips(regions in 1usize..6, side in 1usize..4, c in 1usize..9, seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let bag = random_bag("p-17", regions, side * side, c, &mut rng_for(seed, &[]));
        let path = dir.path().join("p-17.amb");
        write_bag(&bag, &path).unwrap();
        prop_assert_eq!(read_bag(&path).unwrap(), bag);
    }

    #[test]
    fn scores_ignore_region_order(regions in 1usize..6, seed in any::<u64>(), t in 0.0f64..1.0) {
        let c = 6;
        let mut rng = rng_for(seed, &[1]);
        let bag = random_bag("p", regions, 4, c, &mut rng);
        let permuted = bag.keep_regions(&shuffled(regions, seed));
        let (a, b) = (BagTensors::new(&bag).unwrap(), BagTensors::new(&permuted).unwrap());

        let disc = Discriminator::new(small_discriminator(c), &mut rng_for(seed, &[2])).unwrap();
        let (sa, sb) = (disc.score(&a, t), disc.score(&b, t));
        prop_assert!((sa - sb).abs() <= 1e-12, "{sa} vs {sb}");

        for kind in [EncoderKind::Attention, EncoderKind::Cluster] {
            let mut cfg = small_generator(c, kind);
            cfg.noise.code = NoiseCode::NONE;
            let g = Generator::new(cfg, &mut rng_for(seed, &[3])).unwrap();
            let (za, zb) = (g.encode_value(&a), g.encode_value(&b));
            let diff = (&za - &zb).mapv(f64::abs).fold(0.0f64, |m, &x| m.max(x));
            prop_assert!(diff <= 1e-12, "{kind:?} moved by {diff}");
        }
    }
}
