mod common;

use ogtt_core::config::ExperimentConfig;
use ogtt_core::compare::{compare, compare_designs, GrowthSchedule, Verdict};
use ogtt_core::search::{enumerate_designs, tournament};
use ogtt_core::seeding::{rng_from_seed, StreamKey};
use ogtt_core::utility::{
    estimate_utility, extend_estimate, DesignUtilityEstimate, UtilitySample, UtilitySampler,
};
use ogtt_core::validation::{fit_data, surrogate_utility, surrogate_utility_given, synthetic_cohort, FitSettings};
use ogtt_core::{Design, PatientParams, Result};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use common::*;

fn estimate_from(values: &[f64]) -> DesignUtilityEstimate {
    let samples = values
        .iter()
        .enumerate()
        .map(|(i, &u)| UtilitySample {
            replicate: i as u64,
            seed: i as u64,
            attempt: 0,
            u_hat: u,
            generating_params: PatientParams::new(1.0, 1.0, 0.5, 80.0),
        })
        .collect();
    DesignUtilityEstimate::from_samples(Design::proposed(), StreamKey::new(0, "t"), 1, samples, Vec::new())
}

#[test]
fn single_patient_utility_matches_posterior_algebra() {
    let sampler = flat_sampler(100, 15);
    let model = &sampler.model;
    let design = Design::proposed();
    let truth = PatientParams::new(0.0, 0.0, 0.5, FLAT_ATOMS[0]);
    let n = design.len() as f64;
    let p = 1.0 / PRIOR_VAR + n / (SIGMA * SIGMA);
    let bias = (PRIOR_MEAN - truth.g0) / (PRIOR_VAR * p);
    let exact = -3.0 * (1.0 / p + bias * bias + n / (SIGMA * SIGMA * p * p));

    let reps = 300;
    let us: Vec<f64> = (0..reps)
        .map(|r| model.utility_for_patient(&truth, &design, &mut rng_from_seed(1000 + r)).unwrap())
        .collect();
    let se = (sample_variance(&us) / reps as f64).sqrt();
    assert!((mean(&us) - exact).abs() < 3.0 * se, "{} vs {exact} (se {se})", mean(&us));
}

#[test]
fn growing_replays_and_narrows() {
    let sampler = flat_sampler(20, 5);
    let design = Design::full();
    let stream = StreamKey::new(4, "grow");
    let mut est = estimate_utility(&sampler, &design, &stream, 40).unwrap();
    let first = est.clone();
    let mut previous = est.variance_of_mean;
    for _ in 0..3 {
        est = extend_estimate(&sampler, &est, est.t1()).unwrap();
        assert!(est.variance_of_mean < previous);
        previous = est.variance_of_mean;
    }
    assert_eq!(est.t1(), 320);
    assert_eq!(&est.samples[..40], &first.samples[..]);
    let direct = estimate_utility(&sampler, &design, &stream, 320).unwrap();
    assert_eq!(direct, est);
}

proptest! {
    #[test]
    fn comparison_is_antisymmetric(
        a in prop::collection::vec(-500.0f64..0.0, 30..60),
        b in prop::collection::vec(-500.0f64..0.0, 30..60),
        alpha in 0.001f64..0.2,
    ) {
        let (ea, eb) = (estimate_from(&a), estimate_from(&b));
        let ab = compare(&ea, &eb, alpha).unwrap();
        let ba = compare(&eb, &ea, alpha).unwrap();
        prop_assert_eq!(ab.verdict, ba.verdict.mirror());
        prop_assert!((ab.z + ba.z).abs() <= 1e-9 * (1.0 + ab.z.abs()));
    }

    #[test]
    fn comparison_ignores_shared_affine_rescaling(
        a in prop::collection::vec(-500.0f64..0.0, 30..60),
        b in prop::collection::vec(-500.0f64..0.0, 30..60),
        shift in -1e3f64..1e3,
        scale in 0.01f64..100.0,
    ) {
        let z = compare(&estimate_from(&a), &estimate_from(&b), 0.05).unwrap().z;
        let map = |v: &[f64]| v.iter().map(|x| scale * x + shift).collect::<Vec<_>>();
        let z2 = compare(&estimate_from(&map(&a)), &estimate_from(&map(&b)), 0.05).unwrap().z;
        prop_assert!((z - z2).abs() <= 1e-6 * (1.0 + z.abs()));
    }

    #[test]
    fn enumeration_is_complete_and_valid(k in 1usize..=9) {
        let grid: Vec<u32> = (1..=8).map(|i| 15 * i).collect();
        let designs = enumerate_designs(k, &grid).unwrap();
        let choose = (0..k - 1).fold(1usize, |acc, i| acc * (8 - i) / (i + 1));
        prop_assert_eq!(designs.len(), choose);
        let mut sorted = designs.clone();
        sorted.sort();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), designs.len());
        for d in &designs {
            prop_assert_eq!(d.len(), k);
            prop_assert_eq!(d.minutes()[0], 0);
            let back: Design = serde_json::from_str(&serde_json::to_string(d).unwrap()).unwrap();
            prop_assert_eq!(&back, d);
            prop_assert_eq!(Design::from_minutes(d.minutes().to_vec()).unwrap(), d.clone());
        }
    }
}

#[test]
fn more_replicates_leave_fewer_inconclusive_verdicts() {
    let sampler = flat_sampler(20, 5);
    let (a, b) = (Design::proposed(), Design::from_minutes(vec![0, 60, 90, 120]).unwrap());
    let reps = 60;
    let rates: Vec<f64> = [30usize, 120, 480]
        .iter()
        .map(|&t1| {
            let inconclusive = (0..reps)
                .filter(|r| {
                    let s = StreamKey::new(2, format!("power/{t1}/{r}"));
                    let ea = estimate_utility(&sampler, &a, &s.child("a"), t1).unwrap();
                    let eb = estimate_utility(&sampler, &b, &s.child("b"), t1).unwrap();
                    compare(&ea, &eb, 0.05).unwrap().verdict == Verdict::Inconclusive
                })
                .count();
            inconclusive as f64 / reps as f64
        })
        .collect();
    assert!(rates.windows(2).all(|w| w[1] <= w[0]), "{rates:?}");
    assert!(rates[0] > rates[2], "{rates:?}");
}

/// Utility decreasing in the distance of the design's mean time from one hour.
struct Peaked;

impl UtilitySampler for Peaked {
    fn inner_draws(&self) -> usize {
        1
    }
    fn draw(&self, design: &Design, seed: u64) -> Result<(f64, PatientParams)> {
        let m = design.minutes();
        let centre = m.iter().sum::<u32>() as f64 / m.len() as f64;
        let noise: f64 = rng_from_seed(seed).sample(StandardNormal);
        Ok((-(centre - 60.0).abs() + 2.0 * noise, PatientParams::new(1.0, 1.0, 0.5, 80.0)))
    }
}

#[test]
fn clear_winner_survives_any_ladder_order() {
    let mut designs = enumerate_designs(3, &[30, 60, 90, 120]).unwrap();
    let schedule = GrowthSchedule::default();
    let stream = StreamKey::new(3, "ladder");
    let reference = tournament(&Peaked, &designs, 0.05, &schedule, &stream).unwrap().champion;
    assert_eq!(reference, Design::from_minutes(vec![0, 60, 120]).unwrap());
    let mut rng = rng_from_seed(8);
    for _ in 0..5 {
        designs.shuffle(&mut rng);
        let out = tournament(&Peaked, &designs, 0.05, &schedule, &stream).unwrap();
        assert_eq!(out.champion, reference);
    }
}

#[test]
fn growth_reuses_existing_replicates() {
    let schedule = GrowthSchedule::default();
    let stream = StreamKey::new(5, "reuse");
    let (a, b) = (Design::proposed(), Design::from_minutes(vec![0, 30, 60, 90, 120]).unwrap());
    let out = compare_designs(&Peaked, &a, &b, &stream, 0.05, &schedule).unwrap();
    let direct_a = estimate_utility(&Peaked, &a, &stream.child("a"), out.estimate_a.t1()).unwrap();
    assert_eq!(direct_a, out.estimate_a);
    assert!(schedule.levels().contains(&out.estimate_a.t1()));
}

#[test]
fn surrogate_of_the_full_design_is_a_self_comparison() {
    let model = ExperimentConfig::default().experiment_model().unwrap();
    let (patient, _) = synthetic_cohort(&model, 1, &StreamKey::new(6, "one")).unwrap().remove(0);
    let settings = FitSettings {
        start_candidates: 50,
        ..FitSettings::default()
    };
    let stream = StreamKey::new(6, "surrogate");
    let full = surrogate_utility(&model, &patient, &Design::full(), &settings, &stream).unwrap();
    let again = surrogate_utility(&model, &patient, &Design::full(), &settings, &stream).unwrap();
    assert_eq!(full, again);
    assert!(full.utility < 0.0 && full.utility.is_finite());

    let outer = fit_data(&model, patient.data.clone(), &settings, &mut rng_from_seed(1)).unwrap();
    let x = surrogate_utility_given(&model, &patient, &outer, &Design::full(), &settings, &mut rng_from_seed(2)).unwrap();
    assert!(x.utility < 0.0 && x.utility.is_finite());
}
