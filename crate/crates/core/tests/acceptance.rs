//! End-to-end acceptance checks, one line of output per criterion.
//!
//! Run a subset with `cargo test --test acceptance -- 3 5`.

mod common;

use std::time::Instant;

use ogtt_core::compare::{compare, compare_designs, GrowthSchedule, Verdict};
use ogtt_core::config::ExperimentConfig;
use ogtt_core::distributions::reference;
use ogtt_core::model::solve_forward;
use ogtt_core::search::{run_search, SearchConfig};
use ogtt_core::seeding::StreamKey;
use ogtt_core::utility::{estimate_utility, extend_estimate};
use ogtt_core::validation::{
    random_design_study, robustness_check, surrogate_study, synthetic_cohort, FitSettings, RandomDesignConfig,
    RobustnessSettings,
};
use ogtt_core::{Design, ModelConstants, SolverOptions};
use rayon::prelude::*;

use common::*;

const SEED: u64 = 1;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn ode_oracle() -> Outcome {
    let consts = ModelConstants::default();
    let opts = SolverOptions::default();
    let mut worst_g: f64 = 0.0;
    let mut worst_v: f64 = 0.0;
    for p in [reference::healthy(), reference::diabetic(), reference::oscillating()] {
        // 30 000 steps of 1e-4 h, compared every 0.01 h.
        let oracle = rk4(&p, &consts, 1e-4, 30_000, 100);
        let traj = solve_forward(&p, &consts, 3.0, 0.01, &opts).unwrap();
        for (t, y) in &oracle {
            let s = traj.state_at(*t).unwrap();
            worst_g = worst_g.max(((s.g - y[0]) / y[0]).abs());
            let v_exact = consts.v0 * (-2.0 * t / consts.c).exp();
            worst_v = worst_v.max(((s.v - v_exact) / v_exact).abs());
        }
    }
    outcome(
        worst_g <= 1e-5 && worst_v <= 1e-6,
        format!("max rel err G {worst_g:.2e} (<= 1e-5), V {worst_v:.2e} (<= 1e-6)"),
    )
}

fn curve_shapes() -> Outcome {
    let consts = ModelConstants::default();
    let opts = SolverOptions::default();
    let traj = |p| solve_forward(&p, &consts, 3.0, 1.0 / 60.0, &opts).unwrap();
    let healthy = traj(reference::healthy());
    let diabetic = traj(reference::diabetic());
    let osc = traj(reference::oscillating());
    let h3 = healthy.states.last().unwrap().g;
    let d3 = diabetic.states.last().unwrap().g;
    let osc_min = osc
        .times
        .iter()
        .zip(&osc.states)
        .filter(|(t, _)| **t > 0.0 && **t < 3.0)
        .map(|(_, s)| s.g)
        .fold(f64::INFINITY, f64::min);
    let pass = (h3 - consts.g_b).abs() <= 10.0 && d3 - consts.g_b >= 30.0 && osc_min < consts.g_b;
    outcome(
        pass,
        format!(
            "healthy G(3h) {h3:.1}, diabetic G(3h) {d3:.1}, oscillating min {osc_min:.1} (baseline {})",
            consts.g_b
        ),
    )
}

fn unbiasedness() -> Outcome {
    let sampler = flat_sampler(100, 15);
    let design = Design::proposed();
    let exact = flat_expected_utility(design.len());
    let z: Vec<f64> = (0..200)
        .map(|r| {
            let e = estimate_utility(&sampler, &design, &StreamKey::new(SEED, format!("unbiased/{r}")), 100).unwrap();
            (e.mean - exact) / e.standard_error()
        })
        .collect();
    let (m, v, ad) = (mean(&z), sample_variance(&z), anderson_darling_normal(&z));
    outcome(
        m.abs() < 0.25 && (0.7..=1.4).contains(&v) && ad < AD_CRITICAL_1PCT,
        format!("U = {exact:.3}; z mean {m:.3}, variance {v:.3}, Anderson-Darling {ad:.3} (< {AD_CRITICAL_1PCT})"),
    )
}

fn variance_lemma() -> Outcome {
    // The lemma concerns the outer average, so a short inner chain suffices.
    let sampler = flat_sampler(20, 5);
    let design = Design::proposed();
    let sizes = [50usize, 100, 200, 400, 800];
    let reps = 200;
    let mut log_t1 = Vec::new();
    let mut log_var = Vec::new();
    for &t1 in &sizes {
        let means: Vec<f64> = (0..reps)
            .map(|r| {
                estimate_utility(&sampler, &design, &StreamKey::new(SEED, format!("lemma/{t1}/{r}")), t1)
                    .unwrap()
                    .mean
            })
            .collect();
        log_t1.push((t1 as f64).ln());
        log_var.push(sample_variance(&means).ln());
    }
    let slope = ols_slope(&log_t1, &log_var);
    outcome(
        (slope + 1.0).abs() <= 0.15,
        format!("slope {slope:.3} over T1 in {sizes:?}, {reps} repetitions each (target -1 +- 0.15)"),
    )
}

fn type_one_error() -> Outcome {
    let sampler = flat_sampler(20, 5);
    let design = Design::proposed();
    let reps = 400;
    let false_verdicts = (0..reps)
        .into_par_iter()
        .filter(|r| {
            let s = StreamKey::new(SEED, format!("type1/{r}"));
            let a = estimate_utility(&sampler, &design, &s.child("a"), 100).unwrap();
            let b = estimate_utility(&sampler, &design, &s.child("b"), 100).unwrap();
            compare(&a, &b, 0.05).unwrap().verdict.is_conclusive()
        })
        .count();
    let rate = false_verdicts as f64 / reps as f64;
    let bound = 0.05 + 2.0 * (0.05 * 0.95 / reps as f64).sqrt();
    outcome(rate <= bound, format!("false verdict rate {rate:.4} over {reps} (bound {bound:.4})"))
}

fn sample_reuse() -> Outcome {
    let sampler = ExperimentConfig::default().sampler().unwrap();
    let design = Design::proposed();
    let stream = StreamKey::new(SEED, "reuse");
    let half = estimate_utility(&sampler, &design, &stream, 300).unwrap();
    let grown = extend_estimate(&sampler, &half, 300).unwrap();
    let direct = estimate_utility(&sampler, &design, &stream, 600).unwrap();
    let bitwise = grown.samples.len() == direct.samples.len()
        && grown
            .samples
            .iter()
            .zip(&direct.samples)
            .all(|(a, b)| a.seed == b.seed && a.u_hat.to_bits() == b.u_hat.to_bits())
        && grown.mean.to_bits() == direct.mean.to_bits();
    outcome(
        bitwise,
        format!("300 + 300 vs 600: identical = {bitwise}, U = {:.3} (se {:.3})", direct.mean, direct.standard_error()),
    )
}

fn random_designs() -> Outcome {
    let model = ExperimentConfig::default().experiment_model().unwrap();
    let report = random_design_study(&model, &RandomDesignConfig::default(), &StreamKey::new(SEED, "random-designs")).unwrap();
    let mut pass = true;
    let parts: Vec<String> = report
        .per_size
        .iter()
        .map(|s| {
            let ok = s.has_right_tail_only(2.0);
            pass &= ok;
            format!(
                "size {}: p05 {:.1} vs -2se {:.1}, p95 {:.1} [{}]",
                s.size,
                s.p05,
                -2.0 * s.pooled_se,
                s.p95,
                if ok { "ok" } else { "left tail" }
            )
        })
        .collect();
    outcome(pass, parts.join("; "))
}

fn surrogate_direction() -> Outcome {
    let model = ExperimentConfig::default().experiment_model().unwrap();
    let cohort: Vec<_> = synthetic_cohort(&model, 17, &StreamKey::new(SEED, "cohort"))
        .unwrap()
        .into_iter()
        .map(|(p, _)| p)
        .collect();
    let study = surrogate_study(
        &model,
        &cohort,
        &Design::proposed(),
        &Design::conventional(),
        &FitSettings::default(),
        &StreamKey::new(SEED, "surrogate"),
    )
    .unwrap();
    let frac = study.fraction_a_better();
    outcome(frac >= 0.7, format!("proposed better for {:.0}% of 17 patients (>= 70%)", 100.0 * frac))
}

fn robustness() -> Outcome {
    let model = ExperimentConfig::default().experiment_model().unwrap();
    let r = robustness_check(
        &model,
        &reference::extreme_insulin(),
        &Design::proposed(),
        &RobustnessSettings::default(),
        &StreamKey::new(SEED, "robustness"),
    )
    .unwrap();
    outcome(
        r.coverage >= 0.8 && r.posterior_mean_ise < r.prior_predictive_ise,
        format!(
            "band coverage {:.3} (>= 0.8), posterior-mean ISE {:.1} vs prior-predictive {:.1}",
            r.coverage, r.posterior_mean_ise, r.prior_predictive_ise
        ),
    )
}

fn search_smoke() -> Outcome {
    let sampler = ExperimentConfig::default().sampler().unwrap();
    let config = SearchConfig {
        grid: vec![30, 60, 90, 120],
        k_min: 2,
        k_max: 3,
        seed: SEED,
        ..SearchConfig::default()
    };
    let report = run_search(&sampler, &config).unwrap();
    let champion = report
        .per_k
        .iter()
        .find(|r| r.k == report.stop.chosen_k)
        .unwrap()
        .tournament
        .champion
        .clone();
    // Worst design by its estimated utility in the ladder logs.
    let mut seen: Vec<(Design, f64)> = Vec::new();
    for r in &report.per_k {
        for m in &r.tournament.log {
            seen.push((m.result.design_a.clone(), m.result.mean_a));
            seen.push((m.result.design_b.clone(), m.result.mean_b));
        }
    }
    let worst = seen.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0.clone();
    let schedule = GrowthSchedule::default();
    let rematch = compare_designs(&sampler, &champion, &worst, &StreamKey::new(SEED, "rematch"), 0.05, &schedule).unwrap();
    let headline = compare_designs(
        &sampler,
        &Design::proposed(),
        &Design::conventional(),
        &StreamKey::new(SEED, "proposed-vs-conventional"),
        0.05,
        &schedule,
    )
    .unwrap();
    let pass = rematch.result.verdict == Verdict::ABetter && headline.result.verdict == Verdict::ABetter;
    outcome(
        pass,
        format!(
            "champion {champion} (k = {}) vs worst {worst}: z {:.2} {:?}; proposed vs conventional: z {:.2} {:?} at T1 {}",
            report.stop.chosen_k,
            rematch.result.z,
            rematch.result.verdict,
            headline.result.z,
            headline.result.verdict,
            headline.result.t1_a
        ),
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "ODE oracle equivalence", ode_oracle),
        (2, "reference curve shapes", curve_shapes),
        (3, "estimator unbiasedness and normality", unbiasedness),
        (4, "variance decays as 1/T1", variance_lemma),
        (5, "type-I error calibration", type_one_error),
        (6, "sample reuse replays bitwise", sample_reuse),
        (7, "no left tail against random designs", random_designs),
        (8, "surrogate utility direction", surrogate_direction),
        (9, "robustness on an extreme patient", robustness),
        (10, "search smoke test", search_smoke),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        println!(
            "criterion {id:>2} {} {name}: {} ({:.1} s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
