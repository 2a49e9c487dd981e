mod common;

use approx::assert_relative_eq;
use ogtt_core::distributions::{reference, GammaPrior, InferencePrior};
use ogtt_core::model::solve_forward;
use ogtt_core::seeding::rng_from_seed;
use ogtt_core::utility::{integrated_squared_error, CurveEvaluator};
use ogtt_core::{ModelConstants, ModelConstantsF32, PatientParams, PatientParamsF32, SolverOptions, SolverOptionsF32};
use statrs::distribution::{ContinuousCDF, Gamma};

use common::*;

fn no_feedback(theta2: f64, g0: f64) -> PatientParams {
    PatientParams::new(0.0, 0.0, theta2, g0)
}

#[test]
fn gut_compartment_matches_two_exponential_solution() {
    let c = ModelConstants::default();
    let p = no_feedback(0.4, 90.0);
    let traj = solve_forward(&p, &c, 3.0, 0.05, &SolverOptions::default()).unwrap();
    let (k, r) = (1.0 / p.theta2, 2.0 / c.c);
    for (t, s) in traj.times.iter().zip(&traj.states) {
        let d = r * c.v0 / (k - r) * ((-r * t).exp() - (-k * t).exp());
        assert!((s.d - d).abs() <= 1e-6 * c.v0, "t = {t}: {} vs {d}", s.d);
    }
}

#[test]
fn without_feedback_the_load_is_conserved() {
    let c = ModelConstants::default();
    for (theta2, g0) in [(0.2, 70.0), (0.5, 80.0), (1.5, 120.0)] {
        let p = no_feedback(theta2, g0);
        let traj = solve_forward(&p, &c, 3.0, 0.1, &SolverOptions::default()).unwrap();
        for s in &traj.states {
            assert_relative_eq!(s.g + s.d + s.v, g0 + c.v0, max_relative = 1e-7);
            assert_eq!((s.i, s.l), (0.0, 0.0));
        }
    }
}

#[test]
fn solver_agrees_with_fine_rk4_on_reference_patients() {
    let c = ModelConstants::default();
    for p in [reference::healthy(), reference::diabetic(), reference::oscillating(), reference::extreme_insulin()] {
        let traj = solve_forward(&p, &c, 3.0, 0.01, &SolverOptions::default()).unwrap();
        for (t, y) in rk4(&p, &c, 2e-4, 15_000, 250) {
            let s = traj.state_at(t).unwrap().to_array();
            for j in 0..5 {
                assert!((s[j] - y[j]).abs() <= 1e-5 * (1.0 + y[j].abs()), "{p:?} t = {t} component {j}");
            }
        }
    }
}

#[test]
fn single_precision_tracks_double_precision() {
    let c = ModelConstants::default();
    let p = reference::healthy();
    let c32: ModelConstantsF32 = ModelConstantsF32 {
        a: c.a as f32,
        b: c.b as f32,
        c: c.c as f32,
        g_b: c.g_b as f32,
        v0: c.v0 as f32,
    };
    let p32: PatientParamsF32 = p.cast();
    let t64 = solve_forward(&p, &c, 3.0, 0.25, &SolverOptions::default()).unwrap();
    let t32 = solve_forward(&p32, &c32, 3.0, 0.25, &SolverOptionsF32::with_tolerance(1e-5)).unwrap();
    for (a, b) in t64.states.iter().zip(&t32.states) {
        assert!((a.g - b.g as f64).abs() < 1e-2 * a.g, "{} vs {}", a.g, b.g);
    }
}

#[test]
fn ise_matches_independent_quadrature() {
    let c = ModelConstants::default();
    let (a, b) = (reference::healthy(), reference::diabetic());
    // 180 minutes, Simpson on the RK4 states sampled every minute.
    let step = 1.0 / 60.0;
    let ga = rk4(&a, &c, step / 100.0, 18_000, 100);
    let gb = rk4(&b, &c, step / 100.0, 18_000, 100);
    let sq: Vec<f64> = ga.iter().zip(&gb).map(|(x, y)| (x.1[0] - y.1[0]).powi(2)).collect();
    let oracle = simpson(&sq, step);
    let ise = integrated_squared_error(&a, &b, &c, 3.0).unwrap();
    assert_relative_eq!(ise, oracle, max_relative = 1e-4);
    assert_eq!(integrated_squared_error(&a, &a, &c, 3.0).unwrap(), 0.0);
}

#[test]
fn constant_curves_have_closed_form_ise() {
    let ev = CurveEvaluator::standard(flat_constants());
    let ise = ev.ise(&no_feedback(0.5, 70.0), &no_feedback(0.5, 77.0)).unwrap();
    assert_relative_eq!(ise, 49.0 * 3.0, max_relative = 1e-9);
}

#[test]
fn gamma_log_density_ratio() {
    let g = GammaPrior::new(2.0, 1.0);
    assert_relative_eq!(g.ln_density(2.0) - g.ln_density(1.0), 2f64.ln() - 1.0, epsilon = 1e-12);
}

fn truncated_gamma_mean(shape: f64, scale: f64, lower: f64) -> f64 {
    // Unnormalized density integrated on [lower, lower + 40 scale-units].
    let n = 20_000;
    let h = 40.0 * scale * shape / n as f64;
    let xs: Vec<f64> = (0..=n).map(|i| lower + i as f64 * h).collect();
    let f: Vec<f64> = xs.iter().map(|x| x.powf(shape - 1.0) * (-x / scale).exp()).collect();
    let xf: Vec<f64> = xs.iter().zip(&f).map(|(x, v)| x * v).collect();
    simpson(&xf, h) / simpson(&f, h)
}

#[test]
fn truncated_gamma_sampler_has_the_right_mean_and_shape() {
    let prior = InferencePrior::default().theta2;
    let lower = prior.lower.unwrap();
    let mut rng = rng_from_seed(11);
    let n = 40_000;
    let xs: Vec<f64> = (0..n).map(|_| prior.sample(&mut rng)).collect();
    assert!(xs.iter().all(|&x| x > lower));

    let expected = truncated_gamma_mean(prior.shape, prior.scale, lower);
    let sd = sample_variance(&xs).sqrt();
    assert!((mean(&xs) - expected).abs() < 4.0 * sd / (n as f64).sqrt());

    let cdf = Gamma::new(prior.shape, 1.0 / prior.scale).unwrap();
    let kept = 1.0 - cdf.cdf(lower);
    assert_relative_eq!(prior.retained_mass(), kept, max_relative = 1e-12);
    let (lo, hi, bins) = (lower, 1.5, 50);
    let width = (hi - lo) / bins as f64;
    for b in 0..bins {
        let (a, z) = (lo + b as f64 * width, lo + (b + 1) as f64 * width);
        let p = (cdf.cdf(z) - cdf.cdf(a)) / kept;
        let observed = xs.iter().filter(|&&x| x >= a && x < z).count() as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt().max(1.0 / n as f64);
        assert!((observed - p).abs() <= 4.0 * se, "bin {b}: {observed} vs {p}");
    }
}
