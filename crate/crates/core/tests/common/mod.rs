#![allow(dead_code)]

use ogtt_core::distributions::{DesignPrior, InferencePrior, NoiseModel, ParamMask};
use ogtt_core::inference::McmcSettings;
use ogtt_core::utility::{ExperimentModel, NestedMonteCarlo};
use ogtt_core::{ModelConstants, PatientParams};
use statrs::distribution::{ContinuousCDF, Normal};

/// Arrival glucose of the two atoms in the flat-curve design prior.
///
/// Atoms far from a tight prior keep the per-replicate utility close to
/// normal, so the z-scores of `T1 = 100` averages are nearly Gaussian.
pub const FLAT_ATOMS: [f64; 2] = [50.0, 110.0];
pub const PRIOR_MEAN: f64 = 80.0;
pub const PRIOR_VAR: f64 = 25.0;
pub const SIGMA: f64 = 5.0;

/// No load and no feedback: every curve is the constant `g0`.
pub fn flat_constants() -> ModelConstants {
    ModelConstants {
        v0: 0.0,
        ..ModelConstants::default()
    }
}

pub fn flat_prior() -> InferencePrior {
    let mut prior = InferencePrior::default();
    prior.g0.mean = PRIOR_MEAN;
    prior.g0.variance = PRIOR_VAR;
    prior
}

pub fn flat_sampler(draws: usize, stride: usize) -> NestedMonteCarlo {
    let model = ExperimentModel::new(
        flat_constants(),
        flat_prior(),
        NoiseModel::default(),
        McmcSettings::from_truth(draws, stride),
    )
    .with_mask(ParamMask::G0_ONLY);
    let atoms = FLAT_ATOMS.iter().map(|&g| PatientParams::new(0.0, 0.0, 0.5, g)).collect();
    NestedMonteCarlo::new(model, DesignPrior::new(atoms).unwrap())
}

/// Normal-normal posterior algebra for `n` readings of a constant curve.
///
/// With posterior precision `P = 1/τ² + n/σ²` and mean `m`, the error of a
/// posterior draw about the truth has `E[(g − ĝ)²] = 1/P + bias² + var(m)`,
/// where `bias = (μ − g)/(τ²P)` and `var(m) = n/(σ²P²)`. The curve error over
/// three hours is three times that.
pub fn flat_expected_utility(n: usize) -> f64 {
    let n = n as f64;
    let p = 1.0 / PRIOR_VAR + n / (SIGMA * SIGMA);
    let per_atom: f64 = FLAT_ATOMS
        .iter()
        .map(|&g| {
            let bias = (PRIOR_MEAN - g) / (PRIOR_VAR * p);
            1.0 / p + bias * bias + n / (SIGMA * SIGMA * p * p)
        })
        .sum::<f64>()
        / FLAT_ATOMS.len() as f64;
    -3.0 * per_atom
}

/// The five model equations, written out independently of the library.
pub fn rhs(y: &[f64; 5], p: &PatientParams, c: &ModelConstants) -> [f64; 5] {
    let [g, i, l, d, v] = *y;
    [
        l - i + d / p.theta2,
        p.theta0 * (g - c.g_b).max(0.0) - i / c.a,
        p.theta1 * (c.g_b - g).max(0.0) - l / c.b,
        -d / p.theta2 + 2.0 * v / c.c,
        -2.0 * v / c.c,
    ]
}

/// Classical fixed-step RK4; returns the state at every multiple of `every` steps.
pub fn rk4(p: &PatientParams, c: &ModelConstants, h: f64, steps: usize, every: usize) -> Vec<(f64, [f64; 5])> {
    let mut y = [p.g0, 0.0, 0.0, 0.0, c.v0];
    let mut out = vec![(0.0, y)];
    let add = |y: &[f64; 5], k: &[f64; 5], s: f64| {
        let mut r = *y;
        for j in 0..5 {
            r[j] += s * k[j];
        }
        r
    };
    for n in 1..=steps {
        let k1 = rhs(&y, p, c);
        let k2 = rhs(&add(&y, &k1, h / 2.0), p, c);
        let k3 = rhs(&add(&y, &k2, h / 2.0), p, c);
        let k4 = rhs(&add(&y, &k3, h), p, c);
        for j in 0..5 {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        if n % every == 0 {
            out.push((n as f64 * h, y));
        }
    }
    out
}

/// Composite Simpson over equally spaced samples (even number of intervals).
pub fn simpson(values: &[f64], h: f64) -> f64 {
    let n = values.len() - 1;
    assert!(n % 2 == 0);
    let mut s = values[0] + values[n];
    for (k, v) in values.iter().enumerate().take(n).skip(1) {
        s += if k % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    s * h / 3.0
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn sample_variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}

pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Anderson–Darling statistic against a normal with estimated mean and
/// variance, with the small-sample correction `A²(1 + 0.75/n + 2.25/n²)`.
pub fn anderson_darling_normal(data: &[f64]) -> f64 {
    let n = data.len() as f64;
    let (m, s) = (mean(data), sample_variance(data).sqrt());
    let mut z: Vec<f64> = data.iter().map(|x| (x - m) / s).collect();
    z.sort_by(f64::total_cmp);
    let phi = Normal::standard();
    let k = z.len();
    let a2 = -n
        - (0..k)
            .map(|i| {
                let f = phi.cdf(z[i]).clamp(1e-300, 1.0 - 1e-16);
                let g = phi.cdf(z[k - 1 - i]).clamp(1e-300, 1.0 - 1e-16);
                (2.0 * i as f64 + 1.0) * (f.ln() + (1.0 - g).ln())
            })
            .sum::<f64>()
            / n;
    a2 * (1.0 + 0.75 / n + 2.25 / (n * n))
}

/// Upper 1% point of the corrected statistic for the composite normal hypothesis.
pub const AD_CRITICAL_1PCT: f64 = 1.035;
