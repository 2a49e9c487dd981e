//! Two-design z-test on utility estimates, with optional sample-size growth.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::design::Design;
use crate::error::{Error, Result};
use crate::seeding::StreamKey;
use crate::utility::{extend_estimate, DesignUtilityEstimate, UtilitySampler};

/// Smallest `T1` at which the normal approximation is trusted.
pub const MIN_T1: usize = 30;
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    ABetter,
    BBetter,
    Inconclusive,
}

impl Verdict {
    /// The verdict with the roles of A and B swapped.
    pub fn mirror(self) -> Self {
        match self {
            Verdict::ABetter => Verdict::BBetter,
            Verdict::BBetter => Verdict::ABetter,
            Verdict::Inconclusive => Verdict::Inconclusive,
        }
    }

    pub fn is_conclusive(self) -> bool {
        self != Verdict::Inconclusive
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub design_a: Design,
    pub design_b: Design,
    pub mean_a: f64,
    pub mean_b: f64,
    /// `(Û(a) − Û(b)) / sqrt(var(Û(a)) + var(Û(b)))`.
    pub z: f64,
    /// Level of the final test.
    pub alpha: f64,
    pub verdict: Verdict,
    pub t1_a: usize,
    pub t1_b: usize,
    /// Number of tests performed to reach the verdict.
    pub looks: usize,
}

impl ComparisonResult {
    pub fn mirrored(&self) -> Self {
        Self {
            design_a: self.design_b.clone(),
            design_b: self.design_a.clone(),
            mean_a: self.mean_b,
            mean_b: self.mean_a,
            z: -self.z,
            alpha: self.alpha,
            verdict: self.verdict.mirror(),
            t1_a: self.t1_b,
            t1_b: self.t1_a,
            looks: self.looks,
        }
    }
}

/// Upper `α/2` quantile of the standard normal.
pub fn critical_value(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(Normal::standard().inverse_cdf(1.0 - alpha / 2.0))
}

/// Two-sided z-test of `Û(a)` against `Û(b)` from independent estimates.
pub fn compare(a: &DesignUtilityEstimate, b: &DesignUtilityEstimate, alpha: f64) -> Result<ComparisonResult> {
    for est in [a, b] {
        if est.t1() < MIN_T1 {
            return Err(Error::ContractViolation(format!(
                "comparison needs T1 >= {MIN_T1}, {} has {}",
                est.design,
                est.t1()
            )));
        }
    }
    let crit = critical_value(alpha)?;
    let diff = a.mean - b.mean;
    let var = a.variance_of_mean + b.variance_of_mean;
    let z = if var > 0.0 {
        diff / var.sqrt()
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    };
    let verdict = if z > crit {
        Verdict::ABetter
    } else if z < -crit {
        Verdict::BBetter
    } else {
        Verdict::Inconclusive
    };
    Ok(ComparisonResult {
        design_a: a.design.clone(),
        design_b: b.design.clone(),
        mean_a: a.mean,
        mean_b: b.mean,
        z,
        alpha,
        verdict,
        t1_a: a.t1(),
        t1_b: b.t1(),
        looks: 1,
    })
}

/// Sample sizes at which a growing comparison is re-tested.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthSchedule {
    pub initial: usize,
    pub max: usize,
    pub factor: usize,
}

impl Default for GrowthSchedule {
    fn default() -> Self {
        Self {
            initial: 150,
            max: 600,
            factor: 2,
        }
    }
}

impl GrowthSchedule {
    pub fn fixed(t1: usize) -> Self {
        Self {
            initial: t1,
            max: t1,
            factor: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.initial < MIN_T1 || self.initial > self.max || self.factor < 2 {
            return Err(Error::ContractViolation(format!(
                "invalid growth schedule {self:?}: need {MIN_T1} <= initial <= max and factor >= 2"
            )));
        }
        Ok(())
    }

    /// `initial, initial·f, …`, capped by and always ending at `max`.
    pub fn levels(&self) -> Vec<usize> {
        let mut out = vec![self.initial];
        let mut t = self.initial;
        while t < self.max {
            t = (t * self.factor).min(self.max);
            out.push(t);
        }
        out
    }

    /// Per-look level under an even split of `alpha` across the planned looks.
    pub fn per_look_alpha(&self, alpha: f64) -> f64 {
        alpha / self.levels().len() as f64
    }
}

/// A finished growing comparison with the estimates it ended on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthOutcome {
    pub result: ComparisonResult,
    pub estimate_a: DesignUtilityEstimate,
    pub estimate_b: DesignUtilityEstimate,
    /// Replicates drawn during this comparison.
    pub computed: usize,
    /// Replicates that already existed on entry.
    pub reused: usize,
}

fn grow_to<S: UtilitySampler + ?Sized>(sampler: &S, est: &DesignUtilityEstimate, target: usize) -> Result<DesignUtilityEstimate> {
    extend_estimate(sampler, est, target.saturating_sub(est.t1()))
}

/// Tests `a` against `b`, enlarging both estimates along `schedule` while inconclusive.
///
/// Existing samples in either estimate are reused. Each look tests at
/// `alpha / number_of_planned_looks`.
pub fn compare_with_growth<S: UtilitySampler + ?Sized>(
    sampler: &S,
    a: DesignUtilityEstimate,
    b: DesignUtilityEstimate,
    alpha: f64,
    schedule: &GrowthSchedule,
) -> Result<GrowthOutcome> {
    schedule.validate()?;
    critical_value(alpha)?;
    let level_alpha = schedule.per_look_alpha(alpha);
    let reused = a.t1() + b.t1();
    let (mut a, mut b) = (a, b);
    let mut result = None;
    for (look, &t1) in schedule.levels().iter().enumerate() {
        a = grow_to(sampler, &a, t1)?;
        b = grow_to(sampler, &b, t1)?;
        let mut r = compare(&a, &b, level_alpha)?;
        r.looks = look + 1;
        let done = r.verdict.is_conclusive();
        result = Some(r);
        if done {
            break;
        }
    }
    let result = result.expect("schedule has at least one level");
    let computed = a.t1() + b.t1() - reused;
    Ok(GrowthOutcome {
        result,
        estimate_a: a,
        estimate_b: b,
        computed,
        reused,
    })
}

/// Growing comparison of two designs from scratch, each arm on its own stream.
pub fn compare_designs<S: UtilitySampler + ?Sized>(
    sampler: &S,
    design_a: &Design,
    design_b: &Design,
    stream: &StreamKey,
    alpha: f64,
    schedule: &GrowthSchedule,
) -> Result<GrowthOutcome> {
    let t2 = sampler.inner_draws();
    compare_with_growth(
        sampler,
        DesignUtilityEstimate::empty(design_a.clone(), stream.child("a"), t2),
        DesignUtilityEstimate::empty(design_b.clone(), stream.child("b"), t2),
        alpha,
        schedule,
    )
}
