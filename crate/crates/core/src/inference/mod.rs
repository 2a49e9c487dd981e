//! Posterior inference for patient parameters from glucose measurements.

pub mod twalk;

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::distributions::{InferencePrior, NoiseModel, Observations, ParamMask};
use crate::error::{Error, Result};
use crate::model::glucose_at_times;
use crate::{ModelConstants, PatientParams, SolverOptions};

use twalk::{TWalk, TWalkState};

/// Relative perturbation separating the two t-walk points at the start.
const START_SPREAD: f64 = 1e-1;

/// Everything needed to evaluate the posterior of one patient.
#[derive(Debug, Clone)]
pub struct PosteriorProblem {
    pub data: Observations,
    pub noise: NoiseModel,
    pub prior: InferencePrior,
    pub consts: ModelConstants,
    pub solver: SolverOptions,
    /// Coordinates inferred; the rest are held at the chain start.
    pub mask: ParamMask,
}

impl PosteriorProblem {
    pub fn new(data: Observations, noise: NoiseModel, prior: InferencePrior, consts: ModelConstants) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Input("posterior needs at least one observation".into()));
        }
        if !(noise.sigma > 0.0) {
            return Err(Error::Config("likelihood needs a positive noise sd".into()));
        }
        Ok(Self {
            data,
            noise,
            prior,
            consts,
            solver: SolverOptions::default(),
            mask: ParamMask::ALL,
        })
    }

    pub fn with_mask(mut self, mask: ParamMask) -> Self {
        self.mask = mask;
        self
    }

    pub fn with_solver(mut self, solver: SolverOptions) -> Self {
        self.solver = solver;
        self
    }

    /// Gaussian log-likelihood with additive constants dropped, or the
    /// integration error that prevented evaluating it.
    pub fn try_log_likelihood(&self, params: &PatientParams) -> Result<f64> {
        let predicted = glucose_at_times(params, &self.consts, &self.data.times, &self.solver)?;
        let two_var = 2.0 * self.noise.sigma * self.noise.sigma;
        Ok(-self
            .data
            .values
            .iter()
            .zip(&predicted)
            .map(|(y, g)| (y - g) * (y - g))
            .sum::<f64>()
            / two_var)
    }
}

/// `-Σ (y_i - G(t_i))² / (2σ²)`. An integration failure yields `-inf` and is logged.
pub fn log_likelihood(params: &PatientParams, problem: &PosteriorProblem) -> f64 {
    match problem.try_log_likelihood(params) {
        Ok(v) => v,
        Err(e) => {
            log::debug!("likelihood evaluation failed at {params:?}: {e}");
            f64::NEG_INFINITY
        }
    }
}

/// Log-likelihood plus inference-prior log-density; `-inf` outside the support.
pub fn log_posterior(params: &PatientParams, problem: &PosteriorProblem) -> f64 {
    let lp = problem.prior.ln_density_masked(params, problem.mask);
    if lp == f64::NEG_INFINITY || !params.is_admissible() {
        return f64::NEG_INFINITY;
    }
    lp + log_likelihood(params, problem)
}

/// Chain start for simulated data: the parameters that generated it.
pub fn start_at_truth(true_params: &PatientParams) -> PatientParams {
    *true_params
}

/// Chain start for data with unknown generating parameters.
///
/// Scores the prior's central point and `candidates` prior draws, each with
/// `g0` set to the arrival reading when there is one, and returns the best.
pub fn start_from_data<R: Rng + ?Sized>(problem: &PosteriorProblem, candidates: usize, rng: &mut R) -> PatientParams {
    let arrival = problem
        .data
        .times
        .first()
        .filter(|&&t| t == 0.0)
        .map(|_| problem.data.values[0].clamp(problem.prior.g0.lower, problem.prior.g0.upper));
    let adjust = |mut p: PatientParams| {
        if let Some(g) = arrival {
            p.g0 = g;
        }
        p
    };
    let mut best = adjust(problem.prior.central_point());
    let mut best_lp = log_posterior(&best, problem);
    for _ in 0..candidates {
        let p = adjust(problem.prior.sample(rng));
        let lp = log_posterior(&p, problem);
        if lp > best_lp {
            best = p;
            best_lp = lp;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McmcSettings {
    /// Total iterations, burn-in included.
    pub raw_iterations: usize,
    pub thinning_stride: usize,
    pub burn_in: usize,
    /// Keep every raw state for a chain dump.
    #[serde(default)]
    pub keep_trace: bool,
}

impl McmcSettings {
    /// Chains started at the generating parameters: `draws × stride` iterations, no burn-in.
    pub fn from_truth(draws: usize, thinning_stride: usize) -> Self {
        Self {
            raw_iterations: draws * thinning_stride,
            thinning_stride,
            burn_in: 0,
            keep_trace: false,
        }
    }

    /// Chains started away from the posterior mode.
    pub fn with_burn_in(draws: usize, thinning_stride: usize, burn_in: usize) -> Self {
        Self {
            raw_iterations: burn_in + draws * thinning_stride,
            thinning_stride,
            burn_in,
            keep_trace: false,
        }
    }

    pub fn draws(&self) -> usize {
        self.raw_iterations.saturating_sub(self.burn_in) / self.thinning_stride.max(1)
    }

    fn validate(&self) -> Result<()> {
        if self.thinning_stride == 0 || self.raw_iterations < self.burn_in + self.thinning_stride {
            return Err(Error::ContractViolation(format!(
                "raw iterations must cover burn-in plus at least one stride: {self:?}"
            )));
        }
        Ok(())
    }
}

impl Default for McmcSettings {
    fn default() -> Self {
        Self::from_truth(100, 15)
    }
}

/// One raw chain state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub params: PatientParams,
    pub log_posterior: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSample {
    pub draws: Vec<PatientParams>,
    pub raw_chain_length: usize,
    pub thinning_stride: usize,
    pub burn_in: usize,
    pub start_point: PatientParams,
    pub acceptance_rate: f64,
    /// Proposals rejected because the forward solve failed.
    pub integration_failures: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceRow>>,
}

impl PosteriorSample {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn mean(&self) -> PatientParams {
        let n = self.draws.len() as f64;
        let mut acc = [0.0; 4];
        for d in &self.draws {
            for (a, v) in acc.iter_mut().zip(d.to_array()) {
                *a += v / n;
            }
        }
        PatientParams::from_array(acc)
    }

    /// Writes the raw chain as `iteration,theta0,theta1,theta2,g0,log_posterior`.
    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let trace = self
            .trace
            .as_ref()
            .ok_or_else(|| Error::ContractViolation("chain was run without keeping its trace".into()))?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "theta0", "theta1", "theta2", "g0", "log_posterior"])?;
        for row in trace {
            let p = row.params;
            w.write_record(&[
                row.iteration.to_string(),
                p.theta0.to_string(),
                p.theta1.to_string(),
                p.theta2.to_string(),
                p.g0.to_string(),
                row.log_posterior.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs a t-walk chain targeting the posterior and returns thinned draws.
///
/// The second t-walk point starts at a small relative perturbation of `start`.
/// Every `thinning_stride`-th state after the burn-in is kept.
pub fn run_mcmc<R: Rng + ?Sized>(
    problem: &PosteriorProblem,
    start: &PatientParams,
    settings: &McmcSettings,
    rng: &mut R,
) -> Result<PosteriorSample> {
    settings.validate()?;
    let free: Vec<usize> = problem.mask.indices().collect();
    if free.is_empty() {
        return Err(Error::ContractViolation("no free parameters to sample".into()));
    }
    let base = start.to_array();
    let embed = |x: &[f64]| {
        let mut full = base;
        for (slot, &i) in free.iter().enumerate() {
            full[i] = x[slot];
        }
        PatientParams::from_array(full)
    };

    let failures = std::cell::Cell::new(0usize);
    let mut target = |x: &[f64]| {
        let p = embed(x);
        let lp = problem.prior.ln_density_masked(&p, problem.mask);
        if lp == f64::NEG_INFINITY || !p.is_admissible() {
            return f64::NEG_INFINITY;
        }
        match problem.try_log_likelihood(&p) {
            Ok(ll) => lp + ll,
            Err(e) => {
                log::debug!("rejecting proposal {p:?}: {e}");
                failures.set(failures.get() + 1);
                f64::NEG_INFINITY
            }
        }
    };

    let x: Vec<f64> = free.iter().map(|&i| base[i]).collect();
    let log_x = target(&x);
    if !log_x.is_finite() {
        return Err(Error::Sampler(format!("chain start {start:?} has zero posterior density")));
    }
    let mut x_prime = x.clone();
    let mut log_x_prime = f64::NEG_INFINITY;
    for _ in 0..100 {
        for (v, &x0) in x_prime.iter_mut().zip(&x) {
            let z: f64 = StandardNormal.sample(rng);
            *v = x0 + START_SPREAD * x0.abs().max(1e-6) * z;
        }
        log_x_prime = target(&x_prime);
        if log_x_prime.is_finite() && x_prime.iter().zip(&x).all(|(a, b)| a != b) {
            break;
        }
    }
    if !log_x_prime.is_finite() {
        return Err(Error::Sampler(format!(
            "could not place the second t-walk point near {start:?}"
        )));
    }

    let mut state = TWalkState {
        x,
        x_prime,
        log_x,
        log_x_prime,
    };
    let walker = TWalk::default();
    let mut accepted = 0usize;
    let mut draws = Vec::with_capacity(settings.draws());
    let mut trace = settings.keep_trace.then(|| Vec::with_capacity(settings.raw_iterations));
    for iteration in 1..=settings.raw_iterations {
        if walker.step(&mut state, &mut target, rng).accepted {
            accepted += 1;
        }
        let current = embed(&state.x);
        if let Some(t) = trace.as_mut() {
            t.push(TraceRow {
                iteration,
                params: current,
                log_posterior: state.log_x,
            });
        }
        if iteration > settings.burn_in && (iteration - settings.burn_in) % settings.thinning_stride == 0 {
            draws.push(current);
        }
    }
    if accepted == 0 {
        return Err(Error::Sampler(format!(
            "no proposal accepted in {} iterations from {start:?} ({} integration failures)",
            settings.raw_iterations,
            failures.get()
        )));
    }
    Ok(PosteriorSample {
        draws,
        raw_chain_length: settings.raw_iterations,
        thinning_stride: settings.thinning_stride,
        burn_in: settings.burn_in,
        start_point: *start,
        acceptance_rate: accepted as f64 / settings.raw_iterations as f64,
        integration_failures: failures.get(),
        trace,
    })
}
