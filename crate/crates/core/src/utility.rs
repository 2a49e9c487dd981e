//! Utility of a measurement schedule and its nested Monte Carlo estimate.
//!
//! The utility of data `y` collected under design `d` is minus the posterior
//! expected integrated squared error between the true glucose curve and the
//! curve of a posterior draw, over a three-hour horizon. The expected utility
//! `U(d)` averages it over simulated patients drawn from the design prior:
//!
//! ```text
//! for i in 1..=T1:
//!     θ ~ π_D,  y ~ N(G_θ(d), σ²)
//!     ϑ = T2 thinned posterior draws under π_I, chain started at θ
//!     û_i = -(1/T2) Σ_j ∫₀³ (G_θ(t) - G_ϑj(t))² dt
//! Û(d) = mean(û_i),   var(Û) = s²(û) / T1
//! ```

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::Design;
use crate::distributions::{simulate_data, DesignPrior, InferencePrior, NoiseModel, ParamMask};
use crate::error::{Error, Result};
use crate::inference::{run_mcmc, start_at_truth, McmcSettings, PosteriorProblem, PosteriorSample};
use crate::model::glucose_at_times;
use crate::seeding::{rng_from_seed, StreamKey};
use crate::{ModelConstants, PatientParams, SimpsonGrid, SolverOptions};

/// Curve-comparison horizon in hours.
pub const HORIZON_HOURS: f64 = 3.0;
/// Quadrature spacing in hours (one minute).
pub const QUADRATURE_STEP_HOURS: f64 = 1.0 / 60.0;
/// Largest tolerated fraction of excluded replicates.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.01;

/// Glucose curves sampled on a fixed Simpson grid.
#[derive(Debug, Clone)]
pub struct CurveEvaluator {
    grid: SimpsonGrid,
    consts: ModelConstants,
    solver: SolverOptions,
}

impl CurveEvaluator {
    pub fn new(consts: ModelConstants, horizon: f64, step: f64, solver: SolverOptions) -> Result<Self> {
        Ok(Self {
            grid: SimpsonGrid::with_spacing(horizon, step)?,
            consts,
            solver,
        })
    }

    /// One-minute grid over three hours.
    pub fn standard(consts: ModelConstants) -> Self {
        Self::new(consts, HORIZON_HOURS, QUADRATURE_STEP_HOURS, SolverOptions::default())
            .expect("standard grid is valid")
    }

    pub fn grid(&self) -> &SimpsonGrid {
        &self.grid
    }

    pub fn consts(&self) -> &ModelConstants {
        &self.consts
    }

    pub fn curve(&self, params: &PatientParams) -> Result<Vec<f64>> {
        glucose_at_times(params, &self.consts, self.grid.times(), &self.solver)
    }

    pub fn ise_between_curves(&self, a: &[f64], b: &[f64]) -> f64 {
        self.grid.integrate_squared_difference(a, b)
    }

    pub fn ise(&self, a: &PatientParams, b: &PatientParams) -> Result<f64> {
        Ok(self.ise_between_curves(&self.curve(a)?, &self.curve(b)?))
    }

    /// Pointwise mean of the curves of `draws`.
    pub fn mean_curve(&self, draws: &[PatientParams]) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.grid.times().len()];
        let n = draws.len() as f64;
        for d in draws {
            for (a, g) in acc.iter_mut().zip(self.curve(d)?) {
                *a += g / n;
            }
        }
        Ok(acc)
    }
}

/// `∫₀^horizon (G_true(t) − G_fitted(t))² dt` by composite Simpson on a one-minute grid.
pub fn integrated_squared_error(
    true_params: &PatientParams,
    fitted_params: &PatientParams,
    consts: &ModelConstants,
    horizon: f64,
) -> Result<f64> {
    CurveEvaluator::new(*consts, horizon, QUADRATURE_STEP_HOURS, SolverOptions::default())?.ise(true_params, fitted_params)
}

/// `−(1/T2) Σ_j ISE(truth, ϑ_j)` over the posterior draws.
pub fn estimate_u(evaluator: &CurveEvaluator, true_params: &PatientParams, posterior: &PosteriorSample) -> Result<f64> {
    if posterior.is_empty() {
        return Err(Error::ContractViolation("utility needs a non-empty posterior sample".into()));
    }
    let truth = evaluator.curve(true_params)?;
    estimate_u_against_curve(evaluator, &truth, &posterior.draws)
}

fn estimate_u_against_curve(evaluator: &CurveEvaluator, truth: &[f64], draws: &[PatientParams]) -> Result<f64> {
    let errors = ise_per_draw(evaluator, truth, draws)?;
    Ok(-errors.iter().sum::<f64>() / errors.len() as f64)
}

/// ISE of each draw's curve against `truth`.
pub fn ise_per_draw(evaluator: &CurveEvaluator, truth: &[f64], draws: &[PatientParams]) -> Result<Vec<f64>> {
    draws
        .iter()
        .map(|d| Ok(evaluator.ise_between_curves(truth, &evaluator.curve(d)?)))
        .collect()
}

/// `û` with the Monte Carlo standard error of its inner average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityDetail {
    pub u_hat: f64,
    /// Sample sd of the per-draw errors over `sqrt(T2)`.
    pub standard_error: f64,
}

impl UtilityDetail {
    pub fn from_errors(errors: &[f64]) -> Self {
        let n = errors.len() as f64;
        let mean = errors.iter().sum::<f64>() / n;
        let var = if errors.len() > 1 {
            errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            u_hat: -mean,
            standard_error: (var / n).sqrt(),
        }
    }
}

/// Simulation and inference settings shared by every replicate.
#[derive(Debug, Clone)]
pub struct ExperimentModel {
    pub consts: ModelConstants,
    pub inference_prior: InferencePrior,
    pub noise: NoiseModel,
    pub solver: SolverOptions,
    pub mcmc: McmcSettings,
    pub evaluator: CurveEvaluator,
    pub mask: ParamMask,
}

impl ExperimentModel {
    pub fn new(consts: ModelConstants, inference_prior: InferencePrior, noise: NoiseModel, mcmc: McmcSettings) -> Self {
        Self {
            consts,
            inference_prior,
            noise,
            solver: SolverOptions::default(),
            mcmc,
            evaluator: CurveEvaluator::standard(consts),
            mask: ParamMask::ALL,
        }
    }

    pub fn with_mask(mut self, mask: ParamMask) -> Self {
        self.mask = mask;
        self
    }

    /// Simulates data for `truth` under `design` and fits it with a chain started at `truth`.
    pub fn simulate_and_fit<R: Rng + ?Sized>(
        &self,
        truth: &PatientParams,
        design: &Design,
        rng: &mut R,
    ) -> Result<PosteriorSample> {
        let data = simulate_data(truth, design, &self.consts, &self.noise, &self.solver, rng)?;
        let problem = PosteriorProblem::new(data, self.noise, self.inference_prior, self.consts)?
            .with_mask(self.mask)
            .with_solver(self.solver);
        run_mcmc(&problem, &start_at_truth(truth), &self.mcmc, rng)
    }

    /// One utility estimate `û` for a known patient.
    pub fn utility_for_patient<R: Rng + ?Sized>(&self, truth: &PatientParams, design: &Design, rng: &mut R) -> Result<f64> {
        let posterior = self.simulate_and_fit(truth, design, rng)?;
        estimate_u(&self.evaluator, truth, &posterior)
    }

    /// As [`Self::utility_for_patient`], with the inner standard error.
    pub fn utility_detail_for_patient<R: Rng + ?Sized>(
        &self,
        truth: &PatientParams,
        design: &Design,
        rng: &mut R,
    ) -> Result<UtilityDetail> {
        let posterior = self.simulate_and_fit(truth, design, rng)?;
        let errors = ise_per_draw(&self.evaluator, &self.evaluator.curve(truth)?, &posterior.draws)?;
        Ok(UtilityDetail::from_errors(&errors))
    }
}

/// Produces one utility replicate from a seed.
///
/// The nested Monte Carlo sampler is the production implementation; tests
/// substitute synthetic samplers to drive the comparison logic directly.
pub trait UtilitySampler: Sync {
    /// Posterior draws per replicate (`T2`).
    fn inner_draws(&self) -> usize;

    /// Returns `(û, generating parameters)`.
    fn draw(&self, design: &Design, seed: u64) -> Result<(f64, PatientParams)>;
}

/// The nested Monte Carlo estimator over a design prior.
#[derive(Debug, Clone)]
pub struct NestedMonteCarlo {
    pub model: ExperimentModel,
    pub design_prior: DesignPrior,
}

impl NestedMonteCarlo {
    pub fn new(model: ExperimentModel, design_prior: DesignPrior) -> Self {
        Self { model, design_prior }
    }
}

impl UtilitySampler for NestedMonteCarlo {
    fn inner_draws(&self) -> usize {
        self.model.mcmc.draws()
    }

    fn draw(&self, design: &Design, seed: u64) -> Result<(f64, PatientParams)> {
        let mut rng = rng_from_seed(seed);
        let truth = self.design_prior.sample(&mut rng);
        let u = self.model.utility_for_patient(&truth, design, &mut rng)?;
        Ok((u, truth))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilitySample {
    pub replicate: u64,
    /// Seed of the attempt that succeeded.
    pub seed: u64,
    pub attempt: u32,
    pub u_hat: f64,
    pub generating_params: PatientParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedReplicate {
    pub replicate: u64,
    pub error: String,
}

/// `Û(d)` with its samples and the variance of the mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignUtilityEstimate {
    pub design: Design,
    pub stream: StreamKey,
    /// Inner draws per replicate; fixed for the life of the estimate.
    pub t2: usize,
    pub samples: Vec<UtilitySample>,
    #[serde(default)]
    pub excluded: Vec<ExcludedReplicate>,
    pub mean: f64,
    pub variance_of_mean: f64,
}

impl DesignUtilityEstimate {
    /// An estimate with no replicates yet.
    pub fn empty(design: Design, stream: StreamKey, t2: usize) -> Self {
        Self {
            design,
            stream,
            t2,
            samples: Vec::new(),
            excluded: Vec::new(),
            mean: f64::NAN,
            variance_of_mean: f64::NAN,
        }
    }

    /// Rebuilds an estimate from stored samples, recomputing its statistics.
    pub fn from_samples(
        design: Design,
        stream: StreamKey,
        t2: usize,
        samples: Vec<UtilitySample>,
        excluded: Vec<ExcludedReplicate>,
    ) -> Self {
        let mut est = Self {
            design,
            stream,
            t2,
            samples,
            excluded,
            mean: f64::NAN,
            variance_of_mean: f64::NAN,
        };
        est.recompute();
        est
    }

    /// Number of included replicates (`T1`).
    pub fn t1(&self) -> usize {
        self.samples.len()
    }

    /// Next replicate index to draw.
    pub fn next_replicate(&self) -> u64 {
        (self.samples.len() + self.excluded.len()) as u64
    }

    pub fn standard_error(&self) -> f64 {
        self.variance_of_mean.sqrt()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.u_hat)
    }

    fn recompute(&mut self) {
        let n = self.samples.len();
        if n == 0 {
            self.mean = f64::NAN;
            self.variance_of_mean = f64::NAN;
            return;
        }
        let mean = self.values().sum::<f64>() / n as f64;
        self.mean = mean;
        self.variance_of_mean = if n < 2 {
            f64::NAN
        } else {
            self.values().map(|u| (u - mean) * (u - mean)).sum::<f64>() / (n as f64 - 1.0) / n as f64
        };
    }
}

enum ReplicateResult {
    Included(UtilitySample),
    Excluded(ExcludedReplicate),
}

fn run_replicate<S: UtilitySampler + ?Sized>(sampler: &S, design: &Design, stream: &StreamKey, replicate: u64) -> ReplicateResult {
    let mut last_error = String::new();
    for attempt in 0..2u32 {
        let seed = stream.replicate_seed(design, replicate, attempt);
        match sampler.draw(design, seed) {
            Ok((u_hat, generating_params)) => {
                return ReplicateResult::Included(UtilitySample {
                    replicate,
                    seed,
                    attempt,
                    u_hat,
                    generating_params,
                })
            }
            Err(e) => {
                log::warn!("replicate {replicate} of {design} failed (attempt {attempt}): {e}");
                last_error = e.to_string();
            }
        }
    }
    ReplicateResult::Excluded(ExcludedReplicate {
        replicate,
        error: last_error,
    })
}

/// Appends `additional` replicates, continuing the replicate index sequence.
///
/// Because each replicate's seed depends only on the stream, design and index,
/// growing an estimate in several steps reproduces a single larger run exactly.
pub fn extend_estimate<S: UtilitySampler + ?Sized>(
    sampler: &S,
    existing: &DesignUtilityEstimate,
    additional: usize,
) -> Result<DesignUtilityEstimate> {
    if sampler.inner_draws() != existing.t2 {
        return Err(Error::ContractViolation(format!(
            "cannot extend an estimate built with T2 = {} using T2 = {}",
            existing.t2,
            sampler.inner_draws()
        )));
    }
    let mut est = existing.clone();
    if additional == 0 {
        return Ok(est);
    }
    let first = est.next_replicate();
    let results: Vec<ReplicateResult> = (first..first + additional as u64)
        .into_par_iter()
        .map(|r| run_replicate(sampler, &est.design, &est.stream, r))
        .collect();
    for r in results {
        match r {
            ReplicateResult::Included(s) => est.samples.push(s),
            ReplicateResult::Excluded(x) => est.excluded.push(x),
        }
    }
    let attempted = est.next_replicate() as f64;
    if est.excluded.len() as f64 > MAX_EXCLUDED_FRACTION * attempted {
        return Err(Error::Estimation(format!(
            "{} of {} replicates of {} failed twice; last error: {}",
            est.excluded.len(),
            attempted,
            est.design,
            est.excluded.last().map(|x| x.error.as_str()).unwrap_or("")
        )));
    }
    est.recompute();
    Ok(est)
}

/// `Û(d)` from `t1` fresh replicates.
pub fn estimate_utility<S: UtilitySampler + ?Sized>(
    sampler: &S,
    design: &Design,
    stream: &StreamKey,
    t1: usize,
) -> Result<DesignUtilityEstimate> {
    if t1 < 2 {
        return Err(Error::ContractViolation(format!("T1 must be at least 2, got {t1}")));
    }
    extend_estimate(
        sampler,
        &DesignUtilityEstimate::empty(design.clone(), stream.clone(), sampler.inner_draws()),
        t1,
    )
}
