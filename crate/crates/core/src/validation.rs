//! Checks that a chosen design holds up beyond the design prior.
//!
//! * random-design study: the proposed design against uniformly drawn designs
//!   of several sizes, each pair evaluated on one patient from the inference prior;
//! * surrogate utility: densely measured patients whose true parameters are
//!   unknown, with the full-data posterior standing in for the truth;
//! * robustness check: an extreme patient far outside the design prior.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::Design;
use crate::distributions::{reference, simulate_data, Observations};
use crate::error::{Error, Result};
use crate::inference::{run_mcmc, start_at_truth, start_from_data, McmcSettings, PosteriorProblem, PosteriorSample};
use crate::search::{default_grid, enumerate_designs};
use crate::seeding::StreamKey;
use crate::utility::{ExperimentModel, UtilityDetail};
use crate::PatientParams;

/// Equal-width bins spanning the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn from_values(values: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let (mut lo, mut hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        if values.is_empty() {
            (lo, hi) = (0.0, 1.0);
        } else if lo == hi {
            (lo, hi) = (lo - 0.5, hi + 0.5);
        }
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let i = (((v - lo) / width) as usize).min(bins - 1);
            counts[i] += 1;
        }
        Self { edges, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin_lower", "bin_upper", "count"])?;
        for (i, c) in self.counts.iter().enumerate() {
            w.write_record([self.edges[i].to_string(), self.edges[i + 1].to_string(), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

fn sorted(values: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.into_iter().collect();
    v.sort_by(f64::total_cmp);
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomDesignConfig {
    pub sizes: Vec<usize>,
    pub trials_per_size: usize,
    pub proposed: Design,
    /// Candidate times besides 0, in minutes.
    pub grid: Vec<u32>,
    pub bins: usize,
}

impl Default for RandomDesignConfig {
    fn default() -> Self {
        Self {
            sizes: vec![4, 5, 6],
            trials_per_size: 100,
            proposed: Design::proposed(),
            grid: default_grid(),
            bins: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub size: usize,
    pub trial: usize,
    pub random_design: Design,
    pub patient: PatientParams,
    pub proposed: UtilityDetail,
    pub random: UtilityDetail,
    /// Proposed minus random.
    pub difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSummary {
    pub size: usize,
    pub trials: usize,
    /// Root mean square over trials of the inner standard error of the difference.
    pub pooled_se: f64,
    pub p05: f64,
    pub median: f64,
    pub p95: f64,
    pub histogram: Histogram,
}

impl SizeSummary {
    /// No left tail beyond `tolerance_se` pooled standard errors and a positive right tail.
    pub fn has_right_tail_only(&self, tolerance_se: f64) -> bool {
        self.p05 >= -tolerance_se * self.pooled_se && self.p95 > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomDesignReport {
    pub config: RandomDesignConfig,
    pub trials: Vec<TrialRecord>,
    pub per_size: Vec<SizeSummary>,
}

impl RandomDesignReport {
    /// One row per trial.
    pub fn write_trials_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["size", "trial", "random_design", "u_proposed", "u_random", "difference"])?;
        for t in &self.trials {
            w.write_record([
                t.size.to_string(),
                t.trial.to_string(),
                t.random_design.label(),
                t.proposed.u_hat.to_string(),
                t.random.u_hat.to_string(),
                t.difference.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn trial_tag(size: usize, trial: usize) -> [u8; 16] {
    let mut tag = [0u8; 16];
    tag[..8].copy_from_slice(&(size as u64).to_le_bytes());
    tag[8..].copy_from_slice(&(trial as u64).to_le_bytes());
    tag
}

/// Paired comparison of the proposed design against random designs.
///
/// Each trial draws a patient from the inference prior and a design uniformly
/// from the grid designs of the given size. Both arms see the same patient
/// with independent measurement noise.
pub fn random_design_study(
    model: &ExperimentModel,
    config: &RandomDesignConfig,
    stream: &StreamKey,
) -> Result<RandomDesignReport> {
    if config.trials_per_size == 0 || config.sizes.is_empty() {
        return Err(Error::Config("random-design study needs at least one size and one trial".into()));
    }
    let mut candidates = Vec::with_capacity(config.sizes.len());
    for &size in &config.sizes {
        candidates.push(enumerate_designs(size, &config.grid)?);
    }
    let jobs: Vec<(usize, usize)> = (0..config.sizes.len())
        .flat_map(|s| (0..config.trials_per_size).map(move |t| (s, t)))
        .collect();
    let trials = jobs
        .par_iter()
        .map(|&(s, trial)| {
            let size = config.sizes[s];
            let tag = trial_tag(size, trial);
            let mut rng = stream.rng_for(&[b"trial", &tag]);
            let random_design = candidates[s][rng.random_range(0..candidates[s].len())].clone();
            let patient = model.inference_prior.sample(&mut rng);
            let proposed =
                model.utility_detail_for_patient(&patient, &config.proposed, &mut stream.rng_for(&[b"proposed", &tag]))?;
            let random = model.utility_detail_for_patient(&patient, &random_design, &mut stream.rng_for(&[b"random", &tag]))?;
            Ok(TrialRecord {
                size,
                trial,
                random_design,
                patient,
                proposed,
                random,
                difference: proposed.u_hat - random.u_hat,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let per_size = config
        .sizes
        .iter()
        .map(|&size| {
            let rows: Vec<&TrialRecord> = trials.iter().filter(|t| t.size == size).collect();
            let diffs = sorted(rows.iter().map(|t| t.difference));
            let pooled_se = (rows
                .iter()
                .map(|t| t.proposed.standard_error.powi(2) + t.random.standard_error.powi(2))
                .sum::<f64>()
                / rows.len() as f64)
                .sqrt();
            SizeSummary {
                size,
                trials: rows.len(),
                pooled_se,
                p05: quantile(&diffs, 0.05),
                median: quantile(&diffs, 0.5),
                p95: quantile(&diffs, 0.95),
                histogram: Histogram::from_values(&diffs, config.bins),
            }
        })
        .collect();
    Ok(RandomDesignReport {
        config: config.clone(),
        trials,
        per_size,
    })
}

/// A patient measured on the full 15-minute schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogatePatient {
    pub id: String,
    pub data: Observations,
}

impl SurrogatePatient {
    pub fn new(id: impl Into<String>, data: Observations) -> Result<Self> {
        let id = id.into();
        let full = Design::full();
        data.restrict_to(&full)
            .map_err(|e| Error::Input(format!("patient {id}: {e}")))?;
        if data.len() != full.len() {
            return Err(Error::Input(format!(
                "patient {id} has {} readings, expected exactly the {} full-schedule times",
                data.len(),
                full.len()
            )));
        }
        Ok(Self { id, data })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CohortRow {
    patient_id: String,
    time_minutes: u32,
    glucose_mg_dl: f64,
}

/// Writes `patient_id,time_minutes,glucose_mg_dl` rows.
pub fn write_cohort_csv<W: Write>(patients: &[SurrogatePatient], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in patients {
        for (&t, &g) in p.data.times.iter().zip(&p.data.values) {
            w.serialize(CohortRow {
                patient_id: p.id.clone(),
                time_minutes: (t * 60.0).round() as u32,
                glucose_mg_dl: g,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a cohort CSV; patients keep their order of first appearance.
pub fn read_cohort_csv<R: Read>(input: R) -> Result<Vec<SurrogatePatient>> {
    let mut grouped: Vec<(String, Vec<(u32, f64)>)> = Vec::new();
    for row in csv::Reader::from_reader(input).deserialize() {
        let row: CohortRow = row.map_err(|e| Error::Input(format!("cohort CSV: {e}")))?;
        match grouped.iter_mut().find(|(id, _)| *id == row.patient_id) {
            Some((_, readings)) => readings.push((row.time_minutes, row.glucose_mg_dl)),
            None => grouped.push((row.patient_id, vec![(row.time_minutes, row.glucose_mg_dl)])),
        }
    }
    if grouped.is_empty() {
        return Err(Error::Input("cohort CSV has no rows".into()));
    }
    grouped
        .into_iter()
        .map(|(id, mut readings)| {
            readings.sort_by_key(|r| r.0);
            let data = Observations::new(
                readings.iter().map(|r| f64::from(r.0) / 60.0).collect(),
                readings.iter().map(|r| r.1).collect(),
            )
            .map_err(|e| Error::Input(format!("patient {id}: {e}")))?;
            SurrogatePatient::new(id, data)
        })
        .collect()
}

/// Densely measured patients drawn from the inference prior, with their true parameters.
pub fn synthetic_cohort(model: &ExperimentModel, n: usize, stream: &StreamKey) -> Result<Vec<(SurrogatePatient, PatientParams)>> {
    (0..n)
        .map(|i| {
            let mut rng = stream.rng_for(&[b"patient", &(i as u64).to_le_bytes()]);
            let truth = model.inference_prior.sample(&mut rng);
            let data = simulate_data(&truth, &Design::full(), &model.consts, &model.noise, &model.solver, &mut rng)?;
            Ok((SurrogatePatient::new(format!("P{:02}", i + 1), data)?, truth))
        })
        .collect()
}

/// Chains used for fitting measured data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub mcmc: McmcSettings,
    /// Prior draws scored when choosing the chain start.
    pub start_candidates: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            mcmc: McmcSettings::with_burn_in(100, 15, 300),
            start_candidates: 200,
        }
    }
}

/// Posterior for data whose generating parameters are unknown.
pub fn fit_data<R: Rng + ?Sized>(
    model: &ExperimentModel,
    data: Observations,
    settings: &FitSettings,
    rng: &mut R,
) -> Result<PosteriorSample> {
    let problem = PosteriorProblem::new(data, model.noise, model.inference_prior, model.consts)?
        .with_mask(model.mask)
        .with_solver(model.solver);
    let start = start_from_data(&problem, settings.start_candidates, rng);
    run_mcmc(&problem, &start, &settings.mcmc, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateEstimate {
    pub design: Design,
    pub utility: f64,
}

/// Surrogate utility given the full-data posterior draws.
///
/// Averages the ISE between every full-data draw and every draw of the
/// posterior fitted to the design's subset of the readings.
pub fn surrogate_utility_given<R: Rng + ?Sized>(
    model: &ExperimentModel,
    patient: &SurrogatePatient,
    full_posterior: &PosteriorSample,
    design: &Design,
    settings: &FitSettings,
    rng: &mut R,
) -> Result<SurrogateEstimate> {
    let data = patient.data.restrict_to(design)?;
    let inner = fit_data(model, data, settings, rng)?;
    let ev = &model.evaluator;
    let outer_curves = full_posterior.draws.iter().map(|d| ev.curve(d)).collect::<Result<Vec<_>>>()?;
    let inner_curves = inner.draws.iter().map(|d| ev.curve(d)).collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    for o in &outer_curves {
        for i in &inner_curves {
            total += ev.ise_between_curves(o, i);
        }
    }
    Ok(SurrogateEstimate {
        design: design.clone(),
        utility: -total / (outer_curves.len() * inner_curves.len()) as f64,
    })
}

/// Surrogate utility of `design` for one densely measured patient.
pub fn surrogate_utility(
    model: &ExperimentModel,
    patient: &SurrogatePatient,
    design: &Design,
    settings: &FitSettings,
    stream: &StreamKey,
) -> Result<SurrogateEstimate> {
    patient.data.restrict_to(design)?;
    let stream = stream.child(&patient.id);
    let outer = fit_data(model, patient.data.clone(), settings, &mut stream.rng_for(&[b"full"]))?;
    surrogate_utility_given(model, patient, &outer, design, settings, &mut stream.rng_for(&[b"design", design.label().as_bytes()]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateRow {
    pub id: String,
    pub utility_a: f64,
    pub utility_b: f64,
    /// `utility_b / utility_a`; above 1 when design a has the smaller error.
    pub quotient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateStudy {
    pub design_a: Design,
    pub design_b: Design,
    pub rows: Vec<SurrogateRow>,
}

impl SurrogateStudy {
    /// Share of patients for whom design a has the higher surrogate utility.
    pub fn fraction_a_better(&self) -> f64 {
        self.rows.iter().filter(|r| r.utility_a > r.utility_b).count() as f64 / self.rows.len() as f64
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Surrogate utilities of two designs for each patient, sharing the full-data posterior.
pub fn surrogate_study(
    model: &ExperimentModel,
    patients: &[SurrogatePatient],
    design_a: &Design,
    design_b: &Design,
    settings: &FitSettings,
    stream: &StreamKey,
) -> Result<SurrogateStudy> {
    let rows = patients
        .par_iter()
        .map(|p| {
            p.data.restrict_to(design_a)?;
            p.data.restrict_to(design_b)?;
            let s = stream.child(&p.id);
            let outer = fit_data(model, p.data.clone(), settings, &mut s.rng_for(&[b"full"]))?;
            let fit = |d: &Design| {
                surrogate_utility_given(model, p, &outer, d, settings, &mut s.rng_for(&[b"design", d.label().as_bytes()]))
            };
            let (a, b) = (fit(design_a)?.utility, fit(design_b)?.utility);
            Ok(SurrogateRow {
                id: p.id.clone(),
                utility_a: a,
                utility_b: b,
                quotient: b / a,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SurrogateStudy {
        design_a: design_a.clone(),
        design_b: design_b.clone(),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustnessSettings {
    pub mcmc: McmcSettings,
    pub prior_predictive_draws: usize,
    /// Central probability of the pointwise band.
    pub band: f64,
}

impl Default for RobustnessSettings {
    fn default() -> Self {
        Self {
            mcmc: McmcSettings::from_truth(500, 15),
            prior_predictive_draws: 500,
            band: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub time_hours: f64,
    pub truth: f64,
    pub lower: f64,
    pub mean: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub patient: PatientParams,
    pub design: Design,
    pub data: Observations,
    /// ISE of the pointwise posterior mean curve against the true curve.
    pub posterior_mean_ise: f64,
    /// ISE of the pointwise prior-predictive mean curve against the true curve.
    pub prior_predictive_ise: f64,
    /// Fraction of grid points where the true curve lies inside the band.
    pub coverage: f64,
    pub acceptance_rate: f64,
    pub band: Vec<BandPoint>,
}

impl RobustnessReport {
    pub fn write_band_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for p in &self.band {
            w.serialize(p)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fits simulated data of `patient` under `design` and scores the recovered curve.
pub fn robustness_check(
    model: &ExperimentModel,
    patient: &PatientParams,
    design: &Design,
    settings: &RobustnessSettings,
    stream: &StreamKey,
) -> Result<RobustnessReport> {
    let ev = &model.evaluator;
    let mut rng = stream.rng_for(&[b"data", design.label().as_bytes()]);
    let data = simulate_data(patient, design, &model.consts, &model.noise, &model.solver, &mut rng)?;
    let problem = PosteriorProblem::new(data.clone(), model.noise, model.inference_prior, model.consts)?
        .with_mask(model.mask)
        .with_solver(model.solver);
    let posterior = run_mcmc(&problem, &start_at_truth(patient), &settings.mcmc, &mut rng)?;

    let truth = ev.curve(patient)?;
    let curves = posterior.draws.iter().map(|d| ev.curve(d)).collect::<Result<Vec<_>>>()?;
    let tail = (1.0 - settings.band) / 2.0;
    let n = curves.len() as f64;
    let band: Vec<BandPoint> = ev
        .grid()
        .times()
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let column = sorted(curves.iter().map(|c| c[k]));
            BandPoint {
                time_hours: t,
                truth: truth[k],
                lower: quantile(&column, tail),
                mean: column.iter().sum::<f64>() / n,
                upper: quantile(&column, 1.0 - tail),
            }
        })
        .collect();
    let coverage = band.iter().filter(|p| p.lower <= p.truth && p.truth <= p.upper).count() as f64 / band.len() as f64;
    let mean_curve: Vec<f64> = band.iter().map(|p| p.mean).collect();

    let mut prior_rng = stream.rng_for(&[b"prior-predictive"]);
    let prior_draws: Vec<PatientParams> = (0..settings.prior_predictive_draws)
        .map(|_| model.inference_prior.sample(&mut prior_rng))
        .collect();
    let prior_mean = ev.mean_curve(&prior_draws)?;

    Ok(RobustnessReport {
        patient: *patient,
        design: design.clone(),
        data,
        posterior_mean_ise: ev.ise_between_curves(&truth, &mean_curve),
        prior_predictive_ise: ev.ise_between_curves(&truth, &prior_mean),
        coverage,
        acceptance_rate: posterior.acceptance_rate,
        band,
    })
}

/// The robustness check on the high-insulin-sensitivity reference patient.
pub fn extreme_patient_check(
    model: &ExperimentModel,
    design: &Design,
    settings: &RobustnessSettings,
    stream: &StreamKey,
) -> Result<RobustnessReport> {
    robustness_check(model, &reference::extreme_insulin(), design, settings, stream)
}

/// Pointwise quantiles of posterior curves, without and with measurement noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictivePoint {
    pub time_hours: f64,
    pub curve_lower: f64,
    pub curve_median: f64,
    pub curve_upper: f64,
    pub predictive_lower: f64,
    pub predictive_upper: f64,
}

/// Central `level` bands of the posterior curves on the evaluator's grid.
pub fn predictive_band<R: Rng + ?Sized>(
    model: &ExperimentModel,
    draws: &[PatientParams],
    level: f64,
    rng: &mut R,
) -> Result<Vec<PredictivePoint>> {
    if draws.is_empty() {
        return Err(Error::ContractViolation("predictive band needs posterior draws".into()));
    }
    let ev = &model.evaluator;
    let curves = draws.iter().map(|d| ev.curve(d)).collect::<Result<Vec<_>>>()?;
    let tail = (1.0 - level) / 2.0;
    Ok(ev
        .grid()
        .times()
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let column = sorted(curves.iter().map(|c| c[k]));
            let noisy = sorted(curves.iter().map(|c| {
                let e: f64 = StandardNormal.sample(rng);
                c[k] + model.noise.sigma * e
            }));
            PredictivePoint {
                time_hours: t,
                curve_lower: quantile(&column, tail),
                curve_median: quantile(&column, 0.5),
                curve_upper: quantile(&column, 1.0 - tail),
                predictive_lower: quantile(&noisy, tail),
                predictive_upper: quantile(&noisy, 1.0 - tail),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_accounts_for_every_value() {
        let v: Vec<f64> = (0..100).map(|i| (i as f64).sin() * 10.0).collect();
        let h = Histogram::from_values(&v, 10);
        assert_eq!(h.total(), 100);
        assert_eq!(h.edges.len(), 11);
        assert_eq!(Histogram::from_values(&[2.0; 5], 4).total(), 5);
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 11);
    }

    #[test]
    fn quantile_interpolates() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.0);
        assert_eq!(quantile(&v, 0.05), 0.2);
        assert_eq!(quantile(&v, 1.0), 4.0);
    }

    fn full_obs(values: Vec<f64>) -> Observations {
        Observations::new(Design::full().hours(), values).unwrap()
    }

    #[test]
    fn cohort_csv_round_trip() {
        let a = SurrogatePatient::new("a", full_obs((0..9).map(|i| 80.0 + i as f64).collect())).unwrap();
        let b = SurrogatePatient::new("b", full_obs(vec![90.0; 9])).unwrap();
        let mut buf = Vec::new();
        write_cohort_csv(&[a.clone(), b.clone()], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("patient_id,time_minutes,glucose_mg_dl\n"));
        assert_eq!(read_cohort_csv(text.as_bytes()).unwrap(), vec![a, b]);
    }

    #[test]
    fn incomplete_patients_are_rejected() {
        let partial = Observations::new(Design::conventional().hours(), vec![80.0; 3]).unwrap();
        assert!(matches!(SurrogatePatient::new("x", partial), Err(Error::Input(_))));
        assert!(matches!(read_cohort_csv("patient_id,time_minutes,glucose_mg_dl\n".as_bytes()), Err(Error::Input(_))));
    }
}
