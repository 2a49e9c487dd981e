use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use ogtt_core::compare::compare_with_growth;
use ogtt_core::config::ExperimentConfig;
use ogtt_core::distributions::{reference, simulate_data, NoiseModel, Observations};
use ogtt_core::search::run_search;
use ogtt_core::seeding::StreamKey;
use ogtt_core::store::{write_new, RunManifest, SampleStore, StoreHeader};
use ogtt_core::utility::{extend_estimate, DesignUtilityEstimate, UtilitySampler};
use ogtt_core::validation::{
    fit_data, predictive_band, random_design_study, read_cohort_csv, robustness_check, surrogate_study,
    synthetic_cohort, write_cohort_csv,
};
use ogtt_core::{Design, Error, ErrorKind, PatientParams, Result, SolverOptions};

/// `println!` that tolerates a closed stdout, as when piped into `head`.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(name = "ogtt", version, about = "Design and analysis of oral glucose tolerance tests")]
struct Cli {
    /// Experiment configuration (JSON, or TOML by extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; must not already hold this command's artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct PatientArgs {
    /// A reference patient: healthy, diabetic, oscillating or extreme.
    #[arg(long, conflicts_with_all = ["theta0", "theta1", "theta2", "g0"])]
    patient: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    theta0: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    theta1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    theta2: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    g0: Option<f64>,
}

impl PatientArgs {
    fn resolve(&self, default: PatientParams) -> Result<PatientParams> {
        let p = match self.patient.as_deref() {
            Some("healthy") => reference::healthy(),
            Some("diabetic") => reference::diabetic(),
            Some("oscillating") => reference::oscillating(),
            Some("extreme") => reference::extreme_insulin(),
            Some(other) => return Err(Error::Input(format!("unknown reference patient {other:?}"))),
            None => PatientParams::new(
                self.theta0.unwrap_or(default.theta0),
                self.theta1.unwrap_or(default.theta1),
                self.theta2.unwrap_or(default.theta2),
                self.g0.unwrap_or(default.g0),
            ),
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate measurements for one patient.
    Simulate {
        #[command(flatten)]
        patient: PatientArgs,
        /// Measurement times in minutes, comma separated.
        #[arg(long, default_value = "0,60,120")]
        design: Design,
        /// Measurement noise sd; overrides the configuration.
        #[arg(long)]
        noise_sd: Option<f64>,
    },
    /// Fit patient parameters to a measurement CSV (time_minutes,glucose_mg_dl).
    Fit {
        #[arg(long)]
        data: PathBuf,
    },
    /// Estimate the expected utility of a design.
    Estimate {
        #[arg(long)]
        design: Design,
        #[arg(long)]
        t1: Option<usize>,
        /// Directory of sample stores to reuse and extend.
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Compare two designs with a z-test, growing T1 while inconclusive.
    Compare {
        #[arg(long)]
        a: Design,
        #[arg(long)]
        b: Design,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        t1_initial: Option<usize>,
        #[arg(long)]
        t1_max: Option<usize>,
        #[arg(long)]
        growth: Option<usize>,
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Search the measurement grid for the best design per measurement count.
    Search {
        /// Candidate times besides 0, in minutes.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<u32>>,
        #[arg(long)]
        k_min: Option<usize>,
        #[arg(long)]
        k_max: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        t1_initial: Option<usize>,
        #[arg(long)]
        t1_max: Option<usize>,
        /// Rank all designs cheaply first and ladder only the best.
        #[arg(long)]
        prefilter: bool,
        #[arg(long)]
        design_prior: Option<PathBuf>,
    },
    /// Proposed design against random designs on patients from the inference prior.
    ValidateRandom {
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
    },
    /// Surrogate utilities of two designs on densely measured patients.
    ValidateSurrogate {
        /// Cohort CSV (patient_id,time_minutes,glucose_mg_dl); a synthetic cohort when absent.
        #[arg(long)]
        cohort: Option<PathBuf>,
        #[arg(long)]
        patients: Option<usize>,
        #[arg(long, default_value = "0,45,75,105,120")]
        a: Design,
        #[arg(long, default_value = "0,60,120")]
        b: Design,
    },
    /// Fit simulated data of an unusual patient and score the recovered curve.
    ValidateRobust {
        #[command(flatten)]
        patient: PatientArgs,
        #[arg(long, default_value = "0,45,75,105,120")]
        design: Design,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Fit { .. } => "fit",
            Command::Estimate { .. } => "estimate",
            Command::Compare { .. } => "compare",
            Command::Search { .. } => "search",
            Command::ValidateRandom { .. } => "validate-random",
            Command::ValidateSurrogate { .. } => "validate-surrogate",
            Command::ValidateRobust { .. } => "validate-robust",
        }
    }
}

struct Run {
    config: ExperimentConfig,
    hash: String,
    out: PathBuf,
    manifest: RunManifest,
}

impl Run {
    fn file(&mut self, name: &str, contents: &[u8]) -> Result<PathBuf> {
        let path = self.out.join(name);
        write_new(&path, contents)?;
        self.manifest.outputs.push(path.clone());
        Ok(path)
    }

    fn json(&mut self, name: &str, result: Value) -> Result<PathBuf> {
        let doc = json!({
            "config_hash": self.hash,
            "config": self.config,
            "result": result,
        });
        self.file(name, serde_json::to_string_pretty(&doc)?.as_bytes())
    }

    fn csv(&mut self, name: &str, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<PathBuf> {
        let mut buf = Vec::new();
        write(&mut buf)?;
        self.file(name, &buf)
    }

    fn stream(&self, label: &str) -> StreamKey {
        StreamKey::new(self.config.seed, label)
    }

    fn store(&mut self, dir: &Path, design: &Design, stream: StreamKey, t2: usize) -> Result<SampleStore> {
        let store = SampleStore::open(
            dir,
            StoreHeader {
                design: design.clone(),
                stream,
                t2,
                sampling_hash: self.config.sampling_hash()?,
            },
        )?;
        if !self.manifest.sample_stores.iter().any(|p| p == store.path()) {
            self.manifest.sample_stores.push(store.path().to_path_buf());
        }
        Ok(store)
    }
}

fn design_json(d: &Design) -> Value {
    json!({ "minutes": d.minutes(), "label": d.to_string() })
}

fn estimate_json(e: &DesignUtilityEstimate) -> Value {
    json!({
        "design": design_json(&e.design),
        "t1": e.t1(),
        "t2": e.t2,
        "mean": e.mean,
        "variance_of_mean": e.variance_of_mean,
        "standard_error": e.standard_error(),
        "excluded": e.excluded.len(),
    })
}

fn write_observations(obs: &Observations, out: &mut Vec<u8>) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(["time_minutes", "glucose_mg_dl"]).map_err(Error::from)?;
    for (t, g) in obs.times.iter().zip(&obs.values) {
        w.write_record([format!("{}", (t * 60.0).round() as u32), format!("{g}")])
            .map_err(Error::from)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_writer(out: &mut Vec<u8>) -> csv::Writer<&mut Vec<u8>> {
    csv::Writer::from_writer(out)
}

fn read_observations(path: &Path) -> Result<Observations> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("time")) {
            continue;
        }
        let mut cols = line.split(',');
        let (Some(t), Some(g), None) = (cols.next(), cols.next(), cols.next()) else {
            return Err(Error::Input(format!("{} line {}: expected time_minutes,glucose_mg_dl", path.display(), i + 1)));
        };
        let t: f64 = t
            .trim()
            .parse()
            .map_err(|_| Error::Input(format!("{} line {}: bad time {t:?}", path.display(), i + 1)))?;
        let g: f64 = g
            .trim()
            .parse()
            .map_err(|_| Error::Input(format!("{} line {}: bad glucose {g:?}", path.display(), i + 1)))?;
        times.push(t / 60.0);
        values.push(g);
    }
    if times.is_empty() {
        return Err(Error::Input(format!("{} holds no measurements", path.display())));
    }
    Observations::new(times, values)
}

fn grow_and_store(run: &mut Run, sampler: &impl UtilitySampler, dir: &Path, design: &Design, stream: StreamKey, t1: usize) -> Result<DesignUtilityEstimate> {
    let store = run.store(dir, design, stream, sampler.inner_draws())?;
    let existing = store.load()?;
    if existing.t1() > 0 {
        log::info!("reusing {} stored samples for {design}", existing.t1());
    }
    let est = extend_estimate(sampler, &existing, t1.saturating_sub(existing.t1()))?;
    store.save(&est)?;
    Ok(est)
}

fn execute(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let command = cli.command;
    let out = cli
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(format!("ogtt-out/{}-{}", command.name(), config.seed)));

    match &command {
        Command::Simulate { noise_sd: Some(sd), .. } => config.noise_sd = *sd,
        Command::Search { grid, k_min, k_max, alpha, t1_initial, t1_max, prefilter, design_prior } => {
            if let Some(g) = grid {
                config.search_grid = g.clone();
                config.k_max = config.k_max.min(g.len() + 1);
                config.k_min = config.k_min.min(config.k_max);
            }
            config.k_min = k_min.unwrap_or(config.k_min);
            config.k_max = k_max.unwrap_or(config.k_max);
            config.alpha = alpha.unwrap_or(config.alpha);
            config.growth.initial = t1_initial.unwrap_or(config.growth.initial);
            config.growth.max = t1_max.unwrap_or(config.growth.max);
            if *prefilter {
                config.prefilter.get_or_insert_with(Default::default);
            }
            if design_prior.is_some() {
                config.design_prior_file = design_prior.clone();
            }
        }
        Command::Compare { alpha, t1_initial, t1_max, growth, .. } => {
            config.alpha = alpha.unwrap_or(config.alpha);
            config.growth.initial = t1_initial.unwrap_or(config.growth.initial);
            config.growth.max = t1_max.unwrap_or(config.growth.max);
            config.growth.factor = growth.unwrap_or(config.growth.factor);
        }
        Command::Estimate { t1: Some(t1), .. } => config.t1 = *t1,
        Command::ValidateRandom { trials, sizes } => {
            if let Some(t) = trials {
                config.random_designs.trials_per_size = *t;
            }
            if let Some(s) = sizes {
                config.random_designs.sizes = s.clone();
            }
        }
        Command::ValidateSurrogate { patients: Some(n), .. } => config.cohort_size = *n,
        _ => {}
    }
    config.validate()?;
    let hash = config.hash();
    let mut run = Run {
        manifest: RunManifest::new(command.name(), hash.clone(), config.seed),
        config,
        hash,
        out: out.clone(),
    };
    run.file("config.json", run.config.to_json().as_bytes())?;
    let model = run.config.experiment_model()?;

    match command {
        Command::Simulate { patient, design, .. } => {
            let params = patient.resolve(reference::healthy())?;
            let mut rng = run.stream("simulate").rng_for(&[design.label().as_bytes()]);
            let noise = NoiseModel::new(run.config.noise_sd)?;
            let obs = simulate_data(&params, &design, &run.config.constants, &noise, &SolverOptions::default(), &mut rng)?;
            run.csv("measurements.csv", |b| write_observations(&obs, b))?;
            run.json("simulation.json", json!({ "params": params, "design": design_json(&design), "noise_sd": noise.sigma }))?;
            say!("{}", serde_json::to_string(&params)?);
        }
        Command::Fit { data } => {
            let obs = read_observations(&data)?;
            let mut rng = run.stream("fit").rng_for(&[]);
            let posterior = fit_data(&model, obs.clone(), &run.config.fit, &mut rng)?;
            let band = predictive_band(&model, &posterior.draws, 0.95, &mut rng)?;
            let n = posterior.draws.len() as f64;
            let mean = posterior.mean();
            let sd: Vec<f64> = (0..4)
                .map(|i| {
                    let m = mean.to_array()[i];
                    (posterior.draws.iter().map(|d| (d.to_array()[i] - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                })
                .collect();
            run.csv("posterior.csv", |b| {
                let mut w = csv_writer(b);
                w.write_record(["theta0", "theta1", "theta2", "g0"]).map_err(Error::from)?;
                for d in &posterior.draws {
                    w.write_record(d.to_array().map(|x| x.to_string())).map_err(Error::from)?;
                }
                w.flush()?;
                Ok(())
            })?;
            run.csv("predictive.csv", |b| {
                let mut w = csv_writer(b);
                for p in &band {
                    w.serialize(p).map_err(Error::from)?;
                }
                w.flush()?;
                Ok(())
            })?;
            let summary = json!({
                "data": obs,
                "draws": posterior.draws.len(),
                "burn_in": posterior.burn_in,
                "thinning_stride": posterior.thinning_stride,
                "acceptance_rate": posterior.acceptance_rate,
                "start": posterior.start_point,
                "posterior_mean": mean,
                "posterior_sd": { "theta0": sd[0], "theta1": sd[1], "theta2": sd[2], "g0": sd[3] },
            });
            run.json("summary.json", summary.clone())?;
            say!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Estimate { design, samples, .. } => {
            let sampler = run.config.sampler()?;
            let dir = samples.unwrap_or_else(|| out.join("samples"));
            let t1 = run.config.t1;
            let stream = run.stream("estimate");
            let est = grow_and_store(&mut run, &sampler, &dir, &design, stream, t1)?;
            let summary = estimate_json(&est);
            run.json("estimate.json", summary.clone())?;
            say!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Compare { a, b, samples, .. } => {
            let sampler = run.config.sampler()?;
            let dir = samples.unwrap_or_else(|| out.join("samples"));
            let t2 = sampler.inner_draws();
            let (sa, sb) = (run.stream("compare").child("a"), run.stream("compare").child("b"));
            let store_a = run.store(&dir, &a, sa, t2)?;
            let store_b = run.store(&dir, &b, sb, t2)?;
            let outcome = compare_with_growth(&sampler, store_a.load()?, store_b.load()?, run.config.alpha, &run.config.growth)?;
            store_a.save(&outcome.estimate_a)?;
            store_b.save(&outcome.estimate_b)?;
            let summary = json!({
                "comparison": outcome.result,
                "estimate_a": estimate_json(&outcome.estimate_a),
                "estimate_b": estimate_json(&outcome.estimate_b),
                "samples_computed": outcome.computed,
                "samples_reused": outcome.reused,
            });
            run.json("comparison.json", summary.clone())?;
            say!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Search { .. } => {
            let sampler = run.config.sampler()?;
            let report = run_search(&sampler, &run.config.search_config())?;
            let table = report.summary_table();
            run.json("search.json", serde_json::to_value(&report)?)?;
            run.file("summary.txt", table.as_bytes())?;
            say!("{}", table.trim_end());
        }
        Command::ValidateRandom { .. } => {
            let report = random_design_study(&model, &run.config.random_designs, &run.stream("validate-random"))?;
            run.csv("trials.csv", |b| report.write_trials_csv(b))?;
            for s in &report.per_size {
                run.csv(&format!("histogram_size{}.csv", s.size), |b| s.histogram.write_csv(b))?;
                say!(
                    "size {}: p05 {:.2}, median {:.2}, p95 {:.2}, pooled se {:.2}",
                    s.size, s.p05, s.median, s.p95, s.pooled_se
                );
            }
            run.json("random.json", serde_json::to_value(&report)?)?;
        }
        Command::ValidateSurrogate { cohort, a, b, .. } => {
            let patients = match cohort {
                Some(path) => read_cohort_csv(
                    std::fs::File::open(&path).map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?,
                )?,
                None => {
                    let synthetic = synthetic_cohort(&model, run.config.cohort_size, &run.stream("cohort"))?;
                    let patients: Vec<_> = synthetic.iter().map(|(p, _)| p.clone()).collect();
                    run.csv("cohort.csv", |buf| write_cohort_csv(&patients, buf))?;
                    run.json("cohort_truth.json", json!(synthetic.iter().map(|(p, t)| json!({"id": p.id, "params": t})).collect::<Vec<_>>()))?;
                    patients
                }
            };
            let study = surrogate_study(&model, &patients, &a, &b, &run.config.fit, &run.stream("validate-surrogate"))?;
            run.csv("surrogate.csv", |buf| study.write_csv(buf))?;
            run.json("surrogate.json", serde_json::to_value(&study)?)?;
            say!("{} better for {:.0}% of {} patients", a, 100.0 * study.fraction_a_better(), study.rows.len());
        }
        Command::ValidateRobust { patient, design } => {
            let params = patient.resolve(reference::extreme_insulin())?;
            let report = robustness_check(&model, &params, &design, &run.config.robustness, &run.stream("validate-robust"))?;
            run.csv("band.csv", |b| report.write_band_csv(b))?;
            say!(
                "coverage {:.3}, posterior-mean ISE {:.2}, prior-predictive ISE {:.2}",
                report.coverage, report.posterior_mean_ise, report.prior_predictive_ise
            );
            run.json("robustness.json", serde_json::to_value(&report)?)?;
        }
    }
    let Run { manifest, .. } = run;
    manifest.write(&out)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Input => 2,
                ErrorKind::Estimation => 3,
                ErrorKind::ContractViolation => 4,
                ErrorKind::Other => 1,
            })
        }
    }
}
