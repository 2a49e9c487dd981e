//! Grid search for a good design at each measurement count.
//!
//! Designs for a given count are enumerated exhaustively and run through an
//! incumbent ladder: the champion meets every challenger in a growing
//! comparison and only a conclusive loss dethrones it. The champion's samples
//! carry over from match to match. The measurement count is chosen as the
//! first one where adding a measurement no longer gives a conclusive gain.

use std::fmt::Write as _;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::compare::{compare_with_growth, ComparisonResult, GrowthSchedule, Verdict, DEFAULT_ALPHA};
use crate::design::{Design, GRID_STEP_MINUTES, GRID_END_MINUTES};
use crate::error::{Error, Result};
use crate::seeding::StreamKey;
use crate::utility::{estimate_utility, DesignUtilityEstimate, UtilitySampler};

/// Cheap ranking pass run before the ladder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prefilter {
    pub t1: usize,
    pub keep_fraction: f64,
}

impl Default for Prefilter {
    fn default() -> Self {
        Self {
            t1: 50,
            keep_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Candidate times in minutes; 0 is always measured and not listed.
    pub grid: Vec<u32>,
    pub k_min: usize,
    pub k_max: usize,
    pub alpha: f64,
    pub schedule: GrowthSchedule,
    #[serde(default)]
    pub prefilter: Option<Prefilter>,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            grid: default_grid(),
            k_min: 2,
            k_max: 6,
            alpha: DEFAULT_ALPHA,
            schedule: GrowthSchedule::default(),
            prefilter: None,
            seed: 0,
        }
    }
}

/// `{15, 30, …, 120}` minutes.
pub fn default_grid() -> Vec<u32> {
    (1..=GRID_END_MINUTES / GRID_STEP_MINUTES).map(|i| i * GRID_STEP_MINUTES).collect()
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() || !self.grid.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("search grid must be non-empty and strictly increasing".into()));
        }
        if let Some(bad) = self.grid.iter().find(|&&m| m == 0 || m > GRID_END_MINUTES || m % GRID_STEP_MINUTES != 0) {
            return Err(Error::Config(format!(
                "grid time {bad} is not a {GRID_STEP_MINUTES}-minute multiple in (0, {GRID_END_MINUTES}]"
            )));
        }
        if self.k_min < 1 || self.k_min > self.k_max || self.k_max > self.grid.len() + 1 {
            return Err(Error::Config(format!(
                "measurement counts {}..={} do not fit a grid of {} times",
                self.k_min,
                self.k_max,
                self.grid.len()
            )));
        }
        if let Some(p) = &self.prefilter {
            if !(p.keep_fraction > 0.0 && p.keep_fraction <= 1.0) || p.t1 < 2 {
                return Err(Error::Config(format!("invalid prefilter {p:?}")));
            }
        }
        self.schedule.validate()
    }

    fn stream(&self) -> StreamKey {
        StreamKey::new(self.seed, "search")
    }
}

/// All designs `{0} ∪ S` with `S ⊂ grid`, `|S| = k − 1`, in lexicographic order.
pub fn enumerate_designs(k: usize, grid: &[u32]) -> Result<Vec<Design>> {
    if k == 0 || k - 1 > grid.len() {
        return Err(Error::Input(format!("cannot choose {k} measurements from 0 plus {} grid times", grid.len())));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    sorted
        .into_iter()
        .combinations(k - 1)
        .map(|extra| Design::from_extra_times(&extra))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub champion: Design,
    pub challenger: Design,
    /// Champion is `a`, challenger is `b`.
    pub result: ComparisonResult,
    pub computed: usize,
    pub reused: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TournamentOutcome {
    pub champion: Design,
    pub champion_estimate: DesignUtilityEstimate,
    pub log: Vec<MatchRecord>,
    /// No match was conclusive, so the first design holds by default.
    pub default_champion: bool,
}

impl TournamentOutcome {
    pub fn computed(&self) -> usize {
        self.log.iter().map(|m| m.computed).sum()
    }

    pub fn reused(&self) -> usize {
        self.log.iter().map(|m| m.reused).sum()
    }
}

/// Incumbent ladder over `designs` in the given order.
pub fn tournament<S: UtilitySampler + ?Sized>(
    sampler: &S,
    designs: &[Design],
    alpha: f64,
    schedule: &GrowthSchedule,
    stream: &StreamKey,
) -> Result<TournamentOutcome> {
    let (first, rest) = designs
        .split_first()
        .ok_or_else(|| Error::Input("tournament needs at least one design".into()))?;
    let t2 = sampler.inner_draws();
    let mut champion = DesignUtilityEstimate::empty(first.clone(), stream.clone(), t2);
    let mut log = Vec::with_capacity(rest.len());
    for challenger in rest {
        let fresh = DesignUtilityEstimate::empty(challenger.clone(), stream.clone(), t2);
        let out = compare_with_growth(sampler, champion, fresh, alpha, schedule)?;
        log::info!(
            "{} vs {}: z = {:.3}, {:?}",
            out.result.design_a,
            out.result.design_b,
            out.result.z,
            out.result.verdict
        );
        log.push(MatchRecord {
            champion: out.result.design_a.clone(),
            challenger: challenger.clone(),
            result: out.result.clone(),
            computed: out.computed,
            reused: out.reused,
        });
        champion = if out.result.verdict == Verdict::BBetter {
            out.estimate_b
        } else {
            out.estimate_a
        };
    }
    let default_champion = log.iter().all(|m| !m.result.verdict.is_conclusive());
    Ok(TournamentOutcome {
        champion: champion.design.clone(),
        champion_estimate: champion,
        log,
        default_champion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedDesign {
    pub design: Design,
    pub mean: f64,
    pub standard_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KReport {
    pub k: usize,
    pub designs_enumerated: usize,
    /// Prefilter ranking, best first, when a prefilter ran.
    pub prefilter: Option<Vec<RankedDesign>>,
    pub tournament: TournamentOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopDecision {
    pub chosen_k: usize,
    /// The comparison of `chosen_k + 1` against `chosen_k` that ended the search.
    pub deciding: Option<ComparisonResult>,
    /// Every step up in `k` was a conclusive gain.
    pub unterminated: bool,
    pub log: Vec<ComparisonResult>,
    pub computed: usize,
    pub reused: usize,
}

/// Smallest `k` whose successor's champion is not conclusively better.
pub fn stop_on_k<S: UtilitySampler + ?Sized>(
    sampler: &S,
    reports: &[KReport],
    alpha: f64,
    schedule: &GrowthSchedule,
) -> Result<StopDecision> {
    if reports.is_empty() {
        return Err(Error::Input("no per-k reports to choose from".into()));
    }
    if !reports.windows(2).all(|w| w[1].k == w[0].k + 1) {
        return Err(Error::Input("per-k reports must cover consecutive measurement counts".into()));
    }
    let mut log = Vec::new();
    let (mut computed, mut reused) = (0, 0);
    for pair in reports.windows(2) {
        let (lower, upper) = (&pair[0], &pair[1]);
        let out = compare_with_growth(
            sampler,
            upper.tournament.champion_estimate.clone(),
            lower.tournament.champion_estimate.clone(),
            alpha,
            schedule,
        )?;
        computed += out.computed;
        reused += out.reused;
        log.push(out.result.clone());
        if out.result.verdict != Verdict::ABetter {
            return Ok(StopDecision {
                chosen_k: lower.k,
                deciding: Some(out.result),
                unterminated: false,
                log,
                computed,
                reused,
            });
        }
    }
    Ok(StopDecision {
        chosen_k: reports.last().expect("non-empty").k,
        deciding: None,
        unterminated: true,
        log,
        computed,
        reused,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub config: SearchConfig,
    pub per_k: Vec<KReport>,
    pub stop: StopDecision,
    pub computed_samples: usize,
    pub reused_samples: usize,
}

fn prefilter_rank<S: UtilitySampler + ?Sized>(
    sampler: &S,
    designs: &[Design],
    p: &Prefilter,
    stream: &StreamKey,
) -> Result<(Vec<RankedDesign>, usize)> {
    let mut ranked = designs
        .iter()
        .map(|d| {
            let e = estimate_utility(sampler, d, stream, p.t1)?;
            Ok(RankedDesign {
                design: d.clone(),
                mean: e.mean,
                standard_error: e.standard_error(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| b.mean.total_cmp(&a.mean));
    let keep = ((ranked.len() as f64 * p.keep_fraction).ceil() as usize).clamp(1, ranked.len());
    Ok((ranked, keep))
}

/// Runs the ladder for every `k` in range and applies the stopping rule.
pub fn run_search<S: UtilitySampler + ?Sized>(sampler: &S, config: &SearchConfig) -> Result<SearchReport> {
    config.validate()?;
    let root = config.stream();
    let mut per_k = Vec::new();
    let mut prefilter_samples = 0;
    for k in config.k_min..=config.k_max {
        let stream = root.child(&format!("k{k}"));
        let all = enumerate_designs(k, &config.grid)?;
        let (prefilter, ladder) = match &config.prefilter {
            Some(p) if all.len() > 1 => {
                let (ranked, keep) = prefilter_rank(sampler, &all, p, &stream.child("prefilter"))?;
                prefilter_samples += p.t1 * all.len();
                let ladder = ranked[..keep].iter().map(|r| r.design.clone()).collect::<Vec<_>>();
                (Some(ranked), ladder)
            }
            _ => (None, all.clone()),
        };
        log::info!("k = {k}: {} designs, {} in the ladder", all.len(), ladder.len());
        let tournament = tournament(sampler, &ladder, config.alpha, &config.schedule, &stream)?;
        per_k.push(KReport {
            k,
            designs_enumerated: all.len(),
            prefilter,
            tournament,
        });
    }
    let stop = stop_on_k(sampler, &per_k, config.alpha, &config.schedule)?;
    let computed_samples =
        prefilter_samples + per_k.iter().map(|r| r.tournament.computed()).sum::<usize>() + stop.computed;
    let reused_samples = per_k.iter().map(|r| r.tournament.reused()).sum::<usize>() + stop.reused;
    Ok(SearchReport {
        config: config.clone(),
        per_k,
        stop,
        computed_samples,
        reused_samples,
    })
}

fn table_row(out: &mut String, label: &str, design: &Design, extra: &str) {
    let _ = write!(out, "{label:<16}");
    for m in (0..=GRID_END_MINUTES).step_by(GRID_STEP_MINUTES as usize) {
        let _ = write!(out, " {:^4}", if design.contains_minute(m) { "x" } else { "" });
    }
    let _ = writeln!(out, "  {extra}");
}

impl SearchReport {
    /// Grid of measurement times per champion, with the conventional and full designs for reference.
    pub fn summary_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<16}", "mins");
        for m in (0..=GRID_END_MINUTES).step_by(GRID_STEP_MINUTES as usize) {
            let _ = write!(out, " {:>4}", format!("{}:{:02}", m / 60, m % 60));
        }
        let _ = writeln!(out, "  U (se), T1");
        table_row(&mut out, "Conventional", &Design::conventional(), "");
        for r in &self.per_k {
            let e = &r.tournament.champion_estimate;
            let marker = if r.k == self.stop.chosen_k { " *" } else { "" };
            let stats = if e.t1() > 0 {
                format!("{:.2} ({:.2}), {}{marker}", e.mean, e.standard_error(), e.t1())
            } else {
                format!("not estimated{marker}")
            };
            table_row(&mut out, &format!("Best k={}", r.k), &r.tournament.champion, &stats);
        }
        table_row(&mut out, "Full", &Design::full(), "");
        let _ = writeln!(
            out,
            "chosen k = {}{}; samples computed {}, reused {}",
            self.stop.chosen_k,
            if self.stop.unterminated { " (rule never fired)" } else { "" },
            self.computed_samples,
            self.reused_samples
        );
        out
    }
}
