//! Priors over patient parameters and the measurement noise model.
//!
//! Gamma distributions are parameterized by shape and scale throughout, so the
//! digestive mean life prior `Gamma(10, 1/20)` has mean 0.5 h. The initial
//! glucose prior `N(80, 100)` has variance 100 (standard deviation 10 mg/dl).

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma as GammaCdf, Normal as NormalCdf};
use statrs::function::gamma::ln_gamma;

use crate::design::Design;
use crate::error::{Error, Result};
use crate::model::{glucose_at_times, ModelConstants, G0_RANGE, THETA2_MIN};
use crate::ode::SolverOptions;
use crate::PatientParams;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// Gamma(shape, scale), optionally truncated below at `lower` (exclusive).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
}

impl GammaPrior {
    pub fn new(shape: f64, scale: f64) -> Self {
        Self {
            shape,
            scale,
            lower: None,
        }
    }

    pub fn truncated_below(shape: f64, scale: f64, lower: f64) -> Self {
        Self {
            shape,
            scale,
            lower: Some(lower),
        }
    }

    pub fn in_support(&self, x: f64) -> bool {
        x > self.lower.unwrap_or(0.0) && x.is_finite()
    }

    /// Log-density without the truncation normalizer.
    pub fn ln_density(&self, x: f64) -> f64 {
        if !self.in_support(x) {
            return f64::NEG_INFINITY;
        }
        (self.shape - 1.0) * x.ln() - x / self.scale - ln_gamma(self.shape) - self.shape * self.scale.ln()
    }

    /// Probability mass kept by the truncation.
    pub fn retained_mass(&self) -> f64 {
        match self.lower {
            None => 1.0,
            Some(lo) => {
                let g = GammaCdf::new(self.shape, 1.0 / self.scale).expect("validated gamma");
                1.0 - g.cdf(lo)
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let g = Gamma::new(self.shape, self.scale).expect("validated gamma");
        loop {
            let x = g.sample(rng);
            if self.in_support(x) {
                return x;
            }
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.shape > 0.0 && self.scale > 0.0 && self.shape.is_finite() && self.scale.is_finite()) {
            return Err(Error::Config(format!("{name}: gamma shape and scale must be positive")));
        }
        if self.retained_mass() < 1e-3 {
            return Err(Error::Config(format!("{name}: truncation keeps almost no prior mass")));
        }
        Ok(())
    }
}

/// Normal(mean, variance) truncated to `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedNormalPrior {
    pub mean: f64,
    pub variance: f64,
    pub lower: f64,
    pub upper: f64,
}

impl TruncatedNormalPrior {
    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn in_support(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }

    /// Log-density without the truncation normalizer.
    pub fn ln_density(&self, x: f64) -> f64 {
        if !self.in_support(x) {
            return f64::NEG_INFINITY;
        }
        let z = (x - self.mean) / self.sd();
        -0.5 * z * z - self.sd().ln() - LN_SQRT_2PI
    }

    pub fn retained_mass(&self) -> f64 {
        let n = NormalCdf::new(self.mean, self.sd()).expect("validated normal");
        n.cdf(self.upper) - n.cdf(self.lower)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let n = Normal::new(self.mean, self.sd()).expect("validated normal");
        loop {
            let x = n.sample(rng);
            if self.in_support(x) {
                return x;
            }
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.variance > 0.0 && self.variance.is_finite() && self.mean.is_finite() && self.lower < self.upper) {
            return Err(Error::Config(format!("{name}: invalid truncated normal {self:?}")));
        }
        if self.retained_mass() < 1e-3 {
            return Err(Error::Config(format!("{name}: truncation keeps almost no prior mass")));
        }
        Ok(())
    }
}

/// Which coordinates of `(θ0, θ1, θ2, g0)` are inferred; the others stay at
/// the chain's starting values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamMask(pub [bool; 4]);

impl ParamMask {
    pub const ALL: ParamMask = ParamMask([true; 4]);
    pub const G0_ONLY: ParamMask = ParamMask([false, false, false, true]);

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..4).filter(move |&i| self.0[i])
    }
}

impl Default for ParamMask {
    fn default() -> Self {
        Self::ALL
    }
}

/// Vague prior used to fit data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferencePrior {
    pub theta0: GammaPrior,
    pub theta1: GammaPrior,
    pub theta2: GammaPrior,
    pub g0: TruncatedNormalPrior,
}

impl Default for InferencePrior {
    fn default() -> Self {
        Self {
            theta0: GammaPrior::new(2.0, 1.0),
            theta1: GammaPrior::new(2.0, 1.0),
            theta2: GammaPrior::truncated_below(10.0, 1.0 / 20.0, THETA2_MIN),
            g0: TruncatedNormalPrior {
                mean: 80.0,
                variance: 100.0,
                lower: G0_RANGE.0,
                upper: G0_RANGE.1,
            },
        }
    }
}

impl InferencePrior {
    pub fn validate(&self) -> Result<()> {
        self.theta0.validate("theta0")?;
        self.theta1.validate("theta1")?;
        self.theta2.validate("theta2")?;
        self.g0.validate("g0")?;
        if self.theta2.lower.unwrap_or(0.0) < THETA2_MIN
            || self.g0.lower < G0_RANGE.0
            || self.g0.upper > G0_RANGE.1
        {
            return Err(Error::Config(
                "inference prior support must lie inside the admissible parameter region".into(),
            ));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PatientParams {
        PatientParams::new(
            self.theta0.sample(rng),
            self.theta1.sample(rng),
            self.theta2.sample(rng),
            self.g0.sample(rng),
        )
    }

    fn component_ln_density(&self, idx: usize, x: f64) -> f64 {
        match idx {
            0 => self.theta0.ln_density(x),
            1 => self.theta1.ln_density(x),
            2 => self.theta2.ln_density(x),
            _ => self.g0.ln_density(x),
        }
    }

    /// Sum of the component log-densities. Gamma and normal normalizing
    /// constants are included; the truncation normalizers are dropped.
    /// Returns `-inf` outside the support.
    pub fn ln_density(&self, params: &PatientParams) -> f64 {
        self.ln_density_masked(params, ParamMask::ALL)
    }

    /// As [`ln_density`](Self::ln_density) restricted to the free coordinates.
    pub fn ln_density_masked(&self, params: &PatientParams, mask: ParamMask) -> f64 {
        let x = params.to_array();
        let mut acc = 0.0;
        for i in mask.indices() {
            acc += self.component_ln_density(i, x[i]);
            if acc == f64::NEG_INFINITY {
                break;
            }
        }
        acc
    }

    /// Componentwise means of the untruncated distributions; used as a neutral chain start.
    pub fn central_point(&self) -> PatientParams {
        let theta2 = (self.theta2.shape * self.theta2.scale).max(self.theta2.lower.unwrap_or(0.0) * 1.01);
        PatientParams::new(
            self.theta0.shape * self.theta0.scale,
            self.theta1.shape * self.theta1.scale,
            theta2,
            self.g0.mean.clamp(self.g0.lower, self.g0.upper),
        )
    }
}

/// Sample from the inference prior.
pub fn sample_inference_prior<R: Rng + ?Sized>(prior: &InferencePrior, rng: &mut R) -> PatientParams {
    prior.sample(rng)
}

/// Log-density of the inference prior (see [`InferencePrior::ln_density`]).
pub fn log_prior_inference(prior: &InferencePrior, params: &PatientParams) -> f64 {
    prior.ln_density(params)
}

/// Equal-weight point-mass prior over typical patients, used only to rank designs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<PatientParams>", into = "Vec<PatientParams>")]
pub struct DesignPrior {
    atoms: Vec<PatientParams>,
}

impl DesignPrior {
    pub fn new(atoms: Vec<PatientParams>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Config("design prior needs at least one atom".into()));
        }
        if let Some(bad) = atoms.iter().find(|p| !p.is_admissible()) {
            return Err(Error::Config(format!("design prior atom outside admissible region: {bad:?}")));
        }
        Ok(Self { atoms })
    }

    /// Healthy, diabetic and oscillating reference patients, all arriving at 80 mg/dl.
    pub fn reference_patients() -> Self {
        Self {
            atoms: vec![
                reference::healthy(),
                reference::diabetic(),
                reference::oscillating(),
            ],
        }
    }

    pub fn atoms(&self) -> &[PatientParams] {
        &self.atoms
    }

    pub fn weights(&self) -> Vec<f64> {
        vec![1.0 / self.atoms.len() as f64; self.atoms.len()]
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PatientParams {
        self.atoms[rng.random_range(0..self.atoms.len())]
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let atoms: Vec<PatientParams> = serde_json::from_str(text)?;
        Self::new(atoms)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl TryFrom<Vec<PatientParams>> for DesignPrior {
    type Error = Error;
    fn try_from(atoms: Vec<PatientParams>) -> Result<Self> {
        Self::new(atoms)
    }
}

impl From<DesignPrior> for Vec<PatientParams> {
    fn from(p: DesignPrior) -> Self {
        p.atoms
    }
}

/// Uniform draw over the design-prior atoms.
pub fn sample_design_prior<R: Rng + ?Sized>(prior: &DesignPrior, rng: &mut R) -> PatientParams {
    prior.sample(rng)
}

/// Reference patients with qualitatively distinct responses.
pub mod reference {
    use crate::PatientParams;

    pub fn healthy() -> PatientParams {
        PatientParams::new(2.15, 1.3, 0.8, 80.0)
    }

    pub fn diabetic() -> PatientParams {
        PatientParams::new(0.2, 3.52, 0.3, 80.0)
    }

    pub fn oscillating() -> PatientParams {
        PatientParams::new(15.3, 31.35, 0.6, 80.0)
    }

    /// Violent insulin response with weak glucagon production.
    pub fn extreme_insulin() -> PatientParams {
        PatientParams::new(80.0, 1.0, 1.5, 80.0)
    }
}

/// Additive Gaussian measurement error with standard deviation `sigma` (mg/dl).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { sigma: 5.0 }
    }
}

impl NoiseModel {
    pub fn new(sigma: f64) -> Result<Self> {
        if sigma >= 0.0 && sigma.is_finite() {
            Ok(Self { sigma })
        } else {
            Err(Error::Config(format!("noise sd must be finite and non-negative, got {sigma}")))
        }
    }

    pub fn is_noiseless(&self) -> bool {
        self.sigma == 0.0
    }
}

/// Glucose measurements with their times in hours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observations {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl Observations {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::Input("observation times and values differ in length".into()));
        }
        if times.is_empty() {
            return Err(Error::Input("no observations".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) || times[0] < 0.0 {
            return Err(Error::Input("observation times must be non-negative and strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("observation values must be finite".into()));
        }
        Ok(Self { times, values })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Keeps the observations whose time (in whole minutes) belongs to `design`.
    pub fn restrict_to(&self, design: &Design) -> Result<Observations> {
        let mut times = Vec::with_capacity(design.len());
        let mut values = Vec::with_capacity(design.len());
        for &m in design.minutes() {
            let t = f64::from(m) / 60.0;
            match self.times.iter().position(|&x| (x - t).abs() < 1e-9) {
                Some(i) => {
                    times.push(self.times[i]);
                    values.push(self.values[i]);
                }
                None => {
                    return Err(Error::Input(format!("design time {m} min is absent from the data")));
                }
            }
        }
        Observations::new(times, values)
    }
}

/// Noise-corrupted glucose readings of `params` at the design times.
pub fn simulate_data<R: Rng + ?Sized>(
    params: &PatientParams,
    design: &Design,
    consts: &ModelConstants<f64>,
    noise: &NoiseModel,
    solver: &SolverOptions<f64>,
    rng: &mut R,
) -> Result<Observations> {
    let times = design.hours();
    let mut values = glucose_at_times(params, consts, &times, solver)?;
    for v in values.iter_mut() {
        let eps: f64 = StandardNormal.sample(rng);
        *v += noise.sigma * eps;
    }
    Ok(Observations { times, values })
}
