//! Five-compartment glucose model.
//!
//! State `(G, I, L, D, V)`: blood glucose, insulin effect, glucagon effect,
//! glucose in the digestive system and glucose not yet ingested.
//!
//! ```text
//! G' = L - I + D/θ2
//! I' = θ0 (G - G_b)^+ - I/a
//! L' = θ1 (G_b - G)^+ - L/b
//! D' = -D/θ2 + 2V/c
//! V' = -2V/c
//! ```
//!
//! The patient arrives fasting, so `I(0) = L(0) = D(0) = 0` and `V(0) = v0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{self, DenseStep, OdeSystem, SolverOptions};
use crate::scalar::{positive_part, Real};

/// Lower truncation point of the digestive mean life.
pub const THETA2_MIN: f64 = 0.16;
/// Admissible range of the initial glucose (mg/dl).
pub const G0_RANGE: (f64, f64) = (30.0, 400.0);

/// Known physiological constants shared by every patient.
///
/// The defaults are calibration placeholders: the published model takes them
/// from the literature without listing them. Every experiment records the
/// values it ran with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConstants<T> {
    /// Insulin decay time constant (h).
    pub a: T,
    /// Glucagon decay time constant (h).
    pub b: T,
    /// Ingestion time constant (h).
    pub c: T,
    /// Baseline glucose (mg/dl).
    pub g_b: T,
    /// Glucose load of the drink, in mg/dl-equivalent.
    pub v0: T,
}

impl<T: Real> Default for ModelConstants<T> {
    fn default() -> Self {
        Self {
            a: T::lit(0.6),
            b: T::lit(0.5),
            c: T::lit(0.5),
            g_b: T::lit(80.0),
            v0: T::lit(150.0),
        }
    }
}

impl<T: Real> ModelConstants<T> {
    pub fn validate(&self) -> Result<()> {
        let ok = self.a > T::zero()
            && self.b > T::zero()
            && self.c > T::zero()
            && self.g_b > T::zero()
            && self.v0 >= T::zero()
            && [self.a, self.b, self.c, self.g_b, self.v0].iter().all(|x| x.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "model constants must satisfy a, b, c, g_b > 0 and v0 >= 0: {self:?}"
            )))
        }
    }
}

/// The four patient-specific quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatientParams<T> {
    /// Insulin sensitivity.
    pub theta0: T,
    /// Glucagon sensitivity.
    pub theta1: T,
    /// Digestive mean life (h).
    pub theta2: T,
    /// Initial blood glucose (mg/dl).
    pub g0: T,
}

impl<T: Real> PatientParams<T> {
    pub fn new(theta0: T, theta1: T, theta2: T, g0: T) -> Self {
        Self {
            theta0,
            theta1,
            theta2,
            g0,
        }
    }

    pub fn to_array(&self) -> [T; 4] {
        [self.theta0, self.theta1, self.theta2, self.g0]
    }

    pub fn from_array(x: [T; 4]) -> Self {
        Self::new(x[0], x[1], x[2], x[3])
    }

    /// Whether the parameters lie in the admissible region
    /// (`θ0, θ1 ≥ 0`, `θ2 > 0.16`, `g0 ∈ [30, 400]`).
    pub fn is_admissible(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
            && self.theta0 >= T::zero()
            && self.theta1 >= T::zero()
            && self.theta2 > T::lit(THETA2_MIN)
            && self.g0 >= T::lit(G0_RANGE.0)
            && self.g0 <= T::lit(G0_RANGE.1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_admissible() {
            Ok(())
        } else {
            Err(Error::Domain(format!("patient parameters outside admissible region: {self:?}")))
        }
    }

    pub fn cast<U: Real>(&self) -> PatientParams<U> {
        PatientParams::from_array(self.to_array().map(|x| U::lit(x.as_f64())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GlucoseState<T> {
    pub g: T,
    pub i: T,
    pub l: T,
    pub d: T,
    pub v: T,
}

impl<T: Real> GlucoseState<T> {
    /// Fasting arrival state: glucose at `g0`, drink not yet taken.
    pub fn initial(params: &PatientParams<T>, consts: &ModelConstants<T>) -> Self {
        Self {
            g: params.g0,
            i: T::zero(),
            l: T::zero(),
            d: T::zero(),
            v: consts.v0,
        }
    }

    pub fn to_array(&self) -> [T; 5] {
        [self.g, self.i, self.l, self.d, self.v]
    }

    pub fn from_array(x: [T; 5]) -> Self {
        Self {
            g: x[0],
            i: x[1],
            l: x[2],
            d: x[3],
            v: x[4],
        }
    }

    fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }
}

#[inline]
fn derivative<T: Real>(y: &[T; 5], p: &PatientParams<T>, k: &ModelConstants<T>, dy: &mut [T; 5]) {
    let [g, i, l, d, v] = *y;
    let two = T::lit(2.0);
    dy[0] = l - i + d / p.theta2;
    dy[1] = p.theta0 * positive_part(g - k.g_b) - i / k.a;
    dy[2] = p.theta1 * positive_part(k.g_b - g) - l / k.b;
    dy[3] = -d / p.theta2 + two * v / k.c;
    dy[4] = -two * v / k.c;
}

/// Time derivative of the state.
pub fn rhs<T: Real>(
    state: &GlucoseState<T>,
    params: &PatientParams<T>,
    consts: &ModelConstants<T>,
) -> Result<GlucoseState<T>> {
    if !state.is_finite() || !params.to_array().iter().all(|x| x.is_finite()) {
        return Err(Error::Domain("non-finite state or parameters".into()));
    }
    let mut dy = [T::zero(); 5];
    derivative(&state.to_array(), params, consts, &mut dy);
    Ok(GlucoseState::from_array(dy))
}

/// The model bound to one patient, as an ODE system.
#[derive(Debug, Clone, Copy)]
pub struct GlucoseOde<T> {
    pub params: PatientParams<T>,
    pub consts: ModelConstants<T>,
}

impl<T: Real> OdeSystem<T, 5> for GlucoseOde<T> {
    #[inline]
    fn rhs(&self, _t: T, y: &[T; 5], dy: &mut [T; 5]) {
        derivative(y, &self.params, &self.consts, dy);
    }
}

/// A solved trajectory: states on an output grid plus the dense interpolant.
#[derive(Debug, Clone)]
pub struct Trajectory<T> {
    pub times: Vec<T>,
    pub states: Vec<GlucoseState<T>>,
    initial: GlucoseState<T>,
    segments: Vec<DenseStep<T, 5>>,
}

impl<T: Real> Trajectory<T> {
    pub fn t_end(&self) -> T {
        self.segments.last().map(|s| s.t_end()).unwrap_or_else(T::zero)
    }

    /// State at any `t ∈ [0, t_end]`.
    pub fn state_at(&self, t: T) -> Result<GlucoseState<T>> {
        if t == T::zero() {
            return Ok(self.initial);
        }
        if !(t > T::zero() && t <= self.t_end()) {
            return Err(Error::Domain(format!("t = {t} outside [0, {}]", self.t_end())));
        }
        let idx = self.segments.partition_point(|s| s.t_end() < t);
        let seg = &self.segments[idx.min(self.segments.len() - 1)];
        Ok(GlucoseState::from_array(seg.eval(t)))
    }

    pub fn glucose_at(&self, t: T) -> Result<T> {
        self.state_at(t).map(|s| s.g)
    }

    pub fn accepted_steps(&self) -> usize {
        self.segments.len()
    }
}

/// Solves the model on `[0, t_end]`, reporting states every `resolution` hours.
pub fn solve_forward<T: Real>(
    params: &PatientParams<T>,
    consts: &ModelConstants<T>,
    t_end: T,
    resolution: T,
    opts: &SolverOptions<T>,
) -> Result<Trajectory<T>> {
    if !(t_end > T::zero()) || !(resolution > T::zero()) {
        return Err(Error::Domain("t_end and resolution must be positive".into()));
    }
    let system = GlucoseOde {
        params: *params,
        consts: *consts,
    };
    let initial = GlucoseState::initial(params, consts);
    let mut segments = Vec::new();
    ode::integrate(&system, T::zero(), initial.to_array(), t_end, opts, |step| segments.push(*step))?;

    let n = (t_end / resolution).round().to_usize().unwrap_or(0).max(1);
    let mut traj = Trajectory {
        times: Vec::with_capacity(n + 1),
        states: Vec::with_capacity(n + 1),
        initial,
        segments,
    };
    for k in 0..=n {
        let t = if k == n { t_end } else { (resolution * T::lit(k as f64)).min(t_end) };
        if k > 0 && t <= traj.times[k - 1] {
            break;
        }
        let s = traj.state_at(t)?;
        traj.times.push(t);
        traj.states.push(s);
    }
    Ok(traj)
}

/// Glucose `G(t)` at each requested time (any order; all `≥ 0`).
pub fn glucose_at_times<T: Real>(
    params: &PatientParams<T>,
    consts: &ModelConstants<T>,
    times: &[T],
    opts: &SolverOptions<T>,
) -> Result<Vec<T>> {
    let system = GlucoseOde {
        params: *params,
        consts: *consts,
    };
    let y0 = GlucoseState::initial(params, consts).to_array();
    if times.windows(2).all(|w| w[1] >= w[0]) {
        return Ok(ode::sample_at(&system, T::zero(), y0, times, opts)?
            .into_iter()
            .map(|y| y[0])
            .collect());
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&i, &j| times[i].partial_cmp(&times[j]).unwrap_or(std::cmp::Ordering::Equal));
    let sorted: Vec<T> = order.iter().map(|&i| times[i]).collect();
    let values = ode::sample_at(&system, T::zero(), y0, &sorted, opts)?;
    let mut out = vec![T::zero(); times.len()];
    for (slot, y) in order.into_iter().zip(values) {
        out[slot] = y[0];
    }
    Ok(out)
}
