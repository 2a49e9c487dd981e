//! Adaptive Dormand–Prince 5(4) integrator with fourth-order dense output.
//!
//! The stepper is written for small fixed-size systems (`[T; N]` state) so that
//! the posterior sampler can evaluate thousands of forward solves without
//! allocating. Continuous output between accepted steps uses the standard
//! Hairer–Wanner interpolant, which is exact at both step ends.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Right-hand side of an autonomous-or-not first order system `y' = f(t, y)`.
pub trait OdeSystem<T: Real, const N: usize> {
    fn rhs(&self, t: T, y: &[T; N], dy: &mut [T; N]);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions<T> {
    pub rtol: T,
    pub atol: T,
    pub max_steps: usize,
    /// Upper bound on the step size; `None` means the whole interval.
    pub h_max: Option<T>,
}

impl<T: Real> Default for SolverOptions<T> {
    fn default() -> Self {
        Self {
            rtol: T::default_rtol(),
            atol: T::default_atol(),
            max_steps: 100_000,
            h_max: None,
        }
    }
}

impl<T: Real> SolverOptions<T> {
    pub fn with_tolerance(tol: T) -> Self {
        Self {
            rtol: tol,
            atol: tol,
            ..Self::default()
        }
    }
}

/// One accepted step together with its interpolation coefficients.
#[derive(Debug, Clone, Copy)]
pub struct DenseStep<T, const N: usize> {
    pub t_start: T,
    pub h: T,
    coeffs: [[T; N]; 5],
}

impl<T: Real, const N: usize> DenseStep<T, N> {
    #[inline]
    pub fn t_end(&self) -> T {
        self.t_start + self.h
    }

    /// Evaluates the interpolant. `t` is expected in `[t_start, t_start + h]`.
    #[inline]
    pub fn eval(&self, t: T) -> [T; N] {
        let theta = (t - self.t_start) / self.h;
        let theta1 = T::one() - theta;
        let [r1, r2, r3, r4, r5] = &self.coeffs;
        let mut out = [T::zero(); N];
        for i in 0..N {
            out[i] = r1[i] + theta * (r2[i] + theta1 * (r3[i] + theta * (r4[i] + theta1 * r5[i])));
        }
        out
    }

    /// State at the end of the step.
    #[inline]
    pub fn end_state(&self) -> [T; N] {
        let mut out = [T::zero(); N];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.coeffs[0][i] + self.coeffs[1][i];
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolveStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

// Butcher tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
// Difference between the fifth- and fourth-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Dense output.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[inline]
fn combine<T: Real, const N: usize>(y: &[T; N], h: T, terms: &[(f64, &[T; N])]) -> [T; N] {
    let mut out = *y;
    for (coef, k) in terms {
        let c = h * T::lit(*coef);
        for i in 0..N {
            out[i] = out[i] + c * k[i];
        }
    }
    out
}

#[inline]
fn all_finite<T: Real, const N: usize>(y: &[T; N]) -> bool {
    y.iter().all(|v| v.is_finite())
}

fn error_norm<T: Real, const N: usize>(err: &[T; N], y0: &[T; N], y1: &[T; N], opts: &SolverOptions<T>) -> T {
    let mut acc = T::zero();
    for i in 0..N {
        let scale = opts.atol + opts.rtol * y0[i].abs().max(y1[i].abs());
        let r = err[i] / scale;
        acc = acc + r * r;
    }
    (acc / T::lit(N as f64)).sqrt()
}

/// Initial step size heuristic (Hairer, Nørsett & Wanner, II.4).
fn initial_step<T: Real, S: OdeSystem<T, N>, const N: usize>(
    sys: &S,
    t0: T,
    y0: &[T; N],
    f0: &[T; N],
    span: T,
    opts: &SolverOptions<T>,
) -> T {
    let n = T::lit(N as f64);
    let mut d0 = T::zero();
    let mut d1 = T::zero();
    for i in 0..N {
        let sk = opts.atol + opts.rtol * y0[i].abs();
        d0 = d0 + (y0[i] / sk).powi(2);
        d1 = d1 + (f0[i] / sk).powi(2);
    }
    d0 = (d0 / n).sqrt();
    d1 = (d1 / n).sqrt();
    let tiny = T::lit(1e-5);
    let mut h0 = if d0 < tiny || d1 < tiny {
        T::lit(1e-6)
    } else {
        T::lit(0.01) * d0 / d1
    };
    h0 = h0.min(span);
    let y1 = combine(y0, h0, &[(1.0, f0)]);
    let mut f1 = [T::zero(); N];
    sys.rhs(t0 + h0, &y1, &mut f1);
    let mut d2 = T::zero();
    for i in 0..N {
        let sk = opts.atol + opts.rtol * y0[i].abs();
        d2 = d2 + ((f1[i] - f0[i]) / sk).powi(2);
    }
    d2 = (d2 / n).sqrt() / h0;
    let dmax = d1.max(d2);
    let h1 = if dmax <= T::lit(1e-15) {
        (h0 * T::lit(1e-3)).max(T::lit(1e-6))
    } else {
        (T::lit(0.01) / dmax).powf(T::lit(0.2))
    };
    (T::lit(100.0) * h0).min(h1).min(span)
}

/// Integrates `sys` from `(t0, y0)` to `t_end`, calling `on_step` after every accepted step.
pub fn integrate<T, S, F, const N: usize>(
    sys: &S,
    t0: T,
    y0: [T; N],
    t_end: T,
    opts: &SolverOptions<T>,
    mut on_step: F,
) -> Result<SolveStats>
where
    T: Real,
    S: OdeSystem<T, N>,
    F: FnMut(&DenseStep<T, N>),
{
    if !(t_end > t0) {
        return Err(Error::Domain(format!(
            "integration interval must have positive length (t0 = {t0}, t_end = {t_end})"
        )));
    }
    if !all_finite(&y0) {
        return Err(Error::Domain("initial state is not finite".into()));
    }
    let fail = |t: T, reason: &str| Error::Integration {
        t: t.as_f64(),
        reason: reason.to_string(),
    };

    let span = t_end - t0;
    let h_max = opts.h_max.unwrap_or(span).min(span);
    let mut stats = SolveStats::default();
    let mut t = t0;
    let mut y = y0;
    let mut k1 = [T::zero(); N];
    sys.rhs(t, &y, &mut k1);
    stats.rhs_evals += 1;
    if !all_finite(&k1) {
        return Err(fail(t, "non-finite derivative"));
    }
    let mut h = initial_step(sys, t0, &y0, &k1, span, opts).min(h_max);
    stats.rhs_evals += 1;
    let mut last_rejected = false;
    let h_min = T::epsilon() * T::lit(16.0) * span.max(T::one());

    loop {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(fail(t, "maximum number of steps exceeded"));
        }
        let remaining = t_end - t;
        let last = h >= remaining * (T::one() - T::epsilon() * T::lit(4.0));
        if last {
            h = remaining;
        }
        if h < h_min {
            return Err(fail(t, "step size underflow"));
        }

        let mut k2 = [T::zero(); N];
        let mut k3 = [T::zero(); N];
        let mut k4 = [T::zero(); N];
        let mut k5 = [T::zero(); N];
        let mut k6 = [T::zero(); N];
        let mut k7 = [T::zero(); N];

        let y2 = combine(&y, h, &[(A21, &k1)]);
        sys.rhs(t + h * T::lit(C2), &y2, &mut k2);
        let y3 = combine(&y, h, &[(A31, &k1), (A32, &k2)]);
        sys.rhs(t + h * T::lit(C3), &y3, &mut k3);
        let y4 = combine(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]);
        sys.rhs(t + h * T::lit(C4), &y4, &mut k4);
        let y5 = combine(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]);
        sys.rhs(t + h * T::lit(C5), &y5, &mut k5);
        let y6 = combine(&y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]);
        let t_new = if last { t_end } else { t + h };
        sys.rhs(t_new, &y6, &mut k6);
        let y_new = combine(&y, h, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
        sys.rhs(t_new, &y_new, &mut k7);
        stats.rhs_evals += 6;

        let mut err = [T::zero(); N];
        for i in 0..N {
            err[i] = h
                * (T::lit(E1) * k1[i]
                    + T::lit(E3) * k3[i]
                    + T::lit(E4) * k4[i]
                    + T::lit(E5) * k5[i]
                    + T::lit(E6) * k6[i]
                    + T::lit(E7) * k7[i]);
        }
        let err_norm = error_norm(&err, &y, &y_new, opts);

        if !err_norm.is_finite() || !all_finite(&y_new) {
            stats.rejected += 1;
            last_rejected = true;
            h = h * T::lit(0.1);
            continue;
        }

        if err_norm <= T::one() {
            let mut coeffs = [[T::zero(); N]; 5];
            for i in 0..N {
                let ydiff = y_new[i] - y[i];
                let bspl = h * k1[i] - ydiff;
                coeffs[0][i] = y[i];
                coeffs[1][i] = ydiff;
                coeffs[2][i] = bspl;
                coeffs[3][i] = ydiff - h * k7[i] - bspl;
                coeffs[4][i] = h
                    * (T::lit(D1) * k1[i]
                        + T::lit(D3) * k3[i]
                        + T::lit(D4) * k4[i]
                        + T::lit(D5) * k5[i]
                        + T::lit(D6) * k6[i]
                        + T::lit(D7) * k7[i]);
            }
            on_step(&DenseStep { t_start: t, h, coeffs });
            stats.accepted += 1;
            t = t_new;
            y = y_new;
            k1 = k7;
            if last {
                return Ok(stats);
            }
            let mut fac = T::lit(0.9) * err_norm.max(T::lit(1e-10)).powf(T::lit(-0.2));
            fac = fac.min(if last_rejected { T::one() } else { T::lit(10.0) }).max(T::lit(0.2));
            h = (h * fac).min(h_max);
            last_rejected = false;
        } else {
            stats.rejected += 1;
            let fac = (T::lit(0.9) * err_norm.powf(T::lit(-0.2))).max(T::lit(0.2));
            h = h * fac;
            last_rejected = true;
        }
    }
}

/// Integrates and returns the state at each of `times` (sorted ascending, all ≥ `t0`).
///
/// Query points equal to `t0` return `y0` exactly.
pub fn sample_at<T, S, const N: usize>(
    sys: &S,
    t0: T,
    y0: [T; N],
    times: &[T],
    opts: &SolverOptions<T>,
) -> Result<Vec<[T; N]>>
where
    T: Real,
    S: OdeSystem<T, N>,
{
    if times.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(Error::Domain("query times must be sorted ascending".into()));
    }
    if let Some(&first) = times.first() {
        if !(first >= t0) {
            return Err(Error::Domain(format!("query time {first} precedes t0 = {t0}")));
        }
    }
    let mut out = Vec::with_capacity(times.len());
    let mut idx = 0;
    while idx < times.len() && times[idx] == t0 {
        out.push(y0);
        idx += 1;
    }
    let Some(&t_end) = times.last() else {
        return Ok(out);
    };
    if idx == times.len() {
        return Ok(out);
    }
    integrate(sys, t0, y0, t_end, opts, |step| {
        let end = step.t_end();
        while idx < times.len() && times[idx] <= end {
            out.push(if times[idx] == end { step.end_state() } else { step.eval(times[idx]) });
            idx += 1;
        }
    })?;
    // Guard against rounding in the final step end.
    debug_assert_eq!(out.len(), times.len());
    Ok(out)
}
