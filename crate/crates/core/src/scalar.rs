use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the model, integrator and quadrature are written against.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal. Every literal used by the crate is representable.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Default relative integrator tolerance: 1e-8, floored at 100 ulps.
    #[inline]
    fn default_rtol() -> Self {
        Self::lit(1e-8).max(Self::epsilon() * Self::lit(100.0))
    }

    /// Default absolute integrator tolerance: 1e-10, floored at one ulp.
    #[inline]
    fn default_atol() -> Self {
        Self::lit(1e-10).max(Self::epsilon())
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Positive part `(x)^+`.
#[inline]
pub fn positive_part<T: Real>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}
