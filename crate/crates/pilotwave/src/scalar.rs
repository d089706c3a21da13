//! Scalar abstraction: every solver in this crate is generic over the
//! floating-point type through [`Real`], so the same code runs in `f32`
//! for quick sweeps and in `f64` for the committed tolerances.

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, NumAssignOps, ToPrimitive};
use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

/// Floating-point scalar usable by grids, spectral transforms and integrators.
///
/// The bound set is the union of what the numerics need: `Float` for
/// arithmetic, `FloatConst` for π, `FftNum` so `rustfft` can plan transforms
/// over `Complex<Self>`, conversions for literals and reporting, and the
/// formatting traits used by the columnar writers.
pub trait Real:
    Float
    + FloatConst
    + NumAssignOps
    + FromPrimitive
    + ToPrimitive
    + rustfft::FftNum
    + Sum
    + Display
    + LowerExp
    + Debug
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lift an `f64` literal; panics only on non-finite input, which would be
    /// a programming error in a hard-coded constant.
    fn lit(value: f64) -> Self {
        Self::from_f64(value).expect("finite literal representable in scalar type")
    }

    /// Lossy view as `f64` for reports and error messages.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Complex number over the crate scalar.
pub type C<R> = Complex<R>;

/// `i` as a complex constant.
pub fn i<R: Real>() -> C<R> {
    Complex::new(R::zero(), R::one())
}

/// Purely real complex value.
pub fn cr<R: Real>(re: R) -> C<R> {
    Complex::new(re, R::zero())
}
