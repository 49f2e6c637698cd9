//! Floating-point abstraction shared by the numerical core.
//!
//! Everything that touches model math is written against [`Scalar`] so the
//! same code runs in `f64` (the default used by training and the CLI) and in
//! `f32` for cheap evaluation.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + LowerExp
    + Default
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    /// Complementary error function.
    fn erfc(self) -> Self;

    /// Lossless-as-possible conversion of an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f64 {
    #[inline]
    fn erfc(self) -> Self {
        libm::erfc(self)
    }
}

impl Scalar for f32 {
    #[inline]
    fn erfc(self) -> Self {
        libm::erfcf(self)
    }
}
