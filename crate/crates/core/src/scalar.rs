//! Scalar abstraction shared by every numeric module.
//!
//! Training and dreaming run in `f32`; the finite-difference oracles and
//! a few metrics run the same generic code in `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point type usable for point coordinates and tensor entries.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; always succeeds for f32/f64.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }

    /// Converts between scalar widths.
    #[inline]
    fn cast<U: Scalar>(self) -> U {
        U::of(self.as_f64())
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
